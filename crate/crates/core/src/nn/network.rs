use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvGeom, LstmCache, PoolGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Gradient tensors keyed like [`NetworkParams::weights`].
pub type Gradients<T = f32> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// Same-padded 2-D convolution over `[C, H, W]`.
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    /// Unpadded average pooling; no trainable weights.
    AvgPool2d {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Dense {
        units: usize,
    },
    /// Consumes a `[T, F]` sequence and emits the final hidden state.
    Lstm {
        units: usize,
    },
    Flatten,
    /// Appends the auxiliary input vector to a flat activation.
    ConcatAux,
    Relu,
    Tanh,
}

impl LayerKind {
    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::Dense { .. } | LayerKind::Lstm { .. }
        )
    }

    fn prefix(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv",
            LayerKind::AvgPool2d { .. } => "pool",
            LayerKind::Dense { .. } => "fc",
            LayerKind::Lstm { .. } => "lstm",
            LayerKind::Flatten => "flatten",
            LayerKind::ConcatAux => "concat",
            LayerKind::Relu => "relu",
            LayerKind::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

pub fn weight_key(layer: &str) -> String {
    format!("{layer}.weight")
}

pub fn bias_key(layer: &str) -> String {
    format!("{layer}.bias")
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Layer stack plus its trainable tensors.
#[derive(Debug, Clone)]
pub struct NetworkParams<T: Real = f32> {
    input_shape: Vec<usize>,
    aux_len: usize,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the unbatched input shape of layer `i`; the last entry is the output.
    shapes: Vec<Vec<usize>>,
    weights: BTreeMap<String, Tensor<T>>,
    rng_seed: u64,
    generation: u64,
}

/// Convenience builder that assigns `conv1`, `pool1`, `fc1`, ... names in order.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    aux_len: usize,
    layers: Vec<LayerSpec>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            aux_len: 0,
            layers: Vec::new(),
        }
    }

    pub fn aux(mut self, len: usize) -> Self {
        self.aux_len = len;
        self
    }

    pub fn layer(mut self, kind: LayerKind) -> Self {
        let prefix = kind.prefix();
        let n = self.layers.iter().filter(|l| l.kind.prefix() == prefix).count();
        self.layers.push(LayerSpec::new(format!("{prefix}{}", n + 1), kind));
        self
    }

    pub fn conv2d(self, filters: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        self.layer(LayerKind::Conv2d {
            filters,
            kernel,
            stride,
        })
    }

    pub fn avgpool2d(self, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        self.layer(LayerKind::AvgPool2d { kernel, stride })
    }

    pub fn dense(self, units: usize) -> Self {
        self.layer(LayerKind::Dense { units })
    }

    pub fn lstm(self, units: usize) -> Self {
        self.layer(LayerKind::Lstm { units })
    }

    pub fn flatten(self) -> Self {
        self.layer(LayerKind::Flatten)
    }

    pub fn concat_aux(self) -> Self {
        self.layer(LayerKind::ConcatAux)
    }

    pub fn relu(self) -> Self {
        self.layer(LayerKind::Relu)
    }

    pub fn tanh(self) -> Self {
        self.layer(LayerKind::Tanh)
    }

    pub fn build(self, seed: u64) -> Result<NetworkParams<f32>> {
        NetworkParams::new(self.input_shape, self.aux_len, self.layers, seed)
    }
}

fn infer_shape(spec: &LayerSpec, input: &[usize], aux_len: usize) -> Result<Vec<usize>> {
    let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
        layer: spec.name.clone(),
        expected,
        got: input.to_vec(),
    };
    match &spec.kind {
        LayerKind::Conv2d {
            filters,
            kernel,
            stride,
        } => {
            if input.len() != 3 || *filters == 0 || kernel.0 == 0 || stride.0 == 0 || stride.1 == 0 {
                return Err(mismatch(vec![0, 0, 0]));
            }
            let g = ConvGeom::same(input[0], input[1], input[2], *filters, *kernel, *stride);
            Ok(vec![*filters, g.oh, g.ow])
        }
        LayerKind::AvgPool2d { kernel, stride } => {
            if input.len() != 3 || stride.0 == 0 || stride.1 == 0 {
                return Err(mismatch(vec![0, 0, 0]));
            }
            let g = PoolGeom::valid(input[0], input[1], input[2], *kernel, *stride)
                .ok_or_else(|| mismatch(vec![input[0], kernel.0, kernel.1]))?;
            Ok(vec![input[0], g.oh, g.ow])
        }
        LayerKind::Dense { units } => {
            if input.len() != 1 || *units == 0 {
                return Err(mismatch(vec![input.iter().product()]));
            }
            Ok(vec![*units])
        }
        LayerKind::Lstm { units } => {
            if input.len() != 2 || *units == 0 {
                return Err(mismatch(vec![0, 0]));
            }
            Ok(vec![*units])
        }
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::ConcatAux => {
            if input.len() != 1 || aux_len == 0 {
                return Err(mismatch(vec![input.iter().product()]));
            }
            Ok(vec![input[0] + aux_len])
        }
        LayerKind::Relu | LayerKind::Tanh => Ok(input.to_vec()),
    }
}

/// Parameter tensor shapes `(weight, bias)` for a trainable layer.
fn param_shapes(kind: &LayerKind, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    match kind {
        LayerKind::Conv2d { filters, kernel, .. } => {
            Some((vec![*filters, input[0], kernel.0, kernel.1], vec![*filters]))
        }
        LayerKind::Dense { units } => Some((vec![*units, input[0]], vec![*units])),
        LayerKind::Lstm { units } => Some((vec![4 * units, input[1] + units], vec![4 * units])),
        _ => None,
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Conv {
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Pool {
        geom: PoolGeom,
    },
    Dense {
        input: Vec<T>,
        n: usize,
    },
    Lstm {
        cache: LstmCache<T>,
        steps: usize,
        features: usize,
    },
    Relu {
        input: Vec<T>,
    },
    Tanh {
        output: Vec<T>,
    },
    Passthrough,
    Concat {
        n: usize,
    },
}

/// Activation record of a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T = f32> {
    generation: u64,
    batch: usize,
    batched: bool,
    caches: Vec<Cache<T>>,
}

impl<T: Real> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl NetworkParams<f32> {
    /// Builds the layer stack and draws seeded He-uniform weights.
    pub fn new(input_shape: Vec<usize>, aux_len: usize, layers: Vec<LayerSpec>, rng_seed: u64) -> Result<Self> {
        let mut net = Self::structure(input_shape, aux_len, layers, rng_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for (i, spec) in net.layers.iter().enumerate() {
            let Some((wshape, bshape)) = param_shapes(&spec.kind, &net.shapes[i]) else {
                continue;
            };
            let fan_in: usize = wshape[1..].iter().product();
            let limit = match spec.kind {
                LayerKind::Lstm { units } => (1.0 / units as f64).sqrt(),
                _ => (6.0 / fan_in as f64).sqrt(),
            };
            let n: usize = wshape.iter().product();
            let w: Vec<f32> = (0..n).map(|_| rng.random_range(-limit..limit) as f32).collect();
            let mut b = vec![0.0f32; bshape[0]];
            if let LayerKind::Lstm { units } = spec.kind {
                b[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
            }
            net.weights.insert(weight_key(&spec.name), Tensor::new(wshape, w)?);
            net.weights.insert(bias_key(&spec.name), Tensor::new(bshape, b)?);
        }
        Ok(net)
    }
}

impl<T: Real> NetworkParams<T> {
    fn structure(input_shape: Vec<usize>, aux_len: usize, layers: Vec<LayerSpec>, rng_seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("no layers".into()));
        }
        let concat_count = layers.iter().filter(|l| l.kind == LayerKind::ConcatAux).count();
        if (aux_len > 0) != (concat_count == 1) || concat_count > 1 {
            return Err(Error::InvalidNetwork(
                "an auxiliary input requires exactly one concat-aux layer".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for l in &layers {
            if !names.insert(l.name.clone()) {
                return Err(Error::InvalidNetwork(format!("duplicate layer name `{}`", l.name)));
            }
        }
        let mut shapes = vec![input_shape.clone()];
        for l in &layers {
            let next = infer_shape(l, shapes.last().expect("nonempty"), aux_len)?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            aux_len,
            layers,
            shapes,
            weights: BTreeMap::new(),
            rng_seed,
            generation: next_generation(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn aux_len(&self) -> usize {
        self.aux_len
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("nonempty")
    }

    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.weights
    }

    pub fn weight(&self, key: &str) -> Option<&Tensor<T>> {
        self.weights.get(key)
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn weights_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        self.generation = next_generation();
        &mut self.weights
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.values().map(Tensor::len).sum()
    }

    /// Replaces every tensor, checking names and shapes.
    pub fn load_weights(&mut self, tensors: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (k, w) in &self.weights {
            let t = tensors
                .get(k)
                .ok_or_else(|| Error::KeyMismatch(format!("missing tensor `{k}`")))?;
            if t.shape() != w.shape() {
                return Err(Error::ShapeMismatch {
                    layer: k.clone(),
                    expected: w.shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
        }
        let keys: Vec<String> = self.weights.keys().cloned().collect();
        let weights = self.weights_mut();
        for k in keys {
            weights.insert(k.clone(), tensors[&k].clone());
        }
        Ok(())
    }

    /// Copies all weights from a network of identical architecture.
    pub fn copy_from(&mut self, other: &NetworkParams<T>) -> Result<()> {
        if self.layers != other.layers || self.shapes != other.shapes {
            return Err(Error::InvalidNetwork("architecture mismatch".into()));
        }
        self.weights = other.weights.clone();
        self.generation = next_generation();
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            input_shape: self.input_shape.clone(),
            aux_len: self.aux_len,
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            weights: self.weights.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            rng_seed: self.rng_seed,
            generation: next_generation(),
        }
    }

    fn resolve_batch(&self, input: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<(usize, bool)> {
        let first = self.layers[0].name.clone();
        let (batch, batched) = if input.shape() == self.input_shape.as_slice() {
            (1, false)
        } else if input.shape().len() == self.input_shape.len() + 1 && input.shape()[1..] == self.input_shape[..] {
            (input.shape()[0], true)
        } else {
            return Err(Error::ShapeMismatch {
                layer: first,
                expected: self.input_shape.clone(),
                got: input.shape().to_vec(),
            });
        };
        match (self.aux_len, aux) {
            (0, None) => {}
            (0, Some(a)) => {
                return Err(Error::ShapeMismatch {
                    layer: "aux".into(),
                    expected: vec![],
                    got: a.shape().to_vec(),
                })
            }
            (n, None) => {
                return Err(Error::ShapeMismatch {
                    layer: "aux".into(),
                    expected: vec![n],
                    got: vec![],
                })
            }
            (n, Some(a)) => {
                let ok = if batched {
                    a.shape() == [batch, n]
                } else {
                    a.shape() == [n] || a.shape() == [1, n]
                };
                if !ok {
                    return Err(Error::ShapeMismatch {
                        layer: "aux".into(),
                        expected: if batched { vec![batch, n] } else { vec![n] },
                        got: a.shape().to_vec(),
                    });
                }
                if !a.all_finite() {
                    return Err(Error::NonFinite("auxiliary input".into()));
                }
            }
        }
        if !input.all_finite() {
            return Err(Error::NonFinite("primary input".into()));
        }
        Ok((batch, batched))
    }

    /// Forward pass that records a tape for [`NetworkParams::backward`].
    pub fn forward(&self, input: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tape<T>)> {
        let (out, tape) = self.run(input, aux, true)?;
        Ok((out, tape.expect("tape requested")))
    }

    /// Forward pass without keeping activations.
    pub fn infer(&self, input: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        Ok(self.run(input, aux, false)?.0)
    }

    fn w(&self, layer: &str) -> (&[T], &[T]) {
        (
            self.weights[&weight_key(layer)].data(),
            self.weights[&bias_key(layer)].data(),
        )
    }

    fn run(&self, input: &Tensor<T>, aux: Option<&Tensor<T>>, keep: bool) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        let (batch, batched) = self.resolve_batch(input, aux)?;
        let mut act = input.data().to_vec();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for (i, spec) in self.layers.iter().enumerate() {
            let shape = &self.shapes[i];
            let (next, cache) = match &spec.kind {
                LayerKind::Conv2d {
                    filters,
                    kernel,
                    stride,
                } => {
                    let geom = ConvGeom::same(shape[0], shape[1], shape[2], *filters, *kernel, *stride);
                    let (w, b) = self.w(&spec.name);
                    let (out, cols) = layers::conv_forward(&geom, batch, &act, w, b, keep);
                    (out, Cache::Conv { geom, cols })
                }
                LayerKind::AvgPool2d { kernel, stride } => {
                    let geom = PoolGeom::valid(shape[0], shape[1], shape[2], *kernel, *stride)
                        .expect("validated at construction");
                    (layers::pool_forward(&geom, batch, &act), Cache::Pool { geom })
                }
                LayerKind::Dense { units } => {
                    let (w, b) = self.w(&spec.name);
                    let out = layers::dense_forward(batch, shape[0], *units, &act, w, b);
                    let cache = if keep {
                        Cache::Dense {
                            input: std::mem::take(&mut act),
                            n: shape[0],
                        }
                    } else {
                        Cache::Passthrough
                    };
                    (out, cache)
                }
                LayerKind::Lstm { units } => {
                    let (w, b) = self.w(&spec.name);
                    let (out, cache) = layers::lstm_forward(batch, shape[0], shape[1], *units, &act, w, b);
                    (
                        out,
                        Cache::Lstm {
                            cache,
                            steps: shape[0],
                            features: shape[1],
                        },
                    )
                }
                LayerKind::Flatten => (std::mem::take(&mut act), Cache::Passthrough),
                LayerKind::ConcatAux => {
                    let a = aux.expect("validated").data();
                    let n = shape[0];
                    let mut out = Vec::with_capacity(batch * (n + self.aux_len));
                    for b in 0..batch {
                        out.extend_from_slice(&act[b * n..(b + 1) * n]);
                        out.extend_from_slice(&a[b * self.aux_len..(b + 1) * self.aux_len]);
                    }
                    (out, Cache::Concat { n })
                }
                LayerKind::Relu => {
                    let out = act.iter().map(|&v| v.max(T::zero())).collect();
                    let cache = if keep {
                        Cache::Relu {
                            input: std::mem::take(&mut act),
                        }
                    } else {
                        Cache::Passthrough
                    };
                    (out, cache)
                }
                LayerKind::Tanh => {
                    let out: Vec<T> = act.iter().map(|v| v.tanh()).collect();
                    let cache = if keep {
                        Cache::Tanh { output: out.clone() }
                    } else {
                        Cache::Passthrough
                    };
                    (out, cache)
                }
            };
            if keep {
                caches.push(cache);
            }
            act = next;
        }
        let out_shape = self.output_shape().to_vec();
        let shape = if batched {
            let mut s = vec![batch];
            s.extend(out_shape);
            s
        } else {
            out_shape
        };
        let output = Tensor::new(shape, act)?;
        if !output.all_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        let tape = keep.then_some(Tape {
            generation: self.generation,
            batch,
            batched,
            caches,
        });
        Ok((output, tape))
    }

    /// Reverse pass; gradients are summed over the batch.
    pub fn backward(&self, tape: &Tape<T>, output_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape);
        }
        let mut expected = if tape.batched { vec![tape.batch] } else { vec![] };
        expected.extend_from_slice(self.output_shape());
        if output_grad.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: self.layers.last().expect("nonempty").name.clone(),
                expected,
                got: output_grad.shape().to_vec(),
            });
        }
        let batch = tape.batch;
        let mut grads: Gradients<T> = self
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        let mut delta = output_grad.data().to_vec();
        for (i, spec) in self.layers.iter().enumerate().rev() {
            let cache = &tape.caches[i];
            delta = match (&spec.kind, cache) {
                (LayerKind::Conv2d { .. }, Cache::Conv { geom, cols }) => {
                    let (w, _) = self.w(&spec.name);
                    let mut dw = grads.remove(&weight_key(&spec.name)).expect("key");
                    let mut db = grads.remove(&bias_key(&spec.name)).expect("key");
                    let dx = layers::conv_backward(geom, batch, cols, w, &delta, dw.data_mut(), db.data_mut(), i > 0);
                    grads.insert(weight_key(&spec.name), dw);
                    grads.insert(bias_key(&spec.name), db);
                    dx
                }
                (LayerKind::AvgPool2d { .. }, Cache::Pool { geom }) => layers::pool_backward(geom, batch, &delta),
                (LayerKind::Dense { units }, Cache::Dense { input, n }) => {
                    let (w, _) = self.w(&spec.name);
                    let mut dw = grads.remove(&weight_key(&spec.name)).expect("key");
                    let mut db = grads.remove(&bias_key(&spec.name)).expect("key");
                    let dx = layers::dense_backward(batch, *n, *units, input, w, &delta, dw.data_mut(), db.data_mut());
                    grads.insert(weight_key(&spec.name), dw);
                    grads.insert(bias_key(&spec.name), db);
                    dx
                }
                (LayerKind::Lstm { units }, Cache::Lstm { cache, steps, features }) => {
                    let (w, _) = self.w(&spec.name);
                    let mut dw = grads.remove(&weight_key(&spec.name)).expect("key");
                    let mut db = grads.remove(&bias_key(&spec.name)).expect("key");
                    let dx = layers::lstm_backward(
                        batch,
                        *steps,
                        *features,
                        *units,
                        cache,
                        w,
                        &delta,
                        dw.data_mut(),
                        db.data_mut(),
                    );
                    grads.insert(weight_key(&spec.name), dw);
                    grads.insert(bias_key(&spec.name), db);
                    dx
                }
                (LayerKind::Flatten, _) => delta,
                (LayerKind::ConcatAux, Cache::Concat { n }) => {
                    let width = n + self.aux_len;
                    let mut dx = Vec::with_capacity(batch * n);
                    for b in 0..batch {
                        dx.extend_from_slice(&delta[b * width..b * width + n]);
                    }
                    dx
                }
                (LayerKind::Relu, Cache::Relu { input }) => delta
                    .iter()
                    .zip(input)
                    .map(|(&d, &x)| if x > T::zero() { d } else { T::zero() })
                    .collect(),
                (LayerKind::Tanh, Cache::Tanh { output }) => delta
                    .iter()
                    .zip(output)
                    .map(|(&d, &y)| d * (T::one() - y * y))
                    .collect(),
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "tape does not match layer `{}`",
                        spec.name
                    )))
                }
            };
        }
        for (k, g) in &grads {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{k}`")));
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_dense() -> NetworkParams {
        let mut net = NetworkBuilder::new(&[2]).dense(1).build(0).unwrap();
        let w = net.weights_mut();
        w.insert("fc1.weight".into(), Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap());
        w.insert("fc1.bias".into(), Tensor::new(vec![1], vec![0.0]).unwrap());
        net
    }

    #[test]
    fn dense_layer_is_hand_linear_algebra() {
        let net = single_dense();
        let (out, _) = net.forward(&Tensor::from_vec(vec![1.0, 1.0]), None).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn relu_clips_negatives() {
        let net = NetworkBuilder::new(&[3]).relu().build(0).unwrap();
        let out = net.infer(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]), None).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn chain_rule_on_scalar_dense() {
        let mut net = NetworkBuilder::new(&[1]).dense(1).build(0).unwrap();
        let w = net.weights_mut();
        w.insert("fc1.weight".into(), Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        w.insert("fc1.bias".into(), Tensor::new(vec![1], vec![0.0]).unwrap());
        let (y, tape) = net.forward(&Tensor::from_vec(vec![2.0]), None).unwrap();
        // loss = y^2 -> dL/dy = 2y
        let g = net.backward(&tape, &Tensor::from_vec(vec![2.0 * y.data()[0]])).unwrap();
        assert_eq!(g["fc1.weight"].data(), &[24.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = NetworkBuilder::new(&[1, 6, 5])
            .conv2d(2, (3, 3), (1, 1))
            .relu()
            .avgpool2d((2, 2), (2, 2))
            .flatten()
            .dense(3)
            .build(4)
            .unwrap();
        let x = Tensor::new(vec![1, 6, 5], (0..30).map(|i| i as f32 * 0.1).collect()).unwrap();
        let (out, tape) = net.forward(&x, None).unwrap();
        let g = net.backward(&tape, &Tensor::zeros(out.shape())).unwrap();
        assert!(g.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = single_dense();
        let (_, tape) = net.forward(&Tensor::from_vec(vec![1.0, 1.0]), None).unwrap();
        net.weights_mut();
        let err = net.backward(&tape, &Tensor::from_vec(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::StaleTape));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net = single_dense();
        let err = net.infer(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), None).unwrap_err();
        match err {
            Error::ShapeMismatch { layer, .. } => assert_eq!(layer, "fc1"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let net = single_dense();
        let err = net.infer(&Tensor::from_vec(vec![f32::NAN, 1.0]), None).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn aux_presence_must_match_concat_layer() {
        let net = NetworkBuilder::new(&[2]).concat_aux().dense(1).aux(1).build(0).unwrap();
        assert!(net.infer(&Tensor::from_vec(vec![1.0, 1.0]), None).is_err());
        assert!(net
            .infer(&Tensor::from_vec(vec![1.0, 1.0]), Some(&Tensor::scalar(1.0)))
            .is_ok());
        assert!(NetworkBuilder::new(&[2]).dense(1).aux(1).build(0).is_err());
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let net = NetworkBuilder::new(&[3, 2]).lstm(4).dense(2).build(9).unwrap();
        let a: Vec<f32> = (0..6).map(|i| i as f32 * 0.3 - 0.5).collect();
        let b: Vec<f32> = (0..6).map(|i| 0.2 - i as f32 * 0.1).collect();
        let single_a = net.infer(&Tensor::new(vec![3, 2], a.clone()).unwrap(), None).unwrap();
        let single_b = net.infer(&Tensor::new(vec![3, 2], b.clone()).unwrap(), None).unwrap();
        let both = net
            .infer(&Tensor::new(vec![2, 3, 2], [a, b].concat()).unwrap(), None)
            .unwrap();
        assert_eq!(both.shape(), &[2, 2]);
        for (x, y) in both.data().iter().zip(single_a.data().iter().chain(single_b.data())) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let net = NetworkBuilder::new(&[3, 4]).lstm(2).build(1).unwrap();
        assert_eq!(
            net.weight("lstm1.bias").unwrap().data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }
}
