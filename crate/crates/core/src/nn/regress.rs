//! Mini-batch supervised regression on flat sample arrays.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::weighted_mse;
use super::network::NetworkParams;
use super::optim::Optimizer;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Row-major samples: `inputs` holds `n * prod(input_shape)` values, `targets` `n * prod(output_shape)`.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub inputs: &'a [f32],
    pub targets: &'a [f32],
}

impl Samples<'_> {
    fn count(&self, net: &NetworkParams) -> Result<usize> {
        let din: usize = net.input_shape().iter().product();
        let dout: usize = net.output_shape().iter().product();
        let n = self.inputs.len() / din;
        if n * din != self.inputs.len() || n * dout != self.targets.len() || n == 0 {
            return Err(Error::InvalidTensor(format!(
                "{} inputs and {} targets do not form whole samples of {din} -> {dout}",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        Ok(n)
    }
}

fn gather(src: &[f32], width: usize, idx: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

fn batch_shape(net_shape: &[usize], b: usize) -> Vec<usize> {
    let mut s = vec![b];
    s.extend_from_slice(net_shape);
    s
}

/// Trains `net` on unit-weighted MSE; `on_epoch(epoch, mean_loss, net)` may stop early by returning false.
pub fn fit(
    net: &mut NetworkParams,
    opt: &mut Optimizer,
    data: Samples,
    cfg: RegressionConfig,
    mut on_epoch: impl FnMut(usize, f64, &NetworkParams) -> bool,
) -> Result<Vec<f64>> {
    let n = data.count(net)?;
    let din: usize = net.input_shape().iter().product();
    let dout: usize = net.output_shape().iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let b = idx.len();
            let x = Tensor::new(batch_shape(net.input_shape(), b), gather(data.inputs, din, idx))?;
            let y = Tensor::new(batch_shape(net.output_shape(), b), gather(data.targets, dout, idx))?;
            let (pred, tape) = net.forward(&x, None)?;
            let ones = Tensor::new(pred.shape().to_vec(), vec![1.0; pred.len()])?;
            let (loss, grad) = weighted_mse(&pred, &y, &ones)?;
            let grads = net.backward(&tape, &grad)?;
            opt.step(net, &grads)?;
            total += loss as f64;
            batches += 1;
        }
        let mean = total / batches as f64;
        history.push(mean);
        if !on_epoch(epoch, mean, net) {
            break;
        }
    }
    Ok(history)
}

/// Batched inference over flat samples.
pub fn predict(net: &NetworkParams, inputs: &[f32], chunk: usize) -> Result<Vec<f32>> {
    let din: usize = net.input_shape().iter().product();
    let mut out = Vec::new();
    for c in inputs.chunks(din * chunk.max(1)) {
        let b = c.len() / din;
        let x = Tensor::new(batch_shape(net.input_shape(), b), c.to_vec())?;
        out.extend_from_slice(net.infer(&x, None)?.data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkBuilder;

    #[test]
    fn learns_a_linear_map() {
        let mut net = NetworkBuilder::new(&[2]).dense(1).build(1).unwrap();
        let mut opt = Optimizer::adam(0.05);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..64 {
            let a = (i % 8) as f32 / 8.0;
            let b = (i / 8) as f32 / 8.0;
            xs.extend([a, b]);
            ys.push(2.0 * a - b + 0.5);
        }
        let cfg = RegressionConfig {
            epochs: 300,
            batch_size: 16,
            seed: 0,
        };
        let hist = fit(
            &mut net,
            &mut opt,
            Samples {
                inputs: &xs,
                targets: &ys,
            },
            cfg,
            |_, _, _| true,
        )
        .unwrap();
        assert!(hist.last().unwrap() < &1e-4, "{:?}", hist.last());
        let p = predict(&net, &xs, 10).unwrap();
        assert_eq!(p.len(), 64);
    }

    #[test]
    fn ragged_samples_are_rejected() {
        let mut net = NetworkBuilder::new(&[2]).dense(1).build(1).unwrap();
        let mut opt = Optimizer::adam(0.05);
        let cfg = RegressionConfig {
            epochs: 1,
            batch_size: 4,
            seed: 0,
        };
        let bad = Samples {
            inputs: &[1.0, 2.0, 3.0],
            targets: &[1.0],
        };
        assert!(fit(&mut net, &mut opt, bad, cfg, |_, _, _| true).is_err());
    }
}
