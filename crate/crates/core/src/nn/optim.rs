use std::collections::BTreeMap;

use super::network::{Gradients, NetworkParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    RmsProp { decay: f32, eps: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimizerKind {
    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp { decay: 0.95, eps: 1e-6 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer with per-tensor moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    steps: u64,
    first: BTreeMap<String, Vec<f32>>,
    second: BTreeMap<String, Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32) -> Self {
        Self {
            kind,
            lr,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn rmsprop(lr: f32) -> Self {
        Self::new(OptimizerKind::rmsprop(), lr)
    }

    pub fn adam(lr: f32) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn second_moment(&self, key: &str) -> Option<&[f32]> {
        self.second.get(key).map(Vec::as_slice)
    }

    pub fn step(&mut self, net: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        if grads.len() != net.weights().len() || grads.keys().any(|k| net.weight(k).is_none()) {
            let have: Vec<_> = grads.keys().collect();
            let want: Vec<_> = net.weights().keys().collect();
            return Err(Error::KeyMismatch(format!(
                "gradient keys {have:?} do not match weights {want:?}"
            )));
        }
        for (k, g) in grads {
            if g.shape() != net.weights()[k].shape() {
                return Err(Error::ShapeMismatch {
                    layer: k.clone(),
                    expected: net.weights()[k].shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        self.steps += 1;
        let t = self.steps as f64;
        let lr = self.lr;
        for (k, w) in net.weights_mut().iter_mut() {
            let g = grads[k].data();
            let n = g.len();
            let v = self.second.entry(k.clone()).or_insert_with(|| vec![0.0; n]);
            match self.kind {
                OptimizerKind::RmsProp { decay, eps } => {
                    for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = decay * *vi + (1.0 - decay) * gi * gi;
                        *wi -= lr * gi / (vi.sqrt() + eps);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self.first.entry(k.clone()).or_insert_with(|| vec![0.0; n]);
                    let c1 = (1.0 - (beta1 as f64).powf(t)) as f32;
                    let c2 = (1.0 - (beta2 as f64).powf(t)) as f32;
                    for (((wi, &gi), mi), vi) in w.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *wi -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
