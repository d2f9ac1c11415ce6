use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// `mean(w * (pred - target)^2)` and its gradient `2 w (pred - target) / N`.
pub fn weighted_mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, weights: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    for (name, t) in [("target", target), ("weights", weights)] {
        if t.shape() != pred.shape() {
            return Err(Error::ShapeMismatch {
                layer: format!("weighted_mse {name}"),
                expected: pred.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
    }
    if weights.data().iter().any(|&w| w < T::zero()) {
        return Err(Error::InvalidTensor("loss weights must be non-negative".into()));
    }
    let n = T::from_f64(pred.len() as f64);
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for ((&p, &t), &w) in pred.data().iter().zip(target.data()).zip(weights.data()) {
        let d = p - t;
        loss += w * d * d;
        grad.push(two * w * d / n);
    }
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
