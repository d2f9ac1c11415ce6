use super::network::{Gradients, NetworkParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-3;
pub const MAX_PARAMETERS: usize = 10_000;

/// Scalar loss on the network output, returning the loss and its output gradient.
pub type LossFn<'a> = dyn Fn(&Tensor<f64>) -> (f64, Tensor<f64>) + 'a;

/// Half the squared distance to `target`.
pub fn half_squared_error(target: Tensor<f64>) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
    move |y: &Tensor<f64>| {
        let mut loss = 0.0;
        let grad: Vec<f64> = y
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| {
                loss += 0.5 * (a - b) * (a - b);
                a - b
            })
            .collect();
        (loss, Tensor::new(y.shape().to_vec(), grad).expect("same shape"))
    }
}

/// Maximum relative error between backpropagated and central-difference gradients.
///
/// Uses the fourth-order central stencil at step [`STEP`] and runs in `f64` on a
/// widened copy of `net`.
pub fn gradient_check(net: &NetworkParams, input: &Tensor, aux: Option<&Tensor>, loss: &LossFn) -> Result<f64> {
    gradient_check_with(net, input, aux, loss, |_| {})
}

/// Like [`gradient_check`], but lets the caller alter the analytic gradients first.
pub fn gradient_check_with(
    net: &NetworkParams,
    input: &Tensor,
    aux: Option<&Tensor>,
    loss: &LossFn,
    tamper: impl FnOnce(&mut Gradients<f64>),
) -> Result<f64> {
    if net.parameter_count() >= MAX_PARAMETERS {
        return Err(Error::InvalidNetwork(format!(
            "gradient check needs fewer than {MAX_PARAMETERS} parameters, got {}",
            net.parameter_count()
        )));
    }
    let mut wide: NetworkParams<f64> = net.cast();
    let x = input.cast::<f64>();
    let a = aux.map(Tensor::cast::<f64>);
    let (y, tape) = wide.forward(&x, a.as_ref())?;
    let (_, dy) = loss(&y);
    let mut analytic = wide.backward(&tape, &dy)?;
    tamper(&mut analytic);

    let keys: Vec<String> = wide.weights().keys().cloned().collect();
    let mut worst = 0.0f64;
    for key in keys {
        for i in 0..wide.weights()[&key].len() {
            let orig = wide.weights()[&key].data()[i];
            let mut probe = |delta: f64| -> Result<f64> {
                wide.weights_mut().get_mut(&key).expect("key").data_mut()[i] = orig + delta;
                Ok(loss(&wide.infer(&x, a.as_ref())?).0)
            };
            let (p1, m1) = (probe(STEP)?, probe(-STEP)?);
            let (p2, m2) = (probe(2.0 * STEP)?, probe(-2.0 * STEP)?);
            wide.weights_mut().get_mut(&key).expect("key").data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * STEP);
            let exact = analytic[&key].data()[i];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkBuilder;

    #[test]
    fn correct_dense_net_passes() {
        let net = NetworkBuilder::new(&[3]).dense(4).tanh().dense(2).build(3).unwrap();
        let x = Tensor::from_vec(vec![0.4, -0.7, 0.2]);
        let loss = half_squared_error(Tensor::from_vec(vec![0.3, -0.1]));
        assert!(gradient_check(&net, &x, None, &loss).unwrap() < 1e-4);
    }

    #[test]
    fn doubled_gradient_reports_half() {
        let net = NetworkBuilder::new(&[3]).dense(2).build(5).unwrap();
        let x = Tensor::from_vec(vec![0.4, -0.7, 0.2]);
        let loss = half_squared_error(Tensor::from_vec(vec![1.0, -1.0]));
        let err = gradient_check_with(&net, &x, None, &loss, |g| {
            g.get_mut("fc1.weight").unwrap().data_mut()[0] *= 2.0;
        })
        .unwrap();
        assert!((err - 0.5).abs() < 1e-4, "{err}");
    }

    #[test]
    fn large_nets_are_refused() {
        let net = NetworkBuilder::new(&[100]).dense(100).build(0).unwrap();
        let x = Tensor::from_vec(vec![0.0; 100]);
        let loss = half_squared_error(Tensor::from_vec(vec![0.0; 100]));
        assert!(gradient_check(&net, &x, None, &loss).is_err());
    }
}
