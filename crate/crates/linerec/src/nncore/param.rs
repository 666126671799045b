//! Trainable parameters and weight initialization.

use rand::Rng;

use super::tensor::{Scalar, Tensor};

/// A named trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub moment1: Tensor<S>,
    pub moment2: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        let shape = value.shape().to_vec();
        Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            moment1: Tensor::zeros(&shape),
            moment2: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::ZERO);
    }
}

/// He-style uniform init: U(-limit, limit) with limit = sqrt(6 / fan_in).
pub fn he_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<S> {
    assert!(fan_in > 0);
    let limit = (6.0 / fan_in as f64).sqrt();
    uniform(shape, limit, rng)
}

/// Scaled uniform init for recurrent matrices: U(-s, s), s = 1/sqrt(width).
pub fn scaled_uniform<S: Scalar>(shape: &[usize], width: usize, rng: &mut impl Rng) -> Tensor<S> {
    assert!(width > 0);
    let limit = 1.0 / (width as f64).sqrt();
    uniform(shape, limit, rng)
}

fn uniform<S: Scalar>(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn he_uniform_respects_limit() {
        let mut rng = substream(11, "init-test", 0);
        let t: Tensor<f64> = he_uniform(&[64, 9], 9, &mut rng);
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < limit));
        let mean: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean} should be near zero");
    }

    #[test]
    fn param_state_shapes_match_value() {
        let t: Tensor<f32> = Tensor::zeros(&[3, 4]);
        let p = Param::new("w", t);
        assert_eq!(p.grad.shape(), &[3, 4]);
        assert_eq!(p.moment1.shape(), &[3, 4]);
        assert_eq!(p.moment2.shape(), &[3, 4]);
    }
}
