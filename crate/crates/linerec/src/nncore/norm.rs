//! Batch normalization over the channel axis of [N, C, H, W] maps.

use super::param::Param;
use super::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct BatchNorm2d<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    /// Non-trainable buffers updated in train mode, consumed in infer mode.
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache<S> {
    x_hat: Tensor<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), Tensor::filled(&[channels], S::ONE)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], S::ONE),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Train mode: normalize by batch statistics (biased variance) over
    /// (N, H, W) per channel and refresh running stats.
    pub fn forward_train(&mut self, x: &Tensor<S>) -> (Tensor<S>, BnCache<S>) {
        let &[n, c, h, w] = x.shape() else { panic!("batchnorm expects rank-4 input") };
        assert_eq!(c, self.channels(), "batchnorm channel mismatch");
        let m = (n * h * w) as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut x_hat = Tensor::zeros(x.shape());
        let mut inv_std = vec![S::ZERO; c];
        let mom = S::from_f64(self.momentum);
        let one_minus = S::from_f64(1.0 - self.momentum);
        for ci in 0..c {
            let mut sum = S::ZERO;
            let mut sq = S::ZERO;
            for ni in 0..n {
                let plane = ((ni * c + ci) * h) * w;
                for &v in &x.data()[plane..plane + h * w] {
                    sum += v;
                    sq += v * v;
                }
            }
            let mf = S::from_f64(m);
            let mean = sum / mf;
            let var = (sq / mf - mean * mean).maxv(S::ZERO);
            let istd = S::ONE / (var + S::from_f64(self.eps)).sqrt();
            inv_std[ci] = istd;
            let g = self.gamma.value.data()[ci];
            let b = self.beta.value.data()[ci];
            for ni in 0..n {
                let plane = ((ni * c + ci) * h) * w;
                let xs = &x.data()[plane..plane + h * w];
                let xh_out = &mut x_hat.data_mut()[plane..plane + h * w];
                for (xh, &v) in xh_out.iter_mut().zip(xs) {
                    *xh = (v - mean) * istd;
                }
                let ys = &mut y.data_mut()[plane..plane + h * w];
                for (yv, &xh) in ys.iter_mut().zip(x_hat.data()[plane..plane + h * w].iter()) {
                    *yv = g * xh + b;
                }
            }
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = mom * *rm + one_minus * mean;
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = mom * *rv + one_minus * var;
        }
        y.debug_check_finite("batchnorm.forward_train");
        (y, BnCache { x_hat, inv_std })
    }

    /// Infer mode: normalize by the running statistics.
    pub fn forward_infer(&self, x: &Tensor<S>) -> Tensor<S> {
        let &[n, c, h, w] = x.shape() else { panic!("batchnorm expects rank-4 input") };
        assert_eq!(c, self.channels(), "batchnorm channel mismatch");
        let mut y = Tensor::zeros(x.shape());
        for ci in 0..c {
            let mean = self.running_mean.data()[ci];
            let var = self.running_var.data()[ci];
            let istd = S::ONE / (var + S::from_f64(self.eps)).sqrt();
            // y = scale * x + shift, folded so the inner loop is one fma.
            let scale = self.gamma.value.data()[ci] * istd;
            let shift = self.beta.value.data()[ci] - scale * mean;
            for ni in 0..n {
                let plane = ((ni * c + ci) * h) * w;
                let xs = &x.data()[plane..plane + h * w];
                let ys = &mut y.data_mut()[plane..plane + h * w];
                for (yv, &xv) in ys.iter_mut().zip(xs) {
                    *yv = scale * xv + shift;
                }
            }
        }
        y.debug_check_finite("batchnorm.forward_infer");
        y
    }

    /// Exact backward through the train-mode normalization.
    pub fn backward(&mut self, cache: &BnCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let &[n, c, h, w] = cache.x_hat.shape() else { panic!("cache lost shape") };
        dy.assert_shape(&[n, c, h, w], "batchnorm.backward dy");
        let m = S::from_f64((n * h * w) as f64);
        let mut dx = Tensor::zeros(cache.x_hat.shape());
        for ci in 0..c {
            let mut sum_dy = S::ZERO;
            let mut sum_dy_xhat = S::ZERO;
            for ni in 0..n {
                let plane = ((ni * c + ci) * h) * w;
                let dys = &dy.data()[plane..plane + h * w];
                let xhs = &cache.x_hat.data()[plane..plane + h * w];
                for (&d, &xh) in dys.iter().zip(xhs) {
                    sum_dy += d;
                    sum_dy_xhat += d * xh;
                }
            }
            self.gamma.grad.data_mut()[ci] += sum_dy_xhat;
            self.beta.grad.data_mut()[ci] += sum_dy;
            let scale = self.gamma.value.data()[ci] * cache.inv_std[ci] / m;
            for ni in 0..n {
                let plane = ((ni * c + ci) * h) * w;
                let dys = &dy.data()[plane..plane + h * w];
                let xhs = &cache.x_hat.data()[plane..plane + h * w];
                let dxs = &mut dx.data_mut()[plane..plane + h * w];
                for ((dxv, &d), &xh) in dxs.iter_mut().zip(dys).zip(xhs) {
                    *dxv = scale * (m * d - sum_dy - xh * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = substream(seed, "bn-test", 0);
        let data = (0..shape.iter().product()).map(|_| rng.gen_range(-3.0..5.0)).collect();
        Tensor::from_vec(shape, data)
    }

    fn channel_stats(y: &Tensor<f64>, ci: usize) -> (f64, f64) {
        let &[n, c, h, w] = y.shape() else { unreachable!() };
        let mut vals = Vec::new();
        for ni in 0..n {
            let plane = ((ni * c + ci) * h) * w;
            vals.extend_from_slice(&y.data()[plane..plane + h * w]);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut bn: BatchNorm2d<f64> = BatchNorm2d::new("bn", 3);
        let x = random_input(&[4, 3, 5, 6], 21);
        let (y, _) = bn.forward_train(&x);
        for ci in 0..3 {
            let (mean, var) = channel_stats(&y, ci);
            assert!(mean.abs() < 1e-5, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ci} var {var}");
        }
    }

    #[test]
    fn affine_parameters_shift_and_scale() {
        let mut bn: BatchNorm2d<f64> = BatchNorm2d::new("bn", 2);
        bn.gamma.value.fill(2.0);
        bn.beta.value.fill(3.0);
        let x = random_input(&[3, 2, 4, 4], 22);
        let (y, _) = bn.forward_train(&x);
        for ci in 0..2 {
            let (mean, var) = channel_stats(&y, ci);
            assert!((mean - 3.0).abs() < 1e-5);
            assert!((var.sqrt() - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn converged_running_stats_make_infer_match_train() {
        let mut bn: BatchNorm2d<f64> = BatchNorm2d::new("bn", 2);
        let x = random_input(&[2, 2, 3, 3], 23);
        let mut last = None;
        for _ in 0..400 {
            let (y, _) = bn.forward_train(&x);
            last = Some(y);
        }
        let train_out = last.unwrap();
        let infer_out = bn.forward_infer(&x);
        for (a, b) in train_out.data().iter().zip(infer_out.data()) {
            assert!((a - b).abs() < 1e-3, "train {a} vs infer {b}");
        }
    }
}
