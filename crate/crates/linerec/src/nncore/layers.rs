//! Pointwise and dense layers: ReLU, linear, inverted dropout,
//! softmax / log-softmax, and the map-to-sequence reshape.

use rand::Rng;

use super::param::{he_uniform, Param};
use super::tensor::{gemm_into, Scalar, Tensor};

/// ReLU. Returns the activation; backward masks on the cached output.
pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let data = x.data().iter().map(|&v| v.maxv(S::ZERO)).collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn relu_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(y.shape(), dy.shape());
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&yv, &dv)| if yv > S::ZERO { dv } else { S::ZERO })
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// Fully connected layer on the trailing feature axis.
#[derive(Clone, Debug)]
pub struct Linear<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
}

pub struct LinearCache<S> {
    x: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                he_uniform(&[in_features, out_features], in_features, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_features])),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// Input: [..., in_features]; output: [..., out_features].
    pub fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, LinearCache<S>) {
        let f = self.in_features();
        let o = self.out_features();
        assert_eq!(x.shape().last(), Some(&f), "linear input feature dim");
        let rows = x.len() / f;
        let x2 = x.clone().reshaped(&[rows, f]);
        let mut y = Tensor::zeros(&[rows, o]);
        gemm_into(S::ONE, &x2, false, &self.weight.value, false, S::ZERO, &mut y);
        let b = self.bias.value.data();
        for r in 0..rows {
            let row = &mut y.data_mut()[r * o..(r + 1) * o];
            for (val, &bv) in row.iter_mut().zip(b) {
                *val += bv;
            }
        }
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().expect("rank >= 1") = o;
        let y = y.reshaped(&out_shape);
        y.debug_check_finite("linear.forward");
        (y, LinearCache { x: x2 })
    }

    /// Accumulates parameter gradients, returns gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &LinearCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let f = self.in_features();
        let o = self.out_features();
        let rows = cache.x.shape()[0];
        let mut out_shape = dy.shape().to_vec();
        let dy2 = dy.clone().reshaped(&[rows, o]);
        gemm_into(S::ONE, &cache.x, true, &dy2, false, S::ONE, &mut self.weight.grad);
        let db = self.bias.grad.data_mut();
        for r in 0..rows {
            let row = &dy2.data()[r * o..(r + 1) * o];
            for (g, &d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[rows, f]);
        gemm_into(S::ONE, &dy2, false, &self.weight.value, true, S::ZERO, &mut dx);
        *out_shape.last_mut().expect("rank >= 1") = f;
        dx.reshaped(&out_shape)
    }
}

/// Inverted dropout: survivors are scaled at train time so inference is a
/// plain identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
}

pub struct DropoutCache<S> {
    /// Per-element multiplier: 0 for dropped, 1/(1-rate) for kept.
    mask: Vec<S>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Dropout { rate }
    }

    pub fn forward_train<S: Scalar>(
        &self,
        x: &Tensor<S>,
        rng: &mut impl Rng,
    ) -> (Tensor<S>, DropoutCache<S>) {
        if self.rate == 0.0 {
            return (x.clone(), DropoutCache { mask: vec![S::ONE; x.len()] });
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - self.rate));
        let mask: Vec<S> = (0..x.len())
            .map(|_| if rng.gen_range(0.0..1.0) < self.rate { S::ZERO } else { keep_scale })
            .collect();
        (self.apply_mask(x, &mask), DropoutCache { mask })
    }

    /// Deterministic variant for gradient checking: the caller supplies the
    /// multiplier mask.
    pub fn apply_mask<S: Scalar>(&self, x: &Tensor<S>, mask: &[S]) -> Tensor<S> {
        assert_eq!(mask.len(), x.len());
        let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
        Tensor::from_vec(x.shape(), data)
    }

    pub fn forward_infer<S: Scalar>(&self, x: &Tensor<S>) -> Tensor<S> {
        x.clone()
    }

    pub fn backward<S: Scalar>(&self, cache: &DropoutCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let data = dy.data().iter().zip(&cache.mask).map(|(&d, &m)| d * m).collect();
        Tensor::from_vec(dy.shape(), data)
    }
}

/// Softmax over the trailing axis.
pub fn softmax<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let c = *x.shape().last().expect("softmax needs rank >= 1");
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(S::NEG_INFINITY, S::maxv);
        let mut sum = S::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y.debug_check_finite("softmax");
    y
}

/// d(loss)/dx given y = softmax(x) and dy: dx = y ⊙ (dy − Σ dy⊙y).
pub fn softmax_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let c = *y.shape().last().expect("rank >= 1");
    let mut dx = Tensor::zeros(y.shape());
    for ((yr, dr), xr) in y
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
    {
        let mut dot = S::ZERO;
        for (yv, dv) in yr.iter().zip(dr) {
            dot += *yv * *dv;
        }
        for ((x, yv), dv) in xr.iter_mut().zip(yr).zip(dr) {
            *x = *yv * (*dv - dot);
        }
    }
    dx
}

/// Log-softmax over the trailing axis (max-subtracted).
pub fn log_softmax<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let c = *x.shape().last().expect("log_softmax needs rank >= 1");
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(S::NEG_INFINITY, S::maxv);
        let mut sum = S::ZERO;
        for v in row.iter() {
            sum += (*v - max).exp();
        }
        let log_z = max + sum.ln();
        for v in row.iter_mut() {
            *v -= log_z;
        }
    }
    y.debug_check_finite("log_softmax");
    y
}

/// dx = dy − softmax(x) · Σ dy, with y = log_softmax(x) cached.
pub fn log_softmax_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let c = *y.shape().last().expect("rank >= 1");
    let mut dx = Tensor::zeros(y.shape());
    for ((yr, dr), xr) in y
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
    {
        let mut total = S::ZERO;
        for dv in dr {
            total += *dv;
        }
        for ((x, yv), dv) in xr.iter_mut().zip(yr).zip(dr) {
            *x = *dv - yv.exp() * total;
        }
    }
    dx
}

/// Feature map [N, C, H, W] → sequence [W, N, C·H].
///
/// Column w becomes timestep w; features are flattened channel-major over
/// height: feature index = c·H + h.
pub fn map_to_sequence<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let &[n, c, h, w] = x.shape() else { panic!("map_to_sequence expects rank 4") };
    let mut y = Tensor::zeros(&[w, n, c * h]);
    let xs = x.data();
    let ys = y.data_mut();
    for wi in 0..w {
        for ni in 0..n {
            let base = (wi * n + ni) * c * h;
            for ci in 0..c {
                for hi in 0..h {
                    ys[base + ci * h + hi] = xs[((ni * c + ci) * h + hi) * w + wi];
                }
            }
        }
    }
    y
}

/// Gradient of [`map_to_sequence`]: scatter [W, N, C·H] back to [N, C, H, W].
pub fn map_to_sequence_backward<S: Scalar>(dy: &Tensor<S>, c: usize, h: usize) -> Tensor<S> {
    let &[w, n, f] = dy.shape() else { panic!("sequence gradient expects rank 3") };
    assert_eq!(f, c * h, "feature dim must be C*H");
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let ds = dy.data();
    let xs = dx.data_mut();
    for wi in 0..w {
        for ni in 0..n {
            let base = (wi * n + ni) * f;
            for ci in 0..c {
                for hi in 0..h {
                    xs[((ni * c + ci) * h + hi) * w + wi] = ds[base + ci * h + hi];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn linear_identity_weights_pass_through() {
        let mut rng = substream(3, "linear-test", 0);
        let mut lin: Linear<f64> = Linear::new("l", 3, 3, &mut rng);
        lin.weight.value.fill(0.0);
        for i in 0..3 {
            *lin.weight.value.at2_mut(i, i) = 1.0;
        }
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (y, _) = lin.forward(&x);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn linear_keeps_leading_shape() {
        let mut rng = substream(3, "linear-test", 1);
        let lin: Linear<f32> = Linear::new("l", 4, 7, &mut rng);
        let x = Tensor::zeros(&[5, 2, 4]);
        let (y, _) = lin.forward(&x);
        assert_eq!(y.shape(), &[5, 2, 7]);
    }

    #[test]
    fn softmax_uniform_logits_give_uniform_probs() {
        let x: Tensor<f64> = Tensor::filled(&[2, 133], 0.7);
        let y = softmax(&x);
        for &p in y.data() {
            assert!((p - 1.0 / 133.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = Tensor::from_vec(&[1, 4], vec![0.1f64, -0.4, 2.0, 1.1]);
        let shifted = Tensor::from_vec(&[1, 4], x.data().iter().map(|v| v + 123.0).collect());
        let a = softmax(&x);
        let b = softmax(&shifted);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = substream(5, "softmax-test", 0);
        let data = (0..6 * 10).map(|_| rand::Rng::gen_range(&mut rng, -4.0..4.0)).collect();
        let x: Tensor<f32> = Tensor::from_vec(&[6, 10], data);
        let y = softmax(&x);
        for row in y.data().chunks_exact(10) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = Tensor::from_vec(&[1, 5], vec![0.3f64, -1.0, 2.5, 0.0, 1.0]);
        let a = log_softmax(&x);
        let b = softmax(&x);
        for (la, pb) in a.data().iter().zip(b.data()) {
            assert!((la - pb.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_and_infer_are_identity() {
        let x: Tensor<f32> = Tensor::filled(&[10], 3.0);
        let d = Dropout::new(0.0);
        let mut rng = substream(9, "dropout-test", 0);
        let (y, _) = d.forward_train(&x, &mut rng);
        assert_eq!(y.data(), x.data());
        let d = Dropout::new(0.7);
        assert_eq!(d.forward_infer(&x).data(), x.data());
    }

    #[test]
    fn dropout_preserves_mean_on_average() {
        let n = 100_000;
        let x: Tensor<f64> = Tensor::filled(&[n], 1.0);
        let d = Dropout::new(0.5);
        let mut rng = substream(9, "dropout-test", 1);
        let (y, _) = d.forward_train(&x, &mut rng);
        let mean: f64 = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "inverted dropout mean drifted: {mean}");
    }

    #[test]
    fn map_to_sequence_shape_and_order() {
        // N=1, C=2, H=2, W=3 with recognizable values: x[n,c,h,w] = c*100 + h*10 + w.
        let mut x: Tensor<f64> = Tensor::zeros(&[1, 2, 2, 3]);
        for c in 0..2 {
            for h in 0..2 {
                for w in 0..3 {
                    x.data_mut()[(c * 2 + h) * 3 + w] = (c * 100 + h * 10 + w) as f64;
                }
            }
        }
        let y = map_to_sequence(&x);
        assert_eq!(y.shape(), &[3, 1, 4]);
        // Timestep w=1, feature c*H+h in order (0,0),(0,1),(1,0),(1,1).
        assert_eq!(&y.data()[4..8], &[1.0, 11.0, 101.0, 111.0]);
        let back = map_to_sequence_backward(&y, 2, 2);
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn relu_clamps_and_routes_gradient() {
        let x = Tensor::from_vec(&[4], vec![-1.0f64, 0.0, 2.0, -0.5]);
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let dy = Tensor::filled(&[4], 1.0);
        let dx = relu_backward(&y, &dy);
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 0.0]);
    }
}
