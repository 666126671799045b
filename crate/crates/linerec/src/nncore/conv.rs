//! 2-D convolution (cross-correlation) via im2col + GEMM.

use rand::Rng;

use super::param::{he_uniform, Param};
use super::tensor::{gemm_into, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvShape {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        assert!(h + 2 * ph >= kh && w + 2 * pw >= kw, "kernel does not fit padded input");
        ((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<S> {
    pub shape: ConvShape,
    /// Flattened [out_channels, in_channels·kh·kw].
    pub weight: Param<S>,
    pub bias: Param<S>,
}

pub struct ConvCache<S> {
    x: Tensor<S>,
    out_dims: (usize, usize),
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(name: &str, shape: ConvShape, rng: &mut impl Rng) -> Self {
        let fan_in = shape.patch_len();
        Conv2d {
            shape,
            weight: Param::new(
                format!("{name}.weight"),
                he_uniform(&[shape.out_channels, fan_in], fan_in, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[shape.out_channels])),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, ConvCache<S>) {
        let &[n, c, h, w] = x.shape() else { panic!("conv2d expects rank-4 input") };
        assert_eq!(c, self.shape.in_channels, "conv2d channel mismatch");
        let (oh, ow) = self.shape.out_dims(h, w);
        let oc = self.shape.out_channels;
        let mut y = Tensor::zeros(&[n, oc, oh, ow]);
        let mut cols = Tensor::zeros(&[self.shape.patch_len(), oh * ow]);
        for ni in 0..n {
            im2col(x, ni, &self.shape, (oh, ow), &mut cols);
            let mut yn = Tensor::zeros(&[oc, oh * ow]);
            gemm_into(S::ONE, &self.weight.value, false, &cols, false, S::ZERO, &mut yn);
            let dst = &mut y.data_mut()[ni * oc * oh * ow..(ni + 1) * oc * oh * ow];
            for (ocid, chunk) in dst.chunks_exact_mut(oh * ow).enumerate() {
                let b = self.bias.value.data()[ocid];
                for (d, s) in chunk.iter_mut().zip(&yn.data()[ocid * oh * ow..(ocid + 1) * oh * ow])
                {
                    *d = *s + b;
                }
            }
        }
        y.debug_check_finite("conv2d.forward");
        (y, ConvCache { x: x.clone(), out_dims: (oh, ow) })
    }

    pub fn backward(&mut self, cache: &ConvCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let &[n, c, h, w] = cache.x.shape() else { panic!("cache lost input shape") };
        let (oh, ow) = cache.out_dims;
        let oc = self.shape.out_channels;
        dy.assert_shape(&[n, oc, oh, ow], "conv2d.backward dy");
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut cols = Tensor::zeros(&[self.shape.patch_len(), oh * ow]);
        let mut dcols = Tensor::zeros(&[self.shape.patch_len(), oh * ow]);
        for ni in 0..n {
            let dyn_ = Tensor::from_vec(
                &[oc, oh * ow],
                dy.data()[ni * oc * oh * ow..(ni + 1) * oc * oh * ow].to_vec(),
            );
            // Bias gradient: sum over spatial positions.
            for ocid in 0..oc {
                let mut acc = S::ZERO;
                for v in &dyn_.data()[ocid * oh * ow..(ocid + 1) * oh * ow] {
                    acc += *v;
                }
                self.bias.grad.data_mut()[ocid] += acc;
            }
            // Weight gradient: dW += dy_n · cols_nᵀ (cols recomputed, halves
            // the forward cache memory).
            im2col(&cache.x, ni, &self.shape, (oh, ow), &mut cols);
            gemm_into(S::ONE, &dyn_, false, &cols, true, S::ONE, &mut self.weight.grad);
            // Input gradient: scatter Wᵀ · dy_n back through the patches.
            gemm_into(S::ONE, &self.weight.value, true, &dyn_, false, S::ZERO, &mut dcols);
            col2im_add(&dcols, ni, &self.shape, (oh, ow), &mut dx);
        }
        dx
    }
}

/// Gather patches of sample `ni` into `cols` [C·KH·KW, OH·OW]; positions
/// outside the padded input contribute zero.
fn im2col<S: Scalar>(
    x: &Tensor<S>,
    ni: usize,
    shape: &ConvShape,
    (oh, ow): (usize, usize),
    cols: &mut Tensor<S>,
) {
    let &[_, c, h, w] = x.shape() else { unreachable!() };
    let (kh, kw) = shape.kernel;
    let (sh, sw) = shape.stride;
    let (ph, pw) = shape.padding;
    let xs = &x.data()[ni * c * h * w..(ni + 1) * c * h * w];
    let out = cols.data_mut();
    let mut r = 0;
    for ci in 0..c {
        for khi in 0..kh {
            for kwi in 0..kw {
                let row = &mut out[r * oh * ow..(r + 1) * oh * ow];
                r += 1;
                // Output columns whose source x-coordinate lands inside
                // [0, w); everything outside reads padding zeros.
                let (lo, hi) = valid_span(ow, sw, kwi, pw, w);
                for ohi in 0..oh {
                    let hy = (ohi * sh + khi) as isize - ph as isize;
                    let dst = &mut row[ohi * ow..(ohi + 1) * ow];
                    if hy < 0 || hy >= h as isize {
                        dst.fill(S::ZERO);
                        continue;
                    }
                    let src_row = &xs[(ci * h + hy as usize) * w..(ci * h + hy as usize + 1) * w];
                    dst[..lo].fill(S::ZERO);
                    dst[hi..].fill(S::ZERO);
                    if lo == hi {
                        continue;
                    }
                    let start = lo * sw + kwi - pw;
                    if sw == 1 {
                        dst[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    } else {
                        let src = src_row[start..].iter().step_by(sw);
                        for (v, &s) in dst[lo..hi].iter_mut().zip(src) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// Range `lo..hi` of output x-indices whose source column `oi*sw + k - p`
/// falls inside `[0, w)`; empty when the kernel tap never lands in-bounds.
fn valid_span(ow: usize, sw: usize, k: usize, p: usize, w: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(sw) };
    let hi = if w + p > k { ((w + p - k - 1) / sw + 1).min(ow) } else { 0 };
    (lo.min(hi), hi)
}

/// Scatter-add the patch-space gradient back onto sample `ni` of `dx`.
fn col2im_add<S: Scalar>(
    dcols: &Tensor<S>,
    ni: usize,
    shape: &ConvShape,
    (oh, ow): (usize, usize),
    dx: &mut Tensor<S>,
) {
    let &[_, c, h, w] = dx.shape() else { unreachable!() };
    let (kh, kw) = shape.kernel;
    let (sh, sw) = shape.stride;
    let (ph, pw) = shape.padding;
    let xs = &mut dx.data_mut()[ni * c * h * w..(ni + 1) * c * h * w];
    let cols = dcols.data();
    let mut r = 0;
    for ci in 0..c {
        for khi in 0..kh {
            for kwi in 0..kw {
                let row = &cols[r * oh * ow..(r + 1) * oh * ow];
                r += 1;
                let (lo, hi) = valid_span(ow, sw, kwi, pw, w);
                if lo == hi {
                    continue;
                }
                for ohi in 0..oh {
                    let hy = (ohi * sh + khi) as isize - ph as isize;
                    if hy < 0 || hy >= h as isize {
                        continue;
                    }
                    let dst =
                        &mut xs[(ci * h + hy as usize) * w..(ci * h + hy as usize + 1) * w];
                    let src = &row[ohi * ow + lo..ohi * ow + hi];
                    let start = lo * sw + kwi - pw;
                    if sw == 1 {
                        for (d, &v) in dst[start..start + (hi - lo)].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[start..].iter_mut().step_by(sw).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}
