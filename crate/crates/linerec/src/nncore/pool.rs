//! Max pooling with argmax routing for the backward pass.
//!
//! No padding: the window must tile the input exactly, which the model
//! guarantees by padding batch widths to the architecture's downsampling
//! multiple up front.

use super::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

pub struct PoolCache {
    in_shape: [usize; 4],
    /// Linear index into the input for each output element's maximum.
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.window;
        let (sh, sw) = self.stride;
        assert!(h >= kh && w >= kw, "pool window {kh}x{kw} does not fit {h}x{w}");
        assert!(
            (h - kh) % sh == 0 && (w - kw) % sw == 0,
            "pool window {kh}x{kw}/{sh}x{sw} does not tile {h}x{w} exactly"
        );
        ((h - kh) / sh + 1, (w - kw) / sw + 1)
    }

    pub fn forward<S: Scalar>(&self, x: &Tensor<S>) -> (Tensor<S>, PoolCache) {
        let &[n, c, h, w] = x.shape() else { panic!("maxpool expects rank-4 input") };
        let (oh, ow) = self.out_dims(h, w);
        let (kh, kw) = self.window;
        let (sh, sw) = self.stride;
        let mut y = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        let xs = x.data();
        let ys = y.data_mut();
        for nc in 0..n * c {
            let plane = nc * h * w;
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut best_idx = plane + (ohi * sh) * w + owi * sw;
                    let mut best = xs[best_idx];
                    for khi in 0..kh {
                        let row = plane + (ohi * sh + khi) * w + owi * sw;
                        for kwi in 0..kw {
                            // Strict comparison keeps the first maximum in
                            // row-major order on ties.
                            if xs[row + kwi] > best {
                                best = xs[row + kwi];
                                best_idx = row + kwi;
                            }
                        }
                    }
                    let oi = nc * oh * ow + ohi * ow + owi;
                    ys[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
        (y, PoolCache { in_shape: [n, c, h, w], argmax })
    }

    pub fn backward<S: Scalar>(&self, cache: &PoolCache, dy: &Tensor<S>) -> Tensor<S> {
        assert_eq!(dy.len(), cache.argmax.len(), "maxpool backward shape mismatch");
        let mut dx = Tensor::zeros(&cache.in_shape);
        let ds = dx.data_mut();
        for (&src, &g) in cache.argmax.iter().zip(dy.data()) {
            ds[src] += g;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_takes_max_and_routes_gradient() {
        let pool = MaxPool2d { window: (2, 2), stride: (2, 2) };
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let (y, cache) = pool.forward(&x);
        assert_eq!(y.data(), &[4.0]);
        let dy = Tensor::from_vec(&[1, 1, 1, 1], vec![5.0]);
        let dx = pool.backward(&cache, &dy);
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn constant_input_stays_constant_and_ties_go_first() {
        let pool = MaxPool2d { window: (2, 2), stride: (2, 2) };
        let x: Tensor<f64> = Tensor::filled(&[1, 1, 4, 4], 3.5);
        let (y, cache) = pool.forward(&x);
        assert!(y.data().iter().all(|&v| v == 3.5));
        let dy = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let dx = pool.backward(&cache, &dy);
        // First element of each window wins the tie.
        let expected = [
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(dx.data(), &expected);
    }

    #[test]
    fn table_ii_pool_halves_both_dims() {
        let pool = MaxPool2d { window: (2, 2), stride: (2, 2) };
        assert_eq!(pool.out_dims(16, 64), (8, 32));
    }

    #[test]
    fn vertical_only_pool_keeps_width() {
        let pool = MaxPool2d { window: (2, 1), stride: (2, 1) };
        assert_eq!(pool.out_dims(16, 33), (8, 33));
    }

    #[test]
    #[should_panic(expected = "does not tile")]
    fn rejects_non_tiling_input() {
        let pool = MaxPool2d { window: (2, 2), stride: (2, 2) };
        let x: Tensor<f32> = Tensor::zeros(&[1, 1, 5, 4]);
        let _ = pool.forward(&x);
    }
}
