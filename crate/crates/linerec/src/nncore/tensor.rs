//! Dense row-major tensors generic over the scalar type.
//!
//! Training and inference run in f32; gradient checks instantiate the same
//! code in f64 so central differences can resolve tight tolerances.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// The arithmetic surface the numeric core needs, plus a GEMM kernel.
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const NEG_INFINITY: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maxv(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// C = alpha * A(m,k) * B(k,n) + beta * C(m,n), arbitrary strides.
    ///
    /// # Safety
    /// Pointers must reference buffers valid for the given dimensions and
    /// strides; C must not alias A or B.
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($ty:ty, $gemm:path) => {
        impl Scalar for $ty {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const NEG_INFINITY: Self = <$ty>::NEG_INFINITY;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $ty
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn maxv(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$ty>::is_finite(self)
            }

            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![S::ZERO; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret under a new shape with the same element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {shape:?} does not match {} elements",
            self.data.len()
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Row-major linear index for a 2-D tensor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at2_mut(&mut self, i: usize, j: usize) -> &mut S {
        debug_assert_eq!(self.shape.len(), 2);
        let c = self.shape[1];
        &mut self.data[i * c + j]
    }

    pub fn assert_shape(&self, shape: &[usize], what: &str) {
        assert_eq!(self.shape, shape, "{what}: expected shape {shape:?}, got {:?}", self.shape);
    }

    /// Debug-mode guard: numeric ops must never emit NaN or infinity.
    /// The all-finite scan stays branch-free so it vectorizes; the slow
    /// locate pass runs only when the check is about to fail.
    #[inline]
    pub fn debug_check_finite(&self, context: &str) {
        if cfg!(debug_assertions) && !self.data.iter().all(|v| v.is_finite()) {
            let (i, v) =
                self.data.iter().enumerate().find(|(_, v)| !v.is_finite()).expect("scan hit");
            panic!("{context}: non-finite value {v} at index {i}");
        }
    }

    /// Convert element type (used to lift f32 checkpoints into f64 checks).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// C = alpha * op(A) * op(B) + beta * C for contiguous row-major tensors.
///
/// `ta`/`tb` select transposition without copying: transposed operands are
/// addressed through swapped strides.
pub fn gemm_into<S: Scalar>(
    alpha: S,
    a: &Tensor<S>,
    ta: bool,
    b: &Tensor<S>,
    tb: bool,
    beta: S,
    c: &mut Tensor<S>,
) {
    assert_eq!(a.shape().len(), 2, "gemm lhs must be rank 2");
    assert_eq!(b.shape().len(), 2, "gemm rhs must be rank 2");
    assert_eq!(c.shape().len(), 2, "gemm out must be rank 2");
    let (m, ka) = if ta { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
    let (kb, n) = if tb { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
    assert_eq!(ka, kb, "gemm inner dimensions disagree: {ka} vs {kb}");
    c.assert_shape(&[m, n], "gemm out");
    let (rsa, csa) = if ta { (1, a.shape()[1] as isize) } else { (a.shape()[1] as isize, 1) };
    let (rsb, csb) = if tb { (1, b.shape()[1] as isize) } else { (b.shape()[1] as isize, 1) };
    let k = ka;
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        S::gemm(
            m,
            k,
            n,
            alpha,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            beta,
            c.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convenience wrapper allocating the output: op(A) * op(B).
pub fn matmul<S: Scalar>(a: &Tensor<S>, ta: bool, b: &Tensor<S>, tb: bool) -> Tensor<S> {
    let m = if ta { a.shape()[1] } else { a.shape()[0] };
    let n = if tb { b.shape()[0] } else { b.shape()[1] };
    let mut c = Tensor::zeros(&[m, n]);
    gemm_into(S::ONE, a, ta, b, tb, S::ZERO, &mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn naive_matmul(a: &Tensor<f64>, ta: bool, b: &Tensor<f64>, tb: bool) -> Tensor<f64> {
        let get = |t: &Tensor<f64>, tr: bool, i: usize, j: usize| {
            if tr {
                t.at2(j, i)
            } else {
                t.at2(i, j)
            }
        };
        let m = if ta { a.shape()[1] } else { a.shape()[0] };
        let k = if ta { a.shape()[0] } else { a.shape()[1] };
        let n = if tb { b.shape()[0] } else { b.shape()[1] };
        let mut c = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += get(a, ta, i, l) * get(b, tb, l, j);
                }
                *c.at2_mut(i, j) = acc;
            }
        }
        c
    }

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        let data = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data)
    }

    #[test]
    fn gemm_matches_naive_for_all_transpose_combos() {
        let mut rng = substream(7, "gemm-test", 0);
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (8, 2, 7), (5, 5, 5)] {
            for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
                let a_shape = if ta { [k, m] } else { [m, k] };
                let b_shape = if tb { [n, k] } else { [k, n] };
                let a = random_tensor(&a_shape, &mut rng);
                let b = random_tensor(&b_shape, &mut rng);
                let fast = matmul(&a, ta, &b, tb);
                let slow = naive_matmul(&a, ta, &b, tb);
                for (x, y) in fast.data().iter().zip(slow.data()) {
                    assert!((x - y).abs() < 1e-12, "ta={ta} tb={tb}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let mut c = Tensor::filled(&[2, 2], 10.0);
        gemm_into(1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c.data(), &[11.0, 12.0, 13.0, 14.0]);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = t.clone().reshaped(&[3, 2]);
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn from_vec_rejects_bad_shape() {
        let _ = Tensor::from_vec(&[2, 2], vec![1.0f32; 3]);
    }

    #[test]
    fn cast_round_trips_exact_values() {
        let t = Tensor::from_vec(&[3], vec![1.5f32, -2.25, 0.0]);
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(back.data(), t.data());
    }
}
