//! Connectionist Temporal Classification: log-space forward-backward loss
//! with an exact gradient over per-timestep log-probabilities, greedy
//! best-path decoding, and a brute-force alignment oracle for tests.
//!
//! Class 0 is the blank throughout.

use thiserror::Error;

use crate::nncore::tensor::{Scalar, Tensor};

pub const BLANK: usize = 0;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("sample {sample}: label needs at least {required} frames, got {available}")]
    InfeasibleLabel { sample: usize, required: usize, available: usize },
    #[error("brute-force enumeration capped at T <= {cap}, got T = {t}")]
    CapExceeded { t: usize, cap: usize },
}

/// Fewest frames that can emit `label`: its length plus one separating blank
/// per adjacent repeat.
pub fn min_frames(label: &[usize]) -> usize {
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    label.len() + repeats
}

#[inline]
fn logsumexp2<S: Scalar>(a: S, b: S) -> S {
    let m = a.maxv(b);
    if m == S::NEG_INFINITY {
        return S::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[inline]
fn logsumexp3<S: Scalar>(a: S, b: S, c: S) -> S {
    logsumexp2(logsumexp2(a, b), c)
}

/// Mean negative log-likelihood over the batch and its exact gradient with
/// respect to `log_probs` [T, N, C]. Labels are blank-free.
pub fn ctc_loss<S: Scalar>(
    log_probs: &Tensor<S>,
    input_lengths: &[usize],
    labels: &[Vec<usize>],
) -> Result<(S, Tensor<S>), CtcError> {
    let &[t_max, n, classes] = log_probs.shape() else { panic!("ctc expects [T, N, C]") };
    assert_eq!(input_lengths.len(), n, "input_lengths count");
    assert_eq!(labels.len(), n, "label count");
    let mut grad = Tensor::zeros(log_probs.shape());
    let mut total = S::ZERO;
    for ni in 0..n {
        let t_n = input_lengths[ni];
        assert!(t_n >= 1 && t_n <= t_max, "sample {ni}: invalid input length {t_n}");
        let label = &labels[ni];
        for &l in label {
            assert!(l != BLANK && l < classes, "sample {ni}: label {l} out of range");
        }
        let required = min_frames(label);
        if t_n < required {
            return Err(CtcError::InfeasibleLabel { sample: ni, required, available: t_n });
        }
        let log_z = forward_backward(log_probs, ni, t_n, label, &mut grad);
        total += -log_z;
    }
    let inv_n = S::ONE / S::from_f64(n as f64);
    total *= inv_n;
    for g in grad.data_mut() {
        *g *= inv_n;
    }
    grad.debug_check_finite("ctc.grad");
    debug_assert!(total.is_finite(), "ctc loss must be finite for feasible labels");
    Ok((total, grad))
}

/// Runs α/β over the blank-extended label of one sample, accumulates
/// −∂logZ/∂logp into `grad`, and returns logZ.
fn forward_backward<S: Scalar>(
    log_probs: &Tensor<S>,
    ni: usize,
    t_n: usize,
    label: &[usize],
    grad: &mut Tensor<S>,
) -> S {
    let &[_, n, classes] = log_probs.shape() else { unreachable!() };
    let r = 2 * label.len() + 1;
    let ext = |s: usize| if s % 2 == 0 { BLANK } else { label[s / 2] };
    let lp = |t: usize, k: usize| log_probs.data()[(t * n + ni) * classes + k];
    // Skip-two transitions are allowed into non-blank states that differ
    // from the state two back.
    let can_skip =
        |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);

    let ninf = S::NEG_INFINITY;
    let mut alpha = vec![ninf; t_n * r];
    alpha[0] = lp(0, BLANK);
    if r > 1 {
        alpha[1] = lp(0, ext(1));
    }
    for t in 1..t_n {
        for s in 0..r {
            let stay = alpha[(t - 1) * r + s];
            let step = if s >= 1 { alpha[(t - 1) * r + s - 1] } else { ninf };
            let skip = if can_skip(s) { alpha[(t - 1) * r + s - 2] } else { ninf };
            let prev = logsumexp3(stay, step, skip);
            alpha[t * r + s] =
                if prev == ninf { ninf } else { prev + lp(t, ext(s)) };
        }
    }
    let log_z = if r > 1 {
        logsumexp2(alpha[(t_n - 1) * r + r - 1], alpha[(t_n - 1) * r + r - 2])
    } else {
        alpha[(t_n - 1) * r + r - 1]
    };

    let mut beta = vec![ninf; t_n * r];
    beta[(t_n - 1) * r + r - 1] = lp(t_n - 1, BLANK);
    if r > 1 {
        beta[(t_n - 1) * r + r - 2] = lp(t_n - 1, ext(r - 2));
    }
    for t in (0..t_n - 1).rev() {
        for s in 0..r {
            let stay = beta[(t + 1) * r + s];
            let step = if s + 1 < r { beta[(t + 1) * r + s + 1] } else { ninf };
            let skip = if s + 2 < r && can_skip(s + 2) { beta[(t + 1) * r + s + 2] } else { ninf };
            let next = logsumexp3(stay, step, skip);
            beta[t * r + s] = if next == ninf { ninf } else { next + lp(t, ext(s)) };
        }
    }

    // ∂(−logZ)/∂logp_t(k) = −Σ_{s: l's=k} exp(α_t(s) + β_t(s) − logp_t(k) − logZ).
    for t in 0..t_n {
        for s in 0..r {
            let a = alpha[t * r + s];
            let b = beta[t * r + s];
            if a == ninf || b == ninf {
                continue;
            }
            let k = ext(s);
            let g = &mut grad.data_mut()[(t * n + ni) * classes + k];
            *g -= (a + b - lp(t, k) - log_z).exp();
        }
    }
    log_z
}

/// Sums the probability of every length-T frame sequence whose collapse
/// equals `label`. `probs` is a linear-space [T, C] table. Enumeration is
/// capped to keep classes^T bounded.
pub fn brute_force_alignment_prob(
    probs: &Tensor<f64>,
    label: &[usize],
) -> Result<f64, CtcError> {
    const CAP: usize = 10;
    let &[t_len, classes] = probs.shape() else { panic!("oracle expects [T, C]") };
    if t_len > CAP {
        return Err(CtcError::CapExceeded { t: t_len, cap: CAP });
    }
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    loop {
        if collapse(&path) == label {
            total += path.iter().enumerate().map(|(t, &k)| probs.at2(t, k)).product::<f64>();
        }
        // Odometer increment over the classes^T space.
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok(total);
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < classes {
                break;
            }
            path[pos] = 0;
        }
    }
}

/// Collapse rule: merge consecutive repeats, then drop blanks.
pub fn collapse(frames: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in frames {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Best-path decoding: per-frame argmax (ties to the lowest class index),
/// collapsed. Returns one blank-free label sequence per sample.
pub fn greedy_decode<S: Scalar>(
    log_probs: &Tensor<S>,
    input_lengths: &[usize],
) -> Vec<Vec<usize>> {
    let &[t_max, n, classes] = log_probs.shape() else { panic!("decode expects [T, N, C]") };
    assert_eq!(input_lengths.len(), n);
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let t_n = input_lengths[ni];
        assert!(t_n <= t_max);
        let mut frames = Vec::with_capacity(t_n);
        for t in 0..t_n {
            let row = &log_probs.data()[(t * n + ni) * classes..(t * n + ni + 1) * classes];
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            frames.push(best);
        }
        out.push(collapse(&frames));
    }
    out
}

/// Gradient check instance for the acceptance suite: random feasible CTC
/// problem, returns the max relative error of the analytic gradient.
pub fn check_ctc_gradient(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let classes = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=2);
    let t_len = rng.gen_range(2..=6);
    let mut labels = Vec::new();
    let mut lengths = Vec::new();
    for _ in 0..n {
        loop {
            let l: Vec<usize> =
                (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(1..classes)).collect();
            if min_frames(&l) <= t_len {
                labels.push(l);
                lengths.push(t_len);
                break;
            }
        }
    }
    let x: Vec<f64> = (0..t_len * n * classes).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let shape = [t_len, n, classes];
    let loss = |flat: &[f64]| {
        let t = Tensor::from_vec(&shape, flat.to_vec());
        ctc_loss(&t, &lengths, &labels).expect("feasible by construction").0
    };
    crate::nncore::gradcheck::check_gradients(&x, loss, |flat| {
        let t = Tensor::from_vec(&shape, flat.to_vec());
        let (_, g) = ctc_loss(&t, &lengths, &labels).expect("feasible by construction");
        g.into_data()
    })
}
