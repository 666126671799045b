//! Central finite-difference gradient verification, run in f64.
//!
//! Every check builds a random small layer instance, treats (input ⧺ params)
//! as one flat degree-of-freedom vector, projects the layer output onto a
//! fixed random direction to get a scalar loss, and compares the analytic
//! gradient of that loss against central differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::{Conv2d, ConvShape};
use super::layers::{log_softmax, log_softmax_backward, softmax, softmax_backward, Dropout, Linear};
use super::lstm::{BiLstm, LstmCell};
use super::norm::BatchNorm2d;
use super::pool::MaxPool2d;
use super::tensor::Tensor;

const EPS: f64 = 1e-5;
/// Relative-error denominator guard for near-zero gradients.
const GUARD: f64 = 1e-5;

/// Maximum relative error between `analytic_fn` and central differences of
/// `loss` over the flat DOF vector.
pub fn check_gradients(
    init: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    analytic_fn: impl Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let analytic = analytic_fn(init);
    assert_eq!(analytic.len(), init.len(), "analytic gradient length mismatch");
    let mut buf = init.to_vec();
    let mut worst = 0.0f64;
    for i in 0..buf.len() {
        let x0 = buf[i];
        let h = EPS * x0.abs().max(1.0);
        buf[i] = x0 + h;
        let lp = loss(&buf);
        buf[i] = x0 - h;
        let lm = loss(&buf);
        buf[i] = x0;
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(GUARD);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let data = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data)
}

fn projection(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pack(tensors: &[&Tensor<f64>]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn split<'a>(flat: &'a [f64], shapes: &[Vec<usize>]) -> Vec<Tensor<f64>> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut pos = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        out.push(Tensor::from_vec(s, flat[pos..pos + n].to_vec()));
        pos += n;
    }
    assert_eq!(pos, flat.len(), "flat DOF vector length mismatch");
    out
}

pub fn check_linear(rng: &mut ChaCha8Rng) -> f64 {
    let in_f = rng.gen_range(1..=4);
    let out_f = rng.gen_range(1..=4);
    let rows = rng.gen_range(1..=4);
    let base: Linear<f64> = Linear::new("l", in_f, out_f, rng);
    let x = random_tensor(&[rows, in_f], rng);
    let r = projection(rows * out_f, rng);
    let shapes =
        vec![vec![rows, in_f], vec![in_f, out_f], vec![out_f]];
    let init = pack(&[&x, &base.weight.value, &base.bias.value]);
    let build = |flat: &[f64]| {
        let mut parts = split(flat, &shapes).into_iter();
        let x = parts.next().unwrap();
        let mut l = base.clone();
        l.weight.value = parts.next().unwrap();
        l.bias.value = parts.next().unwrap();
        (x, l)
    };
    check_gradients(
        &init,
        |flat| {
            let (x, l) = build(flat);
            let (y, _) = l.forward(&x);
            dot(y.data(), &r)
        },
        |flat| {
            let (x, mut l) = build(flat);
            let (y, cache) = l.forward(&x);
            let dy = Tensor::from_vec(y.shape(), r.clone());
            let dx = l.backward(&cache, &dy);
            pack(&[&dx, &l.weight.grad, &l.bias.grad])
        },
    )
}

pub fn check_conv(rng: &mut ChaCha8Rng) -> f64 {
    let shape = ConvShape {
        in_channels: rng.gen_range(1..=2),
        out_channels: rng.gen_range(1..=2),
        kernel: (rng.gen_range(1..=3), rng.gen_range(1..=3)),
        stride: (rng.gen_range(1..=2), rng.gen_range(1..=2)),
        padding: (rng.gen_range(0..=1), rng.gen_range(0..=1)),
    };
    let n = rng.gen_range(1..=2);
    let h = rng.gen_range(3..=4);
    let w = rng.gen_range(3..=4);
    let base: Conv2d<f64> = Conv2d::new("c", shape, rng);
    let x = random_tensor(&[n, shape.in_channels, h, w], rng);
    let (oh, ow) = shape.out_dims(h, w);
    let r = projection(n * shape.out_channels * oh * ow, rng);
    let shapes = vec![
        x.shape().to_vec(),
        base.weight.value.shape().to_vec(),
        base.bias.value.shape().to_vec(),
    ];
    let init = pack(&[&x, &base.weight.value, &base.bias.value]);
    let build = |flat: &[f64]| {
        let mut parts = split(flat, &shapes).into_iter();
        let x = parts.next().unwrap();
        let mut c = base.clone();
        c.weight.value = parts.next().unwrap();
        c.bias.value = parts.next().unwrap();
        (x, c)
    };
    check_gradients(
        &init,
        |flat| {
            let (x, c) = build(flat);
            let (y, _) = c.forward(&x);
            dot(y.data(), &r)
        },
        |flat| {
            let (x, mut c) = build(flat);
            let (y, cache) = c.forward(&x);
            let dy = Tensor::from_vec(y.shape(), r.clone());
            let dx = c.backward(&cache, &dy);
            pack(&[&dx, &c.weight.grad, &c.bias.grad])
        },
    )
}

pub fn check_pool(rng: &mut ChaCha8Rng) -> f64 {
    // Non-overlapping windows, as used by the models. Window maxima are
    // separated from runners-up so the finite-difference step cannot flip
    // the argmax.
    let window = if rng.gen_range(0..2) == 0 { (2, 2) } else { (2, 1) };
    let pool = MaxPool2d { window, stride: window };
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=2);
    let h = window.0 * rng.gen_range(1..=2);
    let w = window.1 * rng.gen_range(1..=2);
    let mut x = random_tensor(&[n, c, h, w], rng);
    separate_window_maxima(&mut x, window);
    let (oh, ow) = pool.out_dims(h, w);
    let r = projection(n * c * oh * ow, rng);
    let shapes = vec![x.shape().to_vec()];
    let init = pack(&[&x]);
    check_gradients(
        &init,
        |flat| {
            let x = split(flat, &shapes).pop().unwrap();
            let (y, _) = pool.forward(&x);
            dot(y.data(), &r)
        },
        |flat| {
            let x = split(flat, &shapes).pop().unwrap();
            let (y, cache) = pool.forward(&x);
            let dy = Tensor::from_vec(y.shape(), r.clone());
            pack(&[&pool.backward(&cache, &dy)])
        },
    )
}

/// Push each non-overlapping window's maximum clear of its runner-up.
fn separate_window_maxima(x: &mut Tensor<f64>, window: (usize, usize)) {
    let &[n, c, h, w] = x.shape() else { unreachable!() };
    let data = x.data_mut();
    for nc in 0..n * c {
        for oh in 0..h / window.0 {
            for ow in 0..w / window.1 {
                let mut idxs = Vec::new();
                for kh in 0..window.0 {
                    for kw in 0..window.1 {
                        idxs.push(nc * h * w + (oh * window.0 + kh) * w + ow * window.1 + kw);
                    }
                }
                let best = idxs
                    .iter()
                    .copied()
                    .max_by(|&a, &b| data[a].partial_cmp(&data[b]).unwrap())
                    .unwrap();
                data[best] += 0.05;
            }
        }
    }
}

pub fn check_batchnorm(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(2..=4);
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(1..=3);
    let w = rng.gen_range(2..=4);
    let mut base: BatchNorm2d<f64> = BatchNorm2d::new("bn", c);
    base.gamma.value =
        Tensor::from_vec(&[c], (0..c).map(|_| rng.gen_range(0.5..1.5)).collect());
    base.beta.value =
        Tensor::from_vec(&[c], (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let x = random_tensor(&[n, c, h, w], rng);
    let r = projection(n * c * h * w, rng);
    let shapes = vec![x.shape().to_vec(), vec![c], vec![c]];
    let init = pack(&[&x, &base.gamma.value, &base.beta.value]);
    let build = |flat: &[f64]| {
        let mut parts = split(flat, &shapes).into_iter();
        let x = parts.next().unwrap();
        let mut bn = base.clone();
        bn.gamma.value = parts.next().unwrap();
        bn.beta.value = parts.next().unwrap();
        (x, bn)
    };
    check_gradients(
        &init,
        |flat| {
            let (x, mut bn) = build(flat);
            let (y, _) = bn.forward_train(&x);
            dot(y.data(), &r)
        },
        |flat| {
            let (x, mut bn) = build(flat);
            let (_, cache) = bn.forward_train(&x);
            let dy = Tensor::from_vec(&[n, c, h, w], r.clone());
            let dx = bn.backward(&cache, &dy);
            pack(&[&dx, &bn.gamma.grad, &bn.beta.grad])
        },
    )
}

pub fn check_dropout(rng: &mut ChaCha8Rng) -> f64 {
    let len = rng.gen_range(4..=16);
    let drop = Dropout::new(0.5);
    let x = random_tensor(&[len], rng);
    // Mask fixed up front so the loss is deterministic in the DOFs.
    let mask: Vec<f64> =
        (0..len).map(|_| if rng.gen_range(0.0..1.0) < 0.5 { 0.0 } else { 2.0 }).collect();
    let r = projection(len, rng);
    let shapes = vec![vec![len]];
    let init = pack(&[&x]);
    check_gradients(
        &init,
        |flat| {
            let x = split(flat, &shapes).pop().unwrap();
            dot(drop.apply_mask(&x, &mask).data(), &r)
        },
        |_flat| {
            // d(x·mask)/dx = mask, so the projected gradient is r ⊙ mask.
            r.iter().zip(&mask).map(|(rv, mv)| rv * mv).collect()
        },
    )
}

pub fn check_softmax(rng: &mut ChaCha8Rng) -> f64 {
    let rows = rng.gen_range(1..=4);
    let classes = rng.gen_range(2..=4);
    let x = random_tensor(&[rows, classes], rng);
    let r = projection(rows * classes, rng);
    let shapes = vec![x.shape().to_vec()];
    let init = pack(&[&x]);
    check_gradients(
        &init,
        |flat| {
            let x = split(flat, &shapes).pop().unwrap();
            dot(softmax(&x).data(), &r)
        },
        |flat| {
            let x = split(flat, &shapes).pop().unwrap();
            let y = softmax(&x);
            let dy = Tensor::from_vec(y.shape(), r.clone());
            pack(&[&softmax_backward(&y, &dy)])
        },
    )
}

pub fn check_log_softmax(rng: &mut ChaCha8Rng) -> f64 {
    let rows = rng.gen_range(1..=4);
    let classes = rng.gen_range(2..=4);
    let x = random_tensor(&[rows, classes], rng);
    let r = projection(rows * classes, rng);
    let shapes = vec![x.shape().to_vec()];
    let init = pack(&[&x]);
    check_gradients(
        &init,
        |flat| {
            let x = split(flat, &shapes).pop().unwrap();
            dot(log_softmax(&x).data(), &r)
        },
        |flat| {
            let x = split(flat, &shapes).pop().unwrap();
            let y = log_softmax(&x);
            let dy = Tensor::from_vec(y.shape(), r.clone());
            pack(&[&log_softmax_backward(&y, &dy)])
        },
    )
}

pub fn check_lstm(rng: &mut ChaCha8Rng, peephole: bool) -> f64 {
    let t = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=2);
    let input = rng.gen_range(1..=3);
    let hidden = rng.gen_range(1..=3);
    let base: LstmCell<f64> = LstmCell::new("l", input, hidden, peephole, rng);
    let x = random_tensor(&[t, n, input], rng);
    let r = projection(t * n * hidden, rng);
    let mut shapes = vec![x.shape().to_vec()];
    shapes.extend(base.params().iter().map(|p| p.value.shape().to_vec()));
    let mut init = vec![x.data().to_vec()];
    init.extend(base.params().iter().map(|p| p.value.data().to_vec()));
    let init: Vec<f64> = init.concat();
    let build = |flat: &[f64]| {
        let mut parts = split(flat, &shapes).into_iter();
        let x = parts.next().unwrap();
        let mut cell = base.clone();
        for p in cell.params_mut() {
            p.value = parts.next().unwrap();
        }
        (x, cell)
    };
    check_gradients(
        &init,
        |flat| {
            let (x, cell) = build(flat);
            let (y, _) = cell.run_sequence(&x);
            dot(y.data(), &r)
        },
        |flat| {
            let (x, mut cell) = build(flat);
            let (y, cache) = cell.run_sequence(&x);
            let dy = Tensor::from_vec(y.shape(), r.clone());
            let dx = cell.backward(&cache, &dy);
            let mut out = dx.data().to_vec();
            for p in cell.params() {
                out.extend_from_slice(p.grad.data());
            }
            out
        },
    )
}

pub fn check_bilstm(rng: &mut ChaCha8Rng, peephole: bool) -> f64 {
    let t = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=2);
    let input = rng.gen_range(1..=2);
    let hidden = rng.gen_range(1..=2);
    let base: BiLstm<f64> = BiLstm::new("bi", input, hidden, peephole, rng);
    let x = random_tensor(&[t, n, input], rng);
    let r = projection(t * n * 2 * hidden, rng);
    let mut shapes = vec![x.shape().to_vec()];
    shapes.extend(base.params().iter().map(|p| p.value.shape().to_vec()));
    let mut init = vec![x.data().to_vec()];
    init.extend(base.params().iter().map(|p| p.value.data().to_vec()));
    let init: Vec<f64> = init.concat();
    let build = |flat: &[f64]| {
        let mut parts = split(flat, &shapes).into_iter();
        let x = parts.next().unwrap();
        let mut bi = base.clone();
        for p in bi.params_mut() {
            p.value = parts.next().unwrap();
        }
        (x, bi)
    };
    check_gradients(
        &init,
        |flat| {
            let (x, bi) = build(flat);
            let (y, _) = bi.forward(&x);
            dot(y.data(), &r)
        },
        |flat| {
            let (x, mut bi) = build(flat);
            let (y, cache) = bi.forward(&x);
            let dy = Tensor::from_vec(y.shape(), r.clone());
            let dx = bi.backward(&cache, &dy);
            let mut out = dx.data().to_vec();
            for p in bi.params() {
                out.extend_from_slice(p.grad.data());
            }
            out
        },
    )
}
