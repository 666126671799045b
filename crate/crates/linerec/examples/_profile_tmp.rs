//! Throwaway per-stage timing probe (not part of the example set).

use linerec::nncore::{relu, BatchNorm, Conv2d, ConvShape, MaxPool2d, Tensor};
use linerec::rng::substream;
use rand::Rng;
use std::time::Instant;

fn timed<F: FnMut() -> Tensor<f32>>(label: &str, mut f: F) -> Tensor<f32> {
    let reps = 5;
    let mut out = f();
    let t0 = Instant::now();
    for _ in 0..reps {
        out = f();
    }
    let ms = t0.elapsed().as_secs_f64() * 1000.0 / reps as f64;
    println!("{label:<28} {ms:8.2} ms   out={:?}", out.shape());
    out
}

fn main() {
    let mut rng = substream(99, "profile", 0);
    let n = 4usize;
    let w = 512usize;
    let mut x = Tensor::<f32>::zeros(&[n, 1, 32, w]);
    x.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));

    // FCN stack.
    let stages: Vec<(usize, usize, usize, (usize, usize), (usize, usize))> = vec![
        (1, 64, 7, (2, 2), (3, 3)),
        (64, 64, 3, (1, 1), (1, 1)),
        (64, 64, 3, (1, 1), (1, 1)),
        (64, 128, 3, (2, 1), (1, 1)),
        (128, 128, 3, (1, 1), (1, 1)),
        (128, 256, 3, (2, 1), (1, 1)),
        (256, 256, 3, (1, 1), (1, 1)),
        (256, 512, 3, (2, 1), (1, 1)),
        (512, 512, 3, (1, 1), (1, 1)),
        (512, 512, 3, (1, 1), (1, 1)),
    ];
    println!("== fcn, batch {n}, width {w} ==");
    let mut cur = x.clone();
    let total = Instant::now();
    for (i, &(ic, oc, k, s, p)) in stages.iter().enumerate() {
        let shape = ConvShape {
            in_channels: ic,
            out_channels: oc,
            kernel: (k, k),
            stride: s,
            padding: p,
        };
        let conv = Conv2d::<f32>::init(shape, &mut rng);
        let bn = BatchNorm::<f32>::new(oc);
        cur = timed(&format!("conv{} {}->{} s{:?}", i + 1, ic, oc, s), || {
            relu(&bn.forward_infer(&conv.forward(&cur).0))
        });
        if i == 0 {
            let pool = MaxPool2d { window: (2, 2), stride: (2, 2) };
            cur = timed("pool1", || pool.forward(&cur).0);
        }
    }
    println!("fcn conv total {:8.2} ms", total.elapsed().as_secs_f64() * 1000.0);
}
