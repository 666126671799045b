//! Verify every hand-written backward pass against 64-bit central finite
//! differences: each layer type, both LSTM cell flavors, and the CTC loss
//! gradient itself.
//!
//!     cargo run --release --example gradient_check

use linerec::ctc::check_ctc_gradient;
use linerec::nncore::gradcheck;
use linerec::rng;

fn main() {
    let mut rng = rng::substream(2024, "gradient-check", 0);
    let rounds = 5;

    let checks: Vec<(&str, fn(&mut rand_chacha::ChaCha8Rng) -> f64)> = vec![
        ("linear", gradcheck::check_linear),
        ("conv2d", gradcheck::check_conv),
        ("maxpool", gradcheck::check_pool),
        ("batchnorm (train mode)", gradcheck::check_batchnorm),
        ("dropout (fixed mask)", gradcheck::check_dropout),
        ("softmax", gradcheck::check_softmax),
        ("log-softmax", gradcheck::check_log_softmax),
    ];

    println!("max relative error over {rounds} random shapes each (tolerance 1e-4):\n");
    for (name, check) in checks {
        let worst = (0..rounds).map(|_| check(&mut rng)).fold(0.0, f64::max);
        report(name, worst);
    }
    for peephole in [false, true] {
        let name = if peephole { "bilstm (peephole)" } else { "bilstm (vanilla)" };
        let worst =
            (0..rounds).map(|_| gradcheck::check_bilstm(&mut rng, peephole)).fold(0.0, f64::max);
        report(name, worst);
    }
    let worst = (0..rounds).map(|_| check_ctc_gradient(&mut rng)).fold(0.0, f64::max);
    report("ctc loss", worst);
}

fn report(name: &str, worst: f64) {
    let verdict = if worst <= 1e-4 { "ok" } else { "FAIL" };
    println!("  {name:<24} {worst:>10.3e}  {verdict}");
}
