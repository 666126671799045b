//! Compare recognition throughput of the hybrid recurrent model and the
//! fully convolutional variant on the CPU, normalized to seconds per
//! standard 1500-symbol page (batch 4).
//!
//!     cargo run --release --example benchmark_throughput

use linerec::commands::{checkpoint_dir, cmd_bench, cmd_generate, scaffold_toy_run, split_dir};
use linerec::config::RunConfig;
use linerec::eval::render_bench_csv;
use linerec::models::{build_model, save_checkpoint, Model, ModelKind, TrainState};
use linerec::rng;
use linerec::synthgen::load_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::path::Path::new("runs/benchmark_throughput");
    std::fs::create_dir_all(root)?;
    let config_path = scaffold_toy_run(root)?;
    let mut cfg = RunConfig::load(&config_path)?;
    cfg.generate.train_target_min = 10;
    cfg.generate.eval_target_min = 25;
    cfg.generate.max_text_len = 20;

    cmd_generate(&cfg)?;
    let test_lines = load_dataset(&split_dir(&cfg, "test"))?.len();
    println!("benchmarking over {test_lines} test lines, batch 4, 5 trials\n");

    // Throughput does not depend on trained weights, so freshly
    // initialized checkpoints are representative.
    let charset = linerec::synthgen::toy::toy_charset();
    std::fs::create_dir_all(checkpoint_dir(&cfg))?;
    let mut rows = Vec::new();
    for kind in [ModelKind::Hybrid, ModelKind::Fcn] {
        cfg.model.kind = kind;
        let spec = cfg.model.to_spec(charset.num_classes());
        let model: Model<f32> = build_model(&spec, &mut rng::substream(1, "init", 0))?;
        let state = TrainState {
            iteration: 0,
            optimizer: cfg.optimizer(),
            charset_fingerprint: charset.fingerprint(),
        };
        let path = checkpoint_dir(&cfg).join(format!("{}.ckpt", kind.name()));
        save_checkpoint(&model, &state, &path)?;

        let mut results = cmd_bench(&cfg, &path, &["type1".to_string()], 4, 5)?;
        println!("{} ({} parameters):", kind.name(), model.parameter_count());
        print!("{}", render_bench_csv(&results));
        println!();
        rows.push(results.pop().expect("one scenario requested"));
    }

    let hybrid = &rows[0];
    let fcn = &rows[1];
    let ratio = hybrid.sec_per_page_mean / fcn.sec_per_page_mean;
    println!(
        "fcn is {:.2}x {} than the hybrid at batch 4 on this CPU",
        if ratio >= 1.0 { ratio } else { 1.0 / ratio },
        if ratio >= 1.0 { "faster" } else { "slower" }
    );
    Ok(())
}
