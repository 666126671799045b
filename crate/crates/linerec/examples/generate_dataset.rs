//! Generate the built-in toy dataset: two dot-matrix atlases, a 12-symbol
//! charset, and rarity-driven corpus sampling until every symbol is covered.
//!
//!     cargo run --release --example generate_dataset

use linerec::commands::{cmd_generate, scaffold_toy_run, split_dir};
use linerec::config::RunConfig;
use linerec::synthgen::load_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::path::Path::new("runs/generate_dataset");
    std::fs::create_dir_all(root)?;
    let config_path = scaffold_toy_run(root)?;
    println!("scaffolded toy assets, config at {}", config_path.display());

    let mut cfg = RunConfig::load(&config_path)?;
    cfg.generate.train_target_min = 100;
    cfg.generate.eval_target_min = 25;

    let summary = cmd_generate(&cfg)?;
    print!("{}", summary.render());

    let train = load_dataset(&split_dir(&cfg, "train"))?;
    println!("\nfirst lines of the training split:");
    for sample in train.iter().take(5) {
        println!(
            "  {:>3}x{:<3} baseline y {:>4.1}  {:?}",
            sample.image.width(),
            sample.image.height(),
            sample.baseline_y_left,
            sample.transcript
        );
    }
    println!("\ndataset directories under {}", root.join("run/data").display());
    Ok(())
}
