//! Train the hybrid CNN-BiLSTM on a small toy dataset end to end:
//! generation, type-3 augmented batches, CTC loss with Adam and step decay,
//! periodic validation CER, and a final checkpoint on disk.
//!
//!     cargo run --release --example train_toy

use linerec::commands::{cmd_generate, cmd_train, scaffold_toy_run};
use linerec::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::path::Path::new("runs/train_toy");
    std::fs::create_dir_all(root)?;
    let config_path = scaffold_toy_run(root)?;
    let mut cfg = RunConfig::load(&config_path)?;

    // Shrunk for a minutes-long demo; raise these for a real run.
    cfg.generate.train_target_min = 60;
    cfg.generate.eval_target_min = 15;
    cfg.generate.max_text_len = 16;
    cfg.model.hidden_units = 64;
    cfg.train.iterations = 300;
    cfg.train.batch_size = 4;
    cfg.train.checkpoint_every = 150;
    cfg.train.validate_every = 100;
    cfg.train.log_every = 25;

    println!("generating datasets...");
    let summary = cmd_generate(&cfg)?;
    print!("{}", summary.render());

    println!("\ntraining {} iterations (type-3 augmentation)...", cfg.train.iterations);
    let outcome = cmd_train(&cfg, None)?;
    println!("final checkpoint: {}", outcome.final_checkpoint.display());

    println!("\ntraining log tail ({}):", outcome.log_path.display());
    let log = std::fs::read_to_string(&outcome.log_path)?;
    for line in log.lines().rev().take(8).collect::<Vec<_>>().into_iter().rev() {
        println!("  {line}");
    }
    if let Some(cer) = outcome.last_val_cer {
        println!("\nlast validation CER: {:.1}% (a short demo run stays high)", 100.0 * cer);
    }
    Ok(())
}
