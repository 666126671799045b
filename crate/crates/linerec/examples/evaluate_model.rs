//! Evaluate a briefly trained model on the toy test split under the clean
//! and heavily distorted scenarios, printing CER rows and the ranked error
//! table in the published layout.
//!
//!     cargo run --release --example evaluate_model

use linerec::commands::{cmd_eval, cmd_generate, cmd_train, scaffold_toy_run};
use linerec::config::RunConfig;
use linerec::eval::{merge_reports, render_report};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::path::Path::new("runs/evaluate_model");
    std::fs::create_dir_all(root)?;
    let config_path = scaffold_toy_run(root)?;
    let mut cfg = RunConfig::load(&config_path)?;
    cfg.generate.train_target_min = 40;
    cfg.generate.eval_target_min = 10;
    cfg.generate.max_text_len = 14;
    cfg.model.hidden_units = 48;
    cfg.train.iterations = 200;
    cfg.train.validate_every = 200;
    cfg.train.checkpoint_every = 200;

    println!("generating + training a short demo model...");
    cmd_generate(&cfg)?;
    let outcome = cmd_train(&cfg, None)?;

    println!("evaluating (type1 clean, type3 distorted x5 repeats)...\n");
    let clean = cmd_eval(&cfg, &outcome.final_checkpoint, "type1", 1)?;
    let distorted = cmd_eval(&cfg, &outcome.final_checkpoint, "type3", 5)?;
    let report = merge_reports(vec![clean, distorted]);
    print!("{}", render_report(&report));
    println!("\nreports under {}", root.join("run/reports").display());
    println!("(a 200-iteration model misreads plenty; the table format is the point)");
    Ok(())
}
