use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use linerec::commands::{
    checkpoint_dir, cmd_bench, cmd_eval, cmd_generate, cmd_recognize, cmd_train, CommandError,
};
use linerec::config::RunConfig;
use linerec::eval::{render_bench_csv, render_report};
use linerec::models::ModelKind;

#[derive(Parser)]
#[command(name = "linerec", version, about = "Text line recognition: synthetic data, CTC training, evaluation")]
struct Cli {
    /// On failure, print the error as JSON to standard error.
    #[arg(long, global = true)]
    error_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration TOML.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the model kind: hybrid | fcn | hybrid-peephole.
    #[arg(long)]
    model: Option<String>,
    /// Override geometric normalization: on | off.
    #[arg(long)]
    normalize: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/val/test datasets.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; optionally resume from a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the iteration budget.
        #[arg(long)]
        iters: Option<u64>,
        /// Override the batch size.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Recognize dataset directories or loose PGM line images.
    Recognize {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (default: the final training checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Evaluate CER on the test split under one scenario.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// type1 | type2 | type3 (default: from config).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Benchmark recognition throughput to CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Restrict to one scenario (default: type1, type2 and type3).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CommandError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(model) = &common.model {
        cfg.model.kind = ModelKind::parse(model)?;
    }
    if let Some(norm) = &common.normalize {
        cfg.normalization.enabled = match norm.as_str() {
            "on" => true,
            "off" => false,
            other => {
                return Err(CommandError::Invalid(format!(
                    "--normalize takes on or off, got {other}"
                )))
            }
        };
    }
    Ok(cfg)
}

fn checkpoint_or_default(cfg: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| checkpoint_dir(cfg).join("ckpt_final.ckpt"))
}

fn run(command: Command) -> Result<(), CommandError> {
    match command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let summary = cmd_generate(&cfg)?;
            print!("{}", summary.render());
        }
        Command::Train { common, resume, iters, batch } => {
            let mut cfg = load_config(&common)?;
            if let Some(iters) = iters {
                cfg.train.iterations = iters;
            }
            if let Some(batch) = batch {
                cfg.train.batch_size = batch;
            }
            let outcome = cmd_train(&cfg, resume.as_deref())?;
            println!(
                "trained {} iterations, final checkpoint {}",
                outcome.iterations_run,
                outcome.final_checkpoint.display()
            );
            if let Some(cer) = outcome.last_val_cer {
                println!("last validation CER {:.2}%", 100.0 * cer);
            }
        }
        Command::Recognize { common, checkpoint, inputs } => {
            let cfg = load_config(&common)?;
            let checkpoint = checkpoint_or_default(&cfg, checkpoint);
            let lines = cmd_recognize(&cfg, &checkpoint, &inputs)?;
            if let [line] = lines.as_slice() {
                println!("{}", line.text);
            } else {
                for line in lines {
                    println!("{}\t{}", line.input.display(), line.text);
                }
            }
        }
        Command::Eval { common, checkpoint, scenario, repeats } => {
            let cfg = load_config(&common)?;
            let checkpoint = checkpoint_or_default(&cfg, checkpoint);
            let scenario = scenario.unwrap_or_else(|| cfg.eval.scenario.clone());
            let repeats = repeats.unwrap_or(cfg.eval.repeats);
            let report = cmd_eval(&cfg, &checkpoint, &scenario, repeats)?;
            print!("{}", render_report(&report));
        }
        Command::Bench { common, checkpoint, scenario, batch, trials } => {
            let cfg = load_config(&common)?;
            let checkpoint = checkpoint_or_default(&cfg, checkpoint);
            let scenarios: Vec<String> = match scenario {
                Some(s) => vec![s],
                None => ["type1", "type2", "type3"].map(String::from).to_vec(),
            };
            let batch = batch.unwrap_or(cfg.eval.batch_size);
            let trials = trials.unwrap_or(cfg.eval.trials);
            let results = cmd_bench(&cfg, &checkpoint, &scenarios, batch, trials)?;
            print!("{}", render_bench_csv(&results));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let error_json = cli.error_json;
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if error_json {
                let payload = serde_json::json!({ "error": e.to_string() });
                eprintln!("{payload}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
