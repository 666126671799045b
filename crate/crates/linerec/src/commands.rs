//! Command implementations behind the CLI: dataset generation, training,
//! recognition, evaluation and benchmarking, all driven by a [`RunConfig`]
//! and a master seed.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{scenario_preset, AugmentError, TextureBank};
use crate::charset::{Charset, CharsetError};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{
    benchmark, evaluate, render_bench_csv, render_report, BenchSettings, BenchmarkResult,
    EvalError, EvalReport, EvalSettings,
};
use crate::linepipe::{make_batches, BatchSettings, PipeError};
use crate::models::{
    build_model, load_checkpoint, recognize, save_checkpoint, train_step, Model, ModelError,
    TrainState,
};
use crate::raster::{GrayImage, PgmError};
use crate::rng;
use crate::synthgen::{
    generate_dataset, ink_bbox, load_dataset, toy, Corpus, GenError, GenerateParams,
    GenerateReport, GlyphAtlas, TextLineSample,
};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Charset(#[from] CharsetError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Atlas(#[from] crate::synthgen::AtlasError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Image(#[from] PgmError),
    #[error("corpus: {0}")]
    Corpus(#[from] crate::synthgen::SampleError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(what: impl Into<String>) -> impl FnOnce(std::io::Error) -> CommandError {
    let what = what.into();
    move |e| CommandError::Io(what, e)
}

/// Inputs loaded and validated from a [`RunConfig`].
pub struct LoadedAssets {
    pub charset: Charset,
    pub corpus: Corpus,
    pub atlases: Vec<GlyphAtlas>,
    pub train_textures: Option<TextureBank>,
    pub test_textures: Option<TextureBank>,
}

/// Validate the config and load everything it references.
pub fn load_assets(cfg: &RunConfig) -> Result<LoadedAssets, CommandError> {
    cfg.validate()?;
    let charset = Charset::load(&cfg.paths.charset)?;
    let mut text = String::new();
    for path in &cfg.paths.corpora {
        let piece = std::fs::read_to_string(path)
            .map_err(io_err(format!("reading corpus {}", path.display())))?;
        text.push_str(&piece);
        text.push('\n');
    }
    let corpus = Corpus::from_text(&text, &charset, cfg.generate.max_text_len)?;
    let atlases = cfg
        .paths
        .atlases
        .iter()
        .map(|dir| GlyphAtlas::load(dir))
        .collect::<Result<Vec<_>, _>>()?;
    let load_bank = |dir: &Option<PathBuf>| -> Result<Option<TextureBank>, CommandError> {
        dir.as_ref().map(|d| TextureBank::from_dir(d)).transpose().map_err(Into::into)
    };
    Ok(LoadedAssets {
        charset,
        corpus,
        atlases,
        train_textures: load_bank(&cfg.paths.train_textures)?,
        test_textures: load_bank(&cfg.paths.test_textures)?,
    })
}

/// Dataset split directories under the output root.
pub fn split_dir(cfg: &RunConfig, split: &str) -> PathBuf {
    cfg.paths.output.join("data").join(split)
}

pub fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output.join("checkpoints")
}

pub fn reports_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output.join("reports")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateSummary {
    /// Reports per split, keyed train/val/test.
    pub splits: BTreeMap<String, GenerateReport>,
}

impl GenerateSummary {
    /// One line per split with sample and per-character count extremes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (split, report) in &self.splits {
            let min = report.counts.values().min().copied().unwrap_or(0);
            let max = report.counts.values().max().copied().unwrap_or(0);
            out.push_str(&format!(
                "{split}: {} lines, per-character counts {min}..={max}, {:?}{}\n",
                report.num_samples,
                report.termination,
                if report.uncovered_symbols.is_empty() {
                    String::new()
                } else {
                    format!(", uncovered {:?}", report.uncovered_symbols)
                },
            ));
        }
        out
    }
}

/// Generate train/val/test splits under `output/data/`, each from its own
/// seed substream. Rerunning with the same config is byte-identical.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary, CommandError> {
    let assets = load_assets(cfg)?;
    let mut splits = BTreeMap::new();
    for (split, target_min) in [
        ("train", cfg.generate.train_target_min),
        ("val", cfg.generate.eval_target_min),
        ("test", cfg.generate.eval_target_min),
    ] {
        let params = GenerateParams {
            target_min: target_min as u64,
            max_text_len: cfg.generate.max_text_len,
            sample_cap: cfg.generate.sample_cap as u64,
        };
        let seed = rng::substream(cfg.seed, "gen-split", split_index(split)).next_u64();
        let dir = split_dir(cfg, split);
        std::fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let report = generate_dataset(
            &assets.charset,
            &assets.corpus,
            &assets.atlases,
            &params,
            seed,
            &dir,
        )?;
        splits.insert(split.to_string(), report);
    }
    Ok(GenerateSummary { splits })
}

fn split_index(split: &str) -> u64 {
    match split {
        "train" => 0,
        "val" => 1,
        "test" => 2,
        _ => unreachable!("unknown split"),
    }
}

/// One line of the training log. Step lines carry loss/lr/grad_norm;
/// validation lines carry val_cer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub iteration: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_cer: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub iterations_run: u64,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub last_val_cer: Option<f64>,
}

/// Train from scratch or resume from a checkpoint; writes periodic
/// checkpoints, a JSONL log, and `ckpt_final.ckpt`. Given the same config
/// and seed, checkpoints are byte-identical whether or not the run was
/// interrupted and resumed at any boundary.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome, CommandError> {
    let assets = load_assets(cfg)?;
    let train_samples = load_dataset(&split_dir(cfg, "train"))?;
    if train_samples.is_empty() {
        return Err(CommandError::Invalid("training dataset is empty".into()));
    }
    let val_samples = load_dataset(&split_dir(cfg, "val")).unwrap_or_default();
    let augment = cfg.augment.resolve()?;
    if augment.wants_textures() && assets.train_textures.is_none() {
        return Err(CommandError::Invalid(
            "augment preset composites textures but paths.train_textures is not set".into(),
        ));
    }
    let val_augment = scenario_preset(&cfg.train.val_scenario)?;
    let optimizer = cfg.optimizer();
    optimizer.validate().map_err(CommandError::Invalid)?;

    let (mut model, start_iteration) = match resume {
        Some(path) => {
            let (model, state) = load_checkpoint(path)?;
            if state.charset_fingerprint != assets.charset.fingerprint() {
                return Err(ModelError::ChecksumMismatch {
                    expected: state.charset_fingerprint,
                    found: assets.charset.fingerprint(),
                }
                .into());
            }
            if model.spec != cfg.model.to_spec(assets.charset.num_classes()) {
                return Err(CommandError::Invalid(
                    "checkpoint model spec does not match the config".into(),
                ));
            }
            (model, state.iteration)
        }
        None => {
            let spec = cfg.model.to_spec(assets.charset.num_classes());
            let model: Model<f32> =
                build_model(&spec, &mut rng::substream(cfg.seed, "init", 0))?;
            (model, 0)
        }
    };

    let ckpt_dir = checkpoint_dir(cfg);
    std::fs::create_dir_all(&ckpt_dir)
        .map_err(io_err(format!("creating {}", ckpt_dir.display())))?;
    let log_dir = cfg.paths.output.join("logs");
    std::fs::create_dir_all(&log_dir)
        .map_err(io_err(format!("creating {}", log_dir.display())))?;
    let log_path = log_dir.join("train.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(format!("opening {}", log_path.display())))?;
    let mut write_log = |line: &TrainLogLine| -> Result<(), CommandError> {
        let json = serde_json::to_string(line).expect("log line serialization cannot fail");
        writeln!(log, "{json}").map_err(io_err("writing training log"))
    };

    let fingerprint = assets.charset.fingerprint();
    let save = |model: &Model<f32>, iteration: u64, path: &Path| -> Result<(), CommandError> {
        let state = TrainState {
            iteration,
            optimizer: optimizer.clone(),
            charset_fingerprint: fingerprint.clone(),
        };
        save_checkpoint(model, &state, path)?;
        Ok(())
    };

    let mut iteration = start_iteration;
    let mut last_val_cer = None;
    let started = Instant::now();
    'epochs: for epoch in 0.. {
        let settings = BatchSettings {
            charset: &assets.charset,
            policy: cfg.normalization,
            augment: &augment,
            textures: assets.train_textures.as_ref(),
            batch_size: cfg.train.batch_size,
            downsample: model.spec.downsample(),
            seed: cfg.seed,
            epoch,
        };
        let (batches, _skipped) = make_batches(&train_samples, &settings)?;
        if batches.is_empty() {
            return Err(CommandError::Invalid(
                "every training sample was skipped as infeasible".into(),
            ));
        }
        let per_epoch = batches.len() as u64;
        // Resuming lands mid-epoch; batches already consumed are skipped.
        let done_here = iteration.saturating_sub(epoch * per_epoch);
        if done_here >= per_epoch {
            continue;
        }
        for batch in batches.iter().skip(done_here as usize) {
            iteration += 1;
            let mut dropout_rng = rng::substream(cfg.seed, "dropout", iteration);
            let stats = train_step(&mut model, batch, &optimizer, iteration, &mut dropout_rng)?;
            if iteration % cfg.train.log_every == 0 || iteration == cfg.train.iterations {
                write_log(&TrainLogLine {
                    iteration,
                    loss: Some(stats.loss),
                    lr: Some(stats.lr),
                    grad_norm: Some(stats.grad_norm),
                    wall_ms: Some(started.elapsed().as_millis() as u64),
                    val_cer: None,
                })?;
            }
            if iteration % cfg.train.validate_every == 0 && !val_samples.is_empty() {
                let val_settings = EvalSettings {
                    charset: &assets.charset,
                    policy: cfg.normalization,
                    augment: &val_augment,
                    textures: assets.train_textures.as_ref(),
                    scenario: cfg.train.val_scenario.clone(),
                    repeats: cfg.train.val_repeats,
                    seed: cfg.seed.wrapping_add(iteration),
                };
                let report = evaluate(&model, &val_samples, &val_settings)?;
                let cer = report.scenarios[0].cer;
                last_val_cer = Some(cer);
                write_log(&TrainLogLine {
                    iteration,
                    loss: None,
                    lr: None,
                    grad_norm: None,
                    wall_ms: Some(started.elapsed().as_millis() as u64),
                    val_cer: Some(cer),
                })?;
            }
            if iteration % cfg.train.checkpoint_every == 0 {
                save(&model, iteration, &ckpt_dir.join(format!("ckpt_{iteration:08}.ckpt")))?;
            }
            if iteration >= cfg.train.iterations {
                break 'epochs;
            }
        }
    }

    let final_path = ckpt_dir.join("ckpt_final.ckpt");
    save(&model, iteration, &final_path)?;
    Ok(TrainOutcome {
        iterations_run: iteration - start_iteration,
        final_checkpoint: final_path,
        log_path,
        last_val_cer,
    })
}

/// Load a checkpoint and check it against the configured charset.
pub fn load_model_for(
    cfg: &RunConfig,
    checkpoint: &Path,
) -> Result<(Model<f32>, Charset), CommandError> {
    let charset = Charset::load(&cfg.paths.charset)?;
    let (model, state) = load_checkpoint(checkpoint)?;
    if state.charset_fingerprint != charset.fingerprint() {
        return Err(ModelError::ChecksumMismatch {
            expected: state.charset_fingerprint,
            found: charset.fingerprint(),
        }
        .into());
    }
    Ok((model, charset))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecognizedLine {
    pub input: PathBuf,
    pub text: String,
}

/// Recognize either a dataset directory (with manifest metadata) or loose
/// PGM line images, which get neutral baseline metadata.
pub fn cmd_recognize(
    cfg: &RunConfig,
    checkpoint: &Path,
    inputs: &[PathBuf],
) -> Result<Vec<RecognizedLine>, CommandError> {
    let (model, charset) = load_model_for(cfg, checkpoint)?;
    let fingerprint = charset.fingerprint();
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let samples = load_dataset(input)?;
            for (i, sample) in samples.iter().enumerate() {
                let rec =
                    recognize(&model, sample, &charset, &cfg.normalization, &fingerprint)?;
                out.push(RecognizedLine { input: input.join(format!("#{i}")), text: rec.text });
            }
        } else {
            let image = GrayImage::read_pgm(input)?;
            let sample = loose_line(image);
            let rec = recognize(&model, &sample, &charset, &cfg.normalization, &fingerprint)?;
            out.push(RecognizedLine { input: input.clone(), text: rec.text });
        }
    }
    Ok(out)
}

/// Wrap a bare line image in neutral metadata: level baseline at 3/4
/// height, x-height of half the image, so normalization reduces to a
/// rescale.
pub fn loose_line(image: GrayImage) -> TextLineSample {
    let h = image.height() as f32;
    let bbox = ink_bbox(&image);
    TextLineSample {
        transcript: String::new(),
        baseline_y_left: 0.75 * h,
        baseline_y_right: 0.75 * h,
        x_height: 0.5 * h,
        bbox,
        image,
    }
}

/// Evaluate the test split under one scenario; writes JSON and text
/// reports and returns the report.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    scenario: &str,
    repeats: usize,
) -> Result<EvalReport, CommandError> {
    let (model, charset) = load_model_for(cfg, checkpoint)?;
    let samples = load_dataset(&split_dir(cfg, "test"))?;
    let augment = scenario_preset(scenario)?;
    let textures = if augment.wants_textures() {
        let dir = cfg.paths.test_textures.as_ref().ok_or_else(|| {
            CommandError::Invalid(format!(
                "scenario {scenario} composites textures but paths.test_textures is not set"
            ))
        })?;
        Some(TextureBank::from_dir(dir)?)
    } else {
        None
    };
    let settings = EvalSettings {
        charset: &charset,
        policy: cfg.normalization,
        augment: &augment,
        textures: textures.as_ref(),
        scenario: scenario.to_string(),
        repeats,
        seed: cfg.seed,
    };
    let report = evaluate(&model, &samples, &settings)?;

    let dir = reports_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let json = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    std::fs::write(dir.join(format!("eval_{scenario}.json")), json + "\n")
        .map_err(io_err("writing eval report"))?;
    std::fs::write(dir.join(format!("eval_{scenario}.txt")), render_report(&report))
        .map_err(io_err("writing eval report"))?;
    Ok(report)
}

/// Benchmark the checkpoint over the given scenarios; writes and returns
/// the CSV rows.
pub fn cmd_bench(
    cfg: &RunConfig,
    checkpoint: &Path,
    scenarios: &[String],
    batch_size: usize,
    trials: usize,
) -> Result<Vec<BenchmarkResult>, CommandError> {
    let (model, charset) = load_model_for(cfg, checkpoint)?;
    let samples = load_dataset(&split_dir(cfg, "test"))?;
    let mut results = Vec::new();
    for scenario in scenarios {
        let augment = scenario_preset(scenario)?;
        let textures = if augment.wants_textures() {
            let dir = cfg.paths.test_textures.as_ref().ok_or_else(|| {
                CommandError::Invalid(format!(
                    "scenario {scenario} composites textures but paths.test_textures is not set"
                ))
            })?;
            Some(TextureBank::from_dir(dir)?)
        } else {
            None
        };
        let settings = BenchSettings {
            charset: &charset,
            policy: cfg.normalization,
            augment: &augment,
            textures: textures.as_ref(),
            scenario: scenario.clone(),
            batch_size,
            trials,
            seed: cfg.seed,
        };
        results.push(benchmark(&model, &samples, &settings)?);
    }
    let dir = reports_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
    std::fs::write(dir.join("bench.csv"), render_bench_csv(&results))
        .map_err(io_err("writing benchmark CSV"))?;
    Ok(results)
}

/// Materialize the built-in two-atlas toy setup under `dir`: charset,
/// corpus, atlases, disjoint texture pools, and a ready-to-run config.
/// Returns the config path.
pub fn scaffold_toy_run(dir: &Path) -> Result<PathBuf, CommandError> {
    let assets = dir.join("assets");
    let mk = |p: &Path| std::fs::create_dir_all(p).map_err(io_err(format!("creating {}", p.display())));
    mk(&assets)?;

    let charset = toy::toy_charset();
    charset.save(&assets.join("charset.txt"))?;
    std::fs::write(assets.join("corpus.txt"), toy::TOY_CORPUS)
        .map_err(io_err("writing corpus"))?;

    let regular = assets.join("atlas_regular");
    let slanted = assets.join("atlas_slanted");
    mk(&regular)?;
    mk(&slanted)?;
    toy::toy_atlas_regular().save(&regular)?;
    toy::toy_atlas_slanted().save(&slanted)?;

    let train_tex = assets.join("textures/train");
    let test_tex = assets.join("textures/test");
    mk(&train_tex)?;
    mk(&test_tex)?;
    for (i, tex) in toy::toy_textures(toy::ToyTextureStyle::Grain, 6, 17).iter().enumerate() {
        tex.write_pgm(&train_tex.join(format!("t{i}.pgm")))?;
    }
    for (i, tex) in toy::toy_textures(toy::ToyTextureStyle::Stripes, 4, 18).iter().enumerate() {
        tex.write_pgm(&test_tex.join(format!("t{i}.pgm")))?;
    }

    let config = r#"seed = 7

[paths]
charset = "assets/charset.txt"
corpora = ["assets/corpus.txt"]
atlases = ["assets/atlas_regular", "assets/atlas_slanted"]
train_textures = "assets/textures/train"
test_textures = "assets/textures/test"
output = "run"

[generate]
train_target_min = 500
eval_target_min = 100

[augment]
preset = "type3"

[model]
kind = "hybrid"
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, config).map_err(io_err("writing config"))?;
    Ok(path)
}
