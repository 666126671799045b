//! Run configuration: one TOML file plus a seed drives every command.
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{scenario_preset, AugmentConfig, AugmentError};
use crate::linepipe::NormalizationPolicy;
use crate::models::{ModelKind, ModelSpec};
use crate::nncore::OptimizerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub charset: PathBuf,
    /// Corpus text files, concatenated in order.
    pub corpora: Vec<PathBuf>,
    /// Glyph atlas directories (each holding an atlas.json manifest).
    pub atlases: Vec<PathBuf>,
    /// Texture pool used while training (type-3 compositing).
    #[serde(default)]
    pub train_textures: Option<PathBuf>,
    /// Held-out texture pool used at evaluation time.
    #[serde(default)]
    pub test_textures: Option<PathBuf>,
    /// Root for datasets, checkpoints, logs and reports.
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    /// Per-symbol minimum occurrences in the training split.
    pub train_target_min: usize,
    /// Per-symbol minimum occurrences in the validation and test splits.
    pub eval_target_min: usize,
    pub max_text_len: usize,
    pub sample_cap: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            train_target_min: 500,
            eval_target_min: 100,
            max_text_len: 40,
            sample_cap: 200_000,
        }
    }
}

/// Scenario preset plus optional per-field overrides, so ablations can
/// switch off a single distortion without rewriting the whole config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    /// One of type1 | type2 | type3; type1 applies nothing.
    pub preset: Option<String>,
    pub perspective_prob: Option<f64>,
    pub morph_prob: Option<f64>,
    pub blur_prob: Option<f64>,
    pub downscale_prob: Option<f64>,
    pub noise_prob: Option<f64>,
    pub elastic_prob: Option<f64>,
    pub composite_prob: Option<f64>,
    pub invert_prob: Option<f64>,
    pub ink_shade_max: Option<u8>,
}

impl AugmentSection {
    pub fn resolve(&self) -> Result<AugmentConfig, ConfigError> {
        let mut cfg = scenario_preset(self.preset.as_deref().unwrap_or("type1"))?;
        if let Some(p) = self.perspective_prob {
            cfg.perspective_prob = p;
        }
        if let Some(p) = self.morph_prob {
            cfg.morph_prob = p;
        }
        if let Some(p) = self.blur_prob {
            cfg.blur_prob = p;
        }
        if let Some(p) = self.downscale_prob {
            cfg.downscale_prob = p;
        }
        if let Some(p) = self.noise_prob {
            cfg.noise_prob = p;
        }
        if let Some(p) = self.elastic_prob {
            cfg.elastic_prob = p;
        }
        if let Some(p) = self.composite_prob {
            cfg.composite_prob = p;
        }
        if let Some(p) = self.invert_prob {
            cfg.invert_prob = p;
        }
        if let Some(v) = self.ink_shade_max {
            cfg.ink_shade_max = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub input_height: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: ModelKind::Hybrid, hidden_units: 256, dropout_rate: 0.5, input_height: 32 }
    }
}

impl ModelSection {
    /// Complete the spec with the class count derived from the charset.
    pub fn to_spec(&self, num_classes: usize) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            num_classes,
            hidden_units: self.hidden_units,
            dropout_rate: self.dropout_rate,
            input_height: self.input_height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    /// Validation CER cadence, in iterations.
    pub validate_every: u64,
    pub log_every: u64,
    /// Scenario preset applied to the validation set.
    pub val_scenario: String,
    pub val_repeats: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            iterations: 3000,
            batch_size: 4,
            checkpoint_every: 1000,
            validate_every: 1000,
            log_every: 50,
            val_scenario: "type1".into(),
            val_repeats: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub scenario: String,
    pub repeats: usize,
    pub batch_size: usize,
    /// Benchmark timing repetitions.
    pub trials: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { scenario: "type1".into(), repeats: 1, batch_size: 4, trials: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: PathsSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub normalization: NormalizationPolicy,
    #[serde(default)]
    pub model: ModelSection,
    /// Omitted: Adam defaults for the configured model kind.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_seed() -> u64 {
    7
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Anchor every relative path to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        anchor(&mut self.paths.charset);
        for p in &mut self.paths.corpora {
            anchor(p);
        }
        for p in &mut self.paths.atlases {
            anchor(p);
        }
        if let Some(p) = &mut self.paths.train_textures {
            anchor(p);
        }
        if let Some(p) = &mut self.paths.test_textures {
            anchor(p);
        }
        anchor(&mut self.paths.output);
    }

    /// The optimizer to use: explicit section or the model kind's default.
    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.clone().unwrap_or_else(|| match self.model.kind {
            ModelKind::Fcn => OptimizerConfig::fcn(),
            _ => OptimizerConfig::hybrid(),
        })
    }

    /// Check every invariant that does not require loading the assets:
    /// referenced inputs exist, numeric fields are in range, and the two
    /// texture pools share no file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist(&self.paths.charset, "charset file")?;
        if self.paths.corpora.is_empty() {
            return Err(ConfigError::Invalid("at least one corpus file is required".into()));
        }
        for p in &self.paths.corpora {
            must_exist(p, "corpus file")?;
        }
        if self.paths.atlases.is_empty() {
            return Err(ConfigError::Invalid("at least one atlas directory is required".into()));
        }
        for p in &self.paths.atlases {
            must_exist(p, "atlas directory")?;
        }
        for p in [&self.paths.train_textures, &self.paths.test_textures].into_iter().flatten() {
            must_exist(p, "texture directory")?;
        }
        self.check_texture_pools_disjoint()?;

        self.augment.resolve()?;
        scenario_preset(&self.train.val_scenario)?;
        scenario_preset(&self.eval.scenario)?;
        self.normalization
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(opt) = &self.optimizer {
            opt.validate().map_err(ConfigError::Invalid)?;
        }
        // A placeholder class count: spec validation cares about the
        // architecture fields, the real count comes from the charset.
        self.model
            .to_spec(2)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.normalization.target_height != self.model.input_height {
            return Err(ConfigError::Invalid(format!(
                "normalization target_height {} does not match model input_height {}",
                self.normalization.target_height, self.model.input_height
            )));
        }

        for (name, v) in [
            ("generate.train_target_min", self.generate.train_target_min),
            ("generate.eval_target_min", self.generate.eval_target_min),
            ("generate.max_text_len", self.generate.max_text_len),
            ("generate.sample_cap", self.generate.sample_cap),
            ("train.batch_size", self.train.batch_size),
            ("eval.repeats", self.eval.repeats),
            ("eval.batch_size", self.eval.batch_size),
            ("eval.trials", self.eval.trials),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("train.iterations", self.train.iterations),
            ("train.checkpoint_every", self.train.checkpoint_every),
            ("train.validate_every", self.train.validate_every),
            ("train.log_every", self.train.log_every),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if self.train.val_repeats == 0 {
            return Err(ConfigError::Invalid("train.val_repeats must be at least 1".into()));
        }
        Ok(())
    }

    fn check_texture_pools_disjoint(&self) -> Result<(), ConfigError> {
        let (Some(train), Some(test)) = (&self.paths.train_textures, &self.paths.test_textures)
        else {
            return Ok(());
        };
        let files = |dir: &Path| -> Result<BTreeSet<PathBuf>, ConfigError> {
            let mut set = BTreeSet::new();
            let entries = std::fs::read_dir(dir)
                .map_err(|source| ConfigError::Io { path: dir.to_path_buf(), source })?;
            for entry in entries {
                let entry =
                    entry.map_err(|source| ConfigError::Io { path: dir.to_path_buf(), source })?;
                let path = entry.path();
                if path.extension().is_some_and(|e| e == "pgm") {
                    set.insert(path.canonicalize().unwrap_or(path));
                }
            }
            Ok(set)
        };
        let train_files = files(train)?;
        let test_files = files(test)?;
        if let Some(shared) = train_files.intersection(&test_files).next() {
            return Err(ConfigError::Invalid(format!(
                "texture pools overlap: {} is in both",
                shared.display()
            )));
        }
        Ok(())
    }
}
