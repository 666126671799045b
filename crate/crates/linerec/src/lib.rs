//! Segmentation-free, lexicon-free text line recognition on the CPU.
//!
//! The crate covers the full pipeline: synthetic line rendering from glyph
//! atlases ([`synthgen`]), dynamic augmentation including alpha compositing
//! with background textures ([`augment`]), geometric normalization and
//! width-sorted batching ([`linepipe`]), a small deterministic neural network
//! core with exact backward passes ([`nncore`]), CTC loss and greedy decoding
//! ([`ctc`]), the three recognition architectures ([`models`]), and
//! Levenshtein-based evaluation plus throughput benchmarking ([`eval`]).
//!
//! Everything is driven by a single master seed; identical seeds and inputs
//! produce byte-identical datasets, checkpoints, and reports.
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//!
//! * `generate_dataset` — render a toy dataset from the built-in atlases
//! * `augment_gallery` — dump every distortion and scenario preset as PGMs
//! * `train_toy` — train a small hybrid model on the toy dataset
//! * `recognize_line` — run a trained checkpoint over a line image
//! * `evaluate_model` — scenario CER report with error breakdown
//! * `benchmark_throughput` — seconds-per-page timing of both architectures
//! * `gradient_check` — finite-difference verification of the layer gradients
//!
//! The `linerec` binary exposes the same pipeline as subcommands
//! (`generate`, `train`, `recognize`, `eval`, `bench`) configured by a TOML
//! file; see the README.

pub mod augment;
pub mod charset;
pub mod commands;
pub mod config;
pub mod ctc;
pub mod eval;
pub mod linepipe;
pub mod models;
pub mod nncore;
pub mod raster;
pub mod rng;
pub mod synthgen;

pub use charset::Charset;
pub use raster::GrayImage;
