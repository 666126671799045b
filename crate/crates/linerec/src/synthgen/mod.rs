//! Synthetic training data: transcripts sampled from a text corpus are
//! rendered with randomly chosen glyph atlases until every charset symbol
//! has been emitted a minimum number of times.
//!
//! On-disk dataset layout: `lines/NNNNNNNN.pgm` plus `manifest.jsonl` with
//! one record per line image, and a `report.json` summarizing the run.

mod atlas;
mod render;
mod sampler;

pub use atlas::{AtlasError, GlyphAtlas, GlyphBitmap};
pub use render::{ink_bbox, render_line, BBox, RenderError, TextLineSample};
pub use sampler::{CharCounter, Corpus, SampleError};

pub mod toy;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charset::Charset;
use crate::raster::{GrayImage, PgmError};
use crate::rng;

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("dataset manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("line image {file}: {source}")]
    LineImage { file: String, source: PgmError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Generation parameters. `target_min` is the per-symbol emission floor;
/// `sample_cap` bounds the run when rare symbols make the floor expensive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateParams {
    pub target_min: u64,
    pub max_text_len: usize,
    pub sample_cap: u64,
}

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams { target_min: 100, max_text_len: 40, sample_cap: 200_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetReached,
    SampleCapReached,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateReport {
    pub num_samples: u64,
    pub termination: Termination,
    /// Charset symbols absent from every corpus piece; no target applies.
    pub uncovered_symbols: Vec<char>,
    pub counts: BTreeMap<char, u64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    id: u64,
    file: String,
    transcript: String,
    baseline_y_left: f32,
    baseline_y_right: f32,
    x_height: f32,
    bbox: [u32; 4],
}

/// Generate samples in memory. Each sample draws its own RNG substream, so
/// the output is a pure function of (inputs, seed).
pub fn generate_samples(
    charset: &Charset,
    corpus: &Corpus,
    atlases: &[GlyphAtlas],
    params: &GenerateParams,
    seed: u64,
) -> Result<(Vec<TextLineSample>, GenerateReport), GenError> {
    assert!(!atlases.is_empty(), "need at least one atlas");
    for atlas in atlases {
        for &c in charset.symbols() {
            if atlas.glyph(c).is_none() {
                return Err(RenderError::MissingGlyph { atlas: atlas.name.clone(), glyph: c }.into());
            }
        }
    }
    let coverable = corpus.coverable_symbols(charset);
    let uncovered: Vec<char> =
        charset.symbols().iter().copied().filter(|c| !coverable.contains(c)).collect();

    let mut counter = CharCounter::new(charset);
    let mut samples = Vec::new();
    let mut termination = Termination::TargetReached;
    while !counter.all_at_least(params.target_min, &coverable) {
        if samples.len() as u64 >= params.sample_cap {
            termination = Termination::SampleCapReached;
            break;
        }
        let mut stream = rng::substream(seed, "synthgen", samples.len() as u64);
        let text = corpus.sample_text(&counter, params.target_min, &mut stream).to_string();
        let atlas = &atlases[stream.gen_range(0..atlases.len())];
        let sample = render_line(&text, atlas)?;
        counter.record(&text);
        samples.push(sample);
    }

    let report = GenerateReport {
        num_samples: samples.len() as u64,
        termination,
        uncovered_symbols: uncovered,
        counts: counter.counts().clone(),
    };
    Ok((samples, report))
}

/// Generate and write a dataset directory.
pub fn generate_dataset(
    charset: &Charset,
    corpus: &Corpus,
    atlases: &[GlyphAtlas],
    params: &GenerateParams,
    seed: u64,
    out_dir: &Path,
) -> Result<GenerateReport, GenError> {
    let (samples, report) = generate_samples(charset, corpus, atlases, params, seed)?;
    write_dataset(&samples, out_dir)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    fs::write(out_dir.join("report.json"), json + "\n")?;
    Ok(report)
}

pub fn write_dataset(samples: &[TextLineSample], out_dir: &Path) -> Result<(), GenError> {
    let lines_dir = out_dir.join("lines");
    fs::create_dir_all(&lines_dir)?;
    let mut manifest = fs::File::create(out_dir.join("manifest.jsonl"))?;
    for (i, sample) in samples.iter().enumerate() {
        let file = format!("lines/{i:08}.pgm");
        sample
            .image
            .write_pgm(&out_dir.join(&file))
            .map_err(|source| GenError::LineImage { file: file.clone(), source })?;
        let record = ManifestRecord {
            id: i as u64,
            file,
            transcript: sample.transcript.clone(),
            baseline_y_left: sample.baseline_y_left,
            baseline_y_right: sample.baseline_y_right,
            x_height: sample.x_height,
            bbox: [sample.bbox.x, sample.bbox.y, sample.bbox.w, sample.bbox.h],
        };
        let line = serde_json::to_string(&record).expect("record serialization cannot fail");
        writeln!(manifest, "{line}")?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<TextLineSample>, GenError> {
    let manifest = fs::File::open(dir.join("manifest.jsonl"))?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(manifest).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| GenError::ManifestParse { line: idx + 1, message: e.to_string() })?;
        let image = GrayImage::read_pgm(&dir.join(&record.file))
            .map_err(|source| GenError::LineImage { file: record.file.clone(), source })?;
        samples.push(TextLineSample {
            image,
            transcript: record.transcript,
            baseline_y_left: record.baseline_y_left,
            baseline_y_right: record.baseline_y_right,
            x_height: record.x_height,
            bbox: BBox {
                x: record.bbox[0],
                y: record.bbox[1],
                w: record.bbox[2],
                h: record.bbox[3],
            },
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_setup() -> (Charset, Corpus, Vec<GlyphAtlas>) {
        let charset = toy::toy_charset();
        let corpus = Corpus::from_text(toy::TOY_CORPUS, &charset, 20).unwrap();
        let atlases = vec![toy::toy_atlas_regular(), toy::toy_atlas_slanted()];
        (charset, corpus, atlases)
    }

    #[test]
    fn generation_reaches_target_counts() {
        let (charset, corpus, atlases) = toy_setup();
        let params = GenerateParams { target_min: 20, max_text_len: 20, sample_cap: 10_000 };
        let (samples, report) =
            generate_samples(&charset, &corpus, &atlases, &params, 42).unwrap();
        assert_eq!(report.termination, Termination::TargetReached);
        assert_eq!(report.num_samples, samples.len() as u64);
        assert!(report.uncovered_symbols.is_empty());
        for (&c, &n) in &report.counts {
            assert!(n >= 20, "symbol {c:?} only emitted {n} times");
        }
        for s in &samples {
            assert_eq!(s.image.height(), 32);
            assert!(!s.transcript.is_empty());
        }
    }

    #[test]
    fn sample_cap_stops_unreachable_targets() {
        let (charset, corpus, atlases) = toy_setup();
        let params = GenerateParams { target_min: 1_000_000, max_text_len: 20, sample_cap: 25 };
        let (samples, report) =
            generate_samples(&charset, &corpus, &atlases, &params, 42).unwrap();
        assert_eq!(report.termination, Termination::SampleCapReached);
        assert_eq!(samples.len(), 25);
    }

    #[test]
    fn uncoverable_symbols_do_not_block_termination() {
        let charset = Charset::new("ab?".chars()).unwrap();
        let corpus = Corpus::from_text("ab ba ab", &charset, 10).unwrap();
        let mut atlas = toy::toy_atlas_regular();
        // Give the toy atlas the extra symbols it lacks.
        for c in ['b', '?'] {
            atlas
                .insert_glyph(
                    c,
                    GlyphBitmap {
                        pixels: Some(GrayImage::filled(4, 16, 0)),
                        advance: 6,
                        bearing_x: 0,
                        bearing_y: 16,
                    },
                )
                .unwrap();
        }
        let params = GenerateParams { target_min: 5, max_text_len: 10, sample_cap: 1000 };
        let (_, report) =
            generate_samples(&charset, &corpus, &[atlas], &params, 1).unwrap();
        assert_eq!(report.termination, Termination::TargetReached);
        assert_eq!(report.uncovered_symbols, vec!['?']);
        assert_eq!(report.counts[&'?'], 0);
        assert!(report.counts[&'a'] >= 5);
    }

    #[test]
    fn missing_atlas_glyph_is_rejected_upfront() {
        let charset = Charset::new("aZ".chars()).unwrap();
        let corpus = Corpus::from_text("a", &charset, 10).unwrap();
        let atlases = vec![toy::toy_atlas_regular()];
        let params = GenerateParams::default();
        match generate_samples(&charset, &corpus, &atlases, &params, 1) {
            Err(GenError::Render(RenderError::MissingGlyph { glyph, .. })) => {
                assert_eq!(glyph, 'Z')
            }
            other => panic!("expected MissingGlyph, got {other:?}"),
        }
    }

    #[test]
    fn dataset_round_trip_preserves_samples() {
        let (charset, corpus, atlases) = toy_setup();
        let params = GenerateParams { target_min: 2, max_text_len: 20, sample_cap: 1000 };
        let dir = tempfile::tempdir().unwrap();
        let report =
            generate_dataset(&charset, &corpus, &atlases, &params, 7, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len() as u64, report.num_samples);
        let (fresh, _) = generate_samples(&charset, &corpus, &atlases, &params, 7).unwrap();
        for (a, b) in loaded.iter().zip(&fresh) {
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.image, b.image);
            assert_eq!(a.bbox, b.bbox);
            assert_eq!(a.baseline_y_left, b.baseline_y_left);
            assert_eq!(a.x_height, b.x_height);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (charset, corpus, atlases) = toy_setup();
        let params = GenerateParams { target_min: 3, max_text_len: 20, sample_cap: 1000 };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(&charset, &corpus, &atlases, &params, 9, d1.path()).unwrap();
        generate_dataset(&charset, &corpus, &atlases, &params, 9, d2.path()).unwrap();
        let m1 = fs::read(d1.path().join("manifest.jsonl")).unwrap();
        let m2 = fs::read(d2.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m1, m2);
        let r1 = fs::read(d1.path().join("report.json")).unwrap();
        let r2 = fs::read(d2.path().join("report.json")).unwrap();
        assert_eq!(r1, r2);
        let first1 = fs::read(d1.path().join("lines/00000000.pgm")).unwrap();
        let first2 = fs::read(d2.path().join("lines/00000000.pgm")).unwrap();
        assert_eq!(first1, first2);
    }
}
