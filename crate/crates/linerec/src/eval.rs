//! Character-error-rate evaluation: Levenshtein distance with a canonical
//! edit script, per-scenario aggregation over repeated random distortions,
//! a ranked error-type table, and throughput benchmarking normalized to
//! seconds per standard page.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_line, AugmentConfig, AugmentError, TextureBank};
use crate::charset::Charset;
use crate::linepipe::{
    make_batches, prepare_line, BatchSettings, NormalizationPolicy, PipeError,
};
use crate::models::{decode_outputs, recognize_image, Model, ModelError};
use crate::rng;
use crate::synthgen::TextLineSample;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One step of the alignment that turns a source string into a target
/// string. `Delete` consumes a source character, `Insert` produces a target
/// character, the other two consume and produce one of each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignStep {
    Match(char),
    Substitute { from: char, to: char },
    Delete(char),
    Insert(char),
}

/// Minimal unit-cost edit distance plus one canonical optimal alignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditScript {
    pub distance: usize,
    pub alignment: Vec<AlignStep>,
}

impl EditScript {
    /// Number of non-match steps; always equals `distance`.
    pub fn edit_count(&self) -> usize {
        self.alignment.iter().filter(|s| !matches!(s, AlignStep::Match(_))).count()
    }

    /// Replay the alignment over `source`, producing the target string.
    /// Returns `None` if `source` is not the string the script was built
    /// from.
    pub fn apply(&self, source: &str) -> Option<String> {
        let mut chars = source.chars();
        let mut out = String::new();
        for step in &self.alignment {
            match *step {
                AlignStep::Match(c) => {
                    if chars.next() != Some(c) {
                        return None;
                    }
                    out.push(c);
                }
                AlignStep::Substitute { from, to } => {
                    if chars.next() != Some(from) {
                        return None;
                    }
                    out.push(to);
                }
                AlignStep::Delete(c) => {
                    if chars.next() != Some(c) {
                        return None;
                    }
                }
                AlignStep::Insert(c) => out.push(c),
            }
        }
        if chars.next().is_some() {
            return None;
        }
        Some(out)
    }
}

/// Edit distance from `a` to `b` with the backtraced script. Ties during
/// backtrace prefer substitution, then deletion, then insertion, so the
/// script is canonical.
pub fn levenshtein(a: &str, b: &str) -> EditScript {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (m, n) = (a.len(), b.len());
    let mut d = vec![0usize; (m + 1) * (n + 1)];
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    for i in 0..=m {
        d[idx(i, 0)] = i;
    }
    for j in 0..=n {
        d[idx(0, j)] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = d[idx(i - 1, j - 1)] + usize::from(a[i - 1] != b[j - 1]);
            let del = d[idx(i - 1, j)] + 1;
            let ins = d[idx(i, j - 1)] + 1;
            d[idx(i, j)] = sub.min(del).min(ins);
        }
    }

    let mut alignment = Vec::new();
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = d[idx(i, j)];
        if i > 0 && j > 0 && here == d[idx(i - 1, j - 1)] + usize::from(a[i - 1] != b[j - 1]) {
            alignment.push(if a[i - 1] == b[j - 1] {
                AlignStep::Match(a[i - 1])
            } else {
                AlignStep::Substitute { from: a[i - 1], to: b[j - 1] }
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[idx(i - 1, j)] + 1 {
            alignment.push(AlignStep::Delete(a[i - 1]));
            i -= 1;
        } else {
            alignment.push(AlignStep::Insert(b[j - 1]));
            j -= 1;
        }
    }
    alignment.reverse();
    EditScript { distance: d[idx(m, n)], alignment }
}

/// A recognition error named from the model's point of view: an insertion
/// is a character the model emitted that the ground truth lacks, a deletion
/// one it dropped, a substitution a ground-truth character read as another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ErrorId {
    Insertion(char),
    Deletion(char),
    Substitution { truth: char, predicted: char },
}

impl ErrorId {
    /// Classify one alignment step of the prediction-to-truth script.
    /// Matches yield `None`.
    fn from_step(step: AlignStep) -> Option<ErrorId> {
        match step {
            AlignStep::Match(_) => None,
            AlignStep::Delete(c) => Some(ErrorId::Insertion(c)),
            AlignStep::Insert(c) => Some(ErrorId::Deletion(c)),
            AlignStep::Substitute { from, to } => {
                Some(ErrorId::Substitution { truth: to, predicted: from })
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ErrorId::Insertion(c) => format!("Insertion of '{c}'"),
            ErrorId::Deletion(c) => format!("Deletion of '{c}'"),
            ErrorId::Substitution { truth, predicted } => {
                format!("Substitution '{truth}'\u{2192}'{predicted}'")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from_char: Option<char>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to_char: Option<char>,
    pub count: u64,
    pub percent: f64,
}

impl ErrorRow {
    fn id(&self) -> ErrorId {
        match (self.kind.as_str(), self.from_char, self.to_char) {
            ("insertion", None, Some(c)) => ErrorId::Insertion(c),
            ("deletion", Some(c), None) => ErrorId::Deletion(c),
            ("substitution", Some(f), Some(t)) => {
                ErrorId::Substitution { truth: f, predicted: t }
            }
            _ => unreachable!("error row fields out of sync with kind"),
        }
    }

    pub fn label(&self) -> String {
        self.id().label()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub repeats: usize,
    pub lines: usize,
    pub skipped: usize,
    pub total_edit_distance: u64,
    pub total_gt_length: u64,
    pub cer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenarios: Vec<ScenarioResult>,
    /// All distinct errors ranked by count (ties broken by identity); the
    /// plain-text rendering shows the top [`TOP_ERRORS`].
    pub error_table: Vec<ErrorRow>,
}

/// Rows shown in the rendered error table.
pub const TOP_ERRORS: usize = 10;

/// A standard page for throughput normalization.
pub const PAGE_SYMBOLS: usize = 1500;

/// Running totals over (line, repeat) recognitions.
#[derive(Debug, Default)]
pub struct Accumulator {
    total_edit_distance: u64,
    total_gt_length: u64,
    errors: BTreeMap<ErrorId, u64>,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Score one prediction against its ground truth.
    pub fn add(&mut self, prediction: &str, truth: &str) {
        let script = levenshtein(prediction, truth);
        self.total_edit_distance += script.distance as u64;
        self.total_gt_length += truth.chars().count() as u64;
        for step in script.alignment {
            if let Some(id) = ErrorId::from_step(step) {
                *self.errors.entry(id).or_insert(0) += 1;
            }
        }
    }

    pub fn total_edit_distance(&self) -> u64 {
        self.total_edit_distance
    }

    pub fn total_gt_length(&self) -> u64 {
        self.total_gt_length
    }

    /// Corpus-level rate: total distance over total ground-truth length.
    pub fn cer(&self) -> f64 {
        if self.total_gt_length == 0 {
            0.0
        } else {
            self.total_edit_distance as f64 / self.total_gt_length as f64
        }
    }

    /// All errors ranked by count, ties broken by identity. Percentages
    /// are of the total edit distance.
    pub fn error_table(&self) -> Vec<ErrorRow> {
        let total = self.total_edit_distance;
        let mut ranked: Vec<(&ErrorId, &u64)> = self.errors.iter().collect();
        ranked.sort_by(|x, y| y.1.cmp(x.1).then(x.0.cmp(y.0)));
        ranked
            .into_iter()
            .map(|(&id, &count)| {
                let (kind, from_char, to_char) = match id {
                    ErrorId::Insertion(c) => ("insertion", None, Some(c)),
                    ErrorId::Deletion(c) => ("deletion", Some(c), None),
                    ErrorId::Substitution { truth, predicted } => {
                        ("substitution", Some(truth), Some(predicted))
                    }
                };
                ErrorRow {
                    kind: kind.to_string(),
                    from_char,
                    to_char,
                    count,
                    percent: if total == 0 {
                        0.0
                    } else {
                        100.0 * count as f64 / total as f64
                    },
                }
            })
            .collect()
    }
}

/// Everything `evaluate` needs besides the model and samples.
pub struct EvalSettings<'a> {
    pub charset: &'a Charset,
    pub policy: NormalizationPolicy,
    pub augment: &'a AugmentConfig,
    pub textures: Option<&'a TextureBank>,
    /// Label for the report row, e.g. "type1".
    pub scenario: String,
    pub repeats: usize,
    pub seed: u64,
}

/// Recognize every line `repeats` times under freshly drawn scenario
/// distortions and aggregate CER plus the error table. Distortion seeds are
/// derived per (line, repeat), so reports are reproducible byte for byte.
pub fn evaluate(
    model: &Model<f32>,
    samples: &[TextLineSample],
    settings: &EvalSettings,
) -> Result<EvalReport, EvalError> {
    assert!(settings.repeats >= 1, "repeats must be at least 1");
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    settings.augment.validate()?;

    let mut acc = Accumulator::new();
    let mut skipped = 0usize;
    let mut lines = 0usize;
    for (index, sample) in samples.iter().enumerate() {
        let prepared = match prepare_line(sample, &settings.policy) {
            Ok(img) => img,
            Err(PipeError::DegenerateGeometry(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        lines += 1;
        for rep in 0..settings.repeats {
            let mut rng = rng::substream(
                settings.seed,
                "eval-augment",
                (index * settings.repeats + rep) as u64,
            );
            let distorted =
                augment_line(&prepared, settings.augment, settings.textures, &mut rng)?;
            let rec = recognize_image(model, &distorted, settings.charset)?;
            acc.add(&rec.text, &sample.transcript);
        }
    }

    let result = ScenarioResult {
        scenario: settings.scenario.clone(),
        repeats: settings.repeats,
        lines,
        skipped,
        total_edit_distance: acc.total_edit_distance(),
        total_gt_length: acc.total_gt_length(),
        cer: acc.cer(),
    };
    Ok(EvalReport { scenarios: vec![result], error_table: acc.error_table() })
}

/// Combine per-scenario reports into one: scenario rows concatenate, error
/// counts sum, percentages and ranking are recomputed.
pub fn merge_reports(reports: Vec<EvalReport>) -> EvalReport {
    let mut acc = Accumulator::new();
    let mut scenarios = Vec::new();
    for report in reports {
        for row in &report.error_table {
            *acc.errors.entry(row.id()).or_insert(0) += row.count;
        }
        scenarios.extend(report.scenarios);
    }
    acc.total_edit_distance = scenarios.iter().map(|s| s.total_edit_distance).sum();
    acc.total_gt_length = scenarios.iter().map(|s| s.total_gt_length).sum();
    EvalReport { scenarios, error_table: acc.error_table() }
}

/// Aligned plain-text rendering: one row per scenario, then the top errors.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("scenario      repeats   lines  skipped  distance   gt_len      cer\n");
    for s in &report.scenarios {
        writeln!(
            out,
            "{:<12} {:>8} {:>7} {:>8} {:>9} {:>8} {:>7.2}%",
            s.scenario,
            s.repeats,
            s.lines,
            s.skipped,
            s.total_edit_distance,
            s.total_gt_length,
            100.0 * s.cer
        )
        .unwrap();
    }
    if !report.error_table.is_empty() {
        out.push('\n');
        writeln!(out, "top {} errors", TOP_ERRORS.min(report.error_table.len())).unwrap();
        let shown: Vec<&ErrorRow> = report.error_table.iter().take(TOP_ERRORS).collect();
        let width = shown.iter().map(|r| r.label().chars().count()).max().unwrap_or(0);
        for row in shown {
            writeln!(out, "{:<width$}  {:>6.2}%", row.label(), row.percent).unwrap();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub scenario: String,
    pub batch: usize,
    pub trials: usize,
    pub sec_per_page_mean: f64,
    pub sec_per_page_std: f64,
}

pub const BENCH_CSV_HEADER: &str = "scenario,batch,trials,sec_per_page_mean,sec_per_page_std";

impl BenchmarkResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.scenario, self.batch, self.trials, self.sec_per_page_mean, self.sec_per_page_std
        )
    }
}

/// Render benchmark results as a CSV document with header.
pub fn render_bench_csv(results: &[BenchmarkResult]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Everything `benchmark` needs besides the model and samples.
pub struct BenchSettings<'a> {
    pub charset: &'a Charset,
    pub policy: NormalizationPolicy,
    pub augment: &'a AugmentConfig,
    pub textures: Option<&'a TextureBank>,
    pub scenario: String,
    pub batch_size: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Time batched inference plus decoding over the dataset, normalized to
/// seconds per standard page of [`PAGE_SYMBOLS`] ground-truth symbols.
/// Batch assembly and distortion happen once, outside the timed region.
pub fn benchmark(
    model: &Model<f32>,
    samples: &[TextLineSample],
    settings: &BenchSettings,
) -> Result<BenchmarkResult, EvalError> {
    assert!(settings.trials >= 1, "trials must be at least 1");
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let batch_settings = BatchSettings {
        charset: settings.charset,
        policy: settings.policy,
        augment: settings.augment,
        textures: settings.textures,
        batch_size: settings.batch_size,
        downsample: model.spec.downsample(),
        seed: settings.seed,
        epoch: 0,
    };
    let (batches, _skipped) = make_batches(samples, &batch_settings)?;
    let symbols: usize = batches
        .iter()
        .flat_map(|b| b.transcripts.iter())
        .map(|t| t.chars().count())
        .sum();
    if symbols == 0 {
        return Err(EvalError::EmptyDataset);
    }
    let pages = symbols as f64 / PAGE_SYMBOLS as f64;

    let mut per_page = Vec::with_capacity(settings.trials);
    for _ in 0..settings.trials {
        let start = Instant::now();
        for batch in &batches {
            let log_probs = model.forward_infer(&batch.images);
            let lengths = model.output_lengths(&batch.widths);
            decode_outputs(&log_probs, &lengths, settings.charset)?;
        }
        per_page.push(start.elapsed().as_secs_f64() / pages);
    }
    let mean = per_page.iter().sum::<f64>() / per_page.len() as f64;
    let std = if per_page.len() < 2 {
        0.0
    } else {
        let var = per_page.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (per_page.len() - 1) as f64;
        var.sqrt()
    };
    Ok(BenchmarkResult {
        scenario: settings.scenario.clone(),
        batch: settings.batch_size,
        trials: settings.trials,
        sec_per_page_mean: mean,
        sec_per_page_std: std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::models::{build_model, ModelKind, ModelSpec};
    use crate::synthgen::{render_line, toy};

    #[test]
    fn distance_matches_known_cases() {
        assert_eq!(levenshtein("kitten", "sitting").distance, 3);
        assert_eq!(levenshtein("abc", "abc").distance, 0);
        let script = levenshtein("", "abc");
        assert_eq!(script.distance, 3);
        assert!(script.alignment.iter().all(|s| matches!(s, AlignStep::Insert(_))));
        assert_eq!(levenshtein("abc", "").distance, 3);
    }

    fn oracle(a: &[char], b: &[char]) -> usize {
        match (a.split_last(), b.split_last()) {
            (None, None) => 0,
            (None, Some(_)) => b.len(),
            (Some(_), None) => a.len(),
            (Some((&x, ra)), Some((&y, rb))) => {
                let sub = oracle(ra, rb) + usize::from(x != y);
                let del = oracle(ra, b) + 1;
                let ins = oracle(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    fn strings_up_to(len: usize, alphabet: &[char]) -> Vec<String> {
        let mut out = vec![String::new()];
        let mut layer = vec![String::new()];
        for _ in 0..len {
            let mut next = Vec::new();
            for s in &layer {
                for &c in alphabet {
                    let mut t = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }

    #[test]
    fn distance_matches_exhaustive_recursion_on_short_strings() {
        let strings = strings_up_to(3, &['a', 'b', 'c']);
        for s in &strings {
            for t in &strings {
                let a: Vec<char> = s.chars().collect();
                let b: Vec<char> = t.chars().collect();
                assert_eq!(levenshtein(s, t).distance, oracle(&a, &b), "{s:?} vs {t:?}");
            }
        }
    }

    fn random_string(rng: &mut impl Rng, max_len: usize) -> String {
        const ALPHABET: [char; 6] = ['a', 'b', 'c', ' ', '.', 'e'];
        let len = rng.gen_range(0..=max_len);
        (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
    }

    #[test]
    fn metric_axioms_hold_on_random_strings() {
        let mut rng = crate::rng::substream(7, "lev-axioms", 0);
        for _ in 0..10_000 {
            let a = random_string(&mut rng, 10);
            let b = random_string(&mut rng, 10);
            let c = random_string(&mut rng, 10);
            let dab = levenshtein(&a, &b).distance;
            assert_eq!(dab, levenshtein(&b, &a).distance, "symmetry {a:?} {b:?}");
            assert_eq!(dab == 0, a == b, "identity {a:?} {b:?}");
            let dac = levenshtein(&a, &c).distance;
            let dcb = levenshtein(&c, &b).distance;
            assert!(dab <= dac + dcb, "triangle {a:?} {b:?} {c:?}");
        }
    }

    #[test]
    fn scripts_replay_to_the_target() {
        let mut rng = crate::rng::substream(7, "lev-replay", 0);
        for _ in 0..2_000 {
            let a = random_string(&mut rng, 12);
            let b = random_string(&mut rng, 12);
            let script = levenshtein(&a, &b);
            assert_eq!(script.apply(&a).as_deref(), Some(b.as_str()), "{a:?} -> {b:?}");
            assert_eq!(script.edit_count(), script.distance);
        }
        assert_eq!(levenshtein("ab", "ba").apply("xy"), None);
    }

    #[test]
    fn errors_are_named_from_the_models_point_of_view() {
        // Model emitted a spurious space.
        let mut acc = Accumulator::new();
        acc.add("ab c", "abc");
        let table = acc.error_table();
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].label(), "Insertion of ' '");
        assert_eq!(table[0].count, 1);
        assert_eq!(table[0].percent, 100.0);

        // Model dropped a character.
        let mut acc = Accumulator::new();
        acc.add("ac", "abc");
        assert_eq!(acc.error_table()[0].label(), "Deletion of 'b'");

        // Model read ground-truth 'u' as 'a'.
        let mut acc = Accumulator::new();
        acc.add("cat", "cut");
        assert_eq!(acc.error_table()[0].label(), "Substitution 'u'\u{2192}'a'");
    }

    #[test]
    fn accumulator_matches_corpus_level_aggregation() {
        let pairs = [("lion", "lion"), ("", "tale"), ("stone", "stane"), ("a", "ab")];
        let mut acc = Accumulator::new();
        for (pred, truth) in pairs {
            acc.add(pred, truth);
        }
        let total_dist: usize = pairs.iter().map(|(p, t)| levenshtein(p, t).distance).sum();
        let total_len: usize = pairs.iter().map(|(_, t)| t.chars().count()).sum();
        assert_eq!(acc.total_edit_distance(), total_dist as u64);
        assert_eq!(acc.cer(), total_dist as f64 / total_len as f64);

        // Length-weighted mean of per-line CERs equals the corpus rate.
        let weighted: f64 = pairs
            .iter()
            .map(|(p, t)| {
                let len = t.chars().count() as f64;
                len * (levenshtein(p, t).distance as f64 / len)
            })
            .sum::<f64>()
            / total_len as f64;
        assert!((acc.cer() - weighted).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_yield_zero_cer_and_empty_table() {
        let mut acc = Accumulator::new();
        acc.add("stone hall", "stone hall");
        acc.add("the lion", "the lion");
        assert_eq!(acc.cer(), 0.0);
        assert!(acc.error_table().is_empty());
    }

    #[test]
    fn empty_predictions_yield_cer_one_all_deletions() {
        let mut acc = Accumulator::new();
        for truth in ["tale", "sir", "on"] {
            acc.add("", truth);
        }
        assert_eq!(acc.cer(), 1.0);
        assert!(acc.error_table().iter().all(|r| r.kind == "deletion"));
        let percent_sum: f64 = acc.error_table().iter().map(|r| r.percent).sum();
        assert!((percent_sum - 100.0).abs() < 1e-9);
    }

    fn blank_model(classes: usize) -> Model<f32> {
        let spec = ModelSpec {
            kind: ModelKind::Hybrid,
            num_classes: classes,
            hidden_units: 32,
            dropout_rate: 0.5,
            input_height: 32,
        };
        let mut model = build_model(&spec, &mut crate::rng::substream(5, "eval-test", 0)).unwrap();
        let n = model.params_mut().len();
        let mut params = model.params_mut();
        params[n - 2].value.fill(0.0);
        params[n - 1].value.fill(0.0);
        params[n - 1].value.data_mut()[crate::ctc::BLANK] = 10.0;
        model
    }

    fn toy_samples(texts: &[&str]) -> Vec<TextLineSample> {
        let atlas = toy::toy_atlas_regular();
        texts.iter().map(|t| render_line(t, &atlas).unwrap()).collect()
    }

    #[test]
    fn evaluating_a_blank_model_reports_total_deletion() {
        let charset = toy::toy_charset();
        let model = blank_model(charset.num_classes());
        let samples = toy_samples(&["the sea", "a stone"]);
        let augment = AugmentConfig::off();
        let settings = EvalSettings {
            charset: &charset,
            policy: NormalizationPolicy::default(),
            augment: &augment,
            textures: None,
            scenario: "type1".into(),
            repeats: 1,
            seed: 11,
        };
        let report = evaluate(&model, &samples, &settings).unwrap();
        let s = &report.scenarios[0];
        assert_eq!((s.lines, s.skipped, s.repeats), (2, 0, 1));
        assert_eq!(s.total_gt_length, 14);
        assert_eq!(s.total_edit_distance, 14);
        assert_eq!(s.cer, 1.0);
        assert!(report.error_table.iter().all(|r| r.kind == "deletion"));
    }

    #[test]
    fn evaluation_reports_are_reproducible() {
        let charset = toy::toy_charset();
        let model = blank_model(charset.num_classes());
        let samples = toy_samples(&["san", "hat"]);
        let augment = crate::augment::scenario_preset("type2").unwrap();
        let run = || {
            let settings = EvalSettings {
                charset: &charset,
                policy: NormalizationPolicy::default(),
                augment: &augment,
                textures: None,
                scenario: "type2".into(),
                repeats: 3,
                seed: 21,
            };
            let report = evaluate(&model, &samples, &settings).unwrap();
            serde_json::to_string(&report).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reports_merge_with_recomputed_ranking() {
        let mut a = Accumulator::new();
        a.add("ab", "ax");
        a.add("c", "cd");
        let mut b = Accumulator::new();
        b.add("", "d");
        let r1 = EvalReport {
            scenarios: vec![ScenarioResult {
                scenario: "type1".into(),
                repeats: 1,
                lines: 2,
                skipped: 0,
                total_edit_distance: a.total_edit_distance(),
                total_gt_length: a.total_gt_length(),
                cer: a.cer(),
            }],
            error_table: a.error_table(),
        };
        let r2 = EvalReport {
            scenarios: vec![ScenarioResult {
                scenario: "type2".into(),
                repeats: 1,
                lines: 1,
                skipped: 0,
                total_edit_distance: b.total_edit_distance(),
                total_gt_length: b.total_gt_length(),
                cer: b.cer(),
            }],
            error_table: b.error_table(),
        };
        let merged = merge_reports(vec![r1, r2]);
        assert_eq!(merged.scenarios.len(), 2);
        let dels: u64 = merged
            .error_table
            .iter()
            .filter(|r| r.kind == "deletion")
            .map(|r| r.count)
            .sum();
        assert_eq!(dels, 2, "deletion of 'd' from both reports must sum");
        let total: u64 = merged.error_table.iter().map(|r| r.count).sum();
        assert_eq!(total, 3);
        for pair in merged.error_table.windows(2) {
            assert!(pair[0].count >= pair[1].count, "table must stay ranked");
        }
    }

    #[test]
    fn rendered_report_mirrors_the_published_layout() {
        let mut acc = Accumulator::new();
        acc.add("ab c", "abc");
        acc.add("ab c", "abc");
        acc.add("cat", "cut");
        let report = EvalReport {
            scenarios: vec![ScenarioResult {
                scenario: "type3".into(),
                repeats: 30,
                lines: 3,
                skipped: 1,
                total_edit_distance: acc.total_edit_distance(),
                total_gt_length: acc.total_gt_length(),
                cer: acc.cer(),
            }],
            error_table: acc.error_table(),
        };
        let text = render_report(&report);
        assert!(text.contains("type3"), "{text}");
        assert!(text.contains("Insertion of ' '"), "{text}");
        assert!(text.contains("66.67%"), "{text}");
    }

    #[test]
    fn benchmark_normalizes_to_standard_pages() {
        let charset = toy::toy_charset();
        let model = blank_model(charset.num_classes());
        let samples = toy_samples(&["the sea", "a stone", "tall tales"]);
        let augment = AugmentConfig::off();
        let settings = BenchSettings {
            charset: &charset,
            policy: NormalizationPolicy::default(),
            augment: &augment,
            textures: None,
            scenario: "type1".into(),
            batch_size: 2,
            trials: 3,
            seed: 9,
        };
        let result = benchmark(&model, &samples, &settings).unwrap();
        assert_eq!(result.trials, 3);
        assert_eq!(result.batch, 2);
        assert!(result.sec_per_page_mean > 0.0);
        assert!(result.sec_per_page_std.is_finite());
        let csv = render_bench_csv(&[result]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(BENCH_CSV_HEADER));
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], "type1");
        assert!(fields[3].parse::<f64>().unwrap() > 0.0);
    }
}
