use super::*;
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::linepipe::{make_batches, BatchSettings};
use crate::rng;
use crate::synthgen::{render_line, toy};

fn test_rng(i: u64) -> ChaCha8Rng {
    rng::substream(123, "model-test", i)
}

fn small_spec(kind: ModelKind, num_classes: usize) -> ModelSpec {
    ModelSpec { kind, num_classes, hidden_units: 32, dropout_rate: 0.5, input_height: 32 }
}

fn toy_batch(texts: &[&str], downsample: usize) -> Batch {
    let charset = toy::toy_charset();
    let atlas = toy::toy_atlas_regular();
    let samples: Vec<_> = texts.iter().map(|t| render_line(t, &atlas).unwrap()).collect();
    let augment = AugmentConfig::off();
    let settings = BatchSettings {
        charset: &charset,
        policy: NormalizationPolicy::default(),
        augment: &augment,
        textures: None,
        batch_size: texts.len(),
        downsample,
        seed: 3,
        epoch: 0,
    };
    let (mut batches, skipped) = make_batches(&samples, &settings).unwrap();
    assert!(skipped.is_empty());
    assert_eq!(batches.len(), 1, "texts must share one width bucket");
    batches.remove(0)
}

#[test]
fn sequence_length_law_over_all_widths() {
    for kind in [ModelKind::Hybrid, ModelKind::Fcn, ModelKind::HybridPeephole] {
        let spec = small_spec(kind, 5);
        let model: Model<f32> = build_model(&spec, &mut test_rng(0)).unwrap();
        let factor = spec.downsample();
        for w in 4..=512usize {
            assert_eq!(
                model.sequence_length(w),
                w.div_ceil(factor),
                "{} at width {w}",
                kind.name()
            );
        }
    }
}

#[test]
fn table_shapes_at_width_128() {
    let x = Tensor::<f32>::zeros(&[2, 1, 32, 128]);
    for (kind, t_expect) in
        [(ModelKind::Hybrid, 32), (ModelKind::Fcn, 32), (ModelKind::HybridPeephole, 64)]
    {
        let model: Model<f32> = build_model(&small_spec(kind, 13), &mut test_rng(1)).unwrap();
        let y = model.forward_infer(&x);
        assert_eq!(y.shape(), &[t_expect, 2, 13], "{}", kind.name());
    }
}

#[test]
fn log_probs_exponentiate_to_distributions() {
    let model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, 13), &mut test_rng(2)).unwrap();
    let batch = toy_batch(&["tall", "tales"], 4);
    let y = model.forward_infer(&batch.images);
    let &[t, n, c] = y.shape() else { panic!() };
    for row in 0..t * n {
        let sum: f32 = y.data()[row * c..(row + 1) * c].iter().map(|v| v.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-5, "row {row} sums to {sum}");
    }
}

#[test]
fn infer_is_deterministic_and_pads_odd_widths() {
    let model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, 7), &mut test_rng(3)).unwrap();
    let mut x = Tensor::<f32>::zeros(&[1, 1, 32, 130]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v = ((i % 83) as f32) / 83.0;
    }
    let a = model.forward_infer(&x);
    let b = model.forward_infer(&x);
    assert_eq!(a.data(), b.data());
    assert_eq!(a.shape(), &[33, 1, 7]);
}

#[test]
fn untrained_loss_sits_in_the_uniform_band() {
    let charset = toy::toy_charset();
    let classes = charset.num_classes();
    let mut model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, classes), &mut test_rng(4)).unwrap();
    let batch = toy_batch(&["stone hall", "siren tale"], 4);
    let (log_probs, _) = model.forward_train(&batch.images, &mut test_rng(5));
    let lengths = model.output_lengths(&batch.widths);
    let (loss, _) = ctc::ctc_loss(&log_probs, &lengths, &batch.labels).unwrap();
    let mean_t = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
    let uniform = mean_t * (classes as f64).ln();
    let ratio = loss as f64 / uniform;
    assert!((0.5..=2.0).contains(&ratio), "loss {loss}, uniform scale {uniform}, ratio {ratio}");
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, 13), &mut test_rng(6)).unwrap();
    let batch = toy_batch(&["tin"], 4);
    let before: Vec<Vec<f32>> =
        model.params().iter().map(|p| p.value.data().to_vec()).collect();
    let mut cfg = OptimizerConfig::hybrid();
    cfg.lr0 = 0.0;
    for it in 1..=2 {
        train_step(&mut model, &batch, &cfg, it, &mut test_rng(6 + it)).unwrap();
    }
    let after: Vec<Vec<f32>> = model.params().iter().map(|p| p.value.data().to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn overfits_a_single_tiny_batch() {
    let mut spec = small_spec(ModelKind::Hybrid, 13);
    spec.dropout_rate = 0.0;
    let mut model: Model<f32> = build_model(&spec, &mut test_rng(7)).unwrap();
    let batch = toy_batch(&["sea"], 4);
    let cfg = OptimizerConfig::hybrid();
    let mut reached = None;
    for it in 1..=500 {
        let stats = train_step(&mut model, &batch, &cfg, it, &mut test_rng(100 + it)).unwrap();
        assert!(stats.loss.is_finite(), "loss diverged at iteration {it}");
        if stats.loss < 0.1 {
            reached = Some(it);
            break;
        }
    }
    assert!(reached.is_some(), "single-batch loss never fell below 0.1");
}

#[test]
fn infeasible_batch_is_reported_not_panicked() {
    let mut model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, 13), &mut test_rng(8)).unwrap();
    let charset = toy::toy_charset();
    // A 4-px image yields one frame; a 3-char label needs three.
    let images = Tensor::<f32>::zeros(&[1, 1, 32, 4]);
    let batch = Batch {
        images,
        widths: vec![4],
        labels: vec![charset.encode("sea").unwrap()],
        transcripts: vec!["sea".into()],
    };
    let cfg = OptimizerConfig::hybrid();
    match train_step(&mut model, &batch, &cfg, 1, &mut test_rng(9)) {
        Err(ModelError::Ctc(CtcError::InfeasibleLabel { sample, required, available })) => {
            assert_eq!((sample, required, available), (0, 3, 1));
        }
        other => panic!("expected InfeasibleLabel, got {other:?}"),
    }
}

#[test]
fn parameter_counts_match_closed_forms() {
    for (kind, fixed) in [
        (ModelKind::Hybrid, 2_698_368usize),
        (ModelKind::HybridPeephole, 2_698_368 + 1536),
        (ModelKind::Fcn, 7_088_512),
    ] {
        for classes in [13usize, 133] {
            let spec = ModelSpec::new(kind, classes);
            let model: Model<f32> = build_model(&spec, &mut test_rng(10)).unwrap();
            assert_eq!(
                model.parameter_count(),
                fixed + 513 * classes,
                "{} with {classes} classes",
                kind.name()
            );
        }
    }
}

#[test]
fn spec_validation_rejects_bad_fields() {
    let mut spec = ModelSpec::new(ModelKind::Hybrid, 1);
    assert!(matches!(spec.validate(), Err(ModelError::SpecInvalid(_))));
    spec.num_classes = 13;
    spec.input_height = 30;
    assert!(spec.validate().is_err());
    spec.input_height = 32;
    spec.dropout_rate = 1.0;
    assert!(spec.validate().is_err());
    spec.dropout_rate = 0.5;
    assert!(spec.validate().is_ok());
    let mut fcn = ModelSpec::new(ModelKind::Fcn, 13);
    fcn.input_height = 16;
    assert!(fcn.validate().is_err(), "fcn needs 32 rows of vertical downsampling");
    assert!(ModelKind::parse("hybrid_peephole").is_ok());
    assert!(ModelKind::parse("resnet").is_err());
}

fn trained_small_model() -> (Model<f32>, TrainState) {
    let mut model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, 13), &mut test_rng(11)).unwrap();
    let batch = toy_batch(&["tea"], 4);
    let cfg = OptimizerConfig::hybrid();
    for it in 1..=3 {
        train_step(&mut model, &batch, &cfg, it, &mut test_rng(200 + it)).unwrap();
    }
    let state = TrainState {
        iteration: 3,
        optimizer: cfg,
        charset_fingerprint: toy::toy_charset().fingerprint(),
    };
    (model, state)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (model, state) = trained_small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &state, &path).unwrap();

    let (loaded, loaded_state) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded_state.iteration, 3);
    assert_eq!(loaded_state.charset_fingerprint, state.charset_fingerprint);
    assert_eq!(loaded.spec, model.spec);

    let x = toy_batch(&["note"], 4).images;
    let a = model.forward_infer(&x);
    let b = loaded.forward_infer(&x);
    assert_eq!(a.data(), b.data(), "forward outputs must match bit-for-bit");

    // Re-serialization is byte-identical.
    let path2 = dir.path().join("model2.ckpt");
    save_checkpoint(&loaded, &loaded_state, &path2).unwrap();
    let bytes1 = std::fs::read(&path).unwrap();
    let bytes2 = std::fs::read(&path2).unwrap();
    assert_eq!(bytes1, bytes2);
}

#[test]
fn checkpoint_corruption_is_detected() {
    let (model, state) = trained_small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &state, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    // Truncation.
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(ModelError::CorruptCheckpoint(_))));

    // Bit flip in the tensor region.
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    let flip = dir.path().join("flip.ckpt");
    std::fs::write(&flip, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&flip), Err(ModelError::CorruptCheckpoint(_))));

    // Future format version (checksum fixed up so only the version trips).
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&2u32.to_le_bytes());
    let body_len = future.len() - 32;
    let digest = Sha256::digest(&future[..body_len]);
    future[body_len..].copy_from_slice(&digest);
    let fut = dir.path().join("future.ckpt");
    std::fs::write(&fut, &future).unwrap();
    assert!(matches!(
        load_checkpoint(&fut),
        Err(ModelError::VersionMismatch { found: 2, supported: 1 })
    ));
}

#[test]
fn checkpoint_kind_expectation_is_enforced() {
    let (model, state) = trained_small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &state, &path).unwrap();
    assert!(load_checkpoint_expecting(&path, Some(ModelKind::Hybrid)).is_ok());
    assert!(matches!(
        load_checkpoint_expecting(&path, Some(ModelKind::Fcn)),
        Err(ModelError::SpecInvalid(_))
    ));
}

#[test]
fn recognize_decodes_blank_only_output_to_empty_text() {
    let charset = toy::toy_charset();
    let mut model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, charset.num_classes()), &mut test_rng(12))
            .unwrap();
    // Force the output layer to vote blank everywhere.
    let n = model.params_mut().len();
    {
        let mut params = model.params_mut();
        params[n - 2].value.fill(0.0);
        params[n - 1].value.fill(0.0);
        params[n - 1].value.data_mut()[ctc::BLANK] = 10.0;
    }
    let atlas = toy::toy_atlas_regular();
    let sample = render_line("san", &atlas).unwrap();
    let fp = charset.fingerprint();
    let rec =
        recognize(&model, &sample, &charset, &NormalizationPolicy::default(), &fp).unwrap();
    assert_eq!(rec.text, "");
    assert!(!rec.trace.is_empty());
    assert!(rec.trace.iter().all(|&k| k == ctc::BLANK));

    let again =
        recognize(&model, &sample, &charset, &NormalizationPolicy::default(), &fp).unwrap();
    assert_eq!(rec.text, again.text);
    assert_eq!(rec.trace, again.trace);
}

#[test]
fn recognize_rejects_wrong_charset() {
    let charset = toy::toy_charset();
    let model: Model<f32> =
        build_model(&small_spec(ModelKind::Hybrid, charset.num_classes()), &mut test_rng(13))
            .unwrap();
    let atlas = toy::toy_atlas_regular();
    let sample = render_line("sea", &atlas).unwrap();
    assert!(matches!(
        recognize(&model, &sample, &charset, &NormalizationPolicy::default(), "deadbeef"),
        Err(ModelError::ChecksumMismatch { .. })
    ));
    let other = Charset::new("ab".chars()).unwrap();
    let fp = other.fingerprint();
    assert!(matches!(
        recognize(&model, &sample, &other, &NormalizationPolicy::default(), &fp),
        Err(ModelError::SpecInvalid(_))
    ));
}
