//! Overfit two rendered lines, then recognize them from their images:
//! normalization, inference, and greedy CTC decoding, with the raw
//! per-frame argmax trace shown next to the collapsed transcript.
//!
//!     cargo run --release --example recognize_line

use linerec::augment::AugmentConfig;
use linerec::ctc::BLANK;
use linerec::linepipe::{make_batches, BatchSettings, NormalizationPolicy};
use linerec::models::{build_model, recognize, train_step, Model, ModelKind, ModelSpec};
use linerec::nncore::OptimizerConfig;
use linerec::rng;
use linerec::synthgen::{render_line, toy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let charset = toy::toy_charset();
    let atlas = toy::toy_atlas_regular();
    let texts = ["the sea", "a lost note"];
    let samples: Vec<_> =
        texts.iter().map(|t| render_line(t, &atlas)).collect::<Result<_, _>>()?;

    let spec = ModelSpec {
        kind: ModelKind::Hybrid,
        num_classes: charset.num_classes(),
        hidden_units: 48,
        dropout_rate: 0.0,
        input_height: 32,
    };
    let mut model: Model<f32> = build_model(&spec, &mut rng::substream(3, "init", 0))?;
    println!("hybrid model, {} parameters", model.parameter_count());

    let policy = NormalizationPolicy::default();
    let augment = AugmentConfig::off();
    let settings = BatchSettings {
        charset: &charset,
        policy,
        augment: &augment,
        textures: None,
        batch_size: texts.len(),
        downsample: spec.downsample(),
        seed: 3,
        epoch: 0,
    };
    let (batches, _) = make_batches(&samples, &settings)?;

    let optimizer = OptimizerConfig::hybrid();
    let mut iteration = 0;
    'train: for _ in 0..500 {
        for batch in &batches {
            iteration += 1;
            let stats = train_step(
                &mut model,
                batch,
                &optimizer,
                iteration,
                &mut rng::substream(3, "dropout", iteration),
            )?;
            if iteration % 50 == 0 {
                println!("iteration {iteration:>3}  loss {:>8.4}", stats.loss);
            }
            if stats.loss < 0.05 {
                println!("iteration {iteration:>3}  loss {:>8.4}  (memorized)", stats.loss);
                break 'train;
            }
        }
    }

    let fingerprint = charset.fingerprint();
    println!();
    for sample in &samples {
        let rec = recognize(&model, sample, &charset, &policy, &fingerprint)?;
        let trace: String = rec
            .trace
            .iter()
            .map(|&k| if k == BLANK { '-' } else { charset.symbol_at(k).unwrap() })
            .collect();
        println!("truth:  {:?}", sample.transcript);
        println!("frames: {trace}");
        println!("output: {:?} ({})\n", rec.text, if rec.text == sample.transcript { "correct" } else { "incorrect" });
    }
    Ok(())
}
