//! The three line-recognition architectures assembled from nncore layers:
//! a hybrid CNN-BiLSTM, a fully convolutional variant, and the hybrid with
//! peephole cells and width pooled only once. Includes the training step,
//! greedy inference, and bit-exact checkpointing.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, TrainState};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charset::{Charset, CharsetError};
use crate::ctc::{self, CtcError};
use crate::linepipe::{
    image_to_tensor, output_len, prepare_line, Batch, NormalizationPolicy, PipeError,
};
use crate::raster::GrayImage;
use crate::nncore::{
    adam_step, clip_global_norm, log_softmax, log_softmax_backward, map_to_sequence,
    map_to_sequence_backward, relu, relu_backward, BatchNorm2d, BiLstm, BiLstmCache, BnCache,
    Conv2d, ConvCache, ConvShape, Dropout, DropoutCache, Linear, LinearCache, MaxPool2d,
    OptimizerConfig, Param, PoolCache, Scalar, Tensor,
};
use crate::synthgen::TextLineSample;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    SpecInvalid(String),
    #[error("charset fingerprint mismatch: model was trained with {expected}, got {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error(transparent)]
    Charset(#[from] CharsetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hybrid,
    Fcn,
    HybridPeephole,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<Self, ModelError> {
        match name {
            "hybrid" => Ok(ModelKind::Hybrid),
            "fcn" => Ok(ModelKind::Fcn),
            "hybrid_peephole" | "hybrid-peephole" => Ok(ModelKind::HybridPeephole),
            other => Err(ModelError::SpecInvalid(format!(
                "unknown model kind {other:?} (expected hybrid, fcn or hybrid_peephole)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Hybrid => "hybrid",
            ModelKind::Fcn => "fcn",
            ModelKind::HybridPeephole => "hybrid_peephole",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub num_classes: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub input_height: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, num_classes: usize) -> Self {
        ModelSpec { kind, num_classes, hidden_units: 256, dropout_rate: 0.5, input_height: 32 }
    }

    /// Horizontal downsampling factor: output length is ceil(W / factor).
    pub fn downsample(&self) -> usize {
        match self.kind {
            ModelKind::Hybrid | ModelKind::Fcn => 4,
            ModelKind::HybridPeephole => 2,
        }
    }

    fn vertical_downsample(&self) -> usize {
        match self.kind {
            ModelKind::Hybrid | ModelKind::HybridPeephole => 4,
            ModelKind::Fcn => 32,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::SpecInvalid(format!(
                "num_classes {} below 2 (blank plus at least one symbol)",
                self.num_classes
            )));
        }
        if self.hidden_units == 0 {
            return Err(ModelError::SpecInvalid("hidden_units must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::SpecInvalid(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let v = self.vertical_downsample();
        if self.input_height == 0 || self.input_height % v != 0 {
            return Err(ModelError::SpecInvalid(format!(
                "input_height {} not divisible by the vertical downsampling {v}",
                self.input_height
            )));
        }
        Ok(())
    }
}

enum ConvLayer<S> {
    Conv { conv: Conv2d<S>, bn: BatchNorm2d<S> },
    Pool(MaxPool2d),
}

enum ConvLayerCache<S> {
    Conv { conv: ConvCache<S>, bn: BnCache<S>, relu_y: Tensor<S> },
    Pool(PoolCache),
}

struct SeqStage<S> {
    drop_in: Dropout,
    bilstm: BiLstm<S>,
    drop_out: Dropout,
}

struct SeqCache<S> {
    drop_in: DropoutCache<S>,
    bilstm: BiLstmCache<S>,
    drop_out: DropoutCache<S>,
}

pub struct Model<S> {
    pub spec: ModelSpec,
    convs: Vec<ConvLayer<S>>,
    seq: Option<SeqStage<S>>,
    output: Linear<S>,
}

pub struct ForwardCache<S> {
    conv: Vec<ConvLayerCache<S>>,
    map_dims: (usize, usize),
    seq: Option<SeqCache<S>>,
    linear: LinearCache<S>,
    log_probs: Tensor<S>,
}

pub fn build_model<S: Scalar>(
    spec: &ModelSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Model<S>, ModelError> {
    spec.validate()?;
    let c3 = |ic, oc, stride| ConvShape {
        in_channels: ic,
        out_channels: oc,
        kernel: (3, 3),
        stride,
        padding: (1, 1),
    };
    let mut convs = Vec::new();
    let mut conv_idx = 0;
    let mut push_conv = |convs: &mut Vec<ConvLayer<S>>, shape: ConvShape, rng: &mut ChaCha8Rng| {
        conv_idx += 1;
        convs.push(ConvLayer::Conv {
            conv: Conv2d::new(&format!("conv{conv_idx}"), shape, rng),
            bn: BatchNorm2d::new(&format!("bn{conv_idx}"), shape.out_channels),
        });
    };

    let (seq, map_features) = match spec.kind {
        ModelKind::Hybrid | ModelKind::HybridPeephole => {
            let peephole = spec.kind == ModelKind::HybridPeephole;
            push_conv(&mut convs, c3(1, 64, (1, 1)), rng);
            convs.push(ConvLayer::Pool(MaxPool2d { window: (2, 2), stride: (2, 2) }));
            push_conv(&mut convs, c3(64, 128, (1, 1)), rng);
            // Width is pooled only once in the peephole variant: the second
            // pool collapses rows only.
            let second = if peephole {
                MaxPool2d { window: (2, 1), stride: (2, 1) }
            } else {
                MaxPool2d { window: (2, 2), stride: (2, 2) }
            };
            convs.push(ConvLayer::Pool(second));
            let map_features = 128 * (spec.input_height / 4);
            let bilstm = BiLstm::new("bilstm", map_features, spec.hidden_units, peephole, rng);
            let seq = SeqStage {
                drop_in: Dropout::new(spec.dropout_rate),
                bilstm,
                drop_out: Dropout::new(spec.dropout_rate),
            };
            (Some(seq), 2 * spec.hidden_units)
        }
        ModelKind::Fcn => {
            push_conv(
                &mut convs,
                ConvShape {
                    in_channels: 1,
                    out_channels: 64,
                    kernel: (7, 7),
                    stride: (2, 2),
                    padding: (3, 3),
                },
                rng,
            );
            convs.push(ConvLayer::Pool(MaxPool2d { window: (2, 2), stride: (2, 2) }));
            for (ic, oc, sh) in [
                (64, 64, 1),
                (64, 64, 1),
                (64, 128, 2),
                (128, 128, 1),
                (128, 256, 2),
                (256, 256, 1),
                (256, 512, 2),
                (512, 512, 1),
                (512, 512, 1),
            ] {
                push_conv(&mut convs, c3(ic, oc, (sh, 1)), rng);
            }
            (None, 512 * (spec.input_height / 32))
        }
    };
    let output = Linear::new("out", map_features, spec.num_classes, rng);
    Ok(Model { spec: spec.clone(), convs, seq, output })
}

impl<S: Scalar> Model<S> {
    /// Output sequence length for a given input width, by symbolic shape
    /// propagation through the layer stack (width padded first).
    pub fn sequence_length(&self, width: usize) -> usize {
        let factor = self.spec.downsample();
        let mut w = width.div_ceil(factor) * factor;
        let mut h = self.spec.input_height;
        for layer in &self.convs {
            let (nh, nw) = match layer {
                ConvLayer::Conv { conv, .. } => conv.shape.out_dims(h, w),
                ConvLayer::Pool(p) => p.out_dims(h, w),
            };
            h = nh;
            w = nw;
        }
        w
    }

    /// Valid output lengths for per-sample widths.
    pub fn output_lengths(&self, widths: &[usize]) -> Vec<usize> {
        widths.iter().map(|&w| output_len(w, self.spec.downsample())).collect()
    }

    fn pad_width(&self, x: &Tensor<S>) -> Tensor<S> {
        let &[n, c, h, w] = x.shape() else { panic!("model input must be [N, 1, H, W]") };
        assert_eq!(c, 1, "model input must have one channel");
        assert_eq!(h, self.spec.input_height, "input height does not match the spec");
        let factor = self.spec.downsample();
        let w_pad = w.div_ceil(factor) * factor;
        if w_pad == w {
            return x.clone();
        }
        let mut out = Tensor::zeros(&[n, c, h, w_pad]);
        for i in 0..n * c * h {
            let src = &x.data()[i * w..(i + 1) * w];
            out.data_mut()[i * w_pad..i * w_pad + w].copy_from_slice(src);
        }
        out
    }

    /// Training-mode forward: batch statistics for BN, live dropout.
    /// Returns log-probabilities [T', N, num_classes] and the caches the
    /// backward pass consumes.
    pub fn forward_train(
        &mut self,
        x: &Tensor<S>,
        rng: &mut ChaCha8Rng,
    ) -> (Tensor<S>, ForwardCache<S>) {
        let mut cur = self.pad_width(x);
        let mut conv_caches = Vec::with_capacity(self.convs.len());
        for layer in &mut self.convs {
            match layer {
                ConvLayer::Conv { conv, bn } => {
                    let (y, conv_cache) = conv.forward(&cur);
                    let (y, bn_cache) = bn.forward_train(&y);
                    let y = relu(&y);
                    conv_caches.push(ConvLayerCache::Conv {
                        conv: conv_cache,
                        bn: bn_cache,
                        relu_y: y.clone(),
                    });
                    cur = y;
                }
                ConvLayer::Pool(pool) => {
                    let (y, cache) = pool.forward(&cur);
                    conv_caches.push(ConvLayerCache::Pool(cache));
                    cur = y;
                }
            }
        }
        let &[_, c, h, _] = cur.shape() else { panic!("conv stack output must be rank 4") };
        let mut seq_in = map_to_sequence(&cur);
        let seq_cache = self.seq.as_ref().map(|stage| {
            let (a, drop_in) = stage.drop_in.forward_train(&seq_in, rng);
            let (b, bilstm) = stage.bilstm.forward(&a);
            let (c, drop_out) = stage.drop_out.forward_train(&b, rng);
            seq_in = c;
            SeqCache { drop_in, bilstm, drop_out }
        });
        let (logits, linear_cache) = self.output.forward(&seq_in);
        let log_probs = log_softmax(&logits);
        let cache = ForwardCache {
            conv: conv_caches,
            map_dims: (c, h),
            seq: seq_cache,
            linear: linear_cache,
            log_probs: log_probs.clone(),
        };
        (log_probs, cache)
    }

    /// Inference-mode forward: running BN statistics, dropout off.
    pub fn forward_infer(&self, x: &Tensor<S>) -> Tensor<S> {
        let mut cur = self.pad_width(x);
        for layer in &self.convs {
            cur = match layer {
                ConvLayer::Conv { conv, bn } => {
                    let (y, _) = conv.forward(&cur);
                    relu(&bn.forward_infer(&y))
                }
                ConvLayer::Pool(pool) => pool.forward(&cur).0,
            };
        }
        let mut seq_in = map_to_sequence(&cur);
        if let Some(stage) = &self.seq {
            let a = stage.drop_in.forward_infer(&seq_in);
            let (b, _) = stage.bilstm.forward(&a);
            seq_in = stage.drop_out.forward_infer(&b);
        }
        let (logits, _) = self.output.forward(&seq_in);
        log_softmax(&logits)
    }

    /// Per-stage output dimensions for one line of the given width, measured
    /// by running a real inference forward pass. Conv stages report
    /// [N, C, H, W]; sequence stages report [T, N, features].
    pub fn shape_trace(&self, width: usize) -> Vec<(String, Vec<usize>)> {
        let x = Tensor::zeros(&[1, 1, self.spec.input_height, width]);
        let mut trace = Vec::new();
        let mut cur = self.pad_width(&x);
        let (mut ci, mut pi) = (0, 0);
        for layer in &self.convs {
            let name = match layer {
                ConvLayer::Conv { conv, bn } => {
                    let (y, _) = conv.forward(&cur);
                    cur = relu(&bn.forward_infer(&y));
                    ci += 1;
                    format!("conv{ci}")
                }
                ConvLayer::Pool(pool) => {
                    cur = pool.forward(&cur).0;
                    pi += 1;
                    format!("pool{pi}")
                }
            };
            trace.push((name, cur.shape().to_vec()));
        }
        let mut seq = map_to_sequence(&cur);
        trace.push(("map_to_sequence".to_string(), seq.shape().to_vec()));
        if let Some(stage) = &self.seq {
            seq = stage.bilstm.forward(&seq).0;
            trace.push(("bilstm".to_string(), seq.shape().to_vec()));
        }
        let (logits, _) = self.output.forward(&seq);
        trace.push(("linear".to_string(), logits.shape().to_vec()));
        trace
    }

    /// Accumulate parameter gradients from dL/d(log_probs).
    pub fn backward(&mut self, cache: &ForwardCache<S>, d_log_probs: &Tensor<S>) {
        let d = log_softmax_backward(&cache.log_probs, d_log_probs);
        let mut d = self.output.backward(&cache.linear, &d);
        if let Some(stage) = &mut self.seq {
            let sc = cache.seq.as_ref().expect("seq cache matches seq stage");
            d = stage.drop_out.backward(&sc.drop_out, &d);
            d = stage.bilstm.backward(&sc.bilstm, &d);
            d = stage.drop_in.backward(&sc.drop_in, &d);
        }
        let (c, h) = cache.map_dims;
        let mut d = map_to_sequence_backward(&d, c, h);
        for (layer, lc) in self.convs.iter_mut().zip(&cache.conv).rev() {
            match (layer, lc) {
                (ConvLayer::Conv { conv, bn }, ConvLayerCache::Conv { conv: cc, bn: bc, relu_y }) => {
                    let dr = relu_backward(relu_y, &d);
                    let db = bn.backward(bc, &dr);
                    d = conv.backward(cc, &db);
                }
                (ConvLayer::Pool(pool), ConvLayerCache::Pool(pc)) => {
                    d = pool.backward(pc, &d);
                }
                _ => unreachable!("cache kind matches layer kind"),
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut out = Vec::new();
        for layer in &mut self.convs {
            if let ConvLayer::Conv { conv, bn } = layer {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        if let Some(stage) = &mut self.seq {
            out.extend(stage.bilstm.params_mut());
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut out = Vec::new();
        for layer in &self.convs {
            if let ConvLayer::Conv { conv, bn } = layer {
                out.push(&conv.weight);
                out.push(&conv.bias);
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        if let Some(stage) = &self.seq {
            out.extend(stage.bilstm.params());
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    /// Non-trainable buffers (BN running statistics), in layer order.
    pub fn buffers(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        let mut idx = 0;
        for layer in &self.convs {
            if let ConvLayer::Conv { bn, .. } = layer {
                idx += 1;
                out.push((format!("bn{idx}.running_mean"), &bn.running_mean));
                out.push((format!("bn{idx}.running_var"), &bn.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        let mut idx = 0;
        for layer in &mut self.convs {
            if let ConvLayer::Conv { bn, .. } = layer {
                idx += 1;
                out.push((format!("bn{idx}.running_mean"), &mut bn.running_mean));
                out.push((format!("bn{idx}.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// One optimization step: forward, CTC loss, backward, global-norm clip,
/// Adam update at the given 1-based iteration.
pub fn train_step(
    model: &mut Model<f32>,
    batch: &Batch,
    cfg: &OptimizerConfig,
    iteration: u64,
    rng: &mut ChaCha8Rng,
) -> Result<StepStats, ModelError> {
    assert!(iteration >= 1, "iterations are 1-based");
    for p in model.params_mut() {
        p.zero_grad();
    }
    let (log_probs, cache) = model.forward_train(&batch.images, rng);
    let lengths = model.output_lengths(&batch.widths);
    let (loss, d_log_probs) = ctc::ctc_loss(&log_probs, &lengths, &batch.labels)?;
    model.backward(&cache, &d_log_probs);
    let mut params = model.params_mut();
    let grad_norm = clip_global_norm(&mut params, cfg.clip_norm);
    adam_step(&mut params, cfg, iteration);
    Ok(StepStats { loss: loss as f64, grad_norm, lr: cfg.lr_at(iteration) })
}

#[derive(Clone, Debug)]
pub struct Recognition {
    pub text: String,
    /// Per-frame argmax class indices before collapsing.
    pub trace: Vec<usize>,
}

/// Preprocess one line per the policy, run inference, decode greedily.
/// `expected_fingerprint` is the charset fingerprint the model was trained
/// with (from its checkpoint).
pub fn recognize(
    model: &Model<f32>,
    sample: &TextLineSample,
    charset: &Charset,
    policy: &NormalizationPolicy,
    expected_fingerprint: &str,
) -> Result<Recognition, ModelError> {
    let found = charset.fingerprint();
    if found != expected_fingerprint {
        return Err(ModelError::ChecksumMismatch {
            expected: expected_fingerprint.to_string(),
            found,
        });
    }
    if charset.num_classes() != model.spec.num_classes {
        return Err(ModelError::SpecInvalid(format!(
            "charset has {} classes, model expects {}",
            charset.num_classes(),
            model.spec.num_classes
        )));
    }
    let image = prepare_line(sample, policy)?;
    recognize_image(model, &image, charset)
}

/// Run inference and greedy decoding on an already-prepared line image
/// (correct height, white background).
pub fn recognize_image(
    model: &Model<f32>,
    image: &GrayImage,
    charset: &Charset,
) -> Result<Recognition, ModelError> {
    if charset.num_classes() != model.spec.num_classes {
        return Err(ModelError::SpecInvalid(format!(
            "charset has {} classes, model expects {}",
            charset.num_classes(),
            model.spec.num_classes
        )));
    }
    let x = image_to_tensor(image);
    let log_probs = model.forward_infer(&x);
    let t_valid = output_len(image.width(), model.spec.downsample());
    let trace = argmax_trace(&log_probs, 0, t_valid);
    let labels = ctc::collapse(&trace);
    let text = charset.decode(&labels)?;
    Ok(Recognition { text, trace })
}

/// Greedy-decode every sequence in a batch of log probabilities, honoring
/// each sample's valid frame count.
pub fn decode_outputs<S: Scalar>(
    log_probs: &Tensor<S>,
    lengths: &[usize],
    charset: &Charset,
) -> Result<Vec<String>, ModelError> {
    let &[_, n, _] = log_probs.shape() else { panic!("log probs must be [T, N, C]") };
    assert_eq!(lengths.len(), n, "one valid length per batch element");
    let mut out = Vec::with_capacity(n);
    for (ni, &t_valid) in lengths.iter().enumerate() {
        let trace = argmax_trace(log_probs, ni, t_valid);
        let labels = ctc::collapse(&trace);
        out.push(charset.decode(&labels)?);
    }
    Ok(out)
}

/// Per-frame argmax class indices for batch element `ni`; ties pick the
/// lowest index.
fn argmax_trace<S: Scalar>(log_probs: &Tensor<S>, ni: usize, t_valid: usize) -> Vec<usize> {
    let &[t_max, n, classes] = log_probs.shape() else { panic!("log probs must be [T, N, C]") };
    assert!(ni < n && t_valid <= t_max, "trace request out of range");
    let mut trace = Vec::with_capacity(t_valid);
    for t in 0..t_valid {
        let base = (t * n + ni) * classes;
        let row = &log_probs.data()[base..base + classes];
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        trace.push(best);
    }
    trace
}

#[cfg(test)]
mod tests;
