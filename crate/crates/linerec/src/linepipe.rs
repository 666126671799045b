//! Line preprocessing and batch assembly: baseline deskew plus x-height
//! scaling, fixed-height rescale, width-bucketed batching with zero padding,
//! and the image-to-tensor ink-alpha mapping the models consume.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_line, AugmentConfig, AugmentError, TextureBank};
use crate::charset::{Charset, CharsetError};
use crate::ctc;
use crate::nncore::Tensor;
use crate::raster::GrayImage;
use crate::rng;
use crate::synthgen::TextLineSample;

#[derive(Debug, Error)]
pub enum PipeError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error(transparent)]
    Charset(#[from] CharsetError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

/// Geometric normalization settings. The baseline is placed at
/// `target_height - target_height/4` (row 24 of 32), the x-height line
/// `target_x_height` above it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationPolicy {
    pub enabled: bool,
    pub target_height: usize,
    pub target_x_height: usize,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy { enabled: true, target_height: 32, target_x_height: 16 }
    }
}

impl NormalizationPolicy {
    pub fn validate(&self) -> Result<(), PipeError> {
        if self.target_x_height == 0 || self.target_x_height >= self.target_height {
            return Err(PipeError::DegenerateGeometry(format!(
                "need 0 < target_x_height < target_height, got {} and {}",
                self.target_x_height, self.target_height
            )));
        }
        Ok(())
    }

    /// Output row the baseline is pinned to (24 for the 32-px default).
    pub fn baseline_row(&self) -> f32 {
        self.target_height as f32 * 0.75
    }
}

/// Deskew by the baseline slope, scale so the x-height matches the target,
/// and pin the baseline to a fixed row of a `target_height`-tall canvas.
pub fn normalize_geometry(
    sample: &TextLineSample,
    policy: &NormalizationPolicy,
) -> Result<GrayImage, PipeError> {
    policy.validate()?;
    if !(sample.x_height > 0.0) || !sample.x_height.is_finite() {
        return Err(PipeError::DegenerateGeometry(format!(
            "x_height {} is not positive",
            sample.x_height
        )));
    }
    let img = &sample.image;
    let w = img.width() as f32;
    let dy = sample.baseline_y_right - sample.baseline_y_left;
    let theta = -(dy / w).atan();
    let scale = policy.target_x_height as f32 / sample.x_height;
    let (cos_t, sin_t) = (theta.cos(), theta.sin());

    // Forward map: rotate about the left baseline endpoint, scale uniformly,
    // then put that endpoint at (0, baseline_row). Inverse-mapped below.
    let pivot_y = sample.baseline_y_left;
    let base_row = policy.baseline_row();
    let out_w = ((w.hypot(dy)) * scale).round().max(1.0) as usize;
    let out_h = policy.target_height;

    let mut out = GrayImage::filled(out_w, out_h, 255);
    let inv_scale = 1.0 / scale;
    for y in 0..out_h {
        for x in 0..out_w {
            // Undo translation, then scale, then rotation (transpose).
            let ux = x as f32 * inv_scale;
            let uy = (y as f32 - base_row) * inv_scale;
            let sx = cos_t * ux + sin_t * uy;
            let sy = -sin_t * ux + cos_t * uy + pivot_y;
            let v = if sx >= -0.5
                && sy >= -0.5
                && sx <= img.width() as f32 - 0.5
                && sy <= img.height() as f32 - 0.5
            {
                img.sample_bilinear(sx, sy)
            } else {
                255.0
            };
            out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Aspect-preserving bilinear rescale to an exact row count.
pub fn rescale_to_height(img: &GrayImage, target_height: usize) -> GrayImage {
    assert!(target_height > 0, "target height must be positive");
    if img.height() == target_height {
        return img.clone();
    }
    let w = ((img.width() * target_height) as f32 / img.height() as f32).round().max(1.0) as usize;
    img.resize(w, target_height)
}

/// Apply the normalization policy to one sample: geometric normalization
/// when enabled, otherwise a plain rescale to the target height.
pub fn prepare_line(
    sample: &TextLineSample,
    policy: &NormalizationPolicy,
) -> Result<GrayImage, PipeError> {
    if policy.enabled {
        normalize_geometry(sample, policy)
    } else {
        Ok(rescale_to_height(&sample.image, policy.target_height))
    }
}

/// A model-ready batch: ink-alpha images padded to the widest sample.
#[derive(Clone, Debug)]
pub struct Batch {
    /// [N, 1, H, W_max]; pixel value 1 - v/255 so padding is exactly 0.
    pub images: Tensor<f32>,
    pub widths: Vec<usize>,
    pub labels: Vec<Vec<usize>>,
    pub transcripts: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }
}

/// A sample dropped because its rescaled width cannot carry its transcript
/// through the model's downsampling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedSample {
    pub index: usize,
    pub transcript: String,
    pub width: usize,
    pub available_frames: usize,
    pub required_frames: usize,
}

/// Everything `make_batches` needs besides the samples themselves.
pub struct BatchSettings<'a> {
    pub charset: &'a Charset,
    pub policy: NormalizationPolicy,
    pub augment: &'a AugmentConfig,
    pub textures: Option<&'a TextureBank>,
    pub batch_size: usize,
    /// Horizontal downsampling factor of the model (4, or 2 for the
    /// peephole variant); output length is ceil(width / factor).
    pub downsample: usize,
    pub seed: u64,
    pub epoch: u64,
}

pub fn output_len(width: usize, downsample: usize) -> usize {
    width.div_ceil(downsample)
}

const BUCKET_GRANULARITY: usize = 32;

/// Normalize, rescale, bucket by width, augment, encode and pad. Buckets
/// are visited in shuffled order and shuffled internally; samples too
/// narrow for their transcript are reported, not fatal.
pub fn make_batches(
    samples: &[TextLineSample],
    settings: &BatchSettings,
) -> Result<(Vec<Batch>, Vec<SkippedSample>), PipeError> {
    assert!(settings.batch_size >= 1, "batch_size must be at least 1");
    assert!(settings.downsample >= 1, "downsample must be at least 1");
    let height = settings.policy.target_height;

    struct Prepared {
        index: usize,
        image: GrayImage,
        label: Vec<usize>,
        transcript: String,
    }

    let mut skipped = Vec::new();
    let mut prepared = Vec::new();
    for (index, sample) in samples.iter().enumerate() {
        let image = prepare_line(sample, &settings.policy)?;
        let label = settings.charset.encode(&sample.transcript)?;
        assert!(!label.is_empty(), "empty transcript in dataset");
        let required = ctc::min_frames(&label);
        let available = output_len(image.width(), settings.downsample);
        if available < required {
            skipped.push(SkippedSample {
                index,
                transcript: sample.transcript.clone(),
                width: image.width(),
                available_frames: available,
                required_frames: required,
            });
            continue;
        }
        prepared.push(Prepared { index, image, label, transcript: sample.transcript.clone() });
    }

    let mut buckets = std::collections::BTreeMap::<usize, Vec<Prepared>>::new();
    for p in prepared {
        buckets.entry(p.image.width() / BUCKET_GRANULARITY).or_default().push(p);
    }
    let mut order: Vec<usize> = buckets.keys().copied().collect();
    let mut order_rng = rng::substream(settings.seed, "bucket-order", settings.epoch);
    order.shuffle(&mut order_rng);

    let mut batches = Vec::new();
    for key in order {
        let mut bucket = buckets.remove(&key).expect("key from map");
        bucket.shuffle(&mut order_rng);
        for group in bucket.chunks(settings.batch_size) {
            let mut images = Vec::with_capacity(group.len());
            for p in group {
                let mut sample_rng = rng::substream(
                    settings.seed,
                    "augment",
                    settings.epoch * samples.len() as u64 + p.index as u64,
                );
                images.push(augment_line(&p.image, settings.augment, settings.textures, &mut sample_rng)?);
            }
            let w_max = images.iter().map(|i| i.width()).max().expect("non-empty group");
            let n = group.len();
            let mut tensor = Tensor::<f32>::zeros(&[n, 1, height, w_max]);
            for (s, img) in images.iter().enumerate() {
                for y in 0..height {
                    for x in 0..img.width() {
                        let v = 1.0 - img.get(x, y) as f32 / 255.0;
                        tensor.data_mut()[((s * height) + y) * w_max + x] = v;
                    }
                }
            }
            batches.push(Batch {
                images: tensor,
                widths: images.iter().map(|i| i.width()).collect(),
                labels: group.iter().map(|p| p.label.clone()).collect(),
                transcripts: group.iter().map(|p| p.transcript.clone()).collect(),
            });
        }
    }
    Ok((batches, skipped))
}

/// Ink-alpha tensor for a single preprocessed image (inference path).
pub fn image_to_tensor(img: &GrayImage) -> Tensor<f32> {
    let (w, h) = (img.width(), img.height());
    let mut t = Tensor::<f32>::zeros(&[1, 1, h, w]);
    for y in 0..h {
        for x in 0..w {
            t.data_mut()[y * w + x] = 1.0 - img.get(x, y) as f32 / 255.0;
        }
    }
    t
}
