//! Batch-time image distortions: the six standard augmentations, alpha
//! compositing over background textures, and gray-value inversion. Nothing
//! here is persisted; every call is a pure function of (input, config, seed).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{clamp_u8, gaussian_kernel, GrayImage, PgmError};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("foreground is {fg_w}x{fg_h} but texture crop is {tex_w}x{tex_h}")]
    DimensionMismatch { fg_w: usize, fg_h: usize, tex_w: usize, tex_h: usize },
    #[error("unknown scenario {0:?} (expected type1, type2 or type3)")]
    UnknownScenario(String),
    #[error("texture bank is empty")]
    EmptyTextureBank,
    #[error("texture {path} is {height} px tall, need at least 32")]
    TextureTooShort { path: String, height: usize },
    #[error("compositing enabled but no texture bank provided")]
    MissingTextures,
    #[error("invalid augment config: {0}")]
    InvalidConfig(String),
    #[error("texture {path}: {source}")]
    TextureFormat { path: String, source: PgmError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    /// Thicken dark strokes (ink minimum over the kernel window).
    Dilate,
    /// Thin dark strokes (ink maximum over the kernel window).
    Erode,
}

/// Per-distortion enable probabilities and parameter ranges. Probability 0
/// disables a distortion outright.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub perspective_prob: f64,
    pub perspective_jitter_frac: f32,
    pub morph_prob: f64,
    pub morph_kernel: usize,
    pub blur_prob: f64,
    pub gaussian_sigma_range: (f32, f32),
    pub downscale_prob: f64,
    pub downscale_min_height: usize,
    pub noise_prob: f64,
    pub noise_sigma_range: (f32, f32),
    pub elastic_prob: f64,
    pub elastic_alpha_range: (f32, f32),
    pub elastic_sigma_range: (f32, f32),
    pub composite_prob: f64,
    pub ink_shade_max: u8,
    pub invert_prob: f64,
}

impl AugmentConfig {
    /// Everything disabled; `distort` becomes the identity.
    pub fn off() -> Self {
        AugmentConfig {
            perspective_prob: 0.0,
            perspective_jitter_frac: 0.02,
            morph_prob: 0.0,
            morph_kernel: 2,
            blur_prob: 0.0,
            gaussian_sigma_range: (0.5, 1.5),
            downscale_prob: 0.0,
            downscale_min_height: 16,
            noise_prob: 0.0,
            noise_sigma_range: (0.0, 12.0),
            elastic_prob: 0.0,
            elastic_alpha_range: (6.0, 12.0),
            elastic_sigma_range: (3.0, 5.0),
            composite_prob: 0.0,
            ink_shade_max: 96,
            invert_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let probs = [
            ("perspective_prob", self.perspective_prob),
            ("morph_prob", self.morph_prob),
            ("blur_prob", self.blur_prob),
            ("downscale_prob", self.downscale_prob),
            ("noise_prob", self.noise_prob),
            ("elastic_prob", self.elastic_prob),
            ("composite_prob", self.composite_prob),
            ("invert_prob", self.invert_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(AugmentError::InvalidConfig(format!("{name} = {p} outside [0,1]")));
            }
        }
        let ranges = [
            ("gaussian_sigma_range", self.gaussian_sigma_range),
            ("noise_sigma_range", self.noise_sigma_range),
            ("elastic_alpha_range", self.elastic_alpha_range),
            ("elastic_sigma_range", self.elastic_sigma_range),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(AugmentError::InvalidConfig(format!("{name} = ({lo}, {hi}) has lo > hi")));
            }
        }
        if !(0.0..=0.5).contains(&self.perspective_jitter_frac) {
            return Err(AugmentError::InvalidConfig(format!(
                "perspective_jitter_frac = {} outside [0, 0.5]",
                self.perspective_jitter_frac
            )));
        }
        if self.downscale_min_height < 8 {
            return Err(AugmentError::InvalidConfig(format!(
                "downscale_min_height = {} below 8",
                self.downscale_min_height
            )));
        }
        if !(2..=3).contains(&self.morph_kernel) {
            return Err(AugmentError::InvalidConfig(format!(
                "morph_kernel = {} not in {{2, 3}}",
                self.morph_kernel
            )));
        }
        Ok(())
    }

    pub fn wants_textures(&self) -> bool {
        self.composite_prob > 0.0
    }
}

/// The three evaluation scenarios: clean lines, standard distortions, and
/// standard distortions plus texture compositing with random inversion.
pub fn scenario_preset(name: &str) -> Result<AugmentConfig, AugmentError> {
    let mut cfg = AugmentConfig::off();
    match name {
        "type1" => {}
        "type2" | "type3" => {
            cfg.perspective_prob = 0.5;
            cfg.morph_prob = 0.5;
            cfg.blur_prob = 0.5;
            cfg.downscale_prob = 0.5;
            cfg.noise_prob = 0.5;
            if name == "type3" {
                cfg.composite_prob = 1.0;
                cfg.invert_prob = 0.5;
            }
        }
        other => return Err(AugmentError::UnknownScenario(other.to_string())),
    }
    Ok(cfg)
}

/// Background textures loaded into memory, sampled by uniform random crop;
/// textures narrower or shorter than the requested crop are tiled.
#[derive(Clone, Debug)]
pub struct TextureBank {
    textures: Vec<GrayImage>,
    paths: Vec<PathBuf>,
}

impl TextureBank {
    pub fn from_images(textures: Vec<GrayImage>) -> Result<Self, AugmentError> {
        let bank = TextureBank { textures, paths: Vec::new() };
        bank.check()?;
        Ok(bank)
    }

    pub fn from_dir(dir: &Path) -> Result<Self, AugmentError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .collect();
        paths.sort();
        let mut textures = Vec::with_capacity(paths.len());
        for p in &paths {
            let img = GrayImage::read_pgm(p).map_err(|source| AugmentError::TextureFormat {
                path: p.display().to_string(),
                source,
            })?;
            textures.push(img);
        }
        let bank = TextureBank { textures, paths };
        bank.check()?;
        Ok(bank)
    }

    fn check(&self) -> Result<(), AugmentError> {
        if self.textures.is_empty() {
            return Err(AugmentError::EmptyTextureBank);
        }
        for (i, t) in self.textures.iter().enumerate() {
            if t.height() < 32 {
                let path = self
                    .paths
                    .get(i)
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| format!("texture #{i}"));
                return Err(AugmentError::TextureTooShort { path, height: t.height() });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.textures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.textures.is_empty()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn crop(&self, w: usize, h: usize, rng: &mut ChaCha8Rng) -> GrayImage {
        let tex = &self.textures[rng.gen_range(0..self.textures.len())];
        let max_x = tex.width().saturating_sub(w);
        let max_y = tex.height().saturating_sub(h);
        let x0 = rng.gen_range(0..=max_x);
        let y0 = rng.gen_range(0..=max_y);
        let mut out = GrayImage::blank(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = tex.get((x0 + x) % tex.width(), (y0 + y) % tex.height());
                out.set(x, y, v);
            }
        }
        out
    }
}

/// Composite a dark-ink line over a texture crop: the line's gray value is
/// read as opacity (alpha = 1 - v/255) over a flat ink shade.
pub fn alpha_composite(
    fg: &GrayImage,
    texture: &GrayImage,
    ink_shade: u8,
) -> Result<GrayImage, AugmentError> {
    if fg.width() != texture.width() || fg.height() != texture.height() {
        return Err(AugmentError::DimensionMismatch {
            fg_w: fg.width(),
            fg_h: fg.height(),
            tex_w: texture.width(),
            tex_h: texture.height(),
        });
    }
    let mut out = GrayImage::blank(fg.width(), fg.height());
    for y in 0..fg.height() {
        for x in 0..fg.width() {
            let alpha = 1.0 - fg.get(x, y) as f32 / 255.0;
            let v = alpha * ink_shade as f32 + (1.0 - alpha) * texture.get(x, y) as f32;
            out.set(x, y, clamp_u8(v));
        }
    }
    Ok(out)
}

/// Smoothed random displacement fields for elastic distortion: per-pixel
/// uniform [-1,1] noise convolved with a Gaussian of std `sigma`, scaled by
/// `alpha`. Returned row-major as (dx, dy).
pub fn elastic_fields(
    w: usize,
    h: usize,
    alpha: f32,
    sigma: f32,
    rng: &mut ChaCha8Rng,
) -> (Vec<f32>, Vec<f32>) {
    let mut dx: Vec<f32> = (0..w * h).map(|_| rng.gen_range(-1.0..=1.0f32)).collect();
    let mut dy: Vec<f32> = (0..w * h).map(|_| rng.gen_range(-1.0..=1.0f32)).collect();
    let kernel = gaussian_kernel(sigma);
    for field in [&mut dx, &mut dy] {
        smooth_field(field, w, h, &kernel);
        for v in field.iter_mut() {
            *v *= alpha;
        }
    }
    (dx, dy)
}

/// Separable convolution with clamp-to-edge borders.
fn smooth_field(field: &mut [f32], w: usize, h: usize, kernel: &[f32]) {
    let r = kernel.len() / 2;
    let mut tmp = vec![0.0f32; field.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let sx = (x as isize + i as isize - r as isize).clamp(0, w as isize - 1) as usize;
                acc += k * field[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let sy = (y as isize + i as isize - r as isize).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[sy * w + x];
            }
            field[y * w + x] = acc;
        }
    }
}

pub fn elastic_distort(
    img: &GrayImage,
    alpha: f32,
    sigma: f32,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    assert!(alpha >= 0.0 && sigma > 0.0, "alpha must be >= 0 and sigma > 0");
    if alpha == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (dx, dy) = elastic_fields(w, h, alpha, sigma, rng);
    let mut out = GrayImage::blank(w, h);
    for y in 0..h {
        for x in 0..w {
            let sx = x as f32 + dx[y * w + x];
            let sy = y as f32 + dy[y * w + x];
            out.set(x, y, clamp_u8(img.sample_bilinear(sx, sy)));
        }
    }
    out
}

/// 3x3 homography fitted from four point correspondences by solving the
/// standard 8-unknown linear system.
fn fit_homography(src: &[(f32, f32); 4], dst: &[(f32, f32); 4]) -> [f64; 9] {
    let mut m = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let (x, y) = (src[i].0 as f64, src[i].1 as f64);
        let (u, v) = (dst[i].0 as f64, dst[i].1 as f64);
        m[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        m[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gaussian elimination with partial pivoting on the 8x8 system (last
    // column is the right-hand side).
    for col in 0..8 {
        let pivot = (col..8).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-12, "degenerate corner configuration");
        for row in 0..8 {
            if row != col {
                let f = m[row][col] / p;
                for k in col..9 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let mut hm = [0.0f64; 9];
    for i in 0..8 {
        hm[i] = m[i][8] / m[i][i];
    }
    hm[8] = 1.0;
    hm
}

/// Warp so the image corners move to jittered positions (jitter bounded by
/// `jitter_frac` of each dimension); inverse-mapped bilinear resampling with
/// border replication keeps the output size equal to the input size.
pub fn perspective_warp(img: &GrayImage, jitter_frac: f32, rng: &mut ChaCha8Rng) -> GrayImage {
    let (w, h) = (img.width() as f32, img.height() as f32);
    let corners = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)];
    let (jx, jy) = (jitter_frac * w, jitter_frac * h);
    let mut jittered = corners;
    for p in &mut jittered {
        p.0 += rng.gen_range(-jx..=jx);
        p.1 += rng.gen_range(-jy..=jy);
    }
    let hm = fit_homography(&jittered, &corners);
    let mut out = GrayImage::blank(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (xf, yf) = (x as f64, y as f64);
            let d = hm[6] * xf + hm[7] * yf + hm[8];
            let sx = (hm[0] * xf + hm[1] * yf + hm[2]) / d;
            let sy = (hm[3] * xf + hm[4] * yf + hm[5]) / d;
            out.set(x, y, clamp_u8(img.sample_bilinear(sx as f32, sy as f32)));
        }
    }
    out
}

fn add_noise(img: &GrayImage, sigma: f32, rng: &mut ChaCha8Rng) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0f32, sigma).expect("sigma checked positive");
    let mut out = GrayImage::blank(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.set(x, y, clamp_u8(img.get(x, y) as f32 + normal.sample(rng)));
        }
    }
    out
}

fn downscale_upscale(img: &GrayImage, target_height: usize) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    if target_height >= h {
        return img.clone();
    }
    let small_w = ((w * target_height + h / 2) / h).max(1);
    img.resize(small_w, target_height).resize(w, h)
}

/// The six standard distortions, each applied with its configured
/// probability, in fixed order: perspective, morphology, blur,
/// downscale-upscale, noise, elastic. Dimensions are preserved.
pub fn distort(img: &GrayImage, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> GrayImage {
    let mut out = img.clone();
    if rng.gen_bool(cfg.perspective_prob) {
        out = perspective_warp(&out, cfg.perspective_jitter_frac, rng);
    }
    if rng.gen_bool(cfg.morph_prob) {
        let op = if rng.gen_bool(0.5) { MorphOp::Dilate } else { MorphOp::Erode };
        out = out.rank_filter(cfg.morph_kernel, op == MorphOp::Dilate);
    }
    if rng.gen_bool(cfg.blur_prob) {
        let (lo, hi) = cfg.gaussian_sigma_range;
        out = out.gaussian_blur(rng.gen_range(lo..=hi));
    }
    if rng.gen_bool(cfg.downscale_prob) {
        let max_h = out.height();
        let min_h = cfg.downscale_min_height.min(max_h);
        out = downscale_upscale(&out, rng.gen_range(min_h..=max_h));
    }
    if rng.gen_bool(cfg.noise_prob) {
        let (lo, hi) = cfg.noise_sigma_range;
        out = add_noise(&out, rng.gen_range(lo..=hi), rng);
    }
    if rng.gen_bool(cfg.elastic_prob) {
        let (alo, ahi) = cfg.elastic_alpha_range;
        let (slo, shi) = cfg.elastic_sigma_range;
        let alpha = rng.gen_range(alo..=ahi);
        let sigma = rng.gen_range(slo..=shi);
        out = elastic_distort(&out, alpha, sigma, rng);
    }
    out
}

pub fn invert(img: &GrayImage) -> GrayImage {
    let mut out = GrayImage::blank(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.set(x, y, 255 - img.get(x, y));
        }
    }
    out
}

pub fn maybe_invert(img: &GrayImage, invert_prob: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    if rng.gen_bool(invert_prob) {
        invert(img)
    } else {
        img.clone()
    }
}

/// Full per-sample augmentation: distortions, then optional compositing
/// over a texture crop with a random ink shade, then optional inversion.
pub fn augment_line(
    img: &GrayImage,
    cfg: &AugmentConfig,
    bank: Option<&TextureBank>,
    rng: &mut ChaCha8Rng,
) -> Result<GrayImage, AugmentError> {
    let mut out = distort(img, cfg, rng);
    if rng.gen_bool(cfg.composite_prob) {
        let bank = bank.ok_or(AugmentError::MissingTextures)?;
        let crop = bank.crop(out.width(), out.height(), rng);
        let shade = rng.gen_range(0..=cfg.ink_shade_max);
        out = alpha_composite(&out, &crop, shade)?;
    }
    Ok(maybe_invert(&out, cfg.invert_prob, rng))
}
