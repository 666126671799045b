//! 8-bit grayscale raster images and the small set of pixel operations the
//! pipeline needs: binary PGM (P5) I/O, bilinear sampling and rescaling,
//! separable Gaussian smoothing, and rank (min/max) filtering.
//!
//! Convention throughout the crate: 0 is ink, 255 is background.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a binary PGM (P5) file: {0}")]
    BadMagic(String),
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("PGM payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// A dense 8-bit grayscale image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    /// An image filled with `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage { width, height, data: vec![value; width * height] }
    }

    /// A white (background) image.
    pub fn blank(width: usize, height: usize) -> Self {
        Self::filled(width, height, 255)
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count does not match dimensions");
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = v;
    }

    /// Pixel at (x, y) with clamp-to-edge semantics for out-of-range
    /// coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample at a fractional position, clamping to the edge.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as isize;
        let y0 = y0 as isize;
        let p00 = f32::from(self.get_clamped(x0, y0));
        let p10 = f32::from(self.get_clamped(x0 + 1, y0));
        let p01 = f32::from(self.get_clamped(x0, y0 + 1));
        let p11 = f32::from(self.get_clamped(x0 + 1, y0 + 1));
        let top = p00 + fx * (p10 - p00);
        let bot = p01 + fx * (p11 - p01);
        top + fy * (bot - top)
    }

    /// Bilinear rescale to exactly `w x h`.
    pub fn resize(&self, w: usize, h: usize) -> GrayImage {
        assert!(w > 0 && h > 0, "target dimensions must be positive");
        if w == self.width && h == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / w as f32;
        let sy = self.height as f32 / h as f32;
        let mut out = GrayImage::filled(w, h, 0);
        for yo in 0..h {
            // Map pixel centers so edges stay aligned.
            let ys = (yo as f32 + 0.5) * sy - 0.5;
            for xo in 0..w {
                let xs = (xo as f32 + 0.5) * sx - 0.5;
                out.set(xo, yo, clamp_u8(self.sample_bilinear(xs, ys)));
            }
        }
        out
    }

    /// Separable Gaussian smoothing with standard deviation `sigma`,
    /// clamp-to-edge borders. `sigma <= 0` is the identity.
    pub fn gaussian_blur(&self, sigma: f32) -> GrayImage {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        // Horizontal pass into f32, vertical pass back to u8.
        let mut tmp = vec![0.0f32; self.width * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let xs = x as isize + i as isize - r;
                    acc += k * f32::from(self.get_clamped(xs, y as isize));
                }
                tmp[y * self.width + x] = acc;
            }
        }
        let mut out = GrayImage::filled(self.width, self.height, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let ys = (y as isize + i as isize - r).clamp(0, self.height as isize - 1) as usize;
                    acc += k * tmp[ys * self.width + x];
                }
                out.set(x, y, clamp_u8(acc));
            }
        }
        out
    }

    /// Rank filter over a `k x k` window anchored at the top-left pixel:
    /// minimum thickens dark ink, maximum thins it.
    pub fn rank_filter(&self, k: usize, take_min: bool) -> GrayImage {
        assert!(k >= 1, "window must be at least 1x1");
        let mut out = GrayImage::filled(self.width, self.height, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut best = self.get(x, y);
                for dy in 0..k {
                    for dx in 0..k {
                        let v = self.get_clamped(x as isize + dx as isize, y as isize + dy as isize);
                        if (take_min && v < best) || (!take_min && v > best) {
                            best = v;
                        }
                    }
                }
                out.set(x, y, best);
            }
        }
        out
    }

    /// Serialize as binary PGM (P5) with a fixed header layout, so identical
    /// images always produce identical bytes.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        // Header format kept byte-stable: no comments, single spaces.
        write!(buf, "P5\n{} {}\n255\n", self.width, self.height).expect("write to Vec cannot fail");
        buf.extend_from_slice(&self.data);
        buf
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), PgmError> {
        fs::write(path, self.to_pgm_bytes())?;
        Ok(())
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<GrayImage, PgmError> {
        parse_pgm(bytes)
    }

    pub fn read_pgm(path: &Path) -> Result<GrayImage, PgmError> {
        let bytes = fs::read(path)?;
        parse_pgm(&bytes)
    }
}

#[inline]
pub fn clamp_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Normalized Gaussian kernel with radius `ceil(3*sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    assert!(sigma > 0.0);
    let r = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f32> = (0..=2 * r)
        .map(|i| {
            let d = i as f32 - r as f32;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PgmError::BadMagic(magic));
    }
    // Header tokens: magic, width, height, maxval. Comments (# ...) allowed.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::BadHeader("expected an integer field".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are valid utf-8");
        *field = text
            .parse()
            .map_err(|_| PgmError::BadHeader(format!("bad integer {text}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PgmError::BadHeader(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader("zero dimension".into()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PgmError::BadHeader("missing separator before payload".into()));
    }
    pos += 1;
    let expected = width * height;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PgmError::Truncated { expected, found: payload.len() });
    }
    Ok(GrayImage::from_raw(width, height, payload[..expected].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_byte_identical() {
        let mut img = GrayImage::blank(5, 3);
        img.set(2, 1, 0);
        img.set(4, 2, 17);
        let bytes = img.to_pgm_bytes();
        let back = GrayImage::from_pgm_bytes(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.to_pgm_bytes(), bytes);
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(matches!(GrayImage::from_pgm_bytes(b"P6\n1 1\n255\nx"), Err(PgmError::BadMagic(_))));
        assert!(matches!(
            GrayImage::from_pgm_bytes(b"P5\n4 4\n255\nxy"),
            Err(PgmError::Truncated { .. })
        ));
    }

    #[test]
    fn resize_halves_and_preserves_constant() {
        let img = GrayImage::filled(64, 32, 99);
        let half = img.resize(32, 16);
        assert_eq!(half.width(), 32);
        assert_eq!(half.height(), 16);
        assert!(half.pixels().iter().all(|&p| p == 99));
    }

    #[test]
    fn bilinear_sample_interpolates_midpoint() {
        let img = GrayImage::from_raw(2, 1, vec![0, 100]);
        let mid = img.sample_bilinear(0.5, 0.0);
        assert!((mid - 50.0).abs() < 1e-4);
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = GrayImage::filled(16, 16, 42);
        let blurred = img.gaussian_blur(1.2);
        assert!(blurred.pixels().iter().all(|&p| p == 42));
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        let k = gaussian_kernel(1.5);
        let sum: f32 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert_eq!(k.len() % 2, 1);
    }

    #[test]
    fn rank_filter_thickens_and_thins() {
        let mut img = GrayImage::blank(5, 5);
        img.set(2, 2, 0);
        let thick = img.rank_filter(2, true);
        let dark = thick.pixels().iter().filter(|&&p| p == 0).count();
        assert!(dark > 1, "min filter should spread ink");
        let thin = img.rank_filter(2, false);
        assert!(thin.pixels().iter().all(|&p| p == 255), "max filter should erase a lone dot");
    }
}
