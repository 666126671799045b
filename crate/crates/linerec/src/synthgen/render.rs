//! Text-line rasterization: glyphs are blitted along a flat baseline with
//! ink-minimum compositing, producing the clean image plus the layout
//! metadata that geometric normalization later relies on.

use thiserror::Error;

use super::atlas::GlyphAtlas;
use crate::raster::GrayImage;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("atlas {atlas:?} has no glyph for {glyph:?}")]
    MissingGlyph { atlas: String, glyph: char },
    #[error("cannot render an empty transcript")]
    EmptyTranscript,
}

/// Tight bounding box of the ink, in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// A rendered line with its ground truth: transcript, baseline height at
/// both ends, x-height, and ink bounding box.
#[derive(Clone, Debug)]
pub struct TextLineSample {
    pub image: GrayImage,
    pub transcript: String,
    pub baseline_y_left: f32,
    pub baseline_y_right: f32,
    pub x_height: f32,
    pub bbox: BBox,
}

/// Render `text` with a single atlas. The pen starts at x = 0 on a baseline
/// `ascent` rows below the top; each glyph is blitted at
/// (pen + bearing_x, baseline - bearing_y) by taking the per-pixel minimum
/// (ink is dark), then the pen advances.
pub fn render_line(text: &str, atlas: &GlyphAtlas) -> Result<TextLineSample, RenderError> {
    if text.is_empty() {
        return Err(RenderError::EmptyTranscript);
    }
    let baseline = atlas.ascent as i64;

    let mut pen: i64 = 0;
    let mut width: i64 = 0;
    for c in text.chars() {
        let glyph = atlas
            .glyph(c)
            .ok_or(RenderError::MissingGlyph { atlas: atlas.name.clone(), glyph: c })?;
        if let Some(img) = &glyph.pixels {
            width = width.max(pen + glyph.bearing_x as i64 + img.width() as i64);
        }
        pen += glyph.advance as i64;
        width = width.max(pen);
    }
    let height = atlas.line_height() as i64;
    assert!(width > 0 && height > 0, "degenerate line box");

    let mut image = GrayImage::blank(width as usize, height as usize);
    let mut pen: i64 = 0;
    for c in text.chars() {
        let glyph = atlas.glyph(c).expect("checked above");
        if let Some(img) = &glyph.pixels {
            let x0 = pen + glyph.bearing_x as i64;
            let y0 = baseline - glyph.bearing_y as i64;
            for gy in 0..img.height() {
                for gx in 0..img.width() {
                    let x = x0 + gx as i64;
                    let y = y0 + gy as i64;
                    if x >= 0 && y >= 0 && x < width && y < height {
                        let (x, y) = (x as usize, y as usize);
                        let v = img.get(gx, gy).min(image.get(x, y));
                        image.set(x, y, v);
                    }
                }
            }
        }
        pen += glyph.advance as i64;
    }

    let bbox = ink_bbox(&image);
    Ok(TextLineSample {
        image,
        transcript: text.to_string(),
        baseline_y_left: baseline as f32,
        baseline_y_right: baseline as f32,
        x_height: atlas.x_height as f32,
        bbox,
    })
}

/// Tight box around pixels darker than background; whole image if blank.
pub fn ink_bbox(image: &GrayImage) -> BBox {
    let (mut x0, mut y0) = (usize::MAX, usize::MAX);
    let (mut x1, mut y1) = (0usize, 0usize);
    let mut any = false;
    for y in 0..image.height() {
        for x in 0..image.width() {
            if image.get(x, y) < 255 {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if !any {
        return BBox { x: 0, y: 0, w: image.width() as u32, h: image.height() as u32 };
    }
    BBox { x: x0 as u32, y: y0 as u32, w: (x1 - x0 + 1) as u32, h: (y1 - y0 + 1) as u32 }
}
