//! Glyph atlases: pre-rasterized per-character bitmaps plus line metrics,
//! standing in for fonts. Directory format: `atlas.json` manifest and one
//! PGM per non-empty glyph.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{GrayImage, PgmError};

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("atlas manifest: {0}")]
    ManifestParse(String),
    #[error("glyph bitmap {file}: {source}")]
    BitmapFormat { file: String, source: PgmError },
    #[error("metric invariant violated: {0}")]
    MetricInvariant(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One glyph: an optional ink bitmap (space legitimately has none) plus
/// horizontal metrics. `bearing_y` is the distance from the baseline up to
/// the bitmap's top row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphBitmap {
    pub pixels: Option<GrayImage>,
    pub advance: u32,
    pub bearing_x: i32,
    pub bearing_y: i32,
}

#[derive(Clone, Debug)]
pub struct GlyphAtlas {
    pub name: String,
    pub ascent: u32,
    pub descent: u32,
    pub x_height: u32,
    glyphs: BTreeMap<char, GlyphBitmap>,
}

#[derive(Serialize, Deserialize)]
struct ManifestGlyph {
    char: char,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    advance: u32,
    bearing_x: i32,
    bearing_y: i32,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    name: String,
    ascent: u32,
    descent: u32,
    x_height: u32,
    glyphs: Vec<ManifestGlyph>,
}

impl GlyphAtlas {
    pub fn new(
        name: impl Into<String>,
        ascent: u32,
        descent: u32,
        x_height: u32,
    ) -> Result<Self, AtlasError> {
        if x_height == 0 {
            return Err(AtlasError::MetricInvariant("x_height must be positive".into()));
        }
        if ascent < x_height {
            return Err(AtlasError::MetricInvariant(format!(
                "ascent {ascent} below x_height {x_height}"
            )));
        }
        Ok(GlyphAtlas { name: name.into(), ascent, descent, x_height, glyphs: BTreeMap::new() })
    }

    /// Rendered line images are ascent + descent rows tall.
    pub fn line_height(&self) -> u32 {
        self.ascent + self.descent
    }

    pub fn insert_glyph(&mut self, c: char, glyph: GlyphBitmap) -> Result<(), AtlasError> {
        if glyph.advance == 0 {
            return Err(AtlasError::MetricInvariant(format!("glyph {c:?} has zero advance")));
        }
        if let Some(img) = &glyph.pixels {
            // Ink must stay inside the line box [baseline - ascent,
            // baseline + descent].
            if glyph.bearing_y > self.ascent as i32 {
                return Err(AtlasError::MetricInvariant(format!(
                    "glyph {c:?} extends {} above the baseline, ascent is {}",
                    glyph.bearing_y, self.ascent
                )));
            }
            let below = img.height() as i32 - glyph.bearing_y;
            if below > self.descent as i32 {
                return Err(AtlasError::MetricInvariant(format!(
                    "glyph {c:?} extends {below} below the baseline, descent is {}",
                    self.descent
                )));
            }
        }
        self.glyphs.insert(c, glyph);
        Ok(())
    }

    pub fn glyph(&self, c: char) -> Option<&GlyphBitmap> {
        self.glyphs.get(&c)
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.glyphs.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn load(dir: &Path) -> Result<GlyphAtlas, AtlasError> {
        let manifest_path = dir.join("atlas.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| {
            AtlasError::ManifestParse(format!("{}: {e}", manifest_path.display()))
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| AtlasError::ManifestParse(e.to_string()))?;
        let name = if manifest.name.is_empty() {
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            manifest.name
        };
        let mut atlas = GlyphAtlas::new(name, manifest.ascent, manifest.descent, manifest.x_height)?;
        for g in manifest.glyphs {
            let pixels = match &g.file {
                Some(file) => Some(
                    GrayImage::read_pgm(&dir.join(file))
                        .map_err(|source| AtlasError::BitmapFormat { file: file.clone(), source })?,
                ),
                None => None,
            };
            atlas.insert_glyph(
                g.char,
                GlyphBitmap {
                    pixels,
                    advance: g.advance,
                    bearing_x: g.bearing_x,
                    bearing_y: g.bearing_y,
                },
            )?;
        }
        Ok(atlas)
    }

    pub fn save(&self, dir: &Path) -> Result<(), AtlasError> {
        fs::create_dir_all(dir)?;
        let mut glyphs = Vec::new();
        for (&c, g) in &self.glyphs {
            let file = match &g.pixels {
                Some(img) => {
                    let file = format!("g{:04x}.pgm", c as u32);
                    img.write_pgm(&dir.join(&file)).map_err(|source| {
                        AtlasError::BitmapFormat { file: file.clone(), source }
                    })?;
                    Some(file)
                }
                None => None,
            };
            glyphs.push(ManifestGlyph {
                char: c,
                file,
                advance: g.advance,
                bearing_x: g.bearing_x,
                bearing_y: g.bearing_y,
            });
        }
        let manifest = Manifest {
            name: self.name.clone(),
            ascent: self.ascent,
            descent: self.descent,
            x_height: self.x_height,
            glyphs,
        };
        let json =
            serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
        fs::write(dir.join("atlas.json"), json + "\n")?;
        Ok(())
    }
}
