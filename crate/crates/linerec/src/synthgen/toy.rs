//! Built-in desk-scale assets: a 12-symbol charset, two visually distinct
//! procedural glyph atlases, a small corpus, and procedural background
//! textures split into disjoint train/test style families.

use rand::Rng;

use super::atlas::{GlyphAtlas, GlyphBitmap};
use crate::charset::Charset;
use crate::raster::GrayImage;
use crate::rng;

pub const TOY_SYMBOLS: &str = "aehilnorst .";

pub const TOY_CORPUS: &str = "\
the lion rests near the stone hall.
a siren listens at the north shore.
she tells tall tales to the silent heron.
trains rattle on the eastern rails.
her horse eats salt in the late rain.
those lanterns shine near the hotel.
a little otter steals the nearest slate.
nine sailors hoist the stern sail.
it rains on the shore at noon.
the artist sits near a tin lantern.
stars rise in the east then set.
his sister irons linen shirts all season.
a stallion trots into the tall halls.
none shall alter the honest list.
these hornets nest near the stale roses.
so it is. no one else lies still.
an orator tells a tense tale.
salt air settles on the shoreline.
the least resistant listener relents.
snails trail onto the slate stairs.
";

pub fn toy_charset() -> Charset {
    Charset::new(TOY_SYMBOLS.chars()).expect("toy symbols are distinct")
}

const GRID_W: usize = 5;
const GRID_H: usize = 12;

/// 5x12 dot patterns on a 4-row ascender zone over an 8-row x-height zone;
/// the baseline sits under the last row. No toy glyph has a descender.
fn pattern(c: char) -> [&'static str; GRID_H] {
    match c {
        'a' => [
            ".....", ".....", ".....", ".....", ".###.", "....#", ".####", "#...#", "#...#",
            "#...#", "#...#", ".####",
        ],
        'e' => [
            ".....", ".....", ".....", ".....", ".###.", "#...#", "#...#", "#####", "#....",
            "#....", "#...#", ".###.",
        ],
        'h' => [
            "#....", "#....", "#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#",
            "#...#", "#...#", "#...#",
        ],
        'i' => [
            ".....", ".....", "..#..", ".....", ".##..", "..#..", "..#..", "..#..", "..#..",
            "..#..", "..#..", ".###.",
        ],
        'l' => [
            ".##..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#..",
            "..#..", "..#..", "..##.",
        ],
        'n' => [
            ".....", ".....", ".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#",
            "#...#", "#...#", "#...#",
        ],
        'o' => [
            ".....", ".....", ".....", ".....", ".###.", "#...#", "#...#", "#...#", "#...#",
            "#...#", "#...#", ".###.",
        ],
        'r' => [
            ".....", ".....", ".....", ".....", "#.##.", "##..#", "#....", "#....", "#....",
            "#....", "#....", "#....",
        ],
        's' => [
            ".....", ".....", ".....", ".....", ".####", "#....", "#....", ".###.", "....#",
            "....#", "....#", "####.",
        ],
        't' => [
            ".....", ".#...", ".#...", ".#...", "####.", ".#...", ".#...", ".#...", ".#...",
            ".#...", ".#...", ".####",
        ],
        '.' => [
            ".....", ".....", ".....", ".....", ".....", ".....", ".....", ".....", ".....",
            ".....", ".##..", ".##..",
        ],
        other => panic!("no toy pattern for {other:?}"),
    }
}

fn rasterize(rows: &[&str; GRID_H], scale: usize) -> GrayImage {
    let mut img = GrayImage::blank(GRID_W * scale, GRID_H * scale);
    for (gy, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), GRID_W, "pattern row width");
        for (gx, cell) in row.bytes().enumerate() {
            if cell == b'#' {
                for dy in 0..scale {
                    for dx in 0..scale {
                        img.set(gx * scale + dx, gy * scale + dy, 0);
                    }
                }
            }
        }
    }
    img
}

/// Shift rows rightwards, top rows most, producing an italic-like slant.
fn shear_right(img: &GrayImage, max_shift: usize) -> GrayImage {
    let h = img.height();
    let mut out = GrayImage::blank(img.width() + max_shift, h);
    for y in 0..h {
        let shift = (h - 1 - y) * max_shift / (h - 1).max(1);
        for x in 0..img.width() {
            out.set(x + shift, y, img.get(x, y));
        }
    }
    out
}

/// Upright thin-stroke atlas: 24 px ascent, 8 px descent, 16 px x-height.
pub fn toy_atlas_regular() -> GlyphAtlas {
    build_atlas("toy-regular", false)
}

/// Slanted bold-stroke atlas with the same line metrics.
pub fn toy_atlas_slanted() -> GlyphAtlas {
    build_atlas("toy-slanted", true)
}

fn build_atlas(name: &str, slanted: bool) -> GlyphAtlas {
    let mut atlas = GlyphAtlas::new(name, 24, 8, 16).expect("toy metrics are valid");
    for c in TOY_SYMBOLS.chars() {
        let glyph = if c == ' ' {
            GlyphBitmap {
                pixels: None,
                advance: if slanted { 12 } else { 10 },
                bearing_x: 0,
                bearing_y: 0,
            }
        } else {
            let thin = rasterize(&pattern(c), 2);
            let (pixels, advance) = if slanted {
                (shear_right(&thin, 3).rank_filter(2, true), 15)
            } else {
                (thin, 12)
            };
            GlyphBitmap { pixels: Some(pixels), advance, bearing_x: 0, bearing_y: 24 }
        };
        atlas.insert_glyph(c, glyph).expect("toy glyphs satisfy metrics");
    }
    atlas
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyTextureStyle {
    /// Smooth paper grain from crossed sinusoids (training pool).
    Grain,
    /// Diagonal stripes over a vertical gradient (held-out pool).
    Stripes,
}

/// Procedural background textures: predominantly light, but with dark
/// features that approach ink intensity so compositing genuinely matters.
pub fn toy_textures(style: ToyTextureStyle, count: usize, seed: u64) -> Vec<GrayImage> {
    (0..count as u64).map(|i| toy_texture(style, seed, i)).collect()
}

fn toy_texture(style: ToyTextureStyle, seed: u64, index: u64) -> GrayImage {
    let label = match style {
        ToyTextureStyle::Grain => "texture-grain",
        ToyTextureStyle::Stripes => "texture-stripes",
    };
    let mut stream = rng::substream(seed, label, index);
    let (w, h) = (320usize, 48usize);
    let mut img = GrayImage::blank(w, h);
    match style {
        ToyTextureStyle::Grain => {
            // Dark compact cells plus diagonal streaks, so training covers
            // both blob-like and elongated background shapes.
            let px = stream.gen_range(9.0..24.0f32);
            let py = stream.gen_range(5.0..13.0f32);
            let pd = stream.gen_range(14.0..34.0f32);
            let (f1, f2, f3) =
                (stream.gen_range(0.0..6.28f32), stream.gen_range(0.0..6.28f32), stream.gen_range(0.0..6.28f32));
            let base = stream.gen_range(195.0..215.0f32);
            // Severity spans near-mild to harsh so models trained on this
            // pool stay calibrated on clean backgrounds too.
            let depth = stream.gen_range(15.0..85.0f32);
            for y in 0..h {
                for x in 0..w {
                    let s1 = 0.5 + 0.5 * (x as f32 * std::f32::consts::TAU / px + f1).sin();
                    let s2 = 0.5 + 0.5 * (y as f32 * std::f32::consts::TAU / py + f2).sin();
                    let s3 = 0.5 + 0.5 * ((x + y) as f32 * std::f32::consts::TAU / pd + f3).sin();
                    let mask = 0.7 * s1 * s2 + 0.3 * s3 * s1;
                    let v = base - depth * mask;
                    img.set(x, y, v.clamp(105.0, 235.0) as u8);
                }
            }
        }
        ToyTextureStyle::Stripes => {
            let angle = stream.gen_range(0.3..1.2f32);
            let period = stream.gen_range(7.0..16.0f32);
            let duty = stream.gen_range(0.25..0.45f32);
            let depth = stream.gen_range(45.0..75.0f32);
            let base = stream.gen_range(190.0..215.0f32);
            let grad = stream.gen_range(-15.0..15.0f32);
            let (ca, sa) = (angle.cos(), angle.sin());
            for y in 0..h {
                for x in 0..w {
                    let t = (x as f32 * ca + y as f32 * sa) / period;
                    let tri = 2.0 * (t - (t + 0.5).floor()).abs();
                    let band = ((duty - tri) / duty).max(0.0);
                    let v = base - depth * band + grad * (y as f32 / h as f32 - 0.5);
                    img.set(x, y, v.clamp(110.0, 235.0) as u8);
                }
            }
        }
    }
    img
}
