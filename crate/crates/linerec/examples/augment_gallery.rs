//! Render one text line and write a gallery of every augmentation stage:
//! each distortion alone, the full type-2 pipeline, and type-3 alpha
//! compositing onto grain and stripe textures (plus gray inversion).
//!
//!     cargo run --release --example augment_gallery

use linerec::augment::{
    alpha_composite, augment_line, elastic_distort, invert, scenario_preset, AugmentConfig,
    TextureBank,
};
use linerec::rng;
use linerec::synthgen::{render_line, toy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::Path::new("runs/augment_gallery");
    std::fs::create_dir_all(dir)?;

    let atlas = toy::toy_atlas_slanted();
    let line = render_line("the silent shore", &atlas)?.image;
    line.write_pgm(&dir.join("00_clean.pgm"))?;

    let mut rng = rng::substream(42, "gallery", 0);
    let single = |field: fn(&mut AugmentConfig)| {
        let mut cfg = AugmentConfig::off();
        field(&mut cfg);
        cfg
    };
    let stages: Vec<(&str, AugmentConfig)> = vec![
        ("01_perspective", single(|c| c.perspective_prob = 1.0)),
        ("02_morphology", single(|c| c.morph_prob = 1.0)),
        ("03_blur", single(|c| c.blur_prob = 1.0)),
        ("04_downscale", single(|c| c.downscale_prob = 1.0)),
        ("05_noise", single(|c| c.noise_prob = 1.0)),
        ("06_elastic", single(|c| c.elastic_prob = 1.0)),
        ("07_type2_all", scenario_preset("type2")?),
    ];
    for (name, cfg) in &stages {
        let out = augment_line(&line, cfg, None, &mut rng)?;
        out.write_pgm(&dir.join(format!("{name}.pgm")))?;
        println!("{name}: {}x{}", out.width(), out.height());
    }

    // The type-3 signature move: treat ink as alpha and composite onto a
    // background texture, sometimes inverting the result.
    let grain = TextureBank::from_images(toy::toy_textures(toy::ToyTextureStyle::Grain, 2, 1))?;
    let stripes =
        TextureBank::from_images(toy::toy_textures(toy::ToyTextureStyle::Stripes, 2, 2))?;
    let crop = grain.crop(line.width(), line.height(), &mut rng);
    let composited = alpha_composite(&line, &crop, 0)?;
    composited.write_pgm(&dir.join("08_composite_grain.pgm"))?;
    let crop = stripes.crop(line.width(), line.height(), &mut rng);
    let composited = alpha_composite(&line, &crop, 64)?;
    composited.write_pgm(&dir.join("09_composite_stripes_gray_ink.pgm"))?;
    invert(&composited).write_pgm(&dir.join("10_composite_inverted.pgm"))?;

    let type3 = scenario_preset("type3")?;
    for i in 0..3 {
        let out = augment_line(&line, &type3, Some(&grain), &mut rng)?;
        out.write_pgm(&dir.join(format!("11_type3_draw{i}.pgm")))?;
    }
    println!("08-11: composites and full type-3 draws");

    // Elastic fields move pixels but keep the mean displacement small.
    let warped = elastic_distort(&line, 6.0, 3.0, &mut rng);
    warped.write_pgm(&dir.join("12_elastic_strong.pgm"))?;

    println!("\ngallery written to {}", dir.display());
    Ok(())
}
