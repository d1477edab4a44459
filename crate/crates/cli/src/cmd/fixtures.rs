use std::fs;

use bcskit::fixtures::{bright_square, piecewise_smooth, toy_images, uniform_texture};
use bcskit::image::save_pgm;
use bcskit::rng::mix_seed;
use bcskit::Image;

use crate::error::CliError;
use crate::{FixtureKind, FixturesArgs};

pub fn run(a: &FixturesArgs) -> Result<(), CliError> {
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let seed = a.seed.seed;
    let (prefix, images): (&str, Vec<Image>) = match a.kind {
        FixtureKind::PiecewiseSmooth => (
            "piecewise",
            (0..a.count).map(|i| piecewise_smooth(a.size, mix_seed(seed, i as u64))).collect(),
        ),
        FixtureKind::BrightSquare => ("square", vec![bright_square(); a.count]),
        FixtureKind::Texture => (
            "texture",
            (0..a.count).map(|i| uniform_texture(a.size, mix_seed(seed, i as u64))).collect(),
        ),
        FixtureKind::Toy => ("toy", toy_images(a.count, a.size, seed)),
    };
    for (i, img) in images.iter().enumerate() {
        save_pgm(img, a.out.join(format!("{prefix}-{i:03}.pgm")))?;
    }
    Ok(())
}
