//! Featurize a rendered tile and its JPEG re-encodings at the default
//! quality factors, then compare each view with the original.

use image::{Rgb, RgbImage};
use kidforge::features::{compression_views_rgb, featurize_rgb, RASTER_SIDE, DEFAULT_QUALITY_FACTORS};

/// Returns the L1 distance of each compressed view to the original.
pub fn run_example() -> anyhow::Result<Vec<f64>> {
    let img = RgbImage::from_fn(RASTER_SIDE, RASTER_SIDE, |x, y| {
        let stripe = ((x / 4 + y / 4) % 2) as u8 * 40;
        Rgb([180 + stripe / 2, 40 + stripe, 60])
    });
    let views = compression_views_rgb(&img, &DEFAULT_QUALITY_FACTORS)?;
    let original = featurize_rgb(&img);
    let mut distances = Vec::new();
    for (qf, v) in views.quality_factors.iter().zip(&views.views[1..]) {
        let d = v.l1_distance(&original);
        println!("qf {qf:>3}: dim {} L1 to original {d:.4}", v.dim());
        distances.push(d);
    }
    Ok(distances)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
