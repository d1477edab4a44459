//! Seeded synthetic test images.
//!
//! All generators are deterministic in their seed and draw from the
//! [`Stream::Fixtures`] stream so they never share randomness with sampling
//! matrices or probes.

use crate::image::Image;
use crate::rng::{Rng, Stream};

/// Smooth gradient plus a low-frequency wave with six flat discs or
/// rectangles pasted on top, clipped to `[0, 255]`.
pub fn piecewise_smooth(size: usize, seed: u64) -> Image {
    let mut rng = Rng::stream(seed, Stream::Fixtures);
    let phase = 3.0 * rng.uniform();
    let mut shapes = Vec::with_capacity(6);
    for _ in 0..6 {
        let cx = 0.1 + 0.8 * rng.uniform();
        let cy = 0.1 + 0.8 * rng.uniform();
        let rad = 0.05 + 0.2 * rng.uniform();
        let v = -80.0 + 160.0 * rng.uniform();
        let disc = rng.uniform() < 0.5;
        shapes.push((cx, cy, rad, v, disc));
    }
    let n = size as f64;
    Image::from_fn(size, size, |r, c| {
        let (y, x) = (r as f64 / n, c as f64 / n);
        let mut v = 80.0 + 60.0 * x + 30.0 * (3.0 * y + phase).sin();
        for &(cx, cy, rad, dv, disc) in &shapes {
            let inside = if disc {
                (x - cx).powi(2) + (y - cy).powi(2) < rad * rad
            } else {
                (x - cx).abs() < rad && (y - cy).abs() < 0.7 * rad
            };
            if inside {
                v += dv;
            }
        }
        v.clamp(0.0, 255.0)
    })
}

/// A single 8×8 white square on a black 128×128 canvas, rows and columns
/// 60..68.
pub fn bright_square() -> Image {
    Image::from_fn(128, 128, |r, c| {
        if (60..68).contains(&r) && (60..68).contains(&c) {
            255.0
        } else {
            0.0
        }
    })
}

/// Stationary texture: a sum of random plane waves around mid-gray whose
/// statistics do not depend on position.
pub fn uniform_texture(size: usize, seed: u64) -> Image {
    let mut rng = Rng::stream(seed, Stream::Fixtures);
    let waves: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| {
            let theta = std::f64::consts::TAU * rng.uniform();
            let freq = 0.15 + 0.35 * rng.uniform();
            let phase = std::f64::consts::TAU * rng.uniform();
            (freq * theta.cos(), freq * theta.sin(), phase)
        })
        .collect();
    Image::from_fn(size, size, |r, c| {
        let s: f64 = waves
            .iter()
            .map(|&(fy, fx, p)| (fy * r as f64 + fx * c as f64 + p).cos())
            .sum();
        (128.0 + 12.0 * s).clamp(0.0, 255.0)
    })
}

/// Small training images: a soft background gradient with a few bright or
/// dark blobs and bars.
pub fn toy_images(count: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| toy_image(size, crate::rng::mix_seed(seed, i as u64)))
        .collect()
}

fn toy_image(size: usize, seed: u64) -> Image {
    let mut rng = Rng::stream(seed, Stream::Fixtures);
    let (gx, gy, base) = (
        -40.0 + 80.0 * rng.uniform(),
        -40.0 + 80.0 * rng.uniform(),
        90.0 + 60.0 * rng.uniform(),
    );
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.uniform(),
                rng.uniform(),
                0.08 + 0.15 * rng.uniform(),
                -90.0 + 180.0 * rng.uniform(),
            )
        })
        .collect();
    let bar = (rng.uniform(), 0.04 + 0.06 * rng.uniform(), -70.0 + 140.0 * rng.uniform());
    let n = size as f64;
    Image::from_fn(size, size, |r, c| {
        let (y, x) = (r as f64 / n, c as f64 / n);
        let mut v = base + gx * x + gy * y;
        for &(cy, cx, rad, a) in &blobs {
            let d2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (rad * rad);
            v += a * (-d2).exp();
        }
        if (x - bar.0).abs() < bar.1 {
            v += bar.2;
        }
        v.clamp(0.0, 255.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = piecewise_smooth(64, 3);
        assert_eq!(a, piecewise_smooth(64, 3));
        assert_ne!(a, piecewise_smooth(64, 4));
        let t = uniform_texture(64, 1);
        let toys = toy_images(3, 48, 9);
        for img in [&a, &t, &bright_square()].into_iter().chain(&toys) {
            assert!(img.data.iter().all(|v| (0.0..=255.0).contains(v)));
        }
        assert_eq!(toys, toy_images(3, 48, 9));
        assert_ne!(toys[0], toys[1]);
    }

    #[test]
    fn bright_square_has_64_lit_pixels() {
        let img = bright_square();
        assert_eq!(img.data.iter().filter(|&&v| v == 255.0).count(), 64);
        assert_eq!(img.get(60, 60), 255.0);
        assert_eq!(img.get(59, 60), 0.0);
    }

    #[test]
    fn texture_is_stationary() {
        // Quadrant means and deviations agree within a few gray levels.
        let t = uniform_texture(128, 2);
        let stats: Vec<(f64, f64)> = [(0, 0), (0, 64), (64, 0), (64, 64)]
            .iter()
            .map(|&(r0, c0)| {
                let q: Vec<f64> = (r0..r0 + 64)
                    .flat_map(|r| (c0..c0 + 64).map(move |c| (r, c)))
                    .map(|(r, c)| t.get(r, c))
                    .collect();
                let m = q.iter().sum::<f64>() / q.len() as f64;
                let sd = (q.iter().map(|v| (v - m).powi(2)).sum::<f64>() / q.len() as f64).sqrt();
                (m, sd)
            })
            .collect();
        for &(m, sd) in &stats {
            assert!((m - stats[0].0).abs() < 5.0, "{stats:?}");
            assert!((sd - stats[0].1).abs() < 8.0, "{stats:?}");
        }
    }
}
