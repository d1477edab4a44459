//! Image quality metrics: PSNR, SSIM and a block-boundary artifact score.

use crate::error::{invalid_arg, shape_err, Result};
use crate::image::Image;

const PEAK: f64 = 255.0;

fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(shape_err!(
            "images differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        ));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB with a fixed peak of 255. Identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / e).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sums over every fully contained window ("valid" mode).
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let src = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = k.iter().zip(&src[c..c + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (i, &ki) in k.iter().enumerate() {
            let src = &rows[(r + i) * ow..(r + i + 1) * ow];
            for (o, s) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += ki * s;
            }
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid_arg!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        ));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
    let prod: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&a.data, h, w, &k);
    let mu_b = filter_valid(&b.data, h, w, &k);
    let ea2 = filter_valid(&sq(&a.data), h, w, &k);
    let eb2 = filter_valid(&sq(&b.data), h, w, &k);
    let eab = filter_valid(&prod, h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = ea2[i] - ma * ma;
        let vb = eb2[i] - mb * mb;
        let cov = eab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += if num == den { 1.0 } else { num / den };
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean absolute difference across block-boundary pixel pairs minus the
/// mean over all other neighbouring pairs, horizontal and vertical pooled.
pub fn blockiness(img: &Image, b: usize) -> Result<f64> {
    let (h, w) = img.dims();
    if b < 2 || h < 2 * b || w < 2 * b {
        return Err(invalid_arg!(
            "blockiness needs at least two {b}-pixel blocks per side, got {h}x{w}"
        ));
    }
    let (mut bsum, mut bcount, mut isum, mut icount) = (0.0, 0usize, 0.0, 0usize);
    let mut tally = |d: f64, boundary: bool| {
        if boundary {
            bsum += d;
            bcount += 1;
        } else {
            isum += d;
            icount += 1;
        }
    };
    for r in 0..h {
        for c in 0..w - 1 {
            tally((img.get(r, c + 1) - img.get(r, c)).abs(), (c + 1) % b == 0);
        }
    }
    for r in 0..h - 1 {
        for c in 0..w {
            tally((img.get(r + 1, c) - img.get(r, c)).abs(), (r + 1) % b == 0);
        }
    }
    Ok(bsum / bcount as f64 - isum / icount as f64)
}
