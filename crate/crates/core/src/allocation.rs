//! Saliency-driven rate allocation: where the image has more structure,
//! blocks get a higher-rate channel while the average rate stays on target.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Result};
use crate::image::{grid_dims, Image};
use crate::sampling::ChannelBank;
use crate::transform::{fft2, ifft2, C64};

/// Non-negative per-pixel weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    fn uniform(height: usize, width: usize) -> Self {
        let n = height * width;
        SaliencyMap {
            height,
            width,
            values: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes non-negative weights; an all-zero input becomes uniform.
    fn from_weights(height: usize, width: usize, mut values: Vec<f64>) -> Self {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        let total: f64 = values.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return SaliencyMap::uniform(height, width);
        }
        values.iter_mut().for_each(|v| *v /= total);
        SaliencyMap {
            height,
            width,
            values,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }
}

const SALIENCY_MIN_SIDE: usize = 16;
const SALIENCY_BLUR_SIGMA: f64 = 2.5;
const SALIENCY_LOG_FLOOR: f64 = 1e-3;

/// Spectral-residual saliency.
///
/// The log amplitude spectrum minus its 3×3 local mean is recombined with
/// the original phase, transformed back, squared, blurred with a Gaussian
/// of σ = 2.5 pixels and normalized.
pub fn saliency(img: &Image) -> Result<SaliencyMap> {
    let (h, w) = img.dims();
    if h < SALIENCY_MIN_SIDE || w < SALIENCY_MIN_SIDE {
        return Err(invalid_arg!(
            "saliency needs at least {SALIENCY_MIN_SIDE}x{SALIENCY_MIN_SIDE} pixels, got {h}x{w}"
        ));
    }
    let (lo, hi) = img
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return Ok(SaliencyMap::uniform(h, w));
    }

    let mut spec: Vec<C64> = img.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft2(&mut spec, h, w);
    // Without a floor the exact zeros of piecewise-constant spectra dominate
    // the residual; 1e-3 of the peak keeps the map scale invariant.
    let peak = spec.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let floor = SALIENCY_LOG_FLOOR * peak;
    let log_amp: Vec<f64> = spec.iter().map(|z| (z.norm() + floor).ln()).collect();
    let smoothed = box3_circular(&log_amp, h, w);
    for (i, z) in spec.iter_mut().enumerate() {
        let phase = z.arg();
        *z = C64::from_polar((log_amp[i] - smoothed[i]).exp(), phase);
    }
    ifft2(&mut spec, h, w);
    let energy: Vec<f64> = spec.iter().map(|z| z.norm_sqr()).collect();
    let blurred = gaussian_blur(&energy, h, w, SALIENCY_BLUR_SIGMA);
    Ok(SaliencyMap::from_weights(h, w, blurred))
}

/// 3×3 mean with wrap-around, matching the periodicity of the spectrum.
fn box3_circular(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for dr in [h - 1, 0, 1] {
                for dc in [w - 1, 0, 1] {
                    s += data[((r + dr) % h) * w + (c + dc) % w];
                }
            }
            out[r * w + c] = s / 9.0;
        }
    }
    out
}

/// Separable Gaussian blur with edge replication, truncated at 4σ.
fn gaussian_blur(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|v| v / ksum).collect();
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * data[r * w + clampi(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * tmp[clampi(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

const PRESAMPLE_SCALE: f64 = 0.1;
const PRESAMPLE_MIN_INPUT: usize = 32;

/// Saliency estimated on a 10%-per-side area-averaged thumbnail and
/// bilinearly interpolated back to full size.
///
/// Thumbnails are never smaller than 16 pixels per side (or the input side
/// if that is smaller), the minimum the saliency transform accepts.
pub fn presample(img: &Image) -> Result<SaliencyMap> {
    let (h, w) = img.dims();
    if h < PRESAMPLE_MIN_INPUT || w < PRESAMPLE_MIN_INPUT {
        return Err(invalid_arg!(
            "presampling needs at least {PRESAMPLE_MIN_INPUT}x{PRESAMPLE_MIN_INPUT} pixels, got {h}x{w}"
        ));
    }
    let side = |n: usize| {
        ((n as f64 * PRESAMPLE_SCALE).round() as usize).max(SALIENCY_MIN_SIDE.min(n))
    };
    let small = area_downscale(img, side(h), side(w));
    let sal = saliency(&small)?;
    let up = bilinear_upscale(&sal.values, small.height, small.width, h, w);
    Ok(SaliencyMap::from_weights(h, w, up))
}

/// Box-filter resampling: each output pixel is the overlap-weighted mean of
/// the input pixels its footprint covers.
pub fn area_downscale(img: &Image, oh: usize, ow: usize) -> Image {
    let axis = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
                let mut taps = Vec::new();
                let mut i = a.floor() as usize;
                while (i as f64) < b && i < n_in {
                    let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((i, overlap / scale));
                    }
                    i += 1;
                }
                taps
            })
            .collect()
    };
    let rows = axis(img.height, oh);
    let cols = axis(img.width, ow);
    Image::from_fn(oh, ow, |r, c| {
        let mut s = 0.0;
        for &(i, wi) in &rows[r] {
            for &(j, wj) in &cols[c] {
                s += wi * wj * img.get(i, j);
            }
        }
        s
    })
}

/// Bilinear interpolation with pixel-centre alignment and clamped borders.
fn bilinear_upscale(src: &[f64], sh: usize, sw: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, n_out: usize, n_in: usize| {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        let (r0, r1, fr) = coord(r, oh, sh);
        for c in 0..ow {
            let (c0, c1, fc) = coord(c, ow, sw);
            let top = src[r0 * sw + c0] * (1.0 - fc) + src[r0 * sw + c1] * fc;
            let bot = src[r1 * sw + c0] * (1.0 - fc) + src[r1 * sw + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    out
}

/// Each block's share of the total saliency, blocks listed row-major.
/// Only real pixels count; padding added by partitioning carries none.
pub fn proportions(map: &SaliencyMap, block_size: usize) -> Result<Vec<f64>> {
    if block_size == 0 {
        return Err(invalid_arg!("block size must be positive"));
    }
    let (gr, gc) = grid_dims(map.height, map.width, block_size);
    let mut sums = vec![0.0; gr * gc];
    for r in 0..map.height {
        for c in 0..map.width {
            sums[(r / block_size) * gc + c / block_size] += map.get(r, c);
        }
    }
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) {
        return Err(invalid_arg!("saliency map carries no mass"));
    }
    Ok(sums.into_iter().map(|v| v / total).collect())
}

/// Channel choice for every block plus the rates it realizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAssignment {
    /// Channel index per block, row-major over the block grid.
    pub channels: Vec<usize>,
    /// Channel rate per block, for readability of serialized files.
    pub rates: Vec<f64>,
    pub target_rate: f64,
    /// `Σ m_j / (K·B²)`.
    pub achieved_rate: f64,
}

impl RateAssignment {
    /// Every one of `num_blocks` blocks on channel `j`.
    pub fn uniform(bank: &ChannelBank, j: usize, num_blocks: usize) -> Self {
        let rate = bank.rates()[j];
        RateAssignment {
            channels: vec![j; num_blocks],
            rates: vec![rate; num_blocks],
            target_rate: rate,
            achieved_rate: bank.m(j) as f64 / bank.block_len() as f64,
        }
    }

    /// Builds an assignment from explicit channels.
    pub fn from_channels(bank: &ChannelBank, channels: Vec<usize>, target_rate: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid_arg!("assignment needs at least one block"));
        }
        if let Some(&bad) = channels.iter().find(|&&j| j >= bank.num_channels()) {
            return Err(invalid_arg!("channel {bad} does not exist"));
        }
        let total: usize = channels.iter().map(|&j| bank.m(j)).sum();
        Ok(RateAssignment {
            rates: channels.iter().map(|&j| bank.rates()[j]).collect(),
            achieved_rate: total as f64 / (channels.len() * bank.block_len()) as f64,
            channels,
            target_rate,
        })
    }

    /// Checks the channel indices and rates against `bank`.
    pub fn validate(&self, bank: &ChannelBank) -> Result<()> {
        if self.rates.len() != self.channels.len() {
            return Err(shape_err!("assignment lists differ in length"));
        }
        for (i, (&j, &s)) in self.channels.iter().zip(&self.rates).enumerate() {
            if j >= bank.num_channels() || (bank.rates()[j] - s).abs() > 1e-9 {
                return Err(invalid_arg!("block {i}: channel {j} at rate {s} is not in the bank"));
            }
        }
        Ok(())
    }
}

/// Tolerance for treating two rate sums as equal.
const RATE_EPS: f64 = 1e-12;

/// Index of the channel nearest to `s`, thresholds at rate midpoints.
fn snap(s: f64, rates: &[f64]) -> usize {
    rates
        .windows(2)
        .take_while(|w| s >= 0.5 * (w[0] + w[1]))
        .count()
}

/// Maps saliency proportions to channels so that the mean rate tracks `sr`.
///
/// Each block starts at `sr·p_i·K`, clamped to the bank's rate range and
/// snapped to the nearest channel. Single-channel moves are then applied
/// greedily while one strictly shrinks `|K·sr − Σ s_i|`. Only the most
/// salient block of a level may move up and only the least salient may move
/// down, so the saliency ordering survives. Ties go to the lowest block
/// index.
pub fn assign(p: &[f64], sr: f64, bank: &ChannelBank) -> Result<RateAssignment> {
    let rates = bank.rates();
    let (lo, hi) = (rates[0], rates[rates.len() - 1]);
    if !(sr >= lo - RATE_EPS && sr <= hi + RATE_EPS) {
        return Err(invalid_arg!(
            "target rate {sr} is outside the channel range [{lo}, {hi}]"
        ));
    }
    if p.is_empty() {
        return Err(invalid_arg!("no blocks to assign"));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(invalid_arg!("proportions must be finite and non-negative"));
    }
    let psum: f64 = p.iter().sum();
    if (psum - 1.0).abs() > 1e-6 {
        return Err(invalid_arg!("proportions sum to {psum}, expected 1"));
    }

    let k = p.len();
    let mut level: Vec<usize> = p
        .iter()
        .map(|&pi| snap((sr * pi * k as f64).clamp(lo, hi), rates))
        .collect();
    let target = sr * k as f64;
    let mut total: f64 = level.iter().map(|&j| rates[j]).sum();

    loop {
        let current = (target - total).abs();
        // (new deviation, block, new level)
        let mut best: Option<(f64, usize, usize)> = None;
        for j in 0..rates.len() {
            let members = || (0..k).filter(|&i| level[i] == j);
            let up = members().fold(None, |acc: Option<usize>, i| match acc {
                Some(a) if p[a] >= p[i] => Some(a),
                _ => Some(i),
            });
            let down = members().fold(None, |acc: Option<usize>, i| match acc {
                Some(a) if p[a] <= p[i] => Some(a),
                _ => Some(i),
            });
            let moves = [
                up.filter(|_| j + 1 < rates.len()).map(|i| (i, j + 1)),
                down.filter(|_| j > 0).map(|i| (i, j - 1)),
            ];
            for (i, to) in moves.into_iter().flatten() {
                let dev = (target - (total - rates[j] + rates[to])).abs();
                if dev >= current - RATE_EPS {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bi, _)) => dev < bd - RATE_EPS || (dev <= bd + RATE_EPS && i < bi),
                };
                if better {
                    best = Some((dev, i, to));
                }
            }
        }
        match best {
            Some((_, i, to)) => {
                total += rates[to] - rates[level[i]];
                level[i] = to;
            }
            None => break,
        }
    }
    RateAssignment::from_channels(bank, level, sr)
}
