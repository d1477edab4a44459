//! Iterative reconstruction engines: BCS-SPL, block-independent D-AMP
//! ("Damp") and BCS-Damp, which runs the AMP recursion per block but
//! denoises the reassembled image as a whole.

use serde::{Deserialize, Serialize};

use crate::denoise::{
    default_probe_eps, denoise, divergence_mc, hard_threshold, DenoiserKind, DivergenceSplit,
    DivergenceSplitter,
};
use crate::error::{invalid_arg, shape_err, Result};
use crate::image::{assemble_padded, tile_blocks, Image};
use crate::linalg::{axpy, dot, Matrix};
use crate::rng::{mix_seed, Rng, Stream};
use crate::sampling::{ChannelBank, Measurements};

/// Starting point of the AMP engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampInit {
    /// Constant block at the least-squares mean `⟨Φ1, y⟩ / ‖Φ1‖²`.
    #[default]
    BlockMean,
    /// All zeros.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub max_iters: usize,
    /// Stop once `‖X̂ᵗ⁺¹ − X̂ᵗ‖ / ‖X̂ᵗ‖` falls below this.
    pub rel_tol: f64,
    pub denoiser: DenoiserKind,
    /// BCS-SPL threshold at iteration `t` is `lambda0 · gamma^t`.
    pub lambda0: f64,
    pub gamma: f64,
    /// Divergence probes per AMP iteration.
    pub probes: usize,
    pub seed: u64,
    pub split: DivergenceSplit,
    pub damp_init: DampInit,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            max_iters: 30,
            rel_tol: 1e-4,
            denoiser: DenoiserKind::default(),
            lambda0: 50.0,
            gamma: 0.9,
            probes: 1,
            seed: 0,
            split: DivergenceSplit::Auto,
            damp_init: DampInit::BlockMean,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid_arg!("max_iters must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid_arg!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.lambda0 >= 0.0) {
            return Err(invalid_arg!("lambda0 must be non-negative"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(invalid_arg!("rel_tol must be non-negative"));
        }
        if self.probes == 0 {
            return Err(invalid_arg!("at least one divergence probe is required"));
        }
        self.denoiser.validate()
    }
}

/// Per-iteration record of an engine run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// Denoised estimate after each iteration (padded canvas for the
    /// full-image engines).
    pub iterates: Vec<Image>,
    /// Noise level estimate after each iteration.
    pub sigmas: Vec<f64>,
}

/// Reconstruction algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    BcsSpl,
    Damp,
    BcsDamp,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::BcsSpl => "bcs-spl",
            Algorithm::Damp => "damp",
            Algorithm::BcsDamp => "bcs-damp",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcs-spl" => Ok(Algorithm::BcsSpl),
            "damp" => Ok(Algorithm::Damp),
            "bcs-damp" => Ok(Algorithm::BcsDamp),
            other => Err(invalid_arg!("unknown algorithm {other:?}")),
        }
    }
}

pub fn reconstruct(
    algo: Algorithm,
    meas: &Measurements,
    bank: &ChannelBank,
    cfg: &ReconConfig,
) -> Result<Image> {
    match algo {
        Algorithm::BcsSpl => bcs_spl(meas, bank, cfg),
        Algorithm::Damp => damp(meas, bank, cfg),
        Algorithm::BcsDamp => bcs_damp(meas, bank, cfg),
    }
}

fn block_side(n: usize) -> Result<usize> {
    let b = (n as f64).sqrt().round() as usize;
    if b * b != n {
        return Err(shape_err!("{n} columns do not form a square block"));
    }
    Ok(b)
}

/// `x + Φ*(y − Φx)`.
fn project(x: &[f64], y: &[f64], phi: &Matrix, pinv: &Matrix) -> Result<Vec<f64>> {
    let mut resid = y.to_vec();
    for (r, v) in resid.iter_mut().zip(phi.matvec(x)?) {
        *r -= v;
    }
    let mut out = x.to_vec();
    axpy(1.0, &pinv.matvec(&resid)?, &mut out);
    Ok(out)
}

/// `y − Φx`.
fn residual(y: &[f64], phi: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    Ok(y.iter().zip(phi.matvec(x)?).map(|(a, b)| a - b).collect())
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b).powi(2)).sum();
    let base: f64 = dot(old, old);
    if diff == 0.0 {
        0.0
    } else if base == 0.0 {
        f64::INFINITY
    } else {
        (diff / base).sqrt()
    }
}

fn initial_block(init: DampInit, y: &[f64], phi: &Matrix) -> Vec<f64> {
    let n = phi.cols();
    match init {
        DampInit::Zero => vec![0.0; n],
        DampInit::BlockMean => {
            let ones = vec![1.0; n];
            let p1 = phi.matvec(&ones).expect("ones has phi.cols entries");
            let denom = dot(&p1, &p1);
            let mean = if denom > 0.0 { dot(&p1, y) / denom } else { 0.0 };
            vec![mean; n]
        }
    }
}

struct Blocks<'a> {
    ys: Vec<&'a [f64]>,
    phis: Vec<&'a Matrix>,
    pinvs: Vec<&'a Matrix>,
    b: usize,
    grid_rows: usize,
    grid_cols: usize,
}

fn unpack<'a>(meas: &'a Measurements, bank: &'a ChannelBank) -> Result<Blocks<'a>> {
    meas.validate(bank)?;
    let mut phis = Vec::with_capacity(meas.entries.len());
    let mut pinvs = Vec::with_capacity(meas.entries.len());
    for e in &meas.entries {
        phis.push(bank.matrix(e.channel)?);
        pinvs.push(bank.pinv(e.channel)?);
    }
    Ok(Blocks {
        ys: meas.entries.iter().map(|e| e.y.as_slice()).collect(),
        phis,
        pinvs,
        b: bank.block_size(),
        grid_rows: meas.grid_rows,
        grid_cols: meas.grid_cols,
    })
}

impl Blocks<'_> {
    fn canvas(&self, xs: &[Vec<f64>]) -> Result<Image> {
        let imgs = xs
            .iter()
            .map(|x| Image::new(self.b, self.b, x.clone()))
            .collect::<Result<Vec<_>>>()?;
        assemble_padded(&imgs, self.b, self.grid_rows, self.grid_cols)
    }

    fn split(&self, canvas: &Image) -> Vec<Vec<f64>> {
        tile_blocks(canvas, self.b)
            .into_iter()
            .map(|i| i.data)
            .collect()
    }

    fn finish(&self, xs: &[Vec<f64>], meas: &Measurements) -> Result<Image> {
        let projected = xs
            .iter()
            .enumerate()
            .map(|(i, x)| project(x, self.ys[i], self.phis[i], self.pinvs[i]))
            .collect::<Result<Vec<_>>>()?;
        self.canvas(&projected)?
            .crop(meas.orig_height, meas.orig_width)
    }
}

/// Pseudo-inverse estimate of every block, reassembled and cropped.
pub fn initial_reconstruction(meas: &Measurements, bank: &ChannelBank) -> Result<Image> {
    let blk = unpack(meas, bank)?;
    let xs = blk
        .ys
        .iter()
        .zip(&blk.pinvs)
        .map(|(y, p)| p.matvec(y))
        .collect::<Result<Vec<_>>>()?;
    blk.canvas(&xs)?.crop(meas.orig_height, meas.orig_width)
}

/// BCS-SPL: per-block projection onto `{x : Φx = y}` alternating with
/// global DCT hard thresholding on a decaying schedule, finished by one
/// projection so the output honours the measurements.
pub fn bcs_spl(meas: &Measurements, bank: &ChannelBank, cfg: &ReconConfig) -> Result<Image> {
    cfg.validate()?;
    let blk = unpack(meas, bank)?;
    let mut xs = blk
        .ys
        .iter()
        .zip(&blk.pinvs)
        .map(|(y, p)| p.matvec(y))
        .collect::<Result<Vec<_>>>()?;
    let mut current = blk.canvas(&xs)?;
    for t in 0..cfg.max_iters {
        let rs = xs
            .iter()
            .enumerate()
            .map(|(i, x)| project(x, blk.ys[i], blk.phis[i], blk.pinvs[i]))
            .collect::<Result<Vec<_>>>()?;
        let lambda = cfg.lambda0 * cfg.gamma.powi(t as i32);
        let next = hard_threshold(&blk.canvas(&rs)?, lambda);
        let change = relative_change(&next.data, &current.data);
        xs = blk.split(&next);
        current = next;
        if change < cfg.rel_tol {
            break;
        }
    }
    blk.finish(&xs, meas)
}

fn sigma_of(zs: &[Vec<f64>], total_m: usize) -> f64 {
    let energy: f64 = zs.iter().map(|z| dot(z, z)).sum();
    (energy / total_m as f64).sqrt()
}

/// D-AMP on a single block with `Φ*` as back-projection:
///
/// `r = x + Φ*z`, `x ← D_σ(r)`, `z ← y − Φx + z·div D_σ(r)/m`,
/// `σ = ‖z‖/√m`; a final projection enforces `Φx = y`.
pub fn damp_block(y: &[f64], phi: &Matrix, phi_pinv: &Matrix, cfg: &ReconConfig) -> Result<Image> {
    damp_block_traced(y, phi, phi_pinv, cfg).map(|(img, _)| img)
}

/// [`damp_block`] together with its per-iteration trace.
pub fn damp_block_traced(
    y: &[f64],
    phi: &Matrix,
    phi_pinv: &Matrix,
    cfg: &ReconConfig,
) -> Result<(Image, Trace)> {
    cfg.validate()?;
    let (m, n) = phi.shape();
    if y.len() != m || phi_pinv.shape() != (n, m) {
        return Err(shape_err!(
            "measurement length {} with {}x{} matrix and {:?} pseudo-inverse",
            y.len(),
            m,
            n,
            phi_pinv.shape()
        ));
    }
    let b = block_side(n)?;
    let mut master = Rng::stream(cfg.seed, Stream::Probes);
    let kind = &cfg.denoiser;
    let mut trace = Trace::default();

    let mut x = initial_block(cfg.damp_init, y, phi);
    let mut z = residual(y, phi, &x)?;
    let mut sigma = sigma_of(std::slice::from_ref(&z), m);
    for _ in 0..cfg.max_iters {
        let mut r = x.clone();
        axpy(1.0, &phi_pinv.matvec(&z)?, &mut r);
        let r = Image::new(b, b, r)?;
        let xn = denoise(&r, sigma, kind).data;
        let mut probe_rng = Rng::stream(master.next_u64(), Stream::Probes);
        let div = divergence_mc(kind, &r, sigma, cfg.probes, default_probe_eps(&r), &mut probe_rng)?;
        let onsager = div / m as f64;
        let mut zn = residual(y, phi, &xn)?;
        axpy(onsager, &z, &mut zn);
        z = zn;
        sigma = sigma_of(std::slice::from_ref(&z), m);
        let change = relative_change(&xn, &x);
        x = xn;
        trace.iterates.push(Image::new(b, b, x.clone())?);
        trace.sigmas.push(sigma);
        if change < cfg.rel_tol {
            break;
        }
    }
    let out = Image::new(b, b, project(&x, y, phi, phi_pinv)?)?;
    Ok((out, trace))
}

/// Block-independent D-AMP over a whole image. Block `i` draws its probes
/// from a seed derived from `cfg.seed` and `i`.
pub fn damp(meas: &Measurements, bank: &ChannelBank, cfg: &ReconConfig) -> Result<Image> {
    let blk = unpack(meas, bank)?;
    let xs = (0..blk.ys.len())
        .map(|i| {
            let local = ReconConfig {
                seed: mix_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            damp_block(blk.ys[i], blk.phis[i], blk.pinvs[i], &local).map(|img| img.data)
        })
        .collect::<Result<Vec<_>>>()?;
    blk.canvas(&xs)?.crop(meas.orig_height, meas.orig_width)
}

/// BCS-Damp: per-block AMP residuals with a single full-image denoiser.
///
/// Each iteration back-projects every block, reassembles the padded canvas
/// `R`, denoises it as one image, and updates `z_i = y_i − Φ_i x_i +
/// z_i·div_i/m_i` where `div_i` is block `i`'s share of the full-image
/// divergence. The noise level is the RMS over all residual entries.
pub fn bcs_damp(meas: &Measurements, bank: &ChannelBank, cfg: &ReconConfig) -> Result<Image> {
    bcs_damp_traced(meas, bank, cfg).map(|(img, _)| img)
}

/// [`bcs_damp`] together with its per-iteration trace.
pub fn bcs_damp_traced(
    meas: &Measurements,
    bank: &ChannelBank,
    cfg: &ReconConfig,
) -> Result<(Image, Trace)> {
    cfg.validate()?;
    let blk = unpack(meas, bank)?;
    let kind = &cfg.denoiser;
    let (ph, pw) = (blk.grid_rows * blk.b, blk.grid_cols * blk.b);
    let splitter = DivergenceSplitter::new(ph, pw, blk.b, kind, cfg.split)?;
    let mut master = Rng::stream(cfg.seed, Stream::Probes);
    let total_m: usize = blk.ys.iter().map(|y| y.len()).sum();
    let mut trace = Trace::default();

    let mut xs: Vec<Vec<f64>> = blk
        .ys
        .iter()
        .zip(&blk.phis)
        .map(|(y, phi)| initial_block(cfg.damp_init, y, phi))
        .collect();
    let mut zs = xs
        .iter()
        .enumerate()
        .map(|(i, x)| residual(blk.ys[i], blk.phis[i], x))
        .collect::<Result<Vec<_>>>()?;
    let mut sigma = sigma_of(&zs, total_m);
    let mut current = blk.canvas(&xs)?;
    for _ in 0..cfg.max_iters {
        let rs = xs
            .iter()
            .zip(&zs)
            .zip(&blk.pinvs)
            .map(|((x, z), p)| {
                let mut r = x.clone();
                axpy(1.0, &p.matvec(z)?, &mut r);
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        let canvas = blk.canvas(&rs)?;
        let next = denoise(&canvas, sigma, kind);
        let mut probe_rng = Rng::stream(master.next_u64(), Stream::Probes);
        let div = divergence_mc(
            kind,
            &canvas,
            sigma,
            cfg.probes,
            default_probe_eps(&canvas),
            &mut probe_rng,
        )?;
        let shares = splitter.shares(&canvas, sigma, kind)?;
        let xn = blk.split(&next);
        for i in 0..xn.len() {
            let onsager = div * shares[i] / blk.ys[i].len() as f64;
            let mut zn = residual(blk.ys[i], blk.phis[i], &xn[i])?;
            axpy(onsager, &zs[i], &mut zn);
            zs[i] = zn;
        }
        sigma = sigma_of(&zs, total_m);
        let change = relative_change(&next.data, &current.data);
        xs = xn;
        trace.sigmas.push(sigma);
        trace.iterates.push(next.clone());
        current = next;
        if change < cfg.rel_tol {
            break;
        }
    }
    Ok((blk.finish(&xs, meas)?, trace))
}
