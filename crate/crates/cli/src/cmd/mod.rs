use std::time::Instant;

use bcskit::image::{decode_pgm, encode_pgm};
use bcskit::metrics::{blockiness, psnr, ssim};
use bcskit::neural::NetParams;
use bcskit::recon::{self, Algorithm, ReconConfig};
use bcskit::sampling::{ChannelBank, Measurements};
use bcskit::Image;

use crate::error::{usage, CliError};
use crate::record::RunRecord;
use crate::Algo;

pub mod bench;
pub mod fixtures;
pub mod reconstruct;
pub mod sample;
pub mod train;

/// Runs `algo` and returns the image together with the seconds it took.
pub fn timed_reconstruct(
    algo: Algo,
    meas: &Measurements,
    bank: &ChannelBank,
    net: Option<&NetParams>,
    cfg: &ReconConfig,
) -> Result<(Image, f64), CliError> {
    let start = Instant::now();
    let img = match algo {
        Algo::BcsSpl => recon::reconstruct(Algorithm::BcsSpl, meas, bank, cfg)?,
        Algo::Damp => recon::reconstruct(Algorithm::Damp, meas, bank, cfg)?,
        Algo::BcsDamp => recon::reconstruct(Algorithm::BcsDamp, meas, bank, cfg)?,
        Algo::Bcsnet => net
            .ok_or_else(|| usage!("bcsnet needs a network checkpoint"))?
            .forward_full(meas)?,
    };
    Ok((img, start.elapsed().as_secs_f64()))
}

pub struct RunInfo<'a> {
    pub image: &'a str,
    pub algo: Algo,
    pub target_rate: f64,
    pub seed: u64,
}

/// Builds a record for a finished run, scoring the 8-bit image that gets
/// written. Blockiness is left empty for images with fewer than two blocks
/// per side.
pub fn record(
    info: RunInfo,
    meas: &Measurements,
    out: &Image,
    reference: Option<&Image>,
    time_s: f64,
) -> Result<RunRecord, CliError> {
    let out = decode_pgm(&encode_pgm(out))?;
    let (psnr_db, ssim_v) = match reference {
        Some(r) => (Some(psnr(r, &out)?), Some(ssim(r, &out)?)),
        None => (None, None),
    };
    let n = meas.block_size * meas.block_size;
    Ok(RunRecord {
        image: info.image.to_string(),
        algo: info.algo.name().to_string(),
        target_rate: info.target_rate,
        achieved_rate: meas.total_count() as f64 / (meas.num_blocks() * n) as f64,
        psnr_db,
        ssim: ssim_v,
        blockiness: blockiness(&out, meas.block_size).ok(),
        time_s,
        seed: info.seed,
    })
}
