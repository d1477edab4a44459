use std::fs;
use std::path::{Path, PathBuf};

use bcskit::denoise::DenoiserKind;
use bcskit::neural::{checkpoint, NetParams};
use bcskit::recon::ReconConfig;
use bcskit::sampling::{BankSpec, ChannelBank, Measurements};
use bcskit::Image;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliError};
use crate::{Denoiser, EngineArgs};

/// Where the channel matrices of a measurement file come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BankSource {
    Seeded(BankSpec),
    Network { checkpoint: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFile {
    pub source: BankSource,
    pub measurements: Measurements,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| CliError::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })
}

pub fn load_network(path: &Path) -> Result<NetParams, CliError> {
    Ok(checkpoint::load(path)?.params)
}

pub fn bank_for(source: &BankSource) -> Result<ChannelBank, CliError> {
    match source {
        BankSource::Seeded(spec) => Ok(spec.build()?),
        BankSource::Network { checkpoint } => Ok(load_network(checkpoint)?.channel_bank()?),
    }
}

/// Every `.pgm` file of `dir`, sorted by name, with its file stem as id.
pub fn load_pgm_dir(dir: &Path) -> Result<Vec<(String, Image)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")) {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(usage!("no .pgm images in {}", dir.display()));
    }
    paths
        .into_iter()
        .map(|p| Ok((stem(&p), bcskit::image::load_pgm(&p)?)))
        .collect()
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn recon_config(e: &EngineArgs, seed: u64) -> Result<ReconConfig, CliError> {
    let denoiser = match (e.denoiser, e.tau) {
        (Denoiser::HardDct, None) => DenoiserKind::default(),
        (Denoiser::HardDct, Some(tau)) => DenoiserKind::HardDct { tau },
        (Denoiser::SoftDct, None) => DenoiserKind::soft_dct(),
        (Denoiser::SoftDct, Some(tau)) => DenoiserKind::SoftDct { tau },
        (Denoiser::Nlm, None) => DenoiserKind::nlm(),
        (Denoiser::Nlm, Some(_)) => return Err(usage!("--tau applies to the DCT denoisers only")),
    };
    let cfg = ReconConfig { max_iters: e.iters, denoiser, seed, ..Default::default() };
    cfg.validate()?;
    Ok(cfg)
}
