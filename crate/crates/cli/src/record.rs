use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::error::CliError;

pub const HEADER: &str = "image,algo,target_rate,achieved_rate,psnr_db,ssim,blockiness,time_s,seed";

/// One reconstruction run. Metrics are `None` when they could not be
/// computed (no reference image, or an image too small for blockiness).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub image: String,
    pub algo: String,
    pub target_rate: f64,
    pub achieved_rate: f64,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub blockiness: Option<f64>,
    pub time_s: f64,
    pub seed: u64,
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl RunRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.image,
            self.algo,
            num(self.target_rate),
            num(self.achieved_rate),
            opt(self.psnr_db),
            opt(self.ssim),
            opt(self.blockiness),
            num(self.time_s),
            self.seed
        )
    }
}

/// Mean of the present values; `None` if there are none.
fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Sorts by (image, algo, target rate) and appends one `__mean__` row per
/// (algo, target rate).
pub fn with_means(mut rows: Vec<RunRecord>) -> Vec<RunRecord> {
    let key = |r: &RunRecord| (r.image.clone(), r.algo.clone());
    rows.sort_by(|a, b| key(a).cmp(&key(b)).then(a.target_rate.total_cmp(&b.target_rate)));
    let mut groups: Vec<(String, f64)> = rows.iter().map(|r| (r.algo.clone(), r.target_rate)).collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    groups.dedup();
    let means: Vec<RunRecord> = groups
        .into_iter()
        .map(|(algo, rate)| {
            let g: Vec<&RunRecord> = rows.iter().filter(|r| r.algo == algo && r.target_rate == rate).collect();
            RunRecord {
                image: "__mean__".into(),
                algo,
                target_rate: rate,
                achieved_rate: mean(g.iter().map(|r| Some(r.achieved_rate))).unwrap_or(f64::NAN),
                psnr_db: mean(g.iter().map(|r| r.psnr_db)),
                ssim: mean(g.iter().map(|r| r.ssim)),
                blockiness: mean(g.iter().map(|r| r.blockiness)),
                time_s: mean(g.iter().map(|r| Some(r.time_s))).unwrap_or(f64::NAN),
                seed: g[0].seed,
            }
        })
        .collect();
    rows.extend(means);
    rows
}

pub fn table(rows: &[RunRecord]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Appends `rec` to `path`, writing the header first if the file is new or
/// empty.
pub fn append(path: &Path, rec: &RunRecord) -> Result<(), CliError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let empty = f.metadata().map_err(|e| CliError::io(path, e))?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(HEADER);
        text.push('\n');
    }
    text.push_str(&rec.csv_line());
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
