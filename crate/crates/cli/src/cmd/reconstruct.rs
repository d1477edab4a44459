use bcskit::allocation::RateAssignment;
use bcskit::image::{load_pgm, save_pgm};

use crate::cmd::{record, timed_reconstruct, RunInfo};
use crate::error::{usage, CliError};
use crate::files::{bank_for, load_network, read_json, recon_config, stem, BankSource, MeasurementFile};
use crate::record::append;
use crate::{Algo, ReconstructArgs};

pub fn run(a: &ReconstructArgs) -> Result<(), CliError> {
    let file: MeasurementFile = read_json(&a.meas)?;
    let meas = &file.measurements;
    let bank = bank_for(&file.source)?;
    meas.validate(&bank)?;
    let net = if a.algo == Algo::Bcsnet {
        let path = match (&a.checkpoint, &file.source) {
            (Some(p), _) => p.clone(),
            (None, BankSource::Network { checkpoint }) => checkpoint.clone(),
            (None, BankSource::Seeded(_)) => {
                return Err(usage!("bcsnet needs --checkpoint or measurements taken by a network"))
            }
        };
        Some(load_network(&path)?)
    } else {
        None
    };
    let target_rate = match &a.assignment {
        Some(p) => {
            let asg: RateAssignment = read_json(p)?;
            asg.validate(&bank)?;
            if asg.channels != meas.channels() {
                return Err(usage!("assignment does not match the measurement channels"));
            }
            asg.target_rate
        }
        None => meas.total_count() as f64 / (meas.num_blocks() * bank.block_len()) as f64,
    };
    let reference = a.reference.as_ref().map(load_pgm).transpose()?;
    let cfg = recon_config(&a.engine, a.seed.seed)?;

    let (img, time_s) = timed_reconstruct(a.algo, meas, &bank, net.as_ref(), &cfg)?;
    save_pgm(&img, &a.out)?;

    let id = a.id.clone().unwrap_or_else(|| stem(&a.out));
    let info = RunInfo { image: &id, algo: a.algo, target_rate, seed: a.seed.seed };
    let rec = record(info, meas, &img, reference.as_ref(), time_s)?;
    println!("{}", rec.csv_line());
    if let Some(csv) = &a.csv {
        append(csv, &rec)?;
    }
    Ok(())
}
