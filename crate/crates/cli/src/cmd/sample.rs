use std::path::PathBuf;

use bcskit::allocation::{assign, presample, proportions, RateAssignment};
use bcskit::image::{grid_dims, load_pgm};
use bcskit::sampling::{sample_image, BankSpec, ChannelBank};
use bcskit::Image;

use crate::error::{usage, CliError};
use crate::files::{load_network, write_json, BankSource, MeasurementFile};
use crate::{Mode, SampleArgs};

/// Picks the channel of every block for target rate `sr`.
pub fn assignment(img: &Image, bank: &ChannelBank, sr: f64, mode: Mode) -> Result<RateAssignment, CliError> {
    match mode {
        Mode::Uniform => {
            let j = bank.channel_for_rate(sr).ok_or_else(|| {
                usage!("uniform mode needs --sr to be one of the channel rates {:?}", bank.rates())
            })?;
            let (gr, gc) = grid_dims(img.height, img.width, bank.block_size());
            Ok(RateAssignment::uniform(bank, j, gr * gc))
        }
        Mode::Adaptive => {
            let map = presample(img)?;
            let p = proportions(&map, bank.block_size())?;
            Ok(assign(&p, sr, bank)?)
        }
    }
}

fn default_assignment_path(out: &std::path::Path) -> PathBuf {
    out.with_extension("assignment.json")
}

pub fn run(a: &SampleArgs) -> Result<(), CliError> {
    let img = load_pgm(&a.input)?;
    let (source, bank) = match &a.checkpoint {
        Some(ck) => {
            let bank = load_network(ck)?.channel_bank()?;
            (BankSource::Network { checkpoint: ck.clone() }, bank)
        }
        None => {
            let spec = BankSpec {
                block_size: a.block,
                rates: a.rates.clone(),
                orthonormal: a.orthonormal,
                seed: a.seed.seed,
            };
            let bank = spec.build()?;
            (BankSource::Seeded(spec), bank)
        }
    };
    let asg = assignment(&img, &bank, a.sr, a.mode)?;
    let measurements = sample_image(&bank, &asg, &img)?;
    write_json(&MeasurementFile { source, measurements }, &a.out)?;
    let asg_path = a.assignment_out.clone().unwrap_or_else(|| default_assignment_path(&a.out));
    write_json(&asg, &asg_path)?;
    eprintln!(
        "sampled {} blocks, target rate {}, achieved {:.6}",
        asg.channels.len(),
        asg.target_rate,
        asg.achieved_rate
    );
    Ok(())
}
