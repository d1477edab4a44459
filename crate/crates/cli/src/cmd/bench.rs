use std::fs;

use rayon::prelude::*;

use bcskit::neural::NetParams;
use bcskit::sampling::{sample_image, BankSpec, ChannelBank};
use bcskit::Image;

use crate::cmd::sample::assignment;
use crate::cmd::{record, timed_reconstruct, RunInfo};
use crate::error::{usage, CliError};
use crate::files::{load_network, load_pgm_dir, recon_config};
use crate::record::{table, with_means, RunRecord};
use crate::{Algo, BenchArgs};

fn bench_image(
    a: &BenchArgs,
    id: &str,
    img: &Image,
    bank: &ChannelBank,
    net: Option<&NetParams>,
) -> Result<Vec<RunRecord>, CliError> {
    let cfg = recon_config(&a.engine, a.seed.seed)?;
    let mut rows = Vec::new();
    for &rate in &a.rates {
        let asg = assignment(img, bank, rate, a.mode)?;
        let meas = sample_image(bank, &asg, img)?;
        for &algo in &a.algos {
            let (out, time_s) = timed_reconstruct(algo, &meas, bank, net, &cfg)?;
            let info = RunInfo { image: id, algo, target_rate: rate, seed: a.seed.seed };
            rows.push(record(info, &meas, &out, Some(img), time_s)?);
        }
    }
    Ok(rows)
}

pub fn run(a: &BenchArgs) -> Result<(), CliError> {
    let images = load_pgm_dir(&a.dir)?;
    let net = a.checkpoint.as_ref().map(|p| load_network(p)).transpose()?;
    if a.algos.contains(&Algo::Bcsnet) && net.is_none() {
        return Err(usage!("bcsnet needs --checkpoint"));
    }
    let bank = match &net {
        Some(n) => n.channel_bank()?,
        None => BankSpec {
            block_size: a.block,
            rates: a.bank_rates.clone(),
            orthonormal: a.orthonormal,
            seed: a.seed.seed,
        }
        .build()?,
    };
    let per_image = images
        .par_iter()
        .map(|(id, img)| bench_image(a, id, img, &bank, net.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let text = table(&with_means(per_image.into_iter().flatten().collect()));
    match &a.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}
