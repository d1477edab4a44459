use std::fmt::Write as _;
use std::fs;

use bcskit::neural::checkpoint::{self, Checkpoint, Progress};
use bcskit::neural::{NetConfig, NetParams, Stage, TrainConfig, Trainer};
use bcskit::{Error, Image};

use crate::error::CliError;
use crate::files::load_pgm_dir;
use crate::{StageArg, TrainToyArgs};

const LOG_EVERY: u64 = 100;

/// Steps `stage` until its step counter reaches `steps`, picking up saved
/// progress of the same stage. Losses are appended as `(step, stage, loss)`.
fn run_stage(
    params: &mut NetParams,
    images: &[Image],
    stage: Stage,
    cfg: TrainConfig,
    resume: Option<Progress>,
    losses: &mut Vec<(u64, Stage, f64)>,
) -> Result<Progress, CliError> {
    let mut trainer = match resume {
        Some(p) if p.stage == stage => Trainer::resume(stage, cfg, p.adam, p.step, params)?,
        _ => Trainer::new(stage, cfg, params)?,
    };
    while trainer.step() < cfg.steps as u64 {
        let step = trainer.step();
        let loss = trainer.advance(params, images)?;
        if step % LOG_EVERY == 0 {
            eprintln!("stage {} step {step}: loss {loss:.6e}", stage.number());
        }
        losses.push((step, stage, loss));
    }
    if stage == Stage::One {
        params.cache_pinv()?;
    }
    Ok(Progress { stage, step: trainer.step(), adam: trainer.adam().clone() })
}

pub fn run(a: &TrainToyArgs) -> Result<(), CliError> {
    let images: Vec<Image> = load_pgm_dir(&a.dir)?.into_iter().map(|(_, img)| img).collect();
    let (mut params, mut progress) = match &a.from {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            (ck.params, ck.progress)
        }
        None => (NetParams::new(NetConfig::desk(), a.seed.seed)?, None),
    };
    let cfg = |steps| TrainConfig { lr: a.lr, steps, seed: a.seed.seed, ..TrainConfig::default() };
    let run_one = match a.stage {
        StageArg::One => true,
        StageArg::Two => false,
        StageArg::Both => progress.as_ref().is_none_or(|p| p.stage == Stage::One),
    };
    if a.stage == StageArg::Two && a.from.is_none() {
        return Err(Error::State("stage 2 starts from a stage-1 checkpoint (--from)".into()).into());
    }
    let mut losses = Vec::new();
    if run_one {
        progress = Some(run_stage(&mut params, &images, Stage::One, cfg(a.stage1_steps), progress, &mut losses)?);
    }
    if a.stage != StageArg::One {
        progress = Some(run_stage(&mut params, &images, Stage::Two, cfg(a.stage2_steps), progress, &mut losses)?);
    }

    let mut csv = String::from("step,stage,loss\n");
    for (step, stage, loss) in &losses {
        let _ = writeln!(csv, "{step},{},{loss}", stage.number());
    }
    fs::write(&a.loss_csv, csv).map_err(|e| CliError::io(&a.loss_csv, e))?;
    checkpoint::save(&Checkpoint { params, progress }, &a.out)?;
    Ok(())
}
