//! Losses with exact gradients, Adam, and the two training stages.
//!
//! Stage one fits the sampling and init matrices as an autoencoder on
//! blocks. Stage two freezes sampling, caches its pseudo-inverses and fits
//! init plus every phase end to end. Both losses are `(1/2N) Σ ‖X̂ − X‖²`
//! over the original pixels in /255 units.

use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::image::{partition, Image};
use crate::linalg::axpy;
use crate::rng::{mix_seed, Rng, Stream};

use super::{BlockLayout, NetParams, TensorClass, LAYERS_PER_PHASE, PIXEL_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(invalid_arg!("stage must be 1 or 2, got {n}")),
        }
    }

    /// Whether tensors of `class` receive updates in this stage.
    pub fn trains(self, class: TensorClass) -> bool {
        match self {
            Stage::One => matches!(
                class,
                TensorClass::Sampling | TensorClass::Init | TensorClass::InitBias
            ),
            Stage::Two => class != TensorClass::Sampling,
        }
    }
}

/// One training image with the channel of each of its blocks.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub image: &'a Image,
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// One gradient per tensor, in layout order.
    pub grads: Vec<Vec<f64>>,
}

struct Prepared {
    g: BlockLayout,
    x: Vec<f64>,
    channels: Vec<usize>,
}

impl Prepared {
    fn new(params: &NetParams, ex: &Example) -> Result<Self> {
        let grid = partition(ex.image, params.config().block_size)?;
        if ex.channels.len() != grid.len() {
            return Err(shape_err!("{} channels for {} blocks", ex.channels.len(), grid.len()));
        }
        if let Some(&bad) = ex.channels.iter().find(|&&j| j >= params.config().num_channels()) {
            return Err(invalid_arg!("channel {bad} does not exist"));
        }
        let g = BlockLayout {
            b: grid.block_size,
            grid_rows: grid.grid_rows,
            grid_cols: grid.grid_cols,
            orig_height: grid.orig_height,
            orig_width: grid.orig_width,
        };
        let mut x = vec![0.0; g.height() * g.width()];
        for (i, blk) in grid.blocks.iter().enumerate() {
            let v: Vec<f64> = blk.data.iter().map(|p| p / PIXEL_SCALE).collect();
            g.scatter(&mut x, i, &v);
        }
        Ok(Prepared { g, x, channels: ex.channels.clone() })
    }

    fn measure(&self, params: &NetParams) -> Vec<(usize, Vec<f64>)> {
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &j)| (j, params.sample_vec(j, &self.g.gather(&self.x, i))))
            .collect()
    }

    /// `out − x` on original pixels and 0 on padding.
    fn residual(&self, out: &[f64]) -> Vec<f64> {
        let w = self.g.width();
        out.iter()
            .zip(&self.x)
            .enumerate()
            .map(|(k, (o, x))| if self.g.inside(k / w, k % w) { o - x } else { 0.0 })
            .collect()
    }
}

fn zero_grads(params: &NetParams) -> Vec<Vec<f64>> {
    params.tensors().iter().map(|t| vec![0.0; t.len()]).collect()
}

fn check_batch(batch: &[Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid_arg!("training batch is empty"));
    }
    Ok(())
}

/// `grad[r][c] += u[r] · v[c]` for a row-major `u.len() × v.len()` tensor.
fn add_outer(grad: &mut [f64], u: &[f64], v: &[f64]) {
    for (row, &a) in grad.chunks_exact_mut(v.len()).zip(u) {
        axpy(a, v, row);
    }
}

/// Block autoencoder loss `(1/2N) Σ ‖f_init(f_samp(X)) − X‖²` with
/// gradients for the sampling matrices, init matrices and init biases.
pub fn loss_stage1(params: &NetParams, batch: &[Example]) -> Result<LossOutput> {
    check_batch(batch)?;
    let scale = 1.0 / batch.len() as f64;
    let n = params.config().block_len();
    let mut grads = zero_grads(params);
    let mut loss = 0.0;
    for ex in batch {
        let p = Prepared::new(params, ex)?;
        let mut x0 = vec![0.0; p.x.len()];
        let mut ys = Vec::with_capacity(p.channels.len());
        for (i, &j) in p.channels.iter().enumerate() {
            let xi = p.g.gather(&p.x, i);
            let y = params.sample_vec(j, &xi);
            p.g.scatter(&mut x0, i, &params.init_vec(j, &y));
            ys.push((xi, y));
        }
        let d = p.residual(&x0);
        loss += d.iter().map(|v| v * v).sum::<f64>();
        for (i, (&j, (xi, y))) in p.channels.iter().zip(&ys).enumerate() {
            let g0: Vec<f64> = p.g.gather(&d, i).iter().map(|v| v * scale).collect();
            add_outer(&mut grads[params.init_index(j)], &g0, y);
            axpy(1.0, &g0, &mut grads[params.init_bias_index(j)]);
            let m = y.len();
            let mut gy = vec![0.0; m];
            for (row, &g) in params.tensors()[params.init_index(j)].chunks_exact(m).zip(&g0) {
                axpy(g, row, &mut gy);
            }
            debug_assert_eq!(xi.len(), n);
            add_outer(&mut grads[params.samp_index(j)], &gy, xi);
        }
    }
    Ok(LossOutput { loss: 0.5 * scale * loss, grads })
}

/// End-to-end loss `(1/2N) Σ ‖f_deep(f_init(y)) − X‖²` with the sampling
/// matrices frozen: their gradients are exactly zero.
pub fn loss_stage2(params: &NetParams, batch: &[Example]) -> Result<LossOutput> {
    check_batch(batch)?;
    let pinvs = params.require_pinv()?;
    let scale = 1.0 / batch.len() as f64;
    let phases = params.config().phases;
    let mut grads = zero_grads(params);
    let mut loss = 0.0;
    for ex in batch {
        let p = Prepared::new(params, ex)?;
        let (h, w) = (p.g.height(), p.g.width());
        let ys = p.measure(params);
        let mut x = params.initial_padded(&p.g, &ys);
        let mut tapes = Vec::with_capacity(phases);
        for t in 0..phases {
            let r = params.project(&p.g, pinvs, &ys, &x);
            let (out, acts) = params.cnn_forward(t, &r, h, w);
            x = r.iter().zip(&out).map(|(a, b)| a - b).collect();
            tapes.push(acts);
        }
        let d = p.residual(&x);
        loss += d.iter().map(|v| v * v).sum::<f64>();

        let mut g: Vec<f64> = d.iter().map(|v| v * scale).collect();
        for t in (0..phases).rev() {
            // x = r − cnn(r)
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let through = params.cnn_backward(t, &tapes[t], &neg, h, w, &mut grads);
            let gr: Vec<f64> = g.iter().zip(&through).map(|(a, b)| a + b).collect();
            g = params.project_adjoint(&p.g, pinvs, &ys, &gr);
        }
        for (i, (j, y)) in ys.iter().enumerate() {
            let g0 = p.g.gather(&g, i);
            add_outer(&mut grads[params.init_index(*j)], &g0, y);
            axpy(1.0, &g0, &mut grads[params.init_bias_index(*j)]);
        }
    }
    Ok(LossOutput { loss: 0.5 * scale * loss, grads })
}

/// On/off state of every hidden ReLU unit over the batch, example by
/// example, phase by phase, layer by layer.
pub fn activation_pattern(params: &NetParams, batch: &[Example]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for ex in batch {
        deep_forward(params, ex, None, |acts| {
            for a in &acts[1..acts.len() - 1] {
                out.extend(a.iter().map(|&v| v > 0.0));
            }
        })?;
    }
    Ok(out)
}

/// Stage-2 loss with every hidden ReLU replaced by the fixed 0/1 gate in
/// `pattern` (laid out as in [`activation_pattern`]). It equals
/// [`loss_stage2`] wherever `pattern` is the network's own pattern, has the
/// same gradient there, and is smooth in the weights, so finite
/// differences across a ReLU kink can be checked against it.
pub fn loss_stage2_gated(params: &NetParams, batch: &[Example], pattern: &[bool]) -> Result<f64> {
    check_batch(batch)?;
    let mut loss = 0.0;
    let mut offset = 0;
    for ex in batch {
        let (p, x) = deep_forward(params, ex, Some((pattern, &mut offset)), |_| {})?;
        loss += p.residual(&x).iter().map(|v| v * v).sum::<f64>();
    }
    if offset != pattern.len() {
        return Err(shape_err!("pattern has {} gates, network used {offset}", pattern.len()));
    }
    Ok(0.5 * loss / batch.len() as f64)
}

/// Forward pass through every phase of one example, handing each phase's
/// layer inputs to `visit`. Returns the prepared example and the output.
fn deep_forward(
    params: &NetParams,
    ex: &Example,
    mut gates: Option<(&[bool], &mut usize)>,
    mut visit: impl FnMut(&[Vec<f64>]),
) -> Result<(Prepared, Vec<f64>)> {
    let pinvs = params.require_pinv()?;
    let p = Prepared::new(params, ex)?;
    let (h, w) = (p.g.height(), p.g.width());
    let ys = p.measure(params);
    let hidden = (LAYERS_PER_PHASE - 1) * params.config().features * h * w;
    let mut x = params.initial_padded(&p.g, &ys);
    for t in 0..params.config().phases {
        let r = params.project(&p.g, pinvs, &ys, &x);
        let g = match gates.as_mut() {
            Some((pattern, offset)) => {
                let end = **offset + hidden;
                if end > pattern.len() {
                    return Err(shape_err!("gate pattern too short"));
                }
                let slice = &pattern[**offset..end];
                **offset = end;
                Some(slice)
            }
            None => None,
        };
        let (res, acts) = params.cnn_forward_gated(t, &r, h, w, g);
        visit(&acts);
        x = r.iter().zip(&res).map(|(a, b)| a - b).collect();
    }
    Ok((p, x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 200, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid_arg!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid_arg!("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid_arg!("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetParams) -> Self {
        AdamState { t: 0, m: zero_grads(params), v: zero_grads(params) }
    }

    fn matches(&self, params: &NetParams) -> bool {
        let same = |b: &[Vec<f64>]| {
            b.len() == params.tensors().len()
                && b.iter().zip(params.tensors()).all(|(a, t)| a.len() == t.len())
        };
        same(&self.m) && same(&self.v)
    }

    /// One bias-corrected Adam step on the tensors selected by `stage`.
    pub fn update(&mut self, params: &mut NetParams, grads: &[Vec<f64>], cfg: &TrainConfig, stage: Stage) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powf(self.t as f64);
        let c2 = 1.0 - cfg.beta2.powf(self.t as f64);
        let layout = params.config().layout();
        for (k, info) in layout.iter().enumerate() {
            if !stage.trains(info.class) {
                continue;
            }
            let (m, v, w) = (&mut self.m[k], &mut self.v[k], &mut params.tensors_mut()[k]);
            for (((mi, vi), wi), &g) in m.iter_mut().zip(v.iter_mut()).zip(w.iter_mut()).zip(&grads[k]) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                *wi -= cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Steps one stage with batch size 1. The image and block channels of each
/// step depend only on the seed, the stage and the step number, so a
/// resumed run repeats an uninterrupted one exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    stage: Stage,
    cfg: TrainConfig,
    adam: AdamState,
    step: u64,
}

impl Trainer {
    pub fn new(stage: Stage, cfg: TrainConfig, params: &NetParams) -> Result<Self> {
        Self::resume(stage, cfg, AdamState::new(params), 0, params)
    }

    pub fn resume(stage: Stage, cfg: TrainConfig, adam: AdamState, step: u64, params: &NetParams) -> Result<Self> {
        cfg.validate()?;
        if stage == Stage::Two {
            params.require_pinv()?;
        }
        if !adam.matches(params) {
            return Err(shape_err!("optimizer state does not match the network layout"));
        }
        Ok(Trainer { stage, cfg, adam, step })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// The image and channels used at the current step.
    pub fn example<'a>(&self, params: &NetParams, images: &'a [Image]) -> Result<Example<'a>> {
        if images.is_empty() {
            return Err(invalid_arg!("no training images"));
        }
        let key = (u64::from(self.stage.number()) << 32) | self.step;
        let mut rng = Rng::stream(mix_seed(self.cfg.seed, key), Stream::Training);
        let image = &images[rng.below(images.len())];
        let (gr, gc) = crate::image::grid_dims(image.height, image.width, params.config().block_size);
        let k = params.config().num_channels();
        let channels = (0..gr * gc).map(|_| rng.below(k)).collect();
        Ok(Example { image, channels })
    }

    /// Computes the loss at the current weights, applies one Adam update
    /// and returns that loss.
    pub fn advance(&mut self, params: &mut NetParams, images: &[Image]) -> Result<f64> {
        let ex = self.example(params, images)?;
        let batch = [ex];
        let out = match self.stage {
            Stage::One => loss_stage1(params, &batch)?,
            Stage::Two => loss_stage2(params, &batch)?,
        };
        if !out.loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at step {}", self.step)));
        }
        self.adam.update(params, &out.grads, &self.cfg, self.stage);
        if self.stage == Stage::One {
            params.clear_pinv();
        }
        self.step += 1;
        Ok(out.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Loss before each update.
    pub losses: Vec<f64>,
    pub trainer: Trainer,
}

/// Runs `cfg.steps` updates of one stage. Stage one ends by caching the
/// pseudo-inverses of the learned sampling matrices; stage two refuses to
/// start without them.
pub fn train(params: &NetParams, images: &[Image], stage: Stage, cfg: TrainConfig) -> Result<TrainOutcome> {
    let mut params = params.clone();
    let mut trainer = Trainer::new(stage, cfg, &params)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        losses.push(trainer.advance(&mut params, images)?);
    }
    if stage == Stage::One {
        params.cache_pinv()?;
    }
    Ok(TrainOutcome { params, losses, trainer })
}
