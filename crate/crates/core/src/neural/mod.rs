//! A small unrolled reconstruction network trained end to end.
//!
//! Each block is measured by a learnable matrix of its channel, lifted back
//! to `B×B` pixels by a learnable init matrix plus bias, and the reassembled
//! image then passes through `T` phases. A phase projects every block onto
//! its measurement set with the cached pseudo-inverse and subtracts the
//! residual predicted by a five-layer convolutional network.
//!
//! Pixels enter the network divided by 255 so biases and conv weights see
//! unit-scale inputs; the public forward functions take and return pixel
//! units.

mod conv;
pub mod checkpoint;
pub mod train;

use serde::{Deserialize, Serialize};

pub use conv::ConvShape;
pub use train::{
    activation_pattern, loss_stage1, loss_stage2, loss_stage2_gated, train, AdamState, Example, LossOutput, Stage, TrainConfig,
    TrainOutcome, Trainer,
};

use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::image::Image;
use crate::linalg::{axpy, dot, penrose_residual, pseudo_inverse, Matrix, DEFAULT_RCOND};
use crate::rng::{Rng, Stream};
use crate::sampling::{measurement_count, ChannelBank, Measurements};

pub const LAYERS_PER_PHASE: usize = 5;
pub(crate) const PIXEL_SCALE: f64 = 255.0;
const PINV_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub block_size: usize,
    pub rates: Vec<f64>,
    /// Feature maps of the hidden conv layers.
    pub features: usize,
    /// Odd conv kernel side.
    pub kernel: usize,
    pub phases: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    /// Small enough to train on a laptop CPU in seconds.
    pub fn desk() -> Self {
        NetConfig { block_size: 16, rates: vec![0.1, 0.2, 0.3], features: 8, kernel: 3, phases: 2 }
    }

    /// The full-size configuration: 32-pixel blocks, seven channels,
    /// 64 feature maps and ten phases.
    pub fn full() -> Self {
        NetConfig {
            block_size: 32,
            rates: crate::sampling::DEFAULT_RATES.to_vec(),
            features: 64,
            kernel: 3,
            phases: 10,
        }
    }

    pub fn block_len(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn num_channels(&self) -> usize {
        self.rates.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.rates.iter().map(|&s| measurement_count(s, self.block_len())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size < 2 {
            return Err(invalid_arg!("block size must be at least 2, got {}", self.block_size));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(invalid_arg!("kernel size must be odd, got {}", self.kernel));
        }
        if self.features == 0 {
            return Err(invalid_arg!("at least one feature map is required"));
        }
        if self.rates.is_empty() || self.rates.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(invalid_arg!("channel rates must be non-empty and in (0, 1]"));
        }
        let counts = self.counts();
        if counts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid_arg!("channel rates must give strictly increasing counts"));
        }
        Ok(())
    }

    fn conv_shape(&self, layer: usize, height: usize, width: usize) -> ConvShape {
        let d = self.features;
        ConvShape {
            in_ch: if layer == 0 { 1 } else { d },
            out_ch: if layer == LAYERS_PER_PHASE - 1 { 1 } else { d },
            kernel: self.kernel,
            height,
            width,
        }
    }

    /// Every parameter tensor in declaration order: sampling matrices,
    /// init matrices, init biases, then weight and bias of each conv layer
    /// phase by phase.
    pub fn layout(&self) -> Vec<TensorInfo> {
        let (n, counts) = (self.block_len(), self.counts());
        let mut out = Vec::new();
        for (j, &m) in counts.iter().enumerate() {
            out.push(TensorInfo::new(format!("samp[{j}]"), TensorClass::Sampling, vec![m, n]));
        }
        for (j, &m) in counts.iter().enumerate() {
            out.push(TensorInfo::new(format!("init[{j}]"), TensorClass::Init, vec![n, m]));
        }
        for j in 0..counts.len() {
            out.push(TensorInfo::new(format!("init_bias[{j}]"), TensorClass::InitBias, vec![n]));
        }
        for t in 0..self.phases {
            for l in 0..LAYERS_PER_PHASE {
                let s = self.conv_shape(l, 1, 1);
                out.push(TensorInfo::new(
                    format!("conv[{t}][{l}].weight"),
                    TensorClass::ConvWeight,
                    vec![s.out_ch, s.in_ch, s.kernel, s.kernel],
                ));
                out.push(TensorInfo::new(
                    format!("conv[{t}][{l}].bias"),
                    TensorClass::ConvBias,
                    vec![s.out_ch],
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorClass {
    Sampling,
    Init,
    InitBias,
    ConvWeight,
    ConvBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub class: TensorClass,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    fn new(name: String, class: TensorClass, shape: Vec<usize>) -> Self {
        TensorInfo { name, class, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network weights as flat row-major tensors in [`NetConfig::layout`]
/// order, plus the pseudo-inverses of the sampling matrices once cached.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    config: NetConfig,
    tensors: Vec<Vec<f64>>,
    pinv: Option<Vec<Matrix>>,
}

impl NetParams {
    /// Gaussian sampling and init matrices with variance `1/B²`, He-scaled
    /// conv kernels and zero biases.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, Stream::Weights);
        let n = config.block_len() as f64;
        let fan = config.kernel * config.kernel;
        let tensors = config
            .layout()
            .iter()
            .map(|info| {
                let std = match info.class {
                    TensorClass::Sampling | TensorClass::Init => (1.0 / n).sqrt(),
                    TensorClass::ConvWeight => (2.0 / (fan * info.shape[1]) as f64).sqrt(),
                    TensorClass::InitBias | TensorClass::ConvBias => 0.0,
                };
                (0..info.len())
                    .map(|_| if std == 0.0 { 0.0 } else { std * rng.normal() })
                    .collect()
            })
            .collect();
        Ok(NetParams { config, tensors, pinv: None })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config.layout().iter().map(|i| vec![0.0; i.len()]).collect();
        Ok(NetParams { config, tensors, pinv: None })
    }

    /// Wraps tensors given in layout order, checking their lengths.
    pub fn from_tensors(config: NetConfig, tensors: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if tensors.len() != layout.len() {
            return Err(shape_err!("{} tensors, layout has {}", tensors.len(), layout.len()));
        }
        for (t, info) in tensors.iter().zip(&layout) {
            if t.len() != info.len() {
                return Err(shape_err!("{} has {} values, expected {}", info.name, t.len(), info.len()));
            }
        }
        Ok(NetParams { config, tensors, pinv: None })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    /// Mutable access to the weights. Editing sampling matrices does not
    /// refresh the cached pseudo-inverses; call [`NetParams::cache_pinv`].
    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    fn k(&self) -> usize {
        self.config.num_channels()
    }

    pub(crate) fn samp_index(&self, j: usize) -> usize {
        j
    }

    pub(crate) fn init_index(&self, j: usize) -> usize {
        self.k() + j
    }

    pub(crate) fn init_bias_index(&self, j: usize) -> usize {
        2 * self.k() + j
    }

    /// Index of the weight tensor of conv layer `l` in phase `t`; the bias
    /// follows it.
    pub(crate) fn conv_index(&self, t: usize, l: usize) -> usize {
        3 * self.k() + 2 * (t * LAYERS_PER_PHASE + l)
    }

    fn check_channel(&self, j: usize) -> Result<()> {
        if j >= self.k() {
            return Err(invalid_arg!("channel {j} out of range, network has {}", self.k()));
        }
        Ok(())
    }

    pub fn sampling_matrix(&self, j: usize) -> Result<Matrix> {
        self.check_channel(j)?;
        let m = self.config.counts()[j];
        Matrix::from_vec(m, self.config.block_len(), self.tensors[self.samp_index(j)].clone())
    }

    pub fn init_matrix(&self, j: usize) -> Result<Matrix> {
        self.check_channel(j)?;
        let m = self.config.counts()[j];
        Matrix::from_vec(self.config.block_len(), m, self.tensors[self.init_index(j)].clone())
    }

    pub fn pinv(&self) -> Option<&[Matrix]> {
        self.pinv.as_deref()
    }

    pub fn has_pinv(&self) -> bool {
        self.pinv.is_some()
    }

    pub fn clear_pinv(&mut self) {
        self.pinv = None;
    }

    /// Computes and stores `pinv(w_samp[j])` for every channel.
    pub fn cache_pinv(&mut self) -> Result<()> {
        let pinvs = (0..self.k())
            .map(|j| pseudo_inverse(&self.sampling_matrix(j)?, DEFAULT_RCOND))
            .collect::<Result<Vec<_>>>()?;
        self.set_pinv(pinvs)
    }

    /// Installs externally computed pseudo-inverses after checking them
    /// against the sampling matrices.
    pub fn set_pinv(&mut self, pinvs: Vec<Matrix>) -> Result<()> {
        if pinvs.len() != self.k() {
            return Err(shape_err!("{} pseudo-inverses for {} channels", pinvs.len(), self.k()));
        }
        for (j, p) in pinvs.iter().enumerate() {
            let a = self.sampling_matrix(j)?;
            let res = penrose_residual(&a, p)?;
            if !(res < PINV_TOLERANCE) {
                return Err(Error::Numeric(format!(
                    "channel {j} pseudo-inverse has Penrose residual {res:e}"
                )));
            }
        }
        self.pinv = Some(pinvs);
        Ok(())
    }

    /// A bank with the network's sampling matrices, for the classic
    /// engines or for producing measurements the network can read.
    pub fn channel_bank(&self) -> Result<ChannelBank> {
        let mats = (0..self.k()).map(|j| self.sampling_matrix(j)).collect::<Result<Vec<_>>>()?;
        ChannelBank::from_matrices(self.config.block_size, &self.config.rates, mats)
    }

    /// `y = w_samp[j] · vec(block)`.
    pub fn forward_sample(&self, j: usize, block: &Image) -> Result<Vec<f64>> {
        self.check_channel(j)?;
        let b = self.config.block_size;
        if block.dims() != (b, b) {
            return Err(shape_err!("block is {:?}, expected {b}x{b}", block.dims()));
        }
        Ok(self.sample_vec(j, &block.data))
    }

    /// `reshape(w_init[j] · y + bias)` in pixel units.
    pub fn forward_init(&self, j: usize, y: &[f64]) -> Result<Image> {
        self.check_channel(j)?;
        self.check_y(j, y)?;
        let yn: Vec<f64> = y.iter().map(|v| v / PIXEL_SCALE).collect();
        let x = self.init_vec(j, &yn);
        let b = self.config.block_size;
        Image::new(b, b, x.into_iter().map(|v| v * PIXEL_SCALE).collect())
    }

    /// Reassembled initial reconstruction, cropped to the original size.
    pub fn initial_image(&self, meas: &Measurements) -> Result<Image> {
        let g = self.grid_of(meas)?;
        let ys = normalized_measurements(meas);
        let x0 = self.initial_padded(&g, &ys);
        Ok(g.crop_to_image(&x0))
    }

    /// Full reconstruction: initial estimate followed by every phase.
    pub fn forward_full(&self, meas: &Measurements) -> Result<Image> {
        let g = self.grid_of(meas)?;
        let pinvs = self.require_pinv()?;
        let ys = normalized_measurements(meas);
        let mut x = self.initial_padded(&g, &ys);
        for t in 0..self.config.phases {
            let r = self.project(&g, pinvs, &ys, &x);
            let (out, _) = self.cnn_forward(t, &r, g.height(), g.width());
            x = r.iter().zip(&out).map(|(a, b)| a - b).collect();
        }
        Ok(g.crop_to_image(&x))
    }

    pub(crate) fn require_pinv(&self) -> Result<&[Matrix]> {
        self.pinv.as_deref().ok_or_else(|| {
            Error::State("sampling pseudo-inverses are not cached; finish stage 1 first".into())
        })
    }

    fn check_y(&self, j: usize, y: &[f64]) -> Result<()> {
        let m = self.config.counts()[j];
        if y.len() != m {
            return Err(shape_err!("channel {j} takes {m} measurements, got {}", y.len()));
        }
        Ok(())
    }

    fn grid_of(&self, meas: &Measurements) -> Result<BlockLayout> {
        if meas.block_size != self.config.block_size {
            return Err(shape_err!(
                "measurements use {}-pixel blocks, network uses {}",
                meas.block_size,
                self.config.block_size
            ));
        }
        if meas.entries.len() != meas.num_blocks() {
            return Err(shape_err!("{} entries for {} blocks", meas.entries.len(), meas.num_blocks()));
        }
        for e in &meas.entries {
            self.check_channel(e.channel)?;
            self.check_y(e.channel, &e.y)?;
        }
        Ok(BlockLayout {
            b: meas.block_size,
            grid_rows: meas.grid_rows,
            grid_cols: meas.grid_cols,
            orig_height: meas.orig_height,
            orig_width: meas.orig_width,
        })
    }

    pub(crate) fn sample_vec(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let n = self.config.block_len();
        let w = &self.tensors[self.samp_index(j)];
        w.chunks_exact(n).map(|row| dot(row, x)).collect()
    }

    pub(crate) fn init_vec(&self, j: usize, y: &[f64]) -> Vec<f64> {
        let m = y.len();
        let w = &self.tensors[self.init_index(j)];
        let bias = &self.tensors[self.init_bias_index(j)];
        w.chunks_exact(m).zip(bias).map(|(row, b)| dot(row, y) + b).collect()
    }

    pub(crate) fn initial_padded(&self, g: &BlockLayout, ys: &[(usize, Vec<f64>)]) -> Vec<f64> {
        let mut x = vec![0.0; g.height() * g.width()];
        for (i, (j, y)) in ys.iter().enumerate() {
            g.scatter(&mut x, i, &self.init_vec(*j, y));
        }
        x
    }

    /// `r_i = x_i + Φ*_j (y_i − Φ_j x_i)` on every block.
    pub(crate) fn project(
        &self,
        g: &BlockLayout,
        pinvs: &[Matrix],
        ys: &[(usize, Vec<f64>)],
        x: &[f64],
    ) -> Vec<f64> {
        let mut r = x.to_vec();
        for (i, (j, y)) in ys.iter().enumerate() {
            let xi = g.gather(x, i);
            let resid: Vec<f64> =
                self.sample_vec(*j, &xi).iter().zip(y).map(|(a, b)| b - a).collect();
            let step = matvec_rows(&pinvs[*j], &resid);
            g.add_block(&mut r, i, &step);
        }
        r
    }

    /// Adjoint of [`NetParams::project`] with respect to `x`.
    pub(crate) fn project_adjoint(
        &self,
        g: &BlockLayout,
        pinvs: &[Matrix],
        ys: &[(usize, Vec<f64>)],
        grad_r: &[f64],
    ) -> Vec<f64> {
        let mut gx = grad_r.to_vec();
        let n = self.config.block_len();
        for (i, (j, _)) in ys.iter().enumerate() {
            let gi = g.gather(grad_r, i);
            // (I − PΦ)ᵀ g = g − Φᵀ (Pᵀ g)
            let pt = matvec_t_rows(&pinvs[*j], &gi);
            let mut back = vec![0.0; n];
            let w = &self.tensors[self.samp_index(*j)];
            for (row, &c) in w.chunks_exact(n).zip(&pt) {
                axpy(c, row, &mut back);
            }
            for v in back.iter_mut() {
                *v = -*v;
            }
            g.add_block(&mut gx, i, &back);
        }
        gx
    }

    /// Runs the conv stack of phase `t`. Returns the predicted residual and
    /// the input of every layer (the last entry is the final output).
    pub(crate) fn cnn_forward(&self, t: usize, r: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.cnn_forward_gated(t, r, h, w, None)
    }

    /// As [`NetParams::cnn_forward`], but with `gates` (the hidden layers'
    /// units concatenated) deciding which units pass instead of their sign.
    pub(crate) fn cnn_forward_gated(
        &self,
        t: usize,
        r: &[f64],
        h: usize,
        w: usize,
        gates: Option<&[bool]>,
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut acts = vec![r.to_vec()];
        let mut offset = 0;
        for l in 0..LAYERS_PER_PHASE {
            let s = self.config.conv_shape(l, h, w);
            let idx = self.conv_index(t, l);
            let mut out = conv::forward(&s, acts.last().unwrap(), &self.tensors[idx], &self.tensors[idx + 1]);
            if l + 1 < LAYERS_PER_PHASE {
                match gates {
                    Some(g) => {
                        for (v, &on) in out.iter_mut().zip(&g[offset..offset + s.out_ch * h * w]) {
                            if !on {
                                *v = 0.0;
                            }
                        }
                        offset += s.out_ch * h * w;
                    }
                    None => out.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            }
            acts.push(out);
        }
        (acts.last().unwrap().clone(), acts)
    }

    /// Backpropagates `grad_out` through the conv stack of phase `t`,
    /// accumulating into `grads` and returning the input gradient.
    pub(crate) fn cnn_backward(
        &self,
        t: usize,
        acts: &[Vec<f64>],
        grad_out: &[f64],
        h: usize,
        w: usize,
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for l in (0..LAYERS_PER_PHASE).rev() {
            if l + 1 < LAYERS_PER_PHASE {
                for (gv, &a) in g.iter_mut().zip(&acts[l + 1]) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let s = self.config.conv_shape(l, h, w);
            let idx = self.conv_index(t, l);
            let (lo, hi) = grads.split_at_mut(idx + 1);
            g = conv::backward(&s, &acts[l], &self.tensors[idx], &g, &mut lo[idx], &mut hi[0]);
        }
        g
    }
}

fn matvec_rows(a: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows()).map(|r| dot(a.row(r), x)).collect()
}

fn matvec_t_rows(a: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.cols()];
    for (r, &c) in x.iter().enumerate() {
        axpy(c, a.row(r), &mut out);
    }
    out
}

pub(crate) fn normalized_measurements(meas: &Measurements) -> Vec<(usize, Vec<f64>)> {
    meas.entries
        .iter()
        .map(|e| (e.channel, e.y.iter().map(|v| v / PIXEL_SCALE).collect()))
        .collect()
}

/// Block grid geometry over a padded flat image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockLayout {
    pub b: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub orig_height: usize,
    pub orig_width: usize,
}

impl BlockLayout {
    pub fn height(&self) -> usize {
        self.grid_rows * self.b
    }

    pub fn width(&self) -> usize {
        self.grid_cols * self.b
    }

    fn origin(&self, i: usize) -> (usize, usize) {
        ((i / self.grid_cols) * self.b, (i % self.grid_cols) * self.b)
    }

    pub fn gather(&self, x: &[f64], i: usize) -> Vec<f64> {
        let (r0, c0) = self.origin(i);
        let w = self.width();
        let mut out = Vec::with_capacity(self.b * self.b);
        for r in r0..r0 + self.b {
            out.extend_from_slice(&x[r * w + c0..r * w + c0 + self.b]);
        }
        out
    }

    pub fn scatter(&self, x: &mut [f64], i: usize, block: &[f64]) {
        let (r0, c0) = self.origin(i);
        let w = self.width();
        for (k, r) in (r0..r0 + self.b).enumerate() {
            x[r * w + c0..r * w + c0 + self.b].copy_from_slice(&block[k * self.b..(k + 1) * self.b]);
        }
    }

    pub fn add_block(&self, x: &mut [f64], i: usize, block: &[f64]) {
        let (r0, c0) = self.origin(i);
        let w = self.width();
        for (k, r) in (r0..r0 + self.b).enumerate() {
            for (a, v) in x[r * w + c0..r * w + c0 + self.b].iter_mut().zip(&block[k * self.b..]) {
                *a += v;
            }
        }
    }

    /// Whether `(r, c)` lies in the original image rather than the padding.
    pub fn inside(&self, r: usize, c: usize) -> bool {
        r < self.orig_height && c < self.orig_width
    }

    pub fn crop_to_image(&self, x: &[f64]) -> Image {
        let w = self.width();
        Image::from_fn(self.orig_height, self.orig_width, |r, c| x[r * w + c] * PIXEL_SCALE)
    }
}
