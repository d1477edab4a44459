//! Multi-channel block sampling: one Gaussian measurement matrix per rate,
//! blocks routed to channels, and the pseudo-inverse initial estimate.

use serde::{Deserialize, Serialize};

use crate::allocation::RateAssignment;
use crate::error::{invalid_arg, shape_err, Result};
use crate::image::{partition, Image};
use crate::linalg::{
    gauss_matrix, orthonormalize_rows, penrose_residual, pseudo_inverse, Matrix, DEFAULT_RCOND,
};
use crate::rng::{Rng, Stream};

/// Seven channels from 1% to 40%.
pub const DEFAULT_RATES: [f64; 7] = [0.01, 0.03, 0.05, 0.1, 0.2, 0.3, 0.4];

/// The measurement matrices of every channel with their pseudo-inverses.
#[derive(Debug, Clone)]
pub struct ChannelBank {
    block_size: usize,
    rates: Vec<f64>,
    matrices: Vec<Matrix>,
    pinvs: Vec<Matrix>,
    orthonormal: bool,
}

/// Number of measurements a channel of rate `s` takes from `n` pixels.
pub fn measurement_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).max(1)
}

fn validate_rates(rates: &[f64], n: usize) -> Result<Vec<usize>> {
    if rates.is_empty() {
        return Err(invalid_arg!("at least one channel rate is required"));
    }
    for &s in rates {
        if !(s > 0.0 && s <= 1.0) {
            return Err(invalid_arg!("channel rate {s} is outside (0, 1]"));
        }
    }
    let counts: Vec<usize> = rates.iter().map(|&s| measurement_count(s, n)).collect();
    for i in 1..rates.len() {
        if rates[i] <= rates[i - 1] || counts[i] <= counts[i - 1] {
            return Err(invalid_arg!(
                "channel rates must be strictly ascending with distinct measurement counts \
                 ({} -> {} gives {} -> {})",
                rates[i - 1],
                rates[i],
                counts[i - 1],
                counts[i]
            ));
        }
    }
    Ok(counts)
}

/// Draws one Gaussian matrix per rate from `rng`, in channel order, and
/// caches the pseudo-inverses. With `orthonormal` the rows are
/// orthonormalized and the pseudo-inverse is the transpose.
pub fn build_channel_bank(
    rng: &mut Rng,
    block_size: usize,
    rates: &[f64],
    orthonormal: bool,
) -> Result<ChannelBank> {
    if block_size < 2 {
        return Err(invalid_arg!("block size must be at least 2, got {block_size}"));
    }
    let n = block_size * block_size;
    let counts = validate_rates(rates, n)?;
    let mut matrices = Vec::with_capacity(rates.len());
    let mut pinvs = Vec::with_capacity(rates.len());
    for &m in &counts {
        let g = gauss_matrix(rng, m, n);
        if orthonormal {
            let q = orthonormalize_rows(&g)?;
            pinvs.push(q.transpose());
            matrices.push(q);
        } else {
            pinvs.push(pseudo_inverse(&g, DEFAULT_RCOND)?);
            matrices.push(g);
        }
    }
    Ok(ChannelBank {
        block_size,
        rates: rates.to_vec(),
        matrices,
        pinvs,
        orthonormal,
    })
}

impl ChannelBank {
    /// Wraps externally supplied matrices, computing their pseudo-inverses.
    pub fn from_matrices(block_size: usize, rates: &[f64], matrices: Vec<Matrix>) -> Result<Self> {
        let n = block_size * block_size;
        let counts = validate_rates(rates, n)?;
        if matrices.len() != rates.len() {
            return Err(shape_err!(
                "{} rates but {} matrices",
                rates.len(),
                matrices.len()
            ));
        }
        let mut pinvs = Vec::with_capacity(matrices.len());
        for (j, (mat, &m)) in matrices.iter().zip(&counts).enumerate() {
            if mat.shape() != (m, n) {
                return Err(shape_err!(
                    "channel {j} matrix is {:?}, expected ({m}, {n})",
                    mat.shape()
                ));
            }
            pinvs.push(pseudo_inverse(mat, DEFAULT_RCOND)?);
        }
        Ok(ChannelBank {
            block_size,
            rates: rates.to_vec(),
            matrices,
            pinvs,
            orthonormal: false,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Pixels per block, `B²`.
    pub fn block_len(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn num_channels(&self) -> usize {
        self.rates.len()
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Rows of channel `j`'s matrix.
    pub fn m(&self, j: usize) -> usize {
        self.matrices[j].rows()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.matrices.iter().map(Matrix::rows).collect()
    }

    pub fn matrix(&self, j: usize) -> Result<&Matrix> {
        self.check_channel(j)?;
        Ok(&self.matrices[j])
    }

    pub fn pinv(&self, j: usize) -> Result<&Matrix> {
        self.check_channel(j)?;
        Ok(&self.pinvs[j])
    }

    /// Index of the channel whose rate equals `rate` up to `1e-9`.
    pub fn channel_for_rate(&self, rate: f64) -> Option<usize> {
        self.rates.iter().position(|&s| (s - rate).abs() < 1e-9)
    }

    /// Largest first Penrose residual over all channels.
    pub fn max_penrose_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (a, p) in self.matrices.iter().zip(&self.pinvs) {
            worst = worst.max(penrose_residual(a, p)?);
        }
        Ok(worst)
    }

    fn check_channel(&self, j: usize) -> Result<()> {
        if j >= self.rates.len() {
            return Err(invalid_arg!(
                "channel {j} does not exist ({} channels)",
                self.rates.len()
            ));
        }
        Ok(())
    }

    fn check_block(&self, block: &Image) -> Result<()> {
        let b = self.block_size;
        if block.dims() != (b, b) {
            return Err(shape_err!(
                "block is {}x{}, expected {b}x{b}",
                block.height,
                block.width
            ));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a bank deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSpec {
    pub block_size: usize,
    pub rates: Vec<f64>,
    pub orthonormal: bool,
    pub seed: u64,
}

impl BankSpec {
    pub fn build(&self) -> Result<ChannelBank> {
        let mut rng = Rng::stream(self.seed, Stream::Matrices);
        build_channel_bank(&mut rng, self.block_size, &self.rates, self.orthonormal)
    }
}

/// `y = Φ_j · vec(block)` with row-major vectorization.
pub fn sample_block(bank: &ChannelBank, j: usize, block: &Image) -> Result<Vec<f64>> {
    bank.check_block(block)?;
    bank.matrix(j)?.matvec(&block.data)
}

/// Measurement vector of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMeasurement {
    pub block_index: usize,
    pub channel: usize,
    pub y: Vec<f64>,
}

/// Per-block measurements together with the block geometry of the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub block_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub orig_height: usize,
    pub orig_width: usize,
    pub entries: Vec<BlockMeasurement>,
}

impl Measurements {
    pub fn num_blocks(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.y.len()).sum()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.channel).collect()
    }

    /// Checks that the entries cover every block once, in order, with
    /// vector lengths matching their channels.
    pub fn validate(&self, bank: &ChannelBank) -> Result<()> {
        if self.block_size != bank.block_size() {
            return Err(shape_err!(
                "measurements use {}-pixel blocks, bank uses {}",
                self.block_size,
                bank.block_size()
            ));
        }
        if self.entries.len() != self.num_blocks() {
            return Err(shape_err!(
                "{} entries for a {}x{} block grid",
                self.entries.len(),
                self.grid_rows,
                self.grid_cols
            ));
        }
        if self.grid_rows * self.block_size < self.orig_height
            || self.grid_cols * self.block_size < self.orig_width
        {
            return Err(shape_err!("block grid does not cover the image"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.block_index != i {
                return Err(shape_err!("entry {i} carries block index {}", e.block_index));
            }
            bank.check_channel(e.channel)?;
            if e.y.len() != bank.m(e.channel) {
                return Err(shape_err!(
                    "block {i}: {} measurements for channel {} which takes {}",
                    e.y.len(),
                    e.channel,
                    bank.m(e.channel)
                ));
            }
        }
        Ok(())
    }
}

/// Samples every block of `img` through its assigned channel.
pub fn sample_image(
    bank: &ChannelBank,
    assignment: &RateAssignment,
    img: &Image,
) -> Result<Measurements> {
    let grid = partition(img, bank.block_size())?;
    if assignment.channels.len() != grid.len() {
        return Err(shape_err!(
            "assignment covers {} blocks, image has {}",
            assignment.channels.len(),
            grid.len()
        ));
    }
    let entries = grid
        .blocks
        .iter()
        .zip(&assignment.channels)
        .enumerate()
        .map(|(i, (blk, &j))| {
            Ok(BlockMeasurement {
                block_index: i,
                channel: j,
                y: sample_block(bank, j, blk)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Measurements {
        block_size: grid.block_size,
        grid_rows: grid.grid_rows,
        grid_cols: grid.grid_cols,
        orig_height: grid.orig_height,
        orig_width: grid.orig_width,
        entries,
    })
}

/// Minimum-norm least-squares block `reshape(Φ_j* · y)`.
pub fn init_block(bank: &ChannelBank, j: usize, y: &[f64]) -> Result<Image> {
    let x = bank.pinv(j)?.matvec(y)?;
    let b = bank.block_size();
    Image::new(b, b, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::linalg::{matmul, norm2};
    use proptest::prelude::*;

    fn random_block(seed: u64, b: usize) -> Image {
        let mut rng = Rng::new(seed);
        Image::from_fn(b, b, |_, _| 255.0 * rng.uniform())
    }

    #[test]
    fn seven_channel_counts() {
        let mut rng = Rng::new(1);
        let bank = build_channel_bank(&mut rng, 32, &DEFAULT_RATES, false).unwrap();
        assert_eq!(bank.num_channels(), 7);
        assert_eq!(bank.counts(), vec![10, 31, 51, 102, 205, 307, 410]);
        assert!(bank.max_penrose_residual().unwrap() < 1e-8);
    }

    #[test]
    fn rejects_bad_rates() {
        let mut rng = Rng::new(1);
        assert!(build_channel_bank(&mut rng, 8, &[0.1, 0.1], false).is_err());
        assert!(build_channel_bank(&mut rng, 8, &[0.2, 0.1], false).is_err());
        assert!(build_channel_bank(&mut rng, 8, &[0.0, 0.1], false).is_err());
        assert!(build_channel_bank(&mut rng, 8, &[0.5, 1.5], false).is_err());
        assert!(build_channel_bank(&mut rng, 8, &[], false).is_err());
        // 0.01 and 0.02 both round to one measurement of an 8x8 block.
        assert!(build_channel_bank(&mut rng, 8, &[0.01, 0.02], false).is_err());
    }

    #[test]
    fn full_rate_orthonormal_channel() {
        let mut rng = Rng::new(2);
        let bank = build_channel_bank(&mut rng, 8, &[1.0], true).unwrap();
        let phi = bank.matrix(0).unwrap();
        let pinv = bank.pinv(0).unwrap();
        let ppt = matmul(phi, &phi.transpose()).unwrap();
        assert!(ppt.sub(&Matrix::identity(64)).unwrap().frobenius_norm() < 1e-8);
        let svd_pinv = pseudo_inverse(phi, DEFAULT_RCOND).unwrap();
        assert!(svd_pinv.sub(pinv).unwrap().frobenius_norm() < 1e-8);

        let x = random_block(3, 8);
        let y = sample_block(&bank, 0, &x).unwrap();
        assert!((norm2(&y) - norm2(&x.data)).abs() < 1e-9);
        let back = init_block(&bank, 0, &y).unwrap();
        assert!(back.data.iter().zip(&x.data).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn sample_block_errors_and_zero() {
        let bank = BankSpec { block_size: 8, rates: vec![0.25], orthonormal: false, seed: 1 }
            .build()
            .unwrap();
        assert!(sample_block(&bank, 0, &Image::zeros(8, 8)).unwrap().iter().all(|&v| v == 0.0));
        assert!(sample_block(&bank, 1, &Image::zeros(8, 8)).is_err());
        assert!(sample_block(&bank, 0, &Image::zeros(8, 7)).is_err());
        assert!(init_block(&bank, 0, &[0.0; 3]).is_err());
        assert!(init_block(&bank, 0, &[0.0; 16]).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_image_counts() {
        let bank = BankSpec { block_size: 32, rates: DEFAULT_RATES.to_vec(), orthonormal: false, seed: 4 }
            .build()
            .unwrap();
        let j = bank.channel_for_rate(0.1).unwrap();
        let asg = RateAssignment::uniform(&bank, j, 9);
        let img = Image::from_fn(96, 96, |r, c| (r + c) as f64);
        let meas = sample_image(&bank, &asg, &img).unwrap();
        assert_eq!(meas.entries.len(), 9);
        assert!(meas.entries.iter().all(|e| e.y.len() == 102));
        assert_eq!(meas.total_count(), 9 * 102);
        meas.validate(&bank).unwrap();

        let zero = sample_image(&bank, &asg, &Image::zeros(96, 96)).unwrap();
        assert!(zero.entries.iter().all(|e| e.y.iter().all(|&v| v == 0.0)));

        let short = RateAssignment::uniform(&bank, j, 4);
        assert!(sample_image(&bank, &short, &img).is_err());
    }

    #[test]
    fn bank_is_deterministic() {
        let spec = BankSpec { block_size: 8, rates: vec![0.1, 0.5], orthonormal: true, seed: 9 };
        let a = spec.build().unwrap();
        let b = spec.build().unwrap();
        for j in 0..2 {
            assert_eq!(a.matrix(j).unwrap(), b.matrix(j).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn sampling_is_linear(s1 in any::<u64>(), s2 in any::<u64>()) {
            let bank = BankSpec { block_size: 8, rates: vec![0.3], orthonormal: false, seed: 5 }.build().unwrap();
            let a = random_block(s1, 8);
            let b = random_block(s2, 8);
            let sum = Image::new(8, 8, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect()).unwrap();
            let ya = sample_block(&bank, 0, &a).unwrap();
            let yb = sample_block(&bank, 0, &b).unwrap();
            let ys = sample_block(&bank, 0, &sum).unwrap();
            for i in 0..ys.len() {
                prop_assert!((ys[i] - ya[i] - yb[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn init_reproduces_measurements(seed in any::<u64>(), ortho in any::<bool>()) {
            let bank = BankSpec { block_size: 8, rates: vec![0.1, 0.4], orthonormal: ortho, seed }.build().unwrap();
            let x = random_block(seed ^ 1, 8);
            for j in 0..2 {
                let y = sample_block(&bank, j, &x).unwrap();
                let x0 = init_block(&bank, j, &y).unwrap();
                let y0 = sample_block(&bank, j, &x0).unwrap();
                for (a, b) in y.iter().zip(&y0) {
                    prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
                }
            }
        }
    }
}
