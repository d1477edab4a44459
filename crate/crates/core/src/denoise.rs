//! Full-image denoisers parameterized by a noise level, and the Monte-Carlo
//! divergence estimate that message-passing iterations need.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::transform::{dct2_in_place, dct_basis, idct2_in_place};

pub const DEFAULT_HARD_TAU: f64 = 2.7;
pub const DEFAULT_SOFT_TAU: f64 = 2.0;

/// A denoiser `D_σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DenoiserKind {
    /// Global DCT; coefficients below `tau·σ` in magnitude are zeroed.
    HardDct { tau: f64 },
    /// Global DCT; coefficients shrink towards zero by `tau·σ`.
    SoftDct { tau: f64 },
    /// Non-local means with filter strength `h_factor·σ`.
    Nlm {
        patch: usize,
        search: usize,
        h_factor: f64,
    },
}

impl Default for DenoiserKind {
    fn default() -> Self {
        DenoiserKind::HardDct {
            tau: DEFAULT_HARD_TAU,
        }
    }
}

impl DenoiserKind {
    pub fn soft_dct() -> Self {
        DenoiserKind::SoftDct {
            tau: DEFAULT_SOFT_TAU,
        }
    }

    pub fn nlm() -> Self {
        DenoiserKind::Nlm {
            patch: 7,
            search: 21,
            h_factor: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserKind::HardDct { tau } | DenoiserKind::SoftDct { tau } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(invalid_arg!("threshold multiplier must be positive, got {tau}"));
                }
            }
            DenoiserKind::Nlm {
                patch,
                search,
                h_factor,
            } => {
                if patch % 2 == 0 || search % 2 == 0 || patch == 0 || search < patch {
                    return Err(invalid_arg!(
                        "NLM windows must be odd with search >= patch, got {patch}/{search}"
                    ));
                }
                if !(h_factor > 0.0) {
                    return Err(invalid_arg!("NLM filter factor must be positive"));
                }
            }
        }
        Ok(())
    }

    /// True for the transform-domain variants.
    pub fn is_dct(&self) -> bool {
        !matches!(self, DenoiserKind::Nlm { .. })
    }

    /// Absolute coefficient threshold at noise level `sigma`, if any.
    fn threshold(&self, sigma: f64) -> Option<f64> {
        match *self {
            DenoiserKind::HardDct { tau } | DenoiserKind::SoftDct { tau } => Some(tau * sigma),
            DenoiserKind::Nlm { .. } => None,
        }
    }
}

/// Applies `D_σ` to the whole image.
pub fn denoise(img: &Image, sigma: f64, kind: &DenoiserKind) -> Image {
    match *kind {
        DenoiserKind::HardDct { tau } => hard_threshold(img, tau * sigma.max(0.0)),
        DenoiserKind::SoftDct { tau } => soft_threshold(img, tau * sigma.max(0.0)),
        DenoiserKind::Nlm {
            patch,
            search,
            h_factor,
        } => nlm(img, sigma, patch, search, h_factor),
    }
}

fn dct_shrink(img: &Image, f: impl Fn(f64) -> f64) -> Image {
    let mut out = img.clone();
    let (h, w) = img.dims();
    dct2_in_place(&mut out.data, h, w);
    for c in out.data.iter_mut().skip(1) {
        *c = f(*c);
    }
    idct2_in_place(&mut out.data, h, w);
    out
}

/// Zeroes every AC coefficient of the global DCT with `|c| < lambda`.
pub fn hard_threshold(img: &Image, lambda: f64) -> Image {
    if lambda <= 0.0 {
        return img.clone();
    }
    dct_shrink(img, |c| if c.abs() < lambda { 0.0 } else { c })
}

/// Shrinks every AC coefficient of the global DCT by `lambda`.
pub fn soft_threshold(img: &Image, lambda: f64) -> Image {
    if lambda <= 0.0 {
        return img.clone();
    }
    dct_shrink(img, |c| c.signum() * (c.abs() - lambda).max(0.0))
}

/// Global DCT coefficients that pass the threshold at `sigma`, the DC term
/// included. `None` for denoisers without a coefficient mask.
pub fn survivor_mask(img: &Image, sigma: f64, kind: &DenoiserKind) -> Option<Vec<bool>> {
    let lambda = kind.threshold(sigma.max(0.0))?;
    let mut coef = img.data.clone();
    dct2_in_place(&mut coef, img.height, img.width);
    let hard = matches!(kind, DenoiserKind::HardDct { .. });
    let mut mask: Vec<bool> = coef
        .iter()
        .map(|c| if hard { c.abs() >= lambda } else { c.abs() > lambda })
        .collect();
    if let Some(dc) = mask.first_mut() {
        *dc = true;
    }
    Some(mask)
}

/// Number of coefficients a DCT denoiser keeps at `sigma`.
pub fn surviving_coefficients(img: &Image, sigma: f64, kind: &DenoiserKind) -> Option<usize> {
    survivor_mask(img, sigma, kind).map(|m| m.iter().filter(|&&k| k).count())
}

/// Non-local means: each pixel becomes a weighted mean over a search window,
/// weights `exp(-max(d² − 2σ², 0) / h²)` from the mean squared difference
/// `d²` of the surrounding patches. Borders are mirrored.
fn nlm(img: &Image, sigma: f64, patch: usize, search: usize, h_factor: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (h, w) = img.dims();
    let pr = (patch / 2) as isize;
    let sr = (search / 2) as isize;
    let hh = (h_factor * sigma).powi(2);
    let two_var = 2.0 * sigma * sigma;
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if n == 1 {
            return 0;
        }
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    let px = |r: isize, c: isize| img.get(mirror(r, h), mirror(c, w));
    let npatch = (patch * patch) as f64;
    Image::from_fn(h, w, |r, c| {
        let (r, c) = (r as isize, c as isize);
        let (mut acc, mut wsum) = (0.0, 0.0);
        for dr in -sr..=sr {
            for dc in -sr..=sr {
                let mut d2 = 0.0;
                for pr_ in -pr..=pr {
                    for pc in -pr..=pr {
                        let diff = px(r + pr_, c + pc) - px(r + dr + pr_, c + dc + pc);
                        d2 += diff * diff;
                    }
                }
                let wt = (-((d2 / npatch - two_var).max(0.0)) / hh).exp();
                acc += wt * px(r + dr, c + dc);
                wsum += wt;
            }
        }
        acc / wsum
    })
}

/// Default probe step `‖x‖_∞·1e-3 + 1e-6`.
pub fn default_probe_eps(img: &Image) -> f64 {
    img.max_abs() * 1e-3 + 1e-6
}

/// Monte-Carlo estimate of `div D(x) = tr ∂D/∂x` for any map `d`:
/// the mean over probes of `ηᵀ(D(x + εη) − D(x))/ε` with standard normal η.
pub fn divergence_mc_with(
    d: impl Fn(&Image) -> Image,
    x: &Image,
    probes: usize,
    eps: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if probes == 0 {
        return Err(invalid_arg!("at least one probe is required"));
    }
    if !(eps > 0.0) {
        return Err(invalid_arg!("probe step must be positive, got {eps}"));
    }
    let base = d(x);
    let mut total = 0.0;
    for _ in 0..probes {
        let eta = rng.normals(x.len());
        let mut shifted = x.clone();
        for (v, e) in shifted.data.iter_mut().zip(&eta) {
            *v += eps * e;
        }
        let moved = d(&shifted);
        total += eta
            .iter()
            .zip(moved.data.iter().zip(&base.data))
            .map(|(e, (a, b))| e * (a - b))
            .sum::<f64>()
            / eps;
    }
    Ok(total / probes as f64)
}

/// Monte-Carlo divergence of `D_σ` at `img`.
pub fn divergence_mc(
    kind: &DenoiserKind,
    img: &Image,
    sigma: f64,
    probes: usize,
    eps: f64,
    rng: &mut Rng,
) -> Result<f64> {
    divergence_mc_with(|x| denoise(x, sigma, kind), img, probes, eps, rng)
}

/// How a full-image divergence is split among blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceSplit {
    /// Coefficient mass for DCT denoisers, pixel count otherwise.
    #[default]
    Auto,
    /// Each block's share of the Jacobian diagonal of a coefficient mask.
    CoefficientMass,
    /// Equal shares per block.
    PixelCount,
}

/// Splits a full-image divergence among the blocks of a `B`-tiled canvas.
///
/// For a DCT mask denoiser the Jacobian is `Cᵀ diag(M) C`, so its diagonal
/// at pixel `(a, b)` is `Σ_kl M_kl C_ka² C_lb²`. Summing that over a block
/// gives the block's share; shares add up to one.
#[derive(Debug, Clone)]
pub struct DivergenceSplitter {
    height: usize,
    width: usize,
    grid_rows: usize,
    grid_cols: usize,
    /// `row_mass[k·grid_rows + br] = Σ_{a ∈ block row br} C_ka²`.
    row_mass: Vec<f64>,
    col_mass: Vec<f64>,
    mode: DivergenceSplit,
}

fn band_mass(n: usize, b: usize) -> Vec<f64> {
    let basis = dct_basis(n);
    let g = n / b;
    let mut out = vec![0.0; n * g];
    for k in 0..n {
        for (a, v) in basis.row(k).iter().enumerate() {
            out[k * g + a / b] += v * v;
        }
    }
    out
}

impl DivergenceSplitter {
    /// `height` and `width` must be multiples of `block_size`.
    pub fn new(
        height: usize,
        width: usize,
        block_size: usize,
        kind: &DenoiserKind,
        split: DivergenceSplit,
    ) -> Result<Self> {
        if block_size == 0 || !height.is_multiple_of(block_size) || !width.is_multiple_of(block_size) {
            return Err(invalid_arg!(
                "{height}x{width} canvas is not tiled by {block_size}-pixel blocks"
            ));
        }
        let mode = match (split, kind.is_dct()) {
            (DivergenceSplit::Auto, true) => DivergenceSplit::CoefficientMass,
            (DivergenceSplit::Auto, false) => DivergenceSplit::PixelCount,
            (DivergenceSplit::CoefficientMass, false) => {
                return Err(invalid_arg!(
                    "coefficient-mass splitting needs a DCT denoiser"
                ))
            }
            (m, _) => m,
        };
        let (row_mass, col_mass) = if mode == DivergenceSplit::CoefficientMass {
            (band_mass(height, block_size), band_mass(width, block_size))
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(DivergenceSplitter {
            height,
            width,
            grid_rows: height / block_size,
            grid_cols: width / block_size,
            row_mass,
            col_mass,
            mode,
        })
    }

    pub fn mode(&self) -> DivergenceSplit {
        self.mode
    }

    /// Row-major block shares for denoising `img` at `sigma`.
    pub fn shares(&self, img: &Image, sigma: f64, kind: &DenoiserKind) -> Result<Vec<f64>> {
        if img.dims() != (self.height, self.width) {
            return Err(invalid_arg!(
                "splitter built for {}x{}, got {}x{}",
                self.height,
                self.width,
                img.height,
                img.width
            ));
        }
        let nblocks = self.grid_rows * self.grid_cols;
        let mask = match self.mode {
            DivergenceSplit::CoefficientMass => survivor_mask(img, sigma, kind),
            _ => None,
        };
        let Some(mask) = mask else {
            return Ok(vec![1.0 / nblocks as f64; nblocks]);
        };
        let (gr, gc) = (self.grid_rows, self.grid_cols);
        // tmp[k][bc] = Σ_l M_kl · col_mass[l][bc]
        let mut tmp = vec![0.0; self.height * gc];
        for k in 0..self.height {
            let out = &mut tmp[k * gc..(k + 1) * gc];
            for l in 0..self.width {
                if mask[k * self.width + l] {
                    for (o, v) in out.iter_mut().zip(&self.col_mass[l * gc..(l + 1) * gc]) {
                        *o += v;
                    }
                }
            }
        }
        let mut shares = vec![0.0; nblocks];
        for k in 0..self.height {
            for br in 0..gr {
                let rm = self.row_mass[k * gr + br];
                for bc in 0..gc {
                    shares[br * gc + bc] += rm * tmp[k * gc + bc];
                }
            }
        }
        let total: f64 = shares.iter().sum();
        shares.iter_mut().for_each(|s| *s /= total);
        Ok(shares)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mse;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn smooth(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| {
            100.0 + 50.0 * (r as f64 / 7.0).sin() + 30.0 * (c as f64 / 5.0).cos()
                + if r > h / 2 && c < w / 3 { 40.0 } else { 0.0 }
        })
    }

    fn add_noise(img: &Image, sigma: f64, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        Image::new(img.height, img.width, img.data.iter().map(|v| v + sigma * rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = add_noise(&smooth(16, 20), 10.0, 1);
        for kind in [DenoiserKind::default(), DenoiserKind::soft_dct(), DenoiserKind::nlm()] {
            let y = denoise(&x, 0.0, &kind);
            assert!(y.data.iter().zip(&x.data).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn constants_survive() {
        let x = Image::filled(12, 12, 77.0);
        for kind in [DenoiserKind::default(), DenoiserKind::soft_dct(), DenoiserKind::nlm()] {
            let y = denoise(&x, 30.0, &kind);
            assert!(y.data.iter().all(|v| (v - 77.0).abs() < 1e-10));
        }
    }

    #[test]
    fn hard_dct_reduces_noise() {
        let clean = smooth(64, 64);
        let noisy = add_noise(&clean, 25.0, 2);
        let out = denoise(&noisy, 25.0, &DenoiserKind::default());
        let before = mse(&noisy, &clean).unwrap();
        let after = mse(&out, &clean).unwrap();
        assert!(after < 0.5 * before, "{after} vs {before}");
    }

    #[test]
    fn nlm_reduces_noise() {
        let clean = smooth(24, 24);
        let noisy = add_noise(&clean, 20.0, 3);
        let out = denoise(&noisy, 20.0, &DenoiserKind::nlm());
        assert!(mse(&out, &clean).unwrap() < mse(&noisy, &clean).unwrap());
    }

    #[test]
    fn hard_threshold_cases() {
        let x = add_noise(&smooth(16, 16), 5.0, 4);
        assert_eq!(hard_threshold(&x, 0.0), x);
        let big = hard_threshold(&x, 1e9);
        assert!(big.data.iter().all(|v| (v - x.mean()).abs() < 1e-9));
        for lambda in [5.0, 20.0, 80.0] {
            let once = hard_threshold(&x, lambda);
            let twice = hard_threshold(&once, lambda);
            assert!(once.data.iter().zip(&twice.data).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn means_are_preserved() {
        let x = add_noise(&smooth(20, 28), 15.0, 5);
        for kind in [DenoiserKind::default(), DenoiserKind::soft_dct()] {
            assert!((denoise(&x, 15.0, &kind).mean() - x.mean()).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_of_linear_maps() {
        let x = add_noise(&smooth(16, 16), 10.0, 6);
        let mut rng = Rng::new(7);
        let a = 0.7;
        let scale = |img: &Image| {
            Image::new(img.height, img.width, img.data.iter().map(|v| a * v).collect()).unwrap()
        };
        let est = divergence_mc_with(scale, &x, 64, default_probe_eps(&x), &mut rng).unwrap();
        assert!((est - a * 256.0).abs() < 0.1 * a * 256.0, "{est}");
        let est = divergence_mc_with(|i| i.clone(), &x, 64, 1e-3, &mut rng).unwrap();
        assert!((est - 256.0).abs() < 25.6, "{est}");
        assert!(divergence_mc_with(|i| i.clone(), &x, 0, 1e-3, &mut rng).is_err());
        assert!(divergence_mc_with(|i| i.clone(), &x, 1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn hard_dct_divergence_matches_brute_force() {
        // Coefficients sit far from the threshold 27 so probes never flip one.
        let (n, sigma) = (16, 10.0);
        let mut rng = Rng::new(8);
        let mut coef: Vec<f64> = (0..n * n).map(|_| 3.0 * rng.normal()).collect();
        for k in 0..20 {
            coef[(k * 37) % (n * n)] = if k % 2 == 0 { 150.0 } else { -90.0 };
        }
        coef[0] = 128.0 * n as f64;
        idct2_in_place(&mut coef, n, n);
        let x = Image::new(n, n, coef).unwrap();
        let kind = DenoiserKind::default();
        let eps = default_probe_eps(&x);
        let base = denoise(&x, sigma, &kind);
        let mut brute = 0.0;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data[i] += eps;
            brute += (denoise(&p, sigma, &kind).data[i] - base.data[i]) / eps;
        }
        let survivors = surviving_coefficients(&x, sigma, &kind).unwrap() as f64;
        assert!((brute - survivors).abs() <= 0.15 * survivors);
        let mc = divergence_mc(&kind, &x, sigma, 64, eps, &mut Rng::new(9)).unwrap();
        assert!((mc - brute).abs() <= 0.15 * brute, "{mc} vs {brute}");
    }

    #[test]
    fn splitter_shares() {
        let x = add_noise(&smooth(32, 48), 10.0, 10);
        let kind = DenoiserKind::default();
        let s = DivergenceSplitter::new(32, 48, 16, &kind, DivergenceSplit::Auto).unwrap();
        assert_eq!(s.mode(), DivergenceSplit::CoefficientMass);
        let shares = s.shares(&x, 10.0, &kind).unwrap();
        assert_eq!(shares.len(), 6);
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // Oracle: diagonal of the explicit Jacobian Cᵀ diag(M) C.
        let mask = survivor_mask(&x, 10.0, &kind).unwrap();
        let (ch, cw) = (dct_basis(32), dct_basis(48));
        let mut diag = vec![0.0; 32 * 48];
        for a in 0..32 {
            for b in 0..48 {
                let mut acc = 0.0;
                for k in 0..32 {
                    for l in 0..48 {
                        if mask[k * 48 + l] {
                            acc += ch[(k, a)].powi(2) * cw[(l, b)].powi(2);
                        }
                    }
                }
                diag[a * 48 + b] = acc;
            }
        }
        let total: f64 = diag.iter().sum();
        assert!((total - mask.iter().filter(|&&m| m).count() as f64).abs() < 1e-9);
        for br in 0..2 {
            for bc in 0..3 {
                let mut part = 0.0;
                for a in br * 16..(br + 1) * 16 {
                    for b in bc * 16..(bc + 1) * 16 {
                        part += diag[a * 48 + b];
                    }
                }
                assert!((shares[br * 3 + bc] - part / total).abs() < 1e-12);
            }
        }

        let nlm = DenoiserKind::nlm();
        let s = DivergenceSplitter::new(32, 48, 16, &nlm, DivergenceSplit::Auto).unwrap();
        assert_eq!(s.shares(&x, 10.0, &nlm).unwrap(), vec![1.0 / 6.0; 6]);
        assert!(DivergenceSplitter::new(32, 48, 16, &nlm, DivergenceSplit::CoefficientMass).is_err());
        assert!(DivergenceSplitter::new(30, 48, 16, &kind, DivergenceSplit::Auto).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn soft_dct_is_nonexpansive(s1 in any::<u64>(), s2 in any::<u64>(), sigma in 0.0f64..40.0) {
            let kind = DenoiserKind::soft_dct();
            let a = add_noise(&smooth(12, 12), 30.0, s1);
            let b = add_noise(&smooth(12, 12), 30.0, s2);
            let (da, db) = (denoise(&a, sigma, &kind), denoise(&b, sigma, &kind));
            let before = mse(&a, &b).unwrap();
            let after = mse(&da, &db).unwrap();
            prop_assert!(after <= before * (1.0 + 1e-12) + 1e-12);
        }
    }
}
