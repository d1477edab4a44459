//! Separable 2-D transforms: the orthonormal DCT-II pair and the complex FFT.
//!
//! The DCT uses the half-length reordering trick so every length costs one
//! complex FFT of the same length. Plans are cached per thread.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::linalg::Matrix;

pub type C64 = Complex<f64>;

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

struct DctPlan {
    n: usize,
    ffts: FftPair,
    /// `exp(-iπk/2N)`.
    twiddle: Vec<C64>,
    scale0: f64,
    scale: f64,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static DCT_PLANS: RefCell<HashMap<usize, Rc<DctPlan>>> = RefCell::new(HashMap::new());
}

fn fft_pair(n: usize) -> FftPair {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        FftPair {
            forward: p.plan_fft_forward(n),
            inverse: p.plan_fft_inverse(n),
        }
    })
}

fn dct_plan(n: usize) -> Rc<DctPlan> {
    DCT_PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let nf = n as f64;
                Rc::new(DctPlan {
                    n,
                    ffts: fft_pair(n),
                    twiddle: (0..n)
                        .map(|k| C64::from_polar(1.0, -PI * k as f64 / (2.0 * nf)))
                        .collect(),
                    scale0: (1.0 / nf).sqrt(),
                    scale: (2.0 / nf).sqrt(),
                })
            })
            .clone()
    })
}

impl DctPlan {
    fn forward(&self, x: &mut [f64], buf: &mut [C64]) {
        let n = self.n;
        let buf = &mut buf[..n];
        let half = n.div_ceil(2);
        for k in 0..half {
            buf[k] = C64::new(x[2 * k], 0.0);
        }
        for k in 0..n / 2 {
            buf[n - 1 - k] = C64::new(x[2 * k + 1], 0.0);
        }
        self.ffts.forward.process(buf);
        for k in 0..n {
            let c = (buf[k] * self.twiddle[k]).re;
            x[k] = c * if k == 0 { self.scale0 } else { self.scale };
        }
    }

    fn inverse(&self, x: &mut [f64], buf: &mut [C64]) {
        let n = self.n;
        let buf = &mut buf[..n];
        let unscale = |k: usize| {
            if k == 0 {
                x[0] / self.scale0
            } else {
                x[k] / self.scale
            }
        };
        for k in 0..n {
            let ck = unscale(k);
            let cnk = if k == 0 { 0.0 } else { unscale(n - k) };
            buf[k] = self.twiddle[k].conj() * C64::new(ck, -cnk);
        }
        self.ffts.inverse.process(buf);
        let inv_n = 1.0 / n as f64;
        let half = n.div_ceil(2);
        for k in 0..half {
            x[2 * k] = buf[k].re * inv_n;
        }
        for k in 0..n / 2 {
            x[2 * k + 1] = buf[n - 1 - k].re * inv_n;
        }
    }
}

fn dct_rows_cols(data: &mut [f64], rows: usize, cols: usize, inverse: bool) {
    if rows == 0 || cols == 0 {
        return;
    }
    let row_plan = dct_plan(cols);
    let col_plan = dct_plan(rows);
    let mut buf = vec![C64::default(); rows.max(cols)];
    for r in 0..rows {
        let line = &mut data[r * cols..(r + 1) * cols];
        if inverse {
            row_plan.inverse(line, &mut buf);
        } else {
            row_plan.forward(line, &mut buf);
        }
    }
    let mut col = vec![0.0; rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        if inverse {
            col_plan.inverse(&mut col, &mut buf);
        } else {
            col_plan.forward(&mut col, &mut buf);
        }
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
}

/// In-place orthonormal 2-D DCT-II of a row-major `rows×cols` array.
pub fn dct2_in_place(data: &mut [f64], rows: usize, cols: usize) {
    assert_eq!(data.len(), rows * cols, "buffer does not match dimensions");
    dct_rows_cols(data, rows, cols, false);
}

/// In-place inverse of [`dct2_in_place`].
pub fn idct2_in_place(data: &mut [f64], rows: usize, cols: usize) {
    assert_eq!(data.len(), rows * cols, "buffer does not match dimensions");
    dct_rows_cols(data, rows, cols, true);
}

/// Orthonormal separable 2-D DCT-II.
pub fn dct2(img: &Matrix) -> Matrix {
    let mut out = img.clone();
    let (r, c) = out.shape();
    dct2_in_place(out.as_mut_slice(), r, c);
    out
}

/// Inverse of [`dct2`].
pub fn idct2(coef: &Matrix) -> Matrix {
    let mut out = coef.clone();
    let (r, c) = out.shape();
    idct2_in_place(out.as_mut_slice(), r, c);
    out
}

/// Orthonormal DCT-II basis: entry `(k, p)` is the weight of sample `p` in
/// coefficient `k`.
pub fn dct_basis(n: usize) -> Matrix {
    let nf = n as f64;
    let mut m = Matrix::zeros(n, n);
    for k in 0..n {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for p in 0..n {
            m[(k, p)] = s * (PI * (2 * p + 1) as f64 * k as f64 / (2.0 * nf)).cos();
        }
    }
    m
}

fn fft2_impl(data: &mut [C64], rows: usize, cols: usize, inverse: bool) {
    if rows == 0 || cols == 0 {
        return;
    }
    let row_fft = fft_pair(cols);
    let col_fft = fft_pair(rows);
    let pick = |p: &FftPair| {
        if inverse {
            p.inverse.clone()
        } else {
            p.forward.clone()
        }
    };
    let (rf, cf) = (pick(&row_fft), pick(&col_fft));
    rf.process(data);
    let mut col = vec![C64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        cf.process(&mut col);
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
    if inverse {
        let s = 1.0 / (rows * cols) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Unnormalized forward 2-D DFT, in place.
pub fn fft2(data: &mut [C64], rows: usize, cols: usize) {
    assert_eq!(data.len(), rows * cols, "buffer does not match dimensions");
    fft2_impl(data, rows, cols, false);
}

/// Inverse 2-D DFT including the `1/(rows·cols)` factor, in place.
pub fn ifft2(data: &mut [C64], rows: usize, cols: usize) {
    assert_eq!(data.len(), rows * cols, "buffer does not match dimensions");
    fft2_impl(data, rows, cols, true);
}
