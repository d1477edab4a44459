//! Dense row-major matrices and the handful of kernels the reconstruction
//! engines need: products, an SVD-backed pseudo-inverse, row
//! orthonormalization and seeded Gaussian matrices.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "cannot subtract {:?} from {:?}",
                other.shape(),
                self.shape()
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(shape_err!(
                "vector of length {} against {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(shape_err!(
                "vector of length {} against transpose of {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err!(
            "cannot multiply {}x{} by {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik != 0.0 {
                axpy(aik, b.row(k), out);
            }
        }
    }
    Ok(c)
}

/// Default relative cutoff for [`pseudo_inverse`].
pub const DEFAULT_RCOND: f64 = 1e-12;

/// Thin singular value decomposition `a = u · diag(s) · vt`.
///
/// For an `m×n` input with `r = min(m, n)`: `u` is `m×r`, `s` has length `r`
/// (unsorted), `vt` is `r×n`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

/// SVD by Householder LQ reduction followed by one-sided (Hestenes) Jacobi
/// on the square triangular factor.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    if a.rows > a.cols {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        });
    }
    let (m, n) = a.shape();
    let (lower, reflectors) = lq_decompose(a);

    // Rotate rows of W (initially L) until they are mutually orthogonal,
    // accumulating the rotations in R so that W = R · L.
    let mut w = lower;
    let mut rot = Matrix::identity(m);
    jacobi_orthogonalize_rows(&mut w, &mut rot)?;

    // L = Rᵀ W = Rᵀ diag(s) Q̃ with unit rows Q̃.
    let mut s = vec![0.0; m];
    let mut q_tilde = Matrix::zeros(m, m);
    for i in 0..m {
        let sigma = norm2(w.row(i));
        s[i] = sigma;
        if sigma > 0.0 {
            for (dst, src) in q_tilde.row_mut(i).iter_mut().zip(w.row(i)) {
                *dst = src / sigma;
            }
        }
    }
    // A = L · Q̂ where Q̂ is the first m rows of H_m⋯H_1. Right singular
    // vectors are Q̃ · Q̂, formed by extending Q̃ with zeros to n columns and
    // applying the reflectors from the right in reverse order.
    let mut vt = Matrix::zeros(m, n);
    for i in 0..m {
        vt.row_mut(i)[..m].copy_from_slice(q_tilde.row(i));
    }
    for refl in reflectors.iter().rev() {
        refl.apply_right(&mut vt);
    }
    Ok(Svd {
        u: rot.transpose(),
        s,
        vt,
    })
}

/// Moore–Penrose pseudo-inverse. Singular values below `rcond · σ_max` are
/// treated as zero.
pub fn pseudo_inverse(a: &Matrix, rcond: f64) -> Result<Matrix> {
    if !(rcond > 0.0 && rcond < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rcond must lie in (0, 1), got {rcond}"
        )));
    }
    let Svd { u, s, vt } = svd(a)?;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    // pinv = V · diag(1/s) · Uᵀ, assembled as a sum of rank-one terms.
    let (m, n) = a.shape();
    let mut out = Matrix::zeros(n, m);
    let ut = u.transpose();
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        let uk = ut.row(k);
        for (i, &v) in vt.row(k).iter().enumerate() {
            if v != 0.0 {
                axpy(v * inv, uk, out.row_mut(i));
            }
        }
    }
    Ok(out)
}

struct Reflector {
    /// Row the reflector was built from; it acts on columns `start..`.
    start: usize,
    v: Vec<f64>,
}

impl Reflector {
    /// `M ← M · H` with `H = I − 2 v vᵀ` acting on columns `start..`.
    fn apply_right(&self, mat: &mut Matrix) {
        for i in 0..mat.rows() {
            let row = &mut mat.row_mut(i)[self.start..];
            let proj = dot(row, &self.v);
            if proj != 0.0 {
                axpy(-2.0 * proj, &self.v, row);
            }
        }
    }
}

/// Householder LQ: returns the `m×m` lower-triangular factor and the
/// reflectors, `A · H_1 ⋯ H_m = [L 0]`.
fn lq_decompose(a: &Matrix) -> (Matrix, Vec<Reflector>) {
    let (m, n) = a.shape();
    let mut work = a.clone();
    let mut reflectors = Vec::with_capacity(m);
    for i in 0..m {
        let x = &work.row(i)[i..];
        let alpha = norm2(x);
        if alpha == 0.0 {
            continue;
        }
        let mut v = x.to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = norm2(&v);
        if vn == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        let refl = Reflector { start: i, v };
        // Rows above i are already zero beyond their diagonal.
        for r in i..m {
            let row = &mut work.row_mut(r)[i..];
            let proj = dot(row, &refl.v);
            if proj != 0.0 {
                axpy(-2.0 * proj, &refl.v, row);
            }
        }
        reflectors.push(refl);
    }
    let mut lower = Matrix::zeros(m, m);
    for i in 0..m {
        let take = (i + 1).min(n);
        lower.row_mut(i)[..take].copy_from_slice(&work.row(i)[..take]);
    }
    (lower, reflectors)
}

const JACOBI_MAX_SWEEPS: usize = 60;

fn jacobi_orthogonalize_rows(w: &mut Matrix, rot: &mut Matrix) -> Result<()> {
    let m = w.rows();
    let tol = f64::EPSILON * m as f64;
    let mut norms = vec![0.0; m];
    for _ in 0..JACOBI_MAX_SWEEPS {
        // Refreshed each sweep so the cheap in-sweep updates cannot drift.
        for (i, nrm) in norms.iter_mut().enumerate() {
            *nrm = dot(w.row(i), w.row(i));
        }
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = {
                    let (wp, wq) = two_rows(w, p, q);
                    dot(wp, wq)
                };
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(w, p, q, c, s);
                rotate_rows(rot, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::Numeric(format!(
        "one-sided Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps"
    )))
}

fn two_rows(mat: &mut Matrix, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let cols = mat.cols;
    let (head, tail) = mat.data.split_at_mut(q * cols);
    (&mut head[p * cols..(p + 1) * cols], &mut tail[..cols])
}

/// `w_p ← c w_p − s w_q`, `w_q ← s w_p + c w_q`.
fn rotate_rows(mat: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let (wp, wq) = two_rows(mat, p, q);
    for (a, b) in wp.iter_mut().zip(wq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Orthonormalizes the rows of `a` by modified Gram–Schmidt with one
/// reorthogonalization pass. The row space is preserved.
pub fn orthonormalize_rows(a: &Matrix) -> Result<Matrix> {
    let (m, n) = a.shape();
    if m > n {
        return Err(Error::Rank(format!(
            "{m} rows cannot be orthonormal in dimension {n}"
        )));
    }
    let threshold = 1e-10 * a.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut q = a.clone();
    for i in 0..m {
        for _pass in 0..2 {
            for k in 0..i {
                let (qk, qi) = two_rows(&mut q, k, i);
                let proj = dot(qk, qi);
                axpy(-proj, qk, qi);
            }
        }
        let nrm = norm2(q.row(i));
        if nrm < threshold {
            return Err(Error::Rank(format!(
                "row {i} is linearly dependent on the rows above it"
            )));
        }
        q.row_mut(i).iter_mut().for_each(|v| *v /= nrm);
    }
    Ok(q)
}

/// `m×n` matrix of i.i.d. standard normals scaled by `1/√n`.
pub fn gauss_matrix(rng: &mut Rng, m: usize, n: usize) -> Matrix {
    let scale = 1.0 / (n as f64).sqrt();
    let data = (0..m * n).map(|_| rng.normal() * scale).collect();
    Matrix {
        rows: m,
        cols: n,
        data,
    }
}

/// `‖A·A⁺·A − A‖_F / ‖A‖_F`, the first Penrose residual.
pub fn penrose_residual(a: &Matrix, pinv: &Matrix) -> Result<f64> {
    let apa = matmul(&matmul(a, pinv)?, a)?;
    Ok(apa.sub(a)?.frobenius_norm() / a.frobenius_norm().max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Rng, Stream};
    use proptest::prelude::*;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.shape() == b.shape()
            && a.as_slice()
                .iter()
                .zip(b.as_slice())
                .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_values() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[17.0, 39.0]);
        let z = matmul(&Matrix::zeros(3, 2), &a).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn pinv_closed_forms() {
        for n in [1, 3, 7] {
            let p = pseudo_inverse(&Matrix::identity(n), DEFAULT_RCOND).unwrap();
            assert!(close(&p, &Matrix::identity(n), 1e-14));
        }
        let p = pseudo_inverse(&Matrix::diag(&[2.0, 0.0]), DEFAULT_RCOND).unwrap();
        assert!(close(&p, &Matrix::diag(&[0.5, 0.0]), 1e-15));
    }

    #[test]
    fn pinv_penrose_random_wide_and_tall() {
        let mut rng = Rng::stream(11, Stream::Fixtures);
        for (m, n) in [(8, 32), (32, 8), (17, 17), (1, 5), (102, 256)] {
            let a = gauss_matrix(&mut rng, m, n);
            let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap();
            assert_eq!(p.shape(), (n, m));
            let r1 = penrose_residual(&a, &p).unwrap();
            assert!(r1 < 1e-10, "{m}x{n}: {r1}");
            let r2 = penrose_residual(&p, &a).unwrap();
            assert!(r2 < 1e-10, "{m}x{n}: {r2}");
        }
    }

    #[test]
    fn pinv_rank_deficient() {
        // Rank one: outer product.
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, 0.0, 3.0, 1.0];
        let data: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let a = Matrix::from_vec(3, 4, data).unwrap();
        let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap();
        assert!(penrose_residual(&a, &p).unwrap() < 1e-12);
        // pinv(u vᵀ) = v uᵀ / (|u|² |v|²)
        let scale = 1.0 / (dot(&u, &u) * dot(&v, &v));
        for i in 0..4 {
            for j in 0..3 {
                assert!((p[(i, j)] - v[i] * u[j] * scale).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pinv_rejects_bad_input() {
        let a = Matrix::identity(2);
        assert!(pseudo_inverse(&a, 0.0).is_err());
        let mut b = Matrix::identity(2);
        b[(0, 1)] = f64::NAN;
        assert!(matches!(
            pseudo_inverse(&b, DEFAULT_RCOND),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = Rng::new(5);
        let a = gauss_matrix(&mut rng, 6, 9);
        let Svd { u, s, vt } = svd(&a).unwrap();
        let us = matmul(&u, &Matrix::diag(&s)).unwrap();
        let back = matmul(&us, &vt).unwrap();
        assert!(close(&back, &a, 1e-12));
        let vvt = matmul(&vt, &vt.transpose()).unwrap();
        assert!(close(&vvt, &Matrix::identity(6), 1e-12));
    }

    #[test]
    fn orthonormalize_fixed_point_and_residual() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![-1.0, 0.0, 0.0]]).unwrap();
        let q = orthonormalize_rows(&a).unwrap();
        for i in 0..2 {
            let same = q.row(i).iter().zip(a.row(i)).all(|(x, y)| (x - y).abs() < 1e-15);
            let flip = q.row(i).iter().zip(a.row(i)).all(|(x, y)| (x + y).abs() < 1e-15);
            assert!(same || flip);
        }
        let mut rng = Rng::new(2);
        let g = gauss_matrix(&mut rng, 40, 64);
        let q = orthonormalize_rows(&g).unwrap();
        let qqt = matmul(&q, &q.transpose()).unwrap();
        assert!(qqt.sub(&Matrix::identity(40)).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn orthonormalize_dependent_rows() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(orthonormalize_rows(&a), Err(Error::Rank(_))));
    }

    #[test]
    fn gauss_matrix_determinism_and_moments() {
        let a = gauss_matrix(&mut Rng::stream(7, Stream::Matrices), 4, 5);
        let b = gauss_matrix(&mut Rng::stream(7, Stream::Matrices), 4, 5);
        let c = gauss_matrix(&mut Rng::stream(8, Stream::Matrices), 4, 5);
        assert_eq!(a, b);
        assert_ne!(a, c);

        let g = gauss_matrix(&mut Rng::new(123), 256, 1024);
        let n = g.as_slice().len() as f64;
        let mean = g.as_slice().iter().sum::<f64>() / n;
        let var = g.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.005, "mean {mean}");
        let target = 1.0 / 1024.0;
        assert!((var - target).abs() < 0.05 * target, "var {var}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matmul_associative(seed in any::<u64>(), m in 1usize..7, k in 1usize..7, l in 1usize..7, n in 1usize..7) {
            let mut rng = Rng::new(seed);
            let a = gauss_matrix(&mut rng, m, k);
            let b = gauss_matrix(&mut rng, k, l);
            let c = gauss_matrix(&mut rng, l, n);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let err = left.sub(&right).unwrap().frobenius_norm();
            prop_assert!(err <= 1e-9 * left.frobenius_norm().max(1e-300));
        }

        #[test]
        fn penrose_conditions_hold(seed in any::<u64>(), m in 1usize..24, n in 1usize..24) {
            let a = gauss_matrix(&mut Rng::new(seed), m, n);
            let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap();
            prop_assert!(penrose_residual(&a, &p).unwrap() < 1e-10);
            prop_assert!(penrose_residual(&p, &a).unwrap() < 1e-10);
        }
    }
}
