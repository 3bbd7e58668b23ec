//! Small dense square matrices, singular values and the singular value
//! function.
//!
//! Matrices here are tiny (the ambient dimension is 1 to 4), so everything is
//! stored row-major in a flat `Vec<f64>` and computed directly. Singular
//! values come from a closed form when `N = 2` and from one-sided Jacobi
//! otherwise. Long products of contractions are handled by [`ScaledProduct`],
//! which keeps a normalized matrix together with a log scale and the log of
//! the absolute determinant so that nothing underflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(1e-300)`: singular values below this are treated as zero.
const LOG_SINGULAR_THRESHOLD: f64 = -690.775_527_898_213_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds an `n × n` matrix from row-major entries.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be at least 1".into()));
        }
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut data = vec![0.0; n * n];
        for (i, &e) in entries.iter().enumerate() {
            data[i * n + i] = e;
        }
        Self { n, data }
    }

    /// Rotation by `theta` in the plane.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            n: 2,
            data: vec![c, -s, s, c],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        Self { n, data }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Matrix) -> Result<Matrix> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let mut out = vec![0.0; self.n * self.n];
        mul_into(self.n, &self.data, &other.data, &mut out);
        Ok(Self {
            n: self.n,
            data: out,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        mul_vec_into(self.n, &self.data, v, &mut out);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `ln |det|` via Gaussian elimination with partial pivoting.
    pub fn log_abs_det(&self) -> f64 {
        log_abs_det(self.n, &self.data)
    }

    /// Singular values, descending.
    pub fn singular_values(&self) -> Result<SingularSpectrum> {
        let mut log_values = vec![0.0; self.n];
        log_singular_values_into(self.n, &self.data, 0.0, self.log_abs_det(), &mut log_values);
        let smallest = log_values[self.n - 1];
        if !(smallest > LOG_SINGULAR_THRESHOLD) {
            return Err(Error::SingularMatrix {
                smallest: smallest.exp(),
            });
        }
        Ok(SingularSpectrum { log_values })
    }

    /// Operator norm, i.e. the largest singular value.
    pub fn norm(&self) -> Result<f64> {
        Ok(self.singular_values()?.largest())
    }
}

pub fn compose(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.compose(b)
}

pub fn singular_values(t: &Matrix) -> Result<SingularSpectrum> {
    t.singular_values()
}

/// The singular value function `φ^s(T)`.
pub fn phi_s(t: &Matrix, s: f64) -> Result<f64> {
    Ok(t.singular_values()?.phi(s))
}

/// `(α_-, α_+)`: the smallest last singular value and the largest first
/// singular value over the maps.
pub fn alpha_bounds(maps: &[Matrix]) -> Result<(f64, f64)> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one map required".into()))?;
    let mut alpha_minus = f64::INFINITY;
    let mut alpha_plus = 0.0_f64;
    for t in maps {
        if t.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: t.dim(),
            });
        }
        let sv = t.singular_values()?;
        alpha_plus = alpha_plus.max(sv.largest());
        alpha_minus = alpha_minus.min(sv.smallest());
    }
    if alpha_plus >= 1.0 {
        return Err(Error::NotAContraction { alpha_plus });
    }
    Ok((alpha_minus, alpha_plus))
}

/// Singular values stored as logarithms, sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularSpectrum {
    log_values: Vec<f64>,
}

impl SingularSpectrum {
    pub fn from_log_values(log_values: Vec<f64>) -> Self {
        Self { log_values }
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|l| l.exp()).collect()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn largest(&self) -> f64 {
        self.log_values[0].exp()
    }

    pub fn smallest(&self) -> f64 {
        self.log_values[self.log_values.len() - 1].exp()
    }

    pub fn log_phi(&self, s: f64) -> f64 {
        log_phi(&self.log_values, s)
    }

    pub fn phi(&self, s: f64) -> f64 {
        self.log_phi(s).exp()
    }
}

/// `ln φ^s` from descending log singular values.
///
/// For `m - 1 < s ≤ m ≤ N` this is `Σ_{i<m} ln α_i + (s - m + 1) ln α_m`; for
/// `s ≥ N` it is `(s / N) Σ ln α_i`. Both branches agree at `s = N`.
#[inline]
pub fn log_phi(log_sv: &[f64], s: f64) -> f64 {
    let n = log_sv.len();
    if s <= 0.0 {
        return 0.0;
    }
    if s >= n as f64 {
        return log_sv.iter().sum::<f64>() * (s / n as f64);
    }
    let m = s.ceil() as usize;
    let mut acc = 0.0;
    for &l in &log_sv[..m - 1] {
        acc += l;
    }
    acc + (s - (m as f64 - 1.0)) * log_sv[m - 1]
}

#[inline]
pub(crate) fn mul_into(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    if n == 2 {
        out[0] = a[0] * b[0] + a[1] * b[2];
        out[1] = a[0] * b[1] + a[1] * b[3];
        out[2] = a[2] * b[0] + a[3] * b[2];
        out[3] = a[2] * b[1] + a[3] * b[3];
        return;
    }
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += a[i * n + l] * b[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

#[inline]
pub(crate) fn mul_vec_into(n: usize, a: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += a[i * n + j] * v[j];
        }
        out[i] = acc;
    }
}

fn log_abs_det(n: usize, data: &[f64]) -> f64 {
    match n {
        1 => data[0].abs().ln(),
        2 => (data[0] * data[3] - data[1] * data[2]).abs().ln(),
        _ => {
            let mut a = data.to_vec();
            let mut acc = 0.0;
            for col in 0..n {
                let pivot = (col..n)
                    .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
                    .unwrap_or(col);
                let p = a[pivot * n + col];
                if p == 0.0 {
                    return f64::NEG_INFINITY;
                }
                if pivot != col {
                    for j in 0..n {
                        a.swap(pivot * n + j, col * n + j);
                    }
                }
                acc += p.abs().ln();
                for r in col + 1..n {
                    let f = a[r * n + col] / p;
                    for j in col..n {
                        a[r * n + j] -= f * a[col * n + j];
                    }
                }
            }
            acc
        }
    }
}

/// Log singular values of `exp(log_scale) · M`, descending, where
/// `log_det` is `ln |det|` of the scaled matrix. The smallest value is taken
/// from the determinant identity so that it keeps relative accuracy even
/// when `M` is badly conditioned.
pub(crate) fn log_singular_values_into(n: usize, m: &[f64], log_scale: f64, log_det: f64, out: &mut [f64]) {
    match n {
        1 => out[0] = m[0].abs().ln() + log_scale,
        2 => {
            let (a, b, c, d) = (m[0], m[1], m[2], m[3]);
            let p = (a + d).hypot(b - c);
            let q = (a - d).hypot(b + c);
            let s1 = 0.5 * (p + q);
            let l1 = s1.ln() + log_scale;
            out[0] = l1;
            out[1] = (log_det - l1).min(l1);
        }
        _ => {
            let mut sv = jacobi_singular_values(n, m);
            sv.sort_by(|x, y| y.total_cmp(x));
            let mut partial = 0.0;
            for i in 0..n - 1 {
                out[i] = sv[i].ln() + log_scale;
                partial += out[i];
            }
            out[n - 1] = (log_det - partial).min(out[n - 2]);
        }
    }
}

/// One-sided (Hestenes) Jacobi: orthogonalize the columns; their norms are
/// the singular values.
fn jacobi_singular_values(n: usize, m: &[f64]) -> Vec<f64> {
    let mut u = m.to_vec();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    let up = u[i * n + p];
                    let uq = u[i * n + q];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-16 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let up = u[i * n + p];
                    let uq = u[i * n + q];
                    u[i * n + p] = c * up - s * uq;
                    u[i * n + q] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n)
        .map(|j| (0..n).map(|i| u[i * n + j] * u[i * n + j]).sum::<f64>().sqrt())
        .collect()
}

/// A product of matrices kept as `exp(log_scale) · M` with `max |M_ij| = 1`,
/// plus the exact running `ln |det|`. Supports dimensions up to
/// [`MAX_PRODUCT_DIM`].
#[derive(Clone, Copy, Debug)]
pub struct ScaledProduct {
    n: usize,
    m: [f64; 16],
    log_scale: f64,
    log_det: f64,
}

pub const MAX_PRODUCT_DIM: usize = 4;

impl ScaledProduct {
    pub fn identity(n: usize) -> Self {
        assert!((1..=MAX_PRODUCT_DIM).contains(&n), "product dimension {n} unsupported");
        let mut m = [0.0; 16];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        Self {
            n,
            m,
            log_scale: 0.0,
            log_det: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Right-multiplies by `t`, whose `ln |det|` is supplied by the caller.
    #[inline]
    pub fn mul_right(&mut self, t: &Matrix, t_log_det: f64) {
        let nn = self.n * self.n;
        let mut out = [0.0; 16];
        mul_into(self.n, &self.m[..nn], &t.data, &mut out[..nn]);
        self.m = out;
        self.log_det += t_log_det;
        self.renormalize();
    }

    #[inline]
    fn renormalize(&mut self) {
        let nn = self.n * self.n;
        let mx = self.m[..nn].iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if mx > 0.0 && mx.is_finite() {
            let inv = 1.0 / mx;
            for x in &mut self.m[..nn] {
                *x *= inv;
            }
            self.log_scale += mx.ln();
        }
    }

    /// The product as a plain matrix (may underflow for long products).
    pub fn to_matrix(&self) -> Matrix {
        let f = self.log_scale.exp();
        Matrix {
            n: self.n,
            data: self.m[..self.n * self.n].iter().map(|x| x * f).collect(),
        }
    }

    /// Applies the product to a vector.
    #[inline]
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        mul_vec_into(self.n, &self.m[..self.n * self.n], v, out);
        let f = self.log_scale.exp();
        for x in out.iter_mut() {
            *x *= f;
        }
    }

    #[inline]
    pub fn log_singular_values_into(&self, out: &mut [f64]) {
        log_singular_values_into(self.n, &self.m[..self.n * self.n], self.log_scale, self.log_det, out);
    }

    pub fn spectrum(&self) -> SingularSpectrum {
        let mut v = vec![0.0; self.n];
        self.log_singular_values_into(&mut v);
        SingularSpectrum { log_values: v }
    }
}
