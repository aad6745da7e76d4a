//! Small dense symmetric kernels.
//!
//! Everything here operates on row-major `Vec<f64>` matrices of modest size
//! (basis grams are ~4x4, regression normal equations ~100x100), so no
//! external linear-algebra crate is pulled in.

use crate::error::{Error, Result};

/// In-order pivoted Cholesky factor of a symmetric PSD matrix.
///
/// Pivots are visited in index order and *dropped*, never permuted: a dropped
/// index contributes nothing and later rows are reduced against kept columns
/// only. This preserves the lower-triangular structure of anything built on
/// top of the kept directions.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    pub n: usize,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    l: Vec<f64>,
    pub pivot_min: f64,
    pub pivot_max: f64,
}

/// Factor `a` (n x n, symmetric), dropping direction `r` when its residual
/// pivot is <= `drop_tol_rel * a[r][r]_initial`. Residuals more negative than
/// `-psd_tol_rel * max(diag)` are a PSD violation.
pub fn psd_factor(a: &[f64], n: usize, drop_tol_rel: f64, psd_tol_rel: f64) -> Result<PsdFactor> {
    assert_eq!(a.len(), n * n);
    let mut diag_init = vec![0.0; n];
    let mut scale = 0.0f64;
    for r in 0..n {
        diag_init[r] = a[r * n + r];
        scale = scale.max(diag_init[r].abs());
    }
    let psd_guard = psd_tol_rel * scale.max(1e-300);

    let mut l = vec![0.0; n * n];
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    let mut pivot_min = f64::INFINITY;
    let mut pivot_max = 0.0f64;

    for r in 0..n {
        for &c in &kept {
            let mut s = a[r * n + c];
            for &k in &kept {
                if k >= c {
                    break;
                }
                s -= l[r * n + k] * l[c * n + k];
            }
            l[r * n + c] = s / l[c * n + c];
        }
        let mut d = a[r * n + r];
        for &k in &kept {
            d -= l[r * n + k] * l[r * n + k];
        }
        if d < -psd_guard {
            return Err(Error::Numeric(format!(
                "matrix not positive semidefinite: residual pivot {d:.3e} at index {r} \
                 (diag {:.3e}, scale {:.3e})",
                diag_init[r], scale
            )));
        }
        if d <= drop_tol_rel * diag_init[r] || d <= 0.0 {
            for c in 0..n {
                l[r * n + c] = 0.0;
            }
            dropped.push(r);
            continue;
        }
        l[r * n + r] = d.sqrt();
        pivot_min = pivot_min.min(d);
        pivot_max = pivot_max.max(d);
        kept.push(r);
    }
    if kept.is_empty() {
        pivot_min = 0.0;
    }
    Ok(PsdFactor {
        n,
        kept,
        dropped,
        l,
        pivot_min,
        pivot_max,
    })
}

impl PsdFactor {
    /// Solve `A x = b` on the kept directions; dropped coordinates get 0.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y = vec![0.0; n];
        for &c in &self.kept {
            let mut s = b[c];
            for &k in &self.kept {
                if k >= c {
                    break;
                }
                s -= self.l[c * n + k] * y[k];
            }
            y[c] = s / self.l[c * n + c];
        }
        let mut x = vec![0.0; n];
        for &c in self.kept.iter().rev() {
            let mut s = y[c];
            for &k in &self.kept {
                if k > c {
                    s -= self.l[k * n + c] * x[k];
                }
            }
            x[c] = s / self.l[c * n + c];
        }
        x
    }

    /// Ratio of extreme retained pivots; a cheap conditioning proxy.
    pub fn cond_proxy(&self) -> f64 {
        if self.kept.is_empty() || self.pivot_min == 0.0 {
            f64::INFINITY
        } else {
            self.pivot_max / self.pivot_min
        }
    }
}

/// Normal-equation solver with column standardization and an optional ridge
/// on the standardized diagonal. Standardizing makes the drop tolerance a
/// residual-correlation threshold instead of a raw-scale one, and the ridge
/// tames directions whose sample eigenvalue is too small to estimate.
#[derive(Debug, Clone)]
pub struct ScaledPsdSolver {
    scale: Vec<f64>,
    factor: PsdFactor,
}

pub fn scaled_psd_solver(
    a: &[f64],
    n: usize,
    ridge_rel: f64,
    drop_tol_rel: f64,
    psd_tol_rel: f64,
) -> Result<ScaledPsdSolver> {
    assert_eq!(a.len(), n * n);
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let d = a[i * n + i];
        scale[i] = if d > 0.0 { d.sqrt() } else { 0.0 };
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        if scale[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if scale[j] != 0.0 {
                s[i * n + j] = a[i * n + j] / (scale[i] * scale[j]);
            }
        }
        s[i * n + i] += ridge_rel;
    }
    let factor = psd_factor(&s, n, drop_tol_rel, psd_tol_rel)?;
    Ok(ScaledPsdSolver { scale, factor })
}

impl ScaledPsdSolver {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.scale.len();
        let mut b_std = vec![0.0; n];
        for i in 0..n {
            if self.scale[i] != 0.0 {
                b_std[i] = b[i] / self.scale[i];
            }
        }
        let mut x = self.factor.solve(&b_std);
        for i in 0..n {
            if self.scale[i] != 0.0 {
                x[i] /= self.scale[i];
            } else {
                x[i] = 0.0;
            }
        }
        x
    }

    pub fn cond_proxy(&self) -> f64 {
        self.factor.cond_proxy()
    }

    /// Dropped directions (zero-scale columns come out here too, since their
    /// standardized diagonal is zero).
    pub fn dropped(&self) -> usize {
        self.factor.dropped.len()
    }
}

/// u' A v for a symmetric row-major matrix.
pub fn quadratic_form(a: &[f64], n: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..n {
        if u[r] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for c in 0..n {
            row += a[r * n + c] * v[c];
        }
        total += u[r] * row;
    }
    total
}
