//! Orthonormal martingale bases.
//!
//! The impulse family for a state orthonormalizes {count martingale, impulse
//! power martingales} against the scalar product m(l+h) * E[count(1)]; the
//! power-jump family orthonormalizes the compensated power processes against
//! their predictable-bracket density. Both reduce to a moment-matrix
//! orthogonalization, done here by modified Gram-Schmidt in raw-index order
//! with relative pivot dropping (dropped, never permuted, so element r only
//! loads raw indices <= r).

use crate::chain::{expected_jumps_per_unit, ChainSpec, CountingSet};
use crate::dist::MarkDistribution;
use crate::error::{Error, Result};
use crate::impulse::{ImpulsePath, JumpLawSet};
use crate::levy::{PowerJumpFamily, RegimeLevyParams};
use crate::linalg::quadratic_form;

pub const DEFAULT_PIVOT_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const ORTHO_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramKind {
    /// Raw index 0 is the count martingale, index l >= 1 the order-l impulse
    /// martingale, all for one state.
    Impulse { state: usize },
    /// Raw index k is the order-(k+1) compensated power process, bracket
    /// density taken in one state's regime.
    Teugels { state: usize },
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub dim: usize,
    /// Row-major symmetric entries.
    pub entries: Vec<f64>,
    pub kind: GramKind,
    /// E[count(1)] for the impulse kind, 1 for the power-jump kind.
    pub scale: f64,
}

impl GramMatrix {
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.dim + c]
    }

    fn check_shape(&self) -> Result<()> {
        if self.entries.len() != self.dim * self.dim {
            return Err(Error::Validation("gram entries do not match dimension".into()));
        }
        let mut max_diag = 0.0f64;
        for r in 0..self.dim {
            max_diag = max_diag.max(self.entry(r, r).abs());
        }
        for r in 0..self.dim {
            for c in 0..r {
                if (self.entry(r, c) - self.entry(c, r)).abs() > 1e-12 * max_diag.max(1.0) {
                    return Err(Error::Numeric(format!(
                        "gram not symmetric at ({r},{c}): {} vs {}",
                        self.entry(r, c),
                        self.entry(c, r)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Impulse gram from a law and a known count expectation (entries
    /// m(l+h) * e_count).
    pub fn impulse_from_law(
        law: &MarkDistribution,
        e_count: f64,
        state: usize,
        dim: usize,
    ) -> Result<GramMatrix> {
        if dim == 0 {
            return Err(Error::Validation("gram dimension must be >= 1".into()));
        }
        if !(e_count > 0.0) {
            return Err(Error::Validation(format!(
                "state {} is not reachable (expected count {e_count} per unit time): no impulse basis exists",
                state + 1
            )));
        }
        let mut entries = vec![0.0; dim * dim];
        for l in 0..dim {
            for h in 0..dim {
                entries[l * dim + h] = law.moment(l + h)? * e_count;
            }
        }
        Ok(GramMatrix {
            dim,
            entries,
            kind: GramKind::Impulse { state },
            scale: e_count,
        })
    }
}

/// Scalar-product matrix of the impulse family for one state.
pub fn impulse_gram(
    laws: &JumpLawSet,
    spec: &ChainSpec,
    state: usize,
    dim: usize,
) -> Result<GramMatrix> {
    laws.validate(spec.n_states())?;
    if state >= spec.n_states() {
        return Err(Error::Validation(format!("state index {state} out of range")));
    }
    let e_count = expected_jumps_per_unit(spec, state)?;
    GramMatrix::impulse_from_law(&laws.laws[state], e_count, state, dim)
}

/// Predictable-bracket density matrix of the compensated power processes in
/// one state's regime: rate * E[gamma^(k+h+2)] plus the squared volatility on
/// the (0,0) entry.
pub fn teugels_gram(params: &RegimeLevyParams, state: usize, dim: usize) -> Result<GramMatrix> {
    if dim == 0 {
        return Err(Error::Validation("gram dimension must be >= 1".into()));
    }
    if state >= params.n_states() {
        return Err(Error::Validation(format!("state index {state} out of range")));
    }
    let mut entries = vec![0.0; dim * dim];
    for k in 0..dim {
        for h in 0..dim {
            let mut v = if params.jump_rate > 0.0 {
                params.jump_rate * params.gamma_moment(state, k + h + 2)?
            } else {
                0.0
            };
            if k == 0 && h == 0 {
                v += params.volatility[state] * params.volatility[state];
            }
            entries[k * dim + h] = v;
        }
    }
    Ok(GramMatrix {
        dim,
        entries,
        kind: GramKind::Teugels { state },
        scale: 1.0,
    })
}

/// Lower-triangular coefficients of the orthonormal elements over the raw
/// directions, with the surviving raw indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisCoefficients {
    pub dim: usize,
    pub kept: Vec<usize>,
    /// One row per kept element, full raw dimension (zeros beyond the
    /// element's own index).
    pub rows: Vec<Vec<f64>>,
}

impl BasisCoefficients {
    pub fn n_elements(&self) -> usize {
        self.rows.len()
    }

    pub fn identity(dim: usize) -> Self {
        BasisCoefficients {
            dim,
            kept: (0..dim).collect(),
            rows: (0..dim)
                .map(|r| {
                    let mut row = vec![0.0; dim];
                    row[r] = 1.0;
                    row
                })
                .collect(),
        }
    }

    /// Linear combination of raw values under each element's coefficients.
    pub fn evaluate(&self, raw: &[f64]) -> Vec<f64> {
        assert_eq!(raw.len(), self.dim);
        self.rows
            .iter()
            .map(|row| row.iter().zip(raw).map(|(c, v)| c * v).sum())
            .collect()
    }

    pub fn approx_eq(&self, other: &BasisCoefficients, tol: f64) -> bool {
        self.dim == other.dim
            && self.kept == other.kept
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol))
    }
}

/// Orthonormalize the raw directions of a gram matrix in index order.
///
/// Direction r is dropped when its residual squared norm is at most
/// `pivot_tol` times its initial diagonal entry (the tolerance is relative,
/// so rescaling the gram never changes the kept set).
pub fn orthonormalize(gram: &GramMatrix, pivot_tol: f64) -> Result<BasisCoefficients> {
    gram.check_shape()?;
    let n = gram.dim;
    let g = &gram.entries;
    let mut max_diag = 0.0f64;
    for r in 0..n {
        let d = gram.entry(r, r);
        if d < -PSD_TOL * max_diag.max(1.0) {
            return Err(Error::Numeric(format!(
                "gram has negative diagonal {d} at index {r}"
            )));
        }
        max_diag = max_diag.max(d);
    }
    let psd_guard = PSD_TOL * max_diag.max(1e-300);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for r in 0..n {
        let mut v = vec![0.0; n];
        v[r] = 1.0;
        // Two passes of re-orthogonalization keep the check below honest even
        // for poorly scaled grams.
        for _ in 0..2 {
            for u in &rows {
                let c = quadratic_form(g, n, u, &v);
                for k in 0..n {
                    v[k] -= c * u[k];
                }
            }
        }
        let norm_sq = quadratic_form(g, n, &v, &v);
        if norm_sq < -psd_guard {
            return Err(Error::Numeric(format!(
                "gram not positive semidefinite: residual norm^2 {norm_sq:.3e} at index {r}; entries {:?}",
                gram.entries
            )));
        }
        if norm_sq <= pivot_tol * gram.entry(r, r) || norm_sq <= 0.0 {
            continue;
        }
        let inv = 1.0 / norm_sq.sqrt();
        for k in 0..n {
            v[k] *= inv;
        }
        rows.push(v);
        kept.push(r);
    }

    let coeffs = BasisCoefficients { dim: n, kept, rows };
    // Contract: coefficients diagonalize the gram on the kept set.
    for (a, ua) in coeffs.rows.iter().enumerate() {
        for (b, ub) in coeffs.rows.iter().enumerate() {
            let want = if a == b { 1.0 } else { 0.0 };
            let got = quadratic_form(g, n, ua, ub);
            if (got - want).abs() > ORTHO_CHECK_TOL {
                return Err(Error::Numeric(format!(
                    "orthonormalization check failed at ({a},{b}): {got} vs {want}"
                )));
            }
        }
    }
    Ok(coeffs)
}

/// Per-state coefficient sets for the power-jump family. When the Levy
/// parameters are state-independent all entries agree.
pub fn teugels_coefficients(
    params: &RegimeLevyParams,
    dim: usize,
    pivot_tol: f64,
) -> Result<Vec<BasisCoefficients>> {
    (0..params.n_states())
        .map(|s| orthonormalize(&teugels_gram(params, s, dim)?, pivot_tol))
        .collect()
}

/// The shared coefficient set if every state produces the same one.
pub fn uniform_coefficients(per_state: &[BasisCoefficients]) -> Option<&BasisCoefficients> {
    let first = per_state.first()?;
    if per_state.iter().all(|c| c.approx_eq(first, 1e-12)) {
        Some(first)
    } else {
        None
    }
}

/// Basis paths materialized on a grid for one realization.
#[derive(Debug, Clone)]
pub struct BasisPaths {
    pub dt: f64,
    /// Power-jump elements, one row per kept element.
    pub h: Vec<Vec<f64>>,
    /// Impulse elements per state (empty when the state has no basis).
    pub g: Vec<Vec<Vec<f64>>>,
}

/// Pointwise linear combinations of the stored compensated raw paths.
pub fn assemble_basis_paths(
    teugels: &BasisCoefficients,
    impulse_per_state: &[Option<BasisCoefficients>],
    family: &PowerJumpFamily,
    counting: &CountingSet,
    impulse: &ImpulsePath,
    laws: &JumpLawSet,
    horizon: f64,
) -> Result<BasisPaths> {
    if teugels.dim != family.max_order {
        return Err(Error::Validation(format!(
            "coefficient dimension {} does not match power-jump family order {}",
            teugels.dim, family.max_order
        )));
    }
    let n = family.martingales[0].len();
    let n_states = counting.n_states();
    let mut h = vec![vec![0.0; n]; teugels.n_elements()];
    let mut g = vec![Vec::new(); n_states];
    for (i, coeffs) in impulse_per_state.iter().enumerate() {
        if let Some(c) = coeffs {
            if c.dim < 1 || c.dim > impulse.max_power + 1 {
                return Err(Error::Validation(format!(
                    "impulse coefficients for state {} need raw dimension 1..={}, got {}",
                    i + 1,
                    impulse.max_power + 1,
                    c.dim
                )));
            }
            g[i] = vec![vec![0.0; n]; c.n_elements()];
        }
    }

    let mut raw_t = vec![0.0; teugels.dim];
    for idx in 0..n {
        let t = if idx == n - 1 { horizon } else { idx as f64 * family.dt };
        for k in 0..teugels.dim {
            raw_t[k] = family.martingales[k][idx];
        }
        for (e, row) in teugels.rows.iter().enumerate() {
            h[e][idx] = row.iter().zip(&raw_t).map(|(c, v)| c * v).sum();
        }
        for (i, coeffs) in impulse_per_state.iter().enumerate() {
            if let Some(c) = coeffs {
                let mut raw = Vec::with_capacity(c.dim);
                raw.push(counting.martingale(i, t));
                for l in 1..c.dim {
                    raw.push(impulse.martingale(i, l, t, laws, counting)?);
                }
                for (e, row) in c.rows.iter().enumerate() {
                    g[i][e][idx] = row.iter().zip(&raw).map(|(cf, v)| cf * v).sum();
                }
            }
        }
    }
    Ok(BasisPaths { dt: family.dt, h, g })
}

/// Plain-text coefficient report; layout documented in the README.
pub fn format_coefficient_report(
    label: &str,
    gram: &GramMatrix,
    coeffs: &BasisCoefficients,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("family {label}\n"));
    out.push_str(&format!("dim {}\n", coeffs.dim));
    out.push_str(&format!("scale {:.15e}\n", gram.scale));
    out.push_str(&format!(
        "kept {}\n",
        coeffs
            .kept
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    for (e, row) in coeffs.rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:.15e}")).collect();
        out.push_str(&format!("row {} {}\n", coeffs.kept[e], cells.join(" ")));
    }
    out
}
