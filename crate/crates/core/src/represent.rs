//! Regression-based realization of the predictable representation: estimate
//! per-bucket integrands of a square-integrable payoff against the compensated
//! martingale family and replicate the payoff out of sample.
//!
//! The integrand for each regressor martingale is a per-bucket-constant
//! coefficient vector over the left-endpoint feature catalog, so it can be
//! state-dependent within a bucket while staying predictable. Fitting runs in
//! three stages, all cross-bucket-unbiased because martingale increments have
//! zero mean conditionally on everything at the bucket's left endpoint:
//!   1. boundary regressions of the payoff on the feature catalog give a
//!      conditional-expectation proxy M-hat (with M-hat(T) = payoff);
//!   2. a warm start regresses the M-hat increments on feature x increment
//!      columns per bucket;
//!   3. Jacobi sweeps refit each bucket against the payoff minus M-hat(0)
//!      minus every other bucket's fitted integral sum, which removes the
//!      warm start's bias whenever the payoff's conditional expectation is
//!      outside the feature span.
//! Replication evaluates the fitted integrand functions on the simulation
//! grid (left endpoints) against exact martingale increments per cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::paths::{regressor_labels, DerivedPath};
use crate::harness::scenario::{fold_paths, PathRange, Scenario};
use crate::linalg::scaled_psd_solver;

/// Payoff catalog. All payoffs are terminal-time functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PayoffSpec {
    /// The full process at the horizon.
    TerminalLinear,
    /// Squared Levy component at the horizon.
    TerminalSquare,
    /// Compensated count of jumps into a state (0-based).
    TerminalCount { state: usize },
    /// Compensated first-order impulse sum into a state (0-based).
    TerminalImpulse { state: usize },
    /// Indicator of the chain sitting in a state at the horizon (0-based).
    Indicator { state: usize },
    /// Polynomial in (Levy component, compensated count, compensated
    /// first-order impulse sum) at the horizon.
    Polynomial { terms: Vec<MonomialTerm> },
    /// Orthonormal power-jump basis element at the horizon (kept position,
    /// 1-based).
    BasisH { position: usize },
    /// Orthonormal impulse basis element at the horizon.
    BasisG { state: usize, position: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonomialTerm {
    pub coeff: f64,
    pub x_power: usize,
    pub count_power: usize,
    pub impulse_power: usize,
    pub count_state: usize,
    pub impulse_state: usize,
}

const MAX_POLY_DEGREE: usize = 4;

impl PayoffSpec {
    pub fn validate(&self, n_states: usize) -> Result<()> {
        let check = |s: usize| {
            if s >= n_states {
                Err(Error::Validation(format!(
                    "payoff references state {} but there are {n_states} states",
                    s + 1
                )))
            } else {
                Ok(())
            }
        };
        match self {
            PayoffSpec::TerminalCount { state }
            | PayoffSpec::TerminalImpulse { state }
            | PayoffSpec::Indicator { state }
            | PayoffSpec::BasisG { state, .. } => check(*state)?,
            PayoffSpec::Polynomial { terms } => {
                for t in terms {
                    check(t.count_state)?;
                    check(t.impulse_state)?;
                    let degree = t.x_power + t.count_power + t.impulse_power;
                    if degree == 0 || degree > MAX_POLY_DEGREE {
                        return Err(Error::Validation(format!(
                            "polynomial term degree {degree} outside 1..={MAX_POLY_DEGREE}"
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn check_against(&self, scn: &Scenario) -> Result<()> {
        self.validate(scn.n_states())?;
        match self {
            PayoffSpec::BasisH { position } => {
                let n = scn.h_coeffs().n_elements();
                if *position == 0 || *position > n {
                    return Err(Error::Validation(format!(
                        "power-jump basis has {n} elements, position {position} invalid"
                    )));
                }
            }
            PayoffSpec::BasisG { state, position } => match &scn.impulse_coeffs[*state] {
                None => {
                    return Err(Error::Validation(format!(
                        "state {} has no impulse basis",
                        state + 1
                    )))
                }
                Some(c) => {
                    if *position == 0 || *position > c.n_elements() {
                        return Err(Error::Validation(format!(
                            "impulse basis for state {} has {} elements, position {position} invalid",
                            state + 1,
                            c.n_elements()
                        )));
                    }
                }
            },
            _ => {}
        }
        Ok(())
    }

    pub fn evaluate(&self, d: &DerivedPath, horizon: f64) -> f64 {
        match self {
            PayoffSpec::TerminalLinear => d.full(horizon),
            PayoffSpec::TerminalSquare => {
                let x = d.xbar(horizon);
                x * x
            }
            PayoffSpec::TerminalCount { state } => d.count_mart(*state, horizon),
            PayoffSpec::TerminalImpulse { state } => d.impulse_mart(*state, 1, horizon),
            PayoffSpec::Indicator { state } => {
                if d.real.chain.state_at(horizon) == *state {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffSpec::Polynomial { terms } => {
                let x = d.xbar(horizon);
                terms
                    .iter()
                    .map(|t| {
                        t.coeff
                            * x.powi(t.x_power as i32)
                            * d.count_mart(t.count_state, horizon).powi(t.count_power as i32)
                            * d.impulse_mart(t.impulse_state, 1, horizon).powi(t.impulse_power as i32)
                    })
                    .sum()
            }
            PayoffSpec::BasisH { position } => d.basis_h(*position, horizon),
            PayoffSpec::BasisG { state, position } => d.basis_g(*state, *position, horizon),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PayoffSpec::TerminalLinear => "X(T)".into(),
            PayoffSpec::TerminalSquare => "Xbar(T)^2".into(),
            PayoffSpec::TerminalCount { state } => format!("PhiBar_{}(T)", state + 1),
            PayoffSpec::TerminalImpulse { state } => format!("PsiBar_{}_1(T)", state + 1),
            PayoffSpec::Indicator { state } => format!("1{{J(T)={}}}", state + 1),
            PayoffSpec::Polynomial { .. } => "polynomial".into(),
            PayoffSpec::BasisH { position } => format!("H_{position}(T)"),
            PayoffSpec::BasisG { state, position } => format!("G_{}_{position}(T)", state + 1),
        }
    }
}

/// Whether integrand features are read at the bucket's left endpoint
/// (predictable) or shifted one step forward (a deliberate look-ahead for the
/// bias canary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTiming {
    LeftEndpoint,
    ShiftedForward,
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    /// Power-jump truncation order of the regressor family.
    pub k_order: usize,
    /// Impulse truncation order of the regressor family.
    pub l_order: usize,
    pub buckets: usize,
    /// Jacobi refinement sweeps after the warm start.
    pub sweeps: usize,
    /// Ridge on the standardized normal equations; suppresses directions the
    /// sample cannot determine at a ~0.1% bias on well-determined ones.
    pub ridge: f64,
    pub feature_timing: FeatureTiming,
}

pub const DEFAULT_RIDGE: f64 = 1e-3;

impl EstimateOptions {
    pub fn from_scenario(scn: &Scenario) -> Self {
        EstimateOptions {
            k_order: scn.k_order(),
            l_order: scn.l_order(),
            buckets: scn.config.representation.buckets,
            sweeps: scn.config.representation.sweeps,
            ridge: DEFAULT_RIDGE,
            feature_timing: FeatureTiming::LeftEndpoint,
        }
    }
}

/// Identity of the sample an estimate was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleId {
    pub model_hash: String,
    pub master_seed: u64,
    pub range: PathRange,
}

/// Which form the first-order impulse integrands are reported in: against the
/// fully compensated component family, or against the full process with the
/// order-1 impulse integrands adjusted by the component integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrandForm {
    ComponentForm,
    FullProcessForm,
}

#[derive(Debug, Clone)]
pub struct BucketDiagnostics {
    pub bucket: usize,
    pub cond_proxy: f64,
    pub dropped_columns: usize,
}

#[derive(Debug, Clone)]
pub struct IntegrandRow {
    pub bucket: usize,
    pub t_left: f64,
    pub element: String,
    pub mean: f64,
    pub std_err: f64,
}

pub struct RepresentationEstimate {
    pub sample: SampleId,
    pub form: IntegrandForm,
    pub k_order: usize,
    pub l_order: usize,
    pub buckets: usize,
    pub feature_timing: FeatureTiming,
    /// Bucket boundaries t_0 = 0 .. t_B = horizon.
    pub boundaries: Vec<f64>,
    /// Boundary-regression coefficients (one per boundary 0..B-1).
    pub theta: Vec<Vec<f64>>,
    /// Per bucket: flattened q x r coefficient matrix (feature-major).
    pub coeff: Vec<Vec<f64>>,
    pub n_features: usize,
    pub n_regressors: usize,
    pub element_labels: Vec<String>,
    /// Bucket-resolution in-sample residual (relative, with standard error).
    pub in_sample_residual: (f64, f64),
    pub diagnostics: Vec<BucketDiagnostics>,
    pub boundary_cond: Vec<f64>,
    /// Which regressor martingales were active (redundant directions pruned
    /// by the bracket-gram kept sets carry zero coefficients).
    pub active: Vec<bool>,
    /// Per bucket: feature second-moment matrix over the estimation sample
    /// cells (standard-error proxy for the summaries).
    feature_second: Vec<Vec<f64>>,
    /// Per bucket: bracket-weighted feature sums per regressor (q x r) and
    /// total bracket mass per regressor; integrands are identified under
    /// these measures, so summary means use them.
    feature_bracket: Vec<Vec<f64>>,
    bracket_mass: Vec<Vec<f64>>,
    n_paths: u64,
}

impl RepresentationEstimate {
    fn coeff_at(&self, bucket: usize, feature: usize, regressor: usize) -> f64 {
        self.coeff[bucket][feature * self.n_regressors + regressor]
    }

    /// Whether the reporting form adjusts this regressor (the order-1 impulse
    /// integrands pick up the component integrand in the full-process form).
    fn is_psi1(&self, regressor: usize) -> bool {
        let n_states = n_states_of(self);
        (0..n_states).any(|s| regressor == self.psi1_regressor_index(s))
    }

    /// Integrand value for one regressor given a feature vector, in the
    /// estimate's reporting form. Coefficients are stored in the
    /// compensated-component form; the full-process form subtracts the
    /// component integrand from each order-1 impulse integrand.
    pub fn integrand(&self, bucket: usize, regressor: usize, features: &[f64]) -> f64 {
        let base = self.integrand_component_form(bucket, regressor, features);
        if self.form == IntegrandForm::FullProcessForm && self.is_psi1(regressor) {
            base - self.integrand_component_form(bucket, 0, features)
        } else {
            base
        }
    }

    fn integrand_component_form(&self, bucket: usize, regressor: usize, features: &[f64]) -> f64 {
        let c = &self.coeff[bucket];
        let r = self.n_regressors;
        features
            .iter()
            .enumerate()
            .map(|(q, f)| f * c[q * r + regressor])
            .sum()
    }

    /// Effective feature-coefficient for a regressor in the reporting form.
    fn view_coeff(&self, bucket: usize, feature: usize, regressor: usize) -> f64 {
        let base = self.coeff_at(bucket, feature, regressor);
        if self.form == IntegrandForm::FullProcessForm && self.is_psi1(regressor) {
            base - self.coeff_at(bucket, feature, 0)
        } else {
            base
        }
    }

    /// Bracket-weighted mean integrand for one regressor in one bucket: the
    /// fitted integrand function averaged under the measure it acts on.
    pub fn bucket_integrand(&self, bucket: usize, regressor: usize) -> f64 {
        let q_n = self.n_features;
        let mass = self.bracket_mass[bucket][regressor];
        if mass <= 0.0 {
            return 0.0;
        }
        let fw = &self.feature_bracket[bucket];
        (0..q_n)
            .map(|q| self.view_coeff(bucket, q, regressor) * fw[q * self.n_regressors + regressor])
            .sum::<f64>()
            / mass
    }

    /// Bucket-mean integrand table with standard errors of the means, in the
    /// estimate's reporting form. Means are bracket-weighted (the integrand
    /// is only identified where its integrator has intensity).
    pub fn integrand_table(&self) -> Vec<IntegrandRow> {
        let q_n = self.n_features;
        let mut rows = Vec::new();
        for b in 0..self.buckets {
            let fsec = &self.feature_second[b];
            for r in 0..self.n_regressors {
                let mean = self.bucket_integrand(b, r);
                // Spread proxy: unweighted Var(h) = c' E[ff'] c - mean^2.
                let mut second = 0.0;
                for a in 0..q_n {
                    let ca = self.view_coeff(b, a, r);
                    if ca == 0.0 {
                        continue;
                    }
                    for c2 in 0..q_n {
                        second += ca * self.view_coeff(b, c2, r) * fsec[a * q_n + c2];
                    }
                }
                let var = (second - mean * mean).max(0.0);
                let std_err = (var / self.n_paths.max(1) as f64).sqrt();
                rows.push(IntegrandRow {
                    bucket: b,
                    t_left: self.boundaries[b],
                    element: self.element_labels[r].clone(),
                    mean,
                    std_err,
                });
            }
        }
        rows
    }

    /// Bracket-weighted mean integrand for one element across buckets, in the
    /// estimate's reporting form.
    pub fn mean_integrand(&self, element: &str) -> f64 {
        let r = self
            .element_labels
            .iter()
            .position(|l| l == element)
            .expect("element label");
        let mut num = 0.0;
        let mut mass = 0.0;
        for b in 0..self.buckets {
            let m = self.bracket_mass[b][r];
            num += self.bucket_integrand(b, r) * m;
            mass += m;
        }
        if mass <= 0.0 {
            0.0
        } else {
            num / mass
        }
    }

    fn psi1_regressor_index(&self, state: usize) -> usize {
        // Layout: power orders 1..=K, counts 1..=N, then (state, order) blocks.
        self.k_order + n_states_of(self) + state * self.l_order
    }

    /// Report the integrands in the full-process form (order-1 impulse
    /// integrands adjusted by the component integrand). The stored
    /// coefficients are untouched, so converting back is exact.
    pub fn to_full_process_form(mut self) -> Self {
        self.form = IntegrandForm::FullProcessForm;
        self
    }

    pub fn to_component_form(mut self) -> Self {
        self.form = IntegrandForm::ComponentForm;
        self
    }
}

fn n_states_of(e: &RepresentationEstimate) -> usize {
    (e.n_regressors - e.k_order) / (1 + e.l_order)
}

#[derive(Debug, Clone)]
pub struct ReplicationReport {
    pub n_paths: u64,
    pub rmse: f64,
    pub payoff_std: f64,
    /// RMSE over the centered payoff norm; falls back to the absolute RMSE
    /// when the payoff is (numerically) deterministic.
    pub rel_error: f64,
    pub rel_std_err: f64,
    pub absolute_norm: bool,
}

struct MomentAcc {
    n: u64,
    sum_sq_err: f64,
    sum_quad_err: f64,
    sum_payoff: f64,
    sum_payoff_sq: f64,
}

impl MomentAcc {
    fn new() -> Self {
        MomentAcc {
            n: 0,
            sum_sq_err: 0.0,
            sum_quad_err: 0.0,
            sum_payoff: 0.0,
            sum_payoff_sq: 0.0,
        }
    }

    fn push(&mut self, err: f64, payoff: f64) {
        self.n += 1;
        self.sum_sq_err += err * err;
        self.sum_quad_err += err * err * err * err;
        self.sum_payoff += payoff;
        self.sum_payoff_sq += payoff * payoff;
    }

    fn merge(&mut self, o: MomentAcc) {
        self.n += o.n;
        self.sum_sq_err += o.sum_sq_err;
        self.sum_quad_err += o.sum_quad_err;
        self.sum_payoff += o.sum_payoff;
        self.sum_payoff_sq += o.sum_payoff_sq;
    }

    fn report(&self) -> ReplicationReport {
        let n = self.n.max(1) as f64;
        let mse = self.sum_sq_err / n;
        let payoff_mean = self.sum_payoff / n;
        let payoff_var = (self.sum_payoff_sq / n - payoff_mean * payoff_mean).max(0.0);
        let rmse = mse.sqrt();
        let payoff_std = payoff_var.sqrt();
        let absolute = payoff_std < 1e-12;
        let rel = if absolute { rmse } else { rmse / payoff_std };
        // Delta method on mean squared error.
        let var_mse = ((self.sum_quad_err / n - mse * mse).max(0.0)) / n;
        let rel_se = if rmse == 0.0 {
            0.0
        } else if absolute {
            var_mse.sqrt() / (2.0 * rmse)
        } else {
            var_mse.sqrt() / (2.0 * rmse * payoff_std)
        };
        ReplicationReport {
            n_paths: self.n,
            rmse,
            payoff_std,
            rel_error: rel,
            rel_std_err: rel_se,
            absolute_norm: absolute,
        }
    }
}

/// Estimate per-bucket integrands of the payoff against the compensated
/// martingale family on `range`'s paths.
pub fn estimate_predictable_representation(
    scn: &Scenario,
    range: PathRange,
    payoff: &PayoffSpec,
    opts: &EstimateOptions,
) -> Result<RepresentationEstimate> {
    payoff.check_against(scn)?;
    if opts.k_order == 0 || opts.k_order > scn.k_order() {
        return Err(Error::Validation(format!(
            "regressor power order {} outside 1..={}",
            opts.k_order,
            scn.k_order()
        )));
    }
    if opts.l_order == 0 || opts.l_order > scn.l_order() {
        return Err(Error::Validation(format!(
            "regressor impulse order {} outside 1..={}",
            opts.l_order,
            scn.l_order()
        )));
    }
    let n_cells = scn.n_cells();
    let buckets = opts.buckets;
    if buckets == 0 || n_cells % buckets != 0 {
        return Err(Error::Validation(format!(
            "bucket count {buckets} must divide the {n_cells} grid cells"
        )));
    }
    let n_states = scn.n_states();
    // Feature catalog sizes always follow the scenario truncations; the
    // regressor family is truncated by the options (so truncation sweeps vary
    // the basis while the features stay fixed). Boundary fits use the full
    // catalog, interactions drop the cubic term.
    let qb_n = 3 * n_states + 3 + scn.k_order() + n_states * (1 + scn.l_order());
    let q_n = qb_n - 1;
    let r_n = opts.k_order + n_states * (1 + opts.l_order);
    let z_n = q_n * r_n;
    if range.count < 10 * z_n as u64 {
        return Err(Error::Validation(format!(
            "{} paths are too few for {} regressors per bucket (need >= {})",
            range.count,
            z_n,
            10 * z_n
        )));
    }

    let horizon = scn.horizon();
    let dt = scn.dt();
    let cells_per_bucket = n_cells / buckets;
    let bucket_dt = cells_per_bucket as f64 * dt;
    let boundaries: Vec<f64> = (0..=buckets).map(|b| b as f64 * bucket_dt).collect();
    // One extra intercept column per bucket regression: the true targets are
    // martingale integrals (population mean zero given anything at the left
    // endpoint), but the sample means of the columns are not exactly zero and
    // without an intercept the buckets chase each other's sample-mean noise
    // through weak columns. The intercept coefficient is a diagnostic and is
    // never used in replication.
    let zf_n = z_n + 1;

    // Regression columns: per bucket, the cell-resolution quadrature
    // sum(cells in bucket) f_q(cell left) * dN_r(cell) -- the same functional
    // form replication evaluates, so fitted coefficients extrapolate inside
    // buckets (in particular through the first bucket, where every
    // path-dependent feature is still zero at the left boundary).

    // Pass A: boundary normal equations for the conditional-expectation
    // proxy, split by path parity. Targets later use the opposite half's fit
    // (cross-fitting), so the proxy's estimation noise cannot be chased
    // in-sample by the increment regressions; the stored theta for
    // out-of-sample replication uses both halves.
    struct PassA {
        ff: Vec<Vec<f64>>,
        fy: Vec<Vec<f64>>,
        n: u64,
    }
    let boundaries_a = boundaries.clone();
    let pass_a = fold_paths(
        scn,
        range,
        || PassA {
            ff: vec![vec![0.0; qb_n * qb_n]; 2 * buckets],
            fy: vec![vec![0.0; qb_n]; 2 * buckets],
            n: 0,
        },
        |acc, real| {
            let d = DerivedPath::new(scn, real);
            let y = payoff.evaluate(&d, horizon);
            let half = (real.index % 2) as usize;
            let mut f = Vec::with_capacity(qb_n);
            for b in 0..buckets {
                d.features(boundaries_a[b], &mut f);
                let slot = half * buckets + b;
                let ff = &mut acc.ff[slot];
                for a in 0..qb_n {
                    let fa = f[a];
                    if fa == 0.0 {
                        continue;
                    }
                    for c in 0..qb_n {
                        ff[a * qb_n + c] += fa * f[c];
                    }
                    acc.fy[slot][a] += fa * y;
                }
            }
            acc.n += 1;
            Ok(())
        },
        |total, part| {
            for b in 0..2 * buckets {
                for i in 0..qb_n * qb_n {
                    total.ff[b][i] += part.ff[b][i];
                }
                for i in 0..qb_n {
                    total.fy[b][i] += part.fy[b][i];
                }
            }
            total.n += part.n;
        },
    )?;
    let n_paths = pass_a.n;

    // theta_half[h]: fitted on the opposite parity (applied to paths of
    // parity h); theta: fitted on everything (stored, used out of sample).
    let mut theta = Vec::with_capacity(buckets);
    let mut theta_half: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut boundary_cond = Vec::with_capacity(buckets);
    for b in 0..buckets {
        let mut ff_all = pass_a.ff[b].clone();
        let mut fy_all = pass_a.fy[b].clone();
        for i in 0..qb_n * qb_n {
            ff_all[i] += pass_a.ff[buckets + b][i];
        }
        for i in 0..qb_n {
            fy_all[i] += pass_a.fy[buckets + b][i];
        }
        let solver = scaled_psd_solver(&ff_all, qb_n, 0.0, 1e-9, 1e-6)?;
        boundary_cond.push(solver.cond_proxy());
        theta.push(solver.solve(&fy_all));
        for h in 0..2 {
            let other = 1 - h;
            let solver_h =
                scaled_psd_solver(&pass_a.ff[other * buckets + b], qb_n, 0.0, 1e-9, 1e-6)?;
            theta_half[h].push(solver_h.solve(&pass_a.fy[other * buckets + b]));
        }
    }

    // Shared per-path machinery: bucket-level regression columns and the
    // boundary proxy values. Pruned regressors (redundant under the bracket
    // grams) are masked out of the increments before the columns are formed.
    let active = active_regressors(scn, opts.k_order, opts.l_order);
    let timing = opts.feature_timing;
    let k_order = opts.k_order;
    let l_order = opts.l_order;
    let active_ref = &active;
    struct CellStats<'a> {
        ff: &'a mut [Vec<f64>],
        fw: &'a mut [Vec<f64>],
        w_sum: &'a mut [Vec<f64>],
    }
    let build_z = |d: &DerivedPath,
                   f: &mut Vec<f64>,
                   dn: &mut Vec<f64>,
                   z_all: &mut [Vec<f64>],
                   mut cell_stats: Option<CellStats>| {
        for z in z_all.iter_mut() {
            for v in z.iter_mut() {
                *v = 0.0;
            }
            z[z_n] = 1.0;
        }
        let mut w = Vec::with_capacity(r_n);
        for cell in 0..n_cells {
            let a = cell as f64 * dt;
            let b_t = (cell + 1) as f64 * dt;
            let bucket = cell / cells_per_bucket;
            let f_time = if timing == FeatureTiming::LeftEndpoint { a } else { b_t };
            d.interaction_features(f_time, f);
            d.martingale_increments(a, b_t, k_order, l_order, dn);
            for (ri, act) in active_ref.iter().enumerate() {
                if !act {
                    dn[ri] = 0.0;
                }
            }
            let z = &mut z_all[bucket];
            for (q, &fq) in f.iter().enumerate() {
                if fq == 0.0 {
                    continue;
                }
                let row = q * r_n;
                for (ri, &nr) in dn.iter().enumerate() {
                    z[row + ri] += fq * nr;
                }
            }
            if let Some(stats) = cell_stats.as_mut() {
                d.bracket_increments(a, b_t, k_order, l_order, &mut w);
                let ffb = &mut stats.ff[bucket];
                let fwb = &mut stats.fw[bucket];
                for a2 in 0..q_n {
                    let fa = f[a2];
                    if fa == 0.0 {
                        continue;
                    }
                    for c2 in 0..q_n {
                        ffb[a2 * q_n + c2] += fa * f[c2];
                    }
                    for (ri, &wr) in w.iter().enumerate() {
                        fwb[a2 * r_n + ri] += fa * wr;
                    }
                }
                for (ri, &wr) in w.iter().enumerate() {
                    stats.w_sum[bucket][ri] += wr;
                }
            }
        }
    };
    let theta_half_ref = &theta_half;
    let m_hat_at = |d: &DerivedPath, f: &mut Vec<f64>, y: f64, b: usize, half: usize| -> f64 {
        if b == buckets {
            y
        } else {
            d.features(boundaries[b], f);
            theta_half_ref[half][b]
                .iter()
                .zip(f.iter())
                .map(|(t, x)| t * x)
                .sum()
        }
    };

    // Pass B: normal matrices over the columns, warm-start targets from the
    // proxy increments, and per-bucket cell-level feature summaries.
    struct PassB {
        zz: Vec<Vec<f64>>,
        zy: Vec<Vec<f64>>,
        ff: Vec<Vec<f64>>,
        fw: Vec<Vec<f64>>,
        w_sum: Vec<Vec<f64>>,
    }
    let pass_b = fold_paths(
        scn,
        range,
        || PassB {
            zz: vec![vec![0.0; zf_n * zf_n]; buckets],
            zy: vec![vec![0.0; zf_n]; buckets],
            ff: vec![vec![0.0; q_n * q_n]; buckets],
            fw: vec![vec![0.0; q_n * r_n]; buckets],
            w_sum: vec![vec![0.0; r_n]; buckets],
        },
        |acc, real| {
            let d = DerivedPath::new(scn, real);
            let y = payoff.evaluate(&d, horizon);
            let mut f = Vec::with_capacity(q_n);
            let mut dn = Vec::with_capacity(r_n);
            let mut z_all: Vec<Vec<f64>> = vec![vec![0.0; zf_n]; buckets];
            build_z(
                &d,
                &mut f,
                &mut dn,
                &mut z_all,
                Some(CellStats {
                    ff: &mut acc.ff,
                    fw: &mut acc.fw,
                    w_sum: &mut acc.w_sum,
                }),
            );
            let half = (real.index % 2) as usize;
            for b in 0..buckets {
                let target = m_hat_at(&d, &mut f, y, b + 1, half) - m_hat_at(&d, &mut f, y, b, half);
                let z = &z_all[b];
                let zz = &mut acc.zz[b];
                let zy = &mut acc.zy[b];
                for a in 0..zf_n {
                    let za = z[a];
                    if za == 0.0 {
                        continue;
                    }
                    for c in a..zf_n {
                        zz[a * zf_n + c] += za * z[c];
                    }
                    zy[a] += za * target;
                }
            }
            Ok(())
        },
        |total, part| {
            for b in 0..buckets {
                for i in 0..zf_n * zf_n {
                    total.zz[b][i] += part.zz[b][i];
                }
                for i in 0..zf_n {
                    total.zy[b][i] += part.zy[b][i];
                }
                for i in 0..q_n * q_n {
                    total.ff[b][i] += part.ff[b][i];
                }
                for i in 0..q_n * r_n {
                    total.fw[b][i] += part.fw[b][i];
                }
                for i in 0..r_n {
                    total.w_sum[b][i] += part.w_sum[b][i];
                }
            }
        },
    )?;

    let cell_count = (n_paths as f64) * cells_per_bucket as f64;
    let feature_second: Vec<Vec<f64>> = pass_b
        .ff
        .iter()
        .map(|v| v.iter().map(|s| s / cell_count).collect())
        .collect();
    let feature_bracket = pass_b.fw;
    let bracket_mass = pass_b.w_sum;

    // Symmetrize the upper-triangular accumulation and factor once per bucket.
    let mut factors = Vec::with_capacity(buckets);
    let mut diagnostics = Vec::with_capacity(buckets);
    let mut zz_all = pass_b.zz;
    for (b, zz) in zz_all.iter_mut().enumerate() {
        for a in 0..zf_n {
            for c in 0..a {
                zz[a * zf_n + c] = zz[c * zf_n + a];
            }
        }
        let solver = scaled_psd_solver(zz, zf_n, opts.ridge, 1e-8, 1e-6)?;
        diagnostics.push(BucketDiagnostics {
            bucket: b,
            cond_proxy: solver.cond_proxy(),
            dropped_columns: solver.dropped(),
        });
        factors.push(solver);
    }
    let mut coeff: Vec<Vec<f64>> = (0..buckets).map(|b| factors[b].solve(&pass_b.zy[b])).collect();

    // Jacobi sweeps on the unbiased target: payoff minus the boundary proxy
    // at zero minus every other bucket's fitted sum. Cross-bucket columns are
    // population-orthogonal (martingale increments), so each sweep is a block
    // update of the joint least squares across buckets; the warm start's bias
    // disappears whenever the payoff's conditional expectation is outside the
    // boundary feature span.
    for _ in 0..opts.sweeps {
        let coeff_prev = coeff.clone();
        let zy_sweep = fold_paths(
            scn,
            range,
            || vec![vec![0.0; zf_n]; buckets],
            |acc, real| {
                let d = DerivedPath::new(scn, real);
                let y = payoff.evaluate(&d, horizon);
                let mut f = Vec::with_capacity(q_n);
                let mut dn = Vec::with_capacity(r_n);
                let mut z_all: Vec<Vec<f64>> = vec![vec![0.0; zf_n]; buckets];
                build_z(&d, &mut f, &mut dn, &mut z_all, None);
                let half = (real.index % 2) as usize;
                let m0 = m_hat_at(&d, &mut f, y, 0, half);
                let s: Vec<f64> = (0..buckets)
                    .map(|b| z_all[b].iter().zip(&coeff_prev[b]).map(|(a, c)| a * c).sum())
                    .collect();
                let s_total: f64 = s.iter().sum();
                for b in 0..buckets {
                    let target = y - m0 - (s_total - s[b]);
                    let zy = &mut acc[b];
                    for (a, &za) in z_all[b].iter().enumerate() {
                        if za != 0.0 {
                            zy[a] += za * target;
                        }
                    }
                }
                Ok(())
            },
            |total, part| {
                for b in 0..buckets {
                    for i in 0..zf_n {
                        total[b][i] += part[b][i];
                    }
                }
            },
        )?;
        for b in 0..buckets {
            coeff[b] = factors[b].solve(&zy_sweep[b]);
        }
    }

    // Final pass: in-sample replication residual at grid resolution (the
    // fitted object and the replication quadrature coincide by construction).
    let coeff_d = coeff.clone();
    let theta_d0 = theta[0].clone();
    let residual_acc = fold_paths(
        scn,
        range,
        MomentAcc::new,
        |acc, real| {
            let d = DerivedPath::new(scn, real);
            let y = payoff.evaluate(&d, horizon);
            let mut f = Vec::with_capacity(q_n);
            let mut dn = Vec::with_capacity(r_n);
            let mut z_all: Vec<Vec<f64>> = vec![vec![0.0; zf_n]; buckets];
            build_z(&d, &mut f, &mut dn, &mut z_all, None);
            // In-sample residual mirrors replication: the stored (full-sample)
            // proxy provides the time-zero level.
            d.features(0.0, &mut f);
            let mut r_val: f64 = theta_d0.iter().zip(f.iter()).map(|(t, x)| t * x).sum();
            for b in 0..buckets {
                // Intercept column excluded: it is not an integrand.
                r_val += z_all[b][..z_n]
                    .iter()
                    .zip(&coeff_d[b][..z_n])
                    .map(|(a, c)| a * c)
                    .sum::<f64>();
            }
            acc.push(y - r_val, y);
            Ok(())
        },
        MomentAcc::merge,
    )?;
    let in_sample = residual_acc.report();

    Ok(RepresentationEstimate {
        sample: SampleId {
            model_hash: model_hash(scn),
            master_seed: scn.config.master_seed,
            range,
        },
        form: IntegrandForm::ComponentForm,
        k_order: opts.k_order,
        l_order: opts.l_order,
        buckets,
        feature_timing: opts.feature_timing,
        boundaries,
        theta,
        coeff,
        n_features: q_n,
        n_regressors: r_n,
        element_labels: regressor_labels(n_states, opts.k_order, opts.l_order),
        in_sample_residual: (in_sample.rel_error, in_sample.rel_std_err),
        diagnostics,
        boundary_cond,
        active,
        feature_second,
        feature_bracket,
        bracket_mass,
        n_paths,
    })
}

/// Regressor activity mask: martingales whose direction is redundant under
/// the scenario's bracket grams (the ortho module's kept sets) are pruned, so
/// integrand weight cannot split across pathwise-identical integrators (e.g.
/// the order-2 impulse martingale of a two-point law, which IS the count
/// martingale).
pub fn active_regressors(scn: &Scenario, k_order: usize, l_order: usize) -> Vec<bool> {
    let n = scn.n_states();
    let mut active = Vec::with_capacity(k_order + n * (1 + l_order));
    let mut power_kept = vec![false; k_order];
    for c in &scn.teugels_coeffs {
        for &r in &c.kept {
            if r < k_order {
                power_kept[r] = true;
            }
        }
    }
    active.extend_from_slice(&power_kept);
    for _ in 0..n {
        active.push(true);
    }
    for i in 0..n {
        for l in 1..=l_order {
            let keep = scn.impulse_coeffs[i]
                .as_ref()
                .map_or(false, |c| c.kept.contains(&l));
            active.push(keep);
        }
    }
    active
}

/// Hash of the model content (seed, path counts and output location zeroed):
/// replication requires the same model, not the same sample.
pub fn model_hash(scn: &Scenario) -> String {
    let mut cfg = scn.config.clone();
    cfg.master_seed = 0;
    cfg.output_dir = String::new();
    cfg.paths = Default::default();
    cfg.hash()
}

/// Replicate the payoff on an independent path set with the fitted
/// integrands, evaluated per grid cell at left endpoints.
pub fn replicate(
    scn: &Scenario,
    range: PathRange,
    payoff: &PayoffSpec,
    estimate: &RepresentationEstimate,
) -> Result<ReplicationReport> {
    payoff.check_against(scn)?;
    if estimate.sample.model_hash != model_hash(scn) {
        return Err(Error::Validation(
            "estimate was fitted under a different model configuration".into(),
        ));
    }
    if estimate.sample.master_seed == scn.config.master_seed
        && estimate.sample.range.overlaps(&range)
    {
        return Err(Error::Validation(format!(
            "evaluation paths [{}, {}) overlap the estimation paths [{}, {}): out-of-sample replication requires disjoint samples",
            range.start,
            range.end(),
            estimate.sample.range.start,
            estimate.sample.range.end()
        )));
    }
    let n_cells = scn.n_cells();
    if n_cells % estimate.buckets != 0 {
        return Err(Error::Validation(
            "estimate bucket count does not divide the scenario grid".into(),
        ));
    }
    // Coefficients are stored in the compensated-component form regardless of
    // the reporting form, which is exactly what the replication basis needs.
    let est = estimate;
    let cells_per_bucket = n_cells / est.buckets;
    let dt = scn.dt();
    let q_n = est.n_features;
    let r_n = est.n_regressors;
    let horizon = scn.horizon();

    let acc = fold_paths(
        scn,
        range,
        MomentAcc::new,
        |acc, real| {
            let d = DerivedPath::new(scn, real);
            let y = payoff.evaluate(&d, horizon);
            let mut f = Vec::with_capacity(q_n);
            d.features(0.0, &mut f);
            let mut r_val: f64 = est.theta[0].iter().zip(&f).map(|(t, x)| t * x).sum();
            let mut dn = Vec::with_capacity(r_n);
            let mut h = vec![0.0; r_n];
            for cell in 0..n_cells {
                let a = cell as f64 * dt;
                let b = (cell + 1) as f64 * dt;
                let bucket = cell / cells_per_bucket;
                let f_time = if est.feature_timing == FeatureTiming::LeftEndpoint { a } else { b };
                d.interaction_features(f_time, &mut f);
                let c = &est.coeff[bucket];
                for r in 0..r_n {
                    let mut v = 0.0;
                    for (q, &fq) in f.iter().enumerate() {
                        if fq != 0.0 {
                            v += fq * c[q * r_n + r];
                        }
                    }
                    h[r] = v;
                }
                d.martingale_increments(a, b, est.k_order, est.l_order, &mut dn);
                for (r, &nr) in dn.iter().enumerate() {
                    if nr != 0.0 {
                        r_val += h[r] * nr;
                    }
                }
            }
            acc.push(y - r_val, y);
            Ok(())
        },
        MomentAcc::merge,
    )?;
    Ok(acc.report())
}

#[cfg(test)]
fn clone_estimate(e: &RepresentationEstimate) -> RepresentationEstimate {
    RepresentationEstimate {
        sample: e.sample.clone(),
        form: e.form,
        k_order: e.k_order,
        l_order: e.l_order,
        buckets: e.buckets,
        feature_timing: e.feature_timing,
        boundaries: e.boundaries.clone(),
        theta: e.theta.clone(),
        coeff: e.coeff.clone(),
        n_features: e.n_features,
        n_regressors: e.n_regressors,
        element_labels: e.element_labels.clone(),
        in_sample_residual: e.in_sample_residual,
        diagnostics: e.diagnostics.clone(),
        boundary_cond: e.boundary_cond.clone(),
        active: e.active.clone(),
        feature_second: e.feature_second.clone(),
        feature_bracket: e.feature_bracket.clone(),
        bracket_mass: e.bracket_mass.clone(),
        n_paths: e.n_paths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::MarkDistribution;
    use crate::harness::config::ScenarioConfig;

    fn small_canonical() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::canonical();
        cfg.grid_step = 1.0 / 256.0;
        cfg
    }

    fn brownian_config() -> ScenarioConfig {
        let mut cfg = small_canonical();
        cfg.levy.jump_rate = 0.0;
        cfg.levy.jump_dist = MarkDistribution::PointMass { value: 0.0 };
        cfg.impulse.laws = vec![MarkDistribution::PointMass { value: 0.0 }; 2];
        cfg
    }

    // The quadratic payoff needs the production grid: the within-cell
    // variation of its integrand is ~sqrt(grid step) of the payoff scale.
    fn brownian_fine_config() -> ScenarioConfig {
        let mut cfg = brownian_config();
        cfg.grid_step = 1.0 / 1024.0;
        cfg
    }

    fn opts(scn: &Scenario) -> EstimateOptions {
        EstimateOptions::from_scenario(scn)
    }

    #[test]
    fn probe_grid_dependence() {
        let payoff = PayoffSpec::TerminalCount { state: 1 };
        for step in [256.0f64, 512.0, 1024.0] {
            let mut cfg = ScenarioConfig::canonical();
            cfg.grid_step = 1.0 / step;
            let scn = Scenario::new(cfg).unwrap();
            let o = opts(&scn);
            let est = estimate_predictable_representation(&scn, PathRange::new(0, 30_000), &payoff, &o).unwrap();
            let rep = replicate(&scn, PathRange::new(30_000, 30_000), &payoff, &est).unwrap();
            eprintln!("cells {step}: in {:.4} out {:.4} (se {:.4}) h_phi2 {:.4} cond0 {:.2e} dropped {}",
                est.in_sample_residual.0, rep.rel_error, rep.rel_std_err,
                est.mean_integrand("PhiBar_2"), est.diagnostics[0].cond_proxy, est.diagnostics[0].dropped_columns);
        }
        let payoff = PayoffSpec::BasisH { position: 2 };
        for step in [256.0f64, 1024.0] {
            let mut cfg = ScenarioConfig::canonical();
            cfg.grid_step = 1.0 / step;
            let scn = Scenario::new(cfg).unwrap();
            let o = opts(&scn);
            let est = estimate_predictable_representation(&scn, PathRange::new(0, 30_000), &payoff, &o).unwrap();
            let rep = replicate(&scn, PathRange::new(30_000, 30_000), &payoff, &est).unwrap();
            eprintln!("H2 cells {step}: in {:.4} out {:.4} h_x2 {:.4}", est.in_sample_residual.0, rep.rel_error, est.mean_integrand("XbarPow_2"));
        }
    }

    #[test]
    fn count_martingale_payoff_recovers_unit_integrand() {
        let scn = Scenario::new(small_canonical()).unwrap();
        let payoff = PayoffSpec::TerminalCount { state: 1 };
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 30_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        let h_phi = est.mean_integrand("PhiBar_2");
        assert!((h_phi - 1.0).abs() <= 0.05, "h_phi = {h_phi}");
        for label in est.element_labels.clone() {
            if label != "PhiBar_2" {
                let v = est.mean_integrand(&label);
                assert!(v.abs() <= 0.05, "{label} integrand {v}");
            }
        }
        // Estimation noise scales as 1/sqrt(paths); this runs at 30k paths,
        // the full-scale (1e5 + 1e5) bound of 0.02 runs in the acceptance
        // suite.
        let rep = replicate(&scn, PathRange::new(30_000, 30_000), &payoff, &est).unwrap();
        assert!(rep.rel_error <= 0.07, "residual {}", rep.rel_error);
    }

    #[test]
    fn impulse_martingale_payoff_replicates() {
        let scn = Scenario::new(small_canonical()).unwrap();
        let payoff = PayoffSpec::TerminalImpulse { state: 0 };
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 30_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        let rep = replicate(&scn, PathRange::new(30_000, 30_000), &payoff, &est).unwrap();
        assert!(rep.rel_error <= 0.05, "residual {}", rep.rel_error);
    }

    #[test]
    fn zero_payoff_gives_zero_everything() {
        let scn = Scenario::new(small_canonical()).unwrap();
        let payoff = PayoffSpec::Polynomial {
            terms: vec![MonomialTerm {
                coeff: 0.0,
                x_power: 1,
                count_power: 0,
                impulse_power: 0,
                count_state: 0,
                impulse_state: 0,
            }],
        };
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 30_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        for row in est.integrand_table() {
            assert!(row.mean.abs() < 1e-9, "{} {}", row.element, row.mean);
        }
        let rep = replicate(&scn, PathRange::new(30_000, 30_000), &payoff, &est).unwrap();
        assert!(rep.rmse < 1e-9);
        assert!(rep.absolute_norm);
        assert_eq!(rep.rel_error, rep.rmse);
    }

    #[test]
    fn brownian_square_tracks_doubled_component() {
        let scn = Scenario::new(brownian_fine_config()).unwrap();
        let payoff = PayoffSpec::TerminalSquare;
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 30_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        // The order-1 integrand should track 2*Xbar(t). With the stored
        // feature summaries, E[(h - 2*Xbar)^2] = c'Fc - 4 c'F e_x + 4 F_xx
        // per bucket (F the feature second-moment matrix, e_x the Xbar
        // feature); aggregate an RMS tracking ratio across buckets.
        let q_n = est.n_features;
        let x_idx = scn.n_states();
        let mut num = 0.0;
        let mut den = 0.0;
        for b in 0..est.buckets {
            let fsec = &est.feature_second[b];
            let mut c_f_c = 0.0;
            let mut c_f_x = 0.0;
            for q in 0..q_n {
                let cq = est.coeff_at(b, q, 0);
                if cq == 0.0 {
                    continue;
                }
                c_f_x += cq * fsec[q * q_n + x_idx];
                for q2 in 0..q_n {
                    c_f_c += cq * est.coeff_at(b, q2, 0) * fsec[q * q_n + q2];
                }
            }
            let fxx = fsec[x_idx * q_n + x_idx];
            num += (c_f_c - 4.0 * c_f_x + 4.0 * fxx).max(0.0);
            den += 4.0 * fxx;
        }
        let tracking = (num / den).sqrt();
        assert!(tracking <= 0.10, "relative tracking error {tracking}");
        // Replication error at this reduced estimation scale sits near 0.05
        // with heavy-tailed eval-set variation; the 0.05 bound at the full
        // 1e5 + 1e5 scale runs in the acceptance suite.
        let rep = replicate(&scn, PathRange::new(30_000, 30_000), &payoff, &est).unwrap();
        assert!(rep.rel_error <= 0.09, "residual {}", rep.rel_error);
    }

    #[test]
    fn full_process_payoff_has_unit_component_integrand() {
        let mut cfg = small_canonical();
        cfg.levy.jump_dist = MarkDistribution::PointMass { value: 1.0 };
        let scn = Scenario::new(cfg).unwrap();
        let payoff = PayoffSpec::TerminalLinear;
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 30_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        let hx = est.mean_integrand("XbarPow_1");
        assert!((hx - 1.0).abs() <= 0.05, "component integrand {hx}");
        for i in 0..2 {
            let label = format!("PsiBar_{}_1", i + 1);
            let h = est.mean_integrand(&label);
            assert!((h - 1.0).abs() <= 0.05, "{label} {h}");
        }
        let full = clone_estimate(&est).to_full_process_form();
        for i in 0..2 {
            let label = format!("PsiBar_{}_1", i + 1);
            let h = full.mean_integrand(&label);
            assert!(h.abs() <= 0.05, "full-process form {label} {h}");
        }
        let rep = replicate(&scn, PathRange::new(30_000, 30_000), &payoff, &est).unwrap();
        assert!(rep.rel_error <= 0.05, "residual {}", rep.rel_error);
    }

    #[test]
    fn form_conversion_round_trips_exactly() {
        let scn = Scenario::new(small_canonical()).unwrap();
        let payoff = PayoffSpec::TerminalSquare;
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 16_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        let features: Vec<f64> = (0..est.n_features).map(|q| 0.1 * (q as f64 + 1.0)).collect();
        let before: Vec<f64> = (0..est.n_regressors)
            .map(|r| est.integrand(3, r, &features))
            .collect();
        let back = clone_estimate(&est).to_full_process_form().to_component_form();
        let after: Vec<f64> = (0..back.n_regressors)
            .map(|r| back.integrand(3, r, &features))
            .collect();
        assert_eq!(before, after, "round trip must be the identity, bit-exactly");
        assert_eq!(back.form, IntegrandForm::ComponentForm);

        // The two forms differ on the order-1 impulse integrands by exactly
        // the component integrand.
        let full = clone_estimate(&est).to_full_process_form();
        let hx = est.integrand(3, 0, &features);
        for s in 0..2 {
            let idx = est.k_order + 2 + s * est.l_order;
            let a = est.integrand(3, idx, &features);
            let b = full.integrand(3, idx, &features);
            assert_eq!(b, a - hx);
        }
        assert_eq!(full.integrand(3, 0, &features), hx);
    }

    #[test]
    fn lookahead_features_degrade_replication() {
        let scn = Scenario::new(brownian_config()).unwrap();
        let payoff = PayoffSpec::TerminalSquare;
        let mut o = opts(&scn);
        let est = estimate_predictable_representation(&scn, PathRange::new(0, 20_000), &payoff, &o)
            .unwrap();
        let base = replicate(&scn, PathRange::new(20_000, 20_000), &payoff, &est).unwrap();
        o.feature_timing = FeatureTiming::ShiftedForward;
        let shifted =
            estimate_predictable_representation(&scn, PathRange::new(0, 20_000), &payoff, &o)
                .unwrap();
        let bad = replicate(&scn, PathRange::new(20_000, 20_000), &payoff, &shifted).unwrap();
        assert!(
            bad.rel_error > base.rel_error + 4.0 * (base.rel_std_err + bad.rel_std_err),
            "look-ahead must degrade: base {} vs shifted {}",
            base.rel_error,
            bad.rel_error
        );
    }

    #[test]
    fn refusals() {
        let scn = Scenario::new(small_canonical()).unwrap();
        let payoff = PayoffSpec::TerminalCount { state: 0 };
        // Too few paths.
        assert!(estimate_predictable_representation(
            &scn,
            PathRange::new(0, 500),
            &payoff,
            &opts(&scn)
        )
        .is_err());
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 16_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        // Overlapping evaluation range.
        assert!(replicate(&scn, PathRange::new(8_000, 16_000), &payoff, &est).is_err());
        // Identical range.
        assert!(replicate(&scn, PathRange::new(0, 16_000), &payoff, &est).is_err());
        // Different model.
        let scn2 = Scenario::new(brownian_config()).unwrap();
        assert!(replicate(&scn2, PathRange::new(16_000, 8_000), &payoff, &est).is_err());
        // Disjoint range passes.
        assert!(replicate(&scn, PathRange::new(16_000, 12_000), &payoff, &est).is_ok());
    }

    #[test]
    fn indicator_payoff_is_sane() {
        let scn = Scenario::new(small_canonical()).unwrap();
        let payoff = PayoffSpec::Indicator { state: 1 };
        let est = estimate_predictable_representation(
            &scn,
            PathRange::new(0, 20_000),
            &payoff,
            &opts(&scn),
        )
        .unwrap();
        let rep = replicate(&scn, PathRange::new(20_000, 20_000), &payoff, &est).unwrap();
        assert!(rep.rel_error <= 0.2, "indicator residual {}", rep.rel_error);
        // The count integrands carry the jump of the conditional expectation.
        let h1 = est.mean_integrand("PhiBar_1");
        let h2 = est.mean_integrand("PhiBar_2");
        assert!((h2 - h1).abs() > 0.1, "state flip must load the counts: {h1} vs {h2}");
    }
}
