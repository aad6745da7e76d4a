//! Regime-modulated Ito-Levy component: drift and volatility ride the
//! background chain, jumps arrive as a finite-activity compound Poisson stream
//! and are passed through a per-state transform.
//!
//! Coefficients depend only on the chain state, so advancing the continuous
//! part between consecutive points of (grid, chain epochs, jump epochs) is
//! exact: the only randomness needed is the Wiener increment over each piece.
//! The `LevyDriver` materializes that Wiener skeleton once, which lets tests
//! re-evaluate the same path at several grid resolutions with shared
//! randomness.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chain::ChainPath;
use crate::dist::MarkDistribution;
use crate::error::{Error, Result};
use crate::rng::{path_rng, Stream};

/// Per-state transform applied to a raw Poisson mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpTransform {
    Identity,
    /// x -> slope * x
    Linear { slope: f64 },
    /// x -> slope * x + cubic * x^3 (odd, keeps sign symmetry of the marks)
    AffineOdd { slope: f64, cubic: f64 },
}

impl JumpTransform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            JumpTransform::Identity => x,
            JumpTransform::Linear { slope } => slope * x,
            JumpTransform::AffineOdd { slope, cubic } => slope * x + cubic * x * x * x,
        }
    }

    /// Raw moment order of the marks needed to evaluate E[gamma(X)^k].
    fn required_mark_order(&self, k: usize) -> usize {
        match self {
            JumpTransform::Identity | JumpTransform::Linear { .. } => k,
            JumpTransform::AffineOdd { cubic, .. } => {
                if *cubic == 0.0 {
                    k
                } else {
                    3 * k
                }
            }
        }
    }

    /// E[transform(X)^k] from the closed-form mark moments.
    pub fn moment(&self, dist: &MarkDistribution, k: usize) -> Result<f64> {
        match *self {
            JumpTransform::Identity => dist.moment(k),
            JumpTransform::Linear { slope } => Ok(slope.powi(k as i32) * dist.moment(k)?),
            JumpTransform::AffineOdd { slope, cubic } => {
                if cubic == 0.0 {
                    return Ok(slope.powi(k as i32) * dist.moment(k)?);
                }
                let mut total = 0.0;
                let mut binom = 1.0f64; // C(k, j)
                for j in 0..=k {
                    if j > 0 {
                        binom *= (k - j + 1) as f64 / j as f64;
                    }
                    let coeff = binom * slope.powi(j as i32) * cubic.powi((k - j) as i32);
                    if coeff != 0.0 {
                        total += coeff * dist.moment(3 * k - 2 * j)?;
                    }
                }
                Ok(total)
            }
        }
    }
}

/// Modulated coefficients of the Ito-Levy component plus its jump measure
/// (finite activity: rate times a catalog mark law).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLevyParams {
    pub drift: Vec<f64>,
    pub volatility: Vec<f64>,
    pub transforms: Vec<JumpTransform>,
    pub jump_rate: f64,
    pub mark_dist: MarkDistribution,
}

impl RegimeLevyParams {
    pub fn n_states(&self) -> usize {
        self.drift.len()
    }

    pub fn validate(&self, n_states: usize) -> Result<()> {
        if self.drift.len() != n_states
            || self.volatility.len() != n_states
            || self.transforms.len() != n_states
        {
            return Err(Error::Validation(format!(
                "levy parameter vectors must all have length {n_states} (got {}, {}, {})",
                self.drift.len(),
                self.volatility.len(),
                self.transforms.len()
            )));
        }
        for (i, &s) in self.volatility.iter().enumerate() {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Validation(format!(
                    "volatility for state {} must be >= 0, got {s}",
                    i + 1
                )));
            }
        }
        for (i, &m) in self.drift.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::Validation(format!("drift for state {} not finite", i + 1)));
            }
        }
        if !(self.jump_rate >= 0.0) || !self.jump_rate.is_finite() {
            return Err(Error::Validation(format!(
                "jump rate must be >= 0, got {}",
                self.jump_rate
            )));
        }
        self.mark_dist.validate()
    }

    /// E[gamma_i(mark)^k].
    pub fn gamma_moment(&self, state: usize, k: usize) -> Result<f64> {
        self.transforms[state].moment(&self.mark_dist, k)
    }

    /// Density of the order-k power compensator while in `state`.
    pub fn power_compensator_rate(&self, state: usize, k: usize) -> Result<f64> {
        if self.jump_rate == 0.0 {
            return Ok(0.0);
        }
        Ok(self.jump_rate * self.gamma_moment(state, k)?)
    }

    /// True when drift, volatility and transform do not depend on the state.
    pub fn is_state_independent(&self) -> bool {
        self.drift.windows(2).all(|w| w[0] == w[1])
            && self.volatility.windows(2).all(|w| w[0] == w[1])
            && self.transforms.windows(2).all(|w| w[0] == w[1])
    }

    fn check_levy_exponential_moments(&self, lambda: f64) -> Vec<(bool, String)> {
        self.transforms
            .iter()
            .map(|tr| {
                if self.jump_rate == 0.0 {
                    return (true, "no jump activity".to_string());
                }
                match tr {
                    JumpTransform::Identity => {
                        let ok = self.mark_dist.exp_abs_moment_finite(lambda);
                        (ok, format!("identity transform over {}", self.mark_dist.describe()))
                    }
                    JumpTransform::Linear { slope } => {
                        let ok = self.mark_dist.exp_abs_moment_finite(lambda * slope.abs());
                        (ok, format!("linear transform (slope {slope})"))
                    }
                    JumpTransform::AffineOdd { slope, cubic } => {
                        if *cubic == 0.0 {
                            let ok = self.mark_dist.exp_abs_moment_finite(lambda * slope.abs());
                            (ok, format!("linear transform (slope {slope})"))
                        } else if self.mark_dist.bounded_support() {
                            (true, "cubic transform over bounded marks".to_string())
                        } else {
                            (
                                false,
                                format!(
                                    "exp({lambda}*|x|^3) is not integrable against {}",
                                    self.mark_dist.describe()
                                ),
                            )
                        }
                    }
                }
            })
            .collect()
    }
}

/// Per-state exponential-moment verdicts for the jump measures.
#[derive(Debug, Clone)]
pub struct MomentConditionReport {
    pub lambda_probe: f64,
    /// Carried for the record; finite-activity measures make the small-jump
    /// exclusion immaterial.
    pub epsilon_probe: f64,
    pub pass: bool,
    pub states: Vec<StateMomentVerdict>,
}

#[derive(Debug, Clone)]
pub struct StateMomentVerdict {
    pub state: usize,
    pub levy_ok: bool,
    pub levy_detail: String,
    pub impulse_ok: bool,
    pub impulse_detail: String,
}

impl MomentConditionReport {
    pub fn failure_summary(&self) -> String {
        let mut parts = Vec::new();
        for v in &self.states {
            if !v.levy_ok {
                parts.push(format!("state {}: levy side — {}", v.state + 1, v.levy_detail));
            }
            if !v.impulse_ok {
                parts.push(format!("state {}: impulse side — {}", v.state + 1, v.impulse_detail));
            }
        }
        parts.join("; ")
    }
}

/// Analytic verdict on E exp(lambda |gamma_i(x)|) against the jump measure and
/// E exp(lambda |U^(i)|) for the impulse laws. Report-only.
pub fn check_moment_condition(
    params: &RegimeLevyParams,
    impulse_laws: &[MarkDistribution],
    lambda_probe: f64,
    epsilon_probe: f64,
) -> MomentConditionReport {
    let levy = params.check_levy_exponential_moments(lambda_probe);
    let mut states = Vec::with_capacity(levy.len());
    let mut pass = true;
    for (i, (levy_ok, levy_detail)) in levy.into_iter().enumerate() {
        let (impulse_ok, impulse_detail) = match impulse_laws.get(i) {
            Some(law) => (
                law.exp_abs_moment_finite(lambda_probe),
                law.describe(),
            ),
            None => (true, "no impulse law".to_string()),
        };
        pass &= levy_ok && impulse_ok;
        states.push(StateMomentVerdict {
            state: i,
            levy_ok,
            levy_detail,
            impulse_ok,
            impulse_detail,
        });
    }
    MomentConditionReport {
        lambda_probe,
        epsilon_probe,
        pass,
        states,
    }
}

/// One applied jump of the Levy component, with its exact left limit.
#[derive(Debug, Clone, Copy)]
pub struct LevyJump {
    pub time: f64,
    pub raw: f64,
    pub applied: f64,
    pub pre_value: f64,
    pub pre_state: usize,
}

/// Realized Levy component on a uniform grid plus exact jump records.
#[derive(Debug, Clone)]
pub struct LevyPath {
    pub dt: f64,
    pub horizon: f64,
    /// Values at grid times i * dt, i = 0..=n_cells. Jumps are carried at
    /// their exact epochs, not rounded to the grid.
    pub values: Vec<f64>,
    pub jumps: Vec<LevyJump>,
    /// Running sum of applied jumps at grid times.
    pub gamma_sum: Vec<f64>,
    /// Value at each chain epoch (the chain and the jump stream never fire
    /// together, so this is also the left limit there).
    pub chain_epoch_values: Vec<f64>,
    pub chain_id: u64,
}

impl LevyPath {
    pub fn n_cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time(&self, idx: usize) -> f64 {
        idx as f64 * self.dt
    }

    /// Grid index of a time that must lie on the grid.
    pub fn grid_index(&self, t: f64) -> usize {
        let idx = (t / self.dt).round() as usize;
        debug_assert!(
            (self.time(idx.min(self.n_cells())) - t).abs() <= 1e-9 * self.horizon.max(1.0),
            "time {t} is not a grid point (dt={})",
            self.dt
        );
        idx.min(self.n_cells())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.grid_index(t)]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PartitionPoint {
    t: f64,
    fine_idx: Option<u32>,
    epoch_idx: Option<u32>,
    jump_idx: Option<u32>,
}

/// Shared-randomness driver: the chain path, the exact jump stream, and a
/// Wiener skeleton over the union of the finest grid, chain epochs and jump
/// epochs. Any grid whose step is a multiple of the finest step can be
/// evaluated from it, bit-reproducibly.
pub struct LevyDriver {
    pub dt_fine: f64,
    pub n_fine: usize,
    pub horizon: f64,
    pub jump_times: Vec<f64>,
    pub jump_marks: Vec<f64>,
    partition: Vec<PartitionPoint>,
    wiener: Vec<f64>,
}

impl LevyDriver {
    pub fn new<R: Rng + ?Sized>(
        chain: &ChainPath,
        jump_rate: f64,
        mark_dist: &MarkDistribution,
        dt_fine: f64,
        n_fine: usize,
        wiener_rng: &mut R,
        jump_rng: &mut R,
    ) -> Result<Self> {
        let horizon = chain.horizon;
        if !(dt_fine > 0.0) || n_fine == 0 {
            return Err(Error::Validation(format!(
                "grid step must be positive and cover the horizon (dt={dt_fine}, cells={n_fine})"
            )));
        }
        if ((n_fine as f64) * dt_fine - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::Validation(format!(
                "grid step {dt_fine} times {n_fine} cells does not reach the horizon {horizon}"
            )));
        }

        // Jump stream: exponential inter-arrival times, mark drawn per arrival.
        let mut jump_times = Vec::new();
        let mut jump_marks = Vec::new();
        if jump_rate > 0.0 {
            let exp = Exp::new(jump_rate).unwrap();
            let mut t = 0.0;
            loop {
                t += exp.sample(jump_rng);
                if t > horizon {
                    break;
                }
                jump_times.push(t);
                jump_marks.push(mark_dist.sample(jump_rng));
            }
        }

        // Three-way ordered merge with exact-equality coalescing.
        let mut partition: Vec<PartitionPoint> = Vec::with_capacity(
            n_fine + 1 + chain.epochs.len() + jump_times.len(),
        );
        let (mut gi, mut ei, mut ji) = (0usize, 0usize, 0usize);
        let grid_t = |i: usize| i as f64 * dt_fine;
        while gi <= n_fine || ei < chain.epochs.len() || ji < jump_times.len() {
            let tg = if gi <= n_fine { grid_t(gi) } else { f64::INFINITY };
            let te = if ei < chain.epochs.len() { chain.epochs[ei] } else { f64::INFINITY };
            let tj = if ji < jump_times.len() { jump_times[ji] } else { f64::INFINITY };
            let t_next = tg.min(te).min(tj);
            let mut p = PartitionPoint { t: t_next, ..Default::default() };
            if tg == t_next {
                p.fine_idx = Some(gi as u32);
                gi += 1;
            }
            if te == t_next {
                p.epoch_idx = Some(ei as u32);
                ei += 1;
            }
            if tj == t_next {
                p.jump_idx = Some(ji as u32);
                ji += 1;
            }
            partition.push(p);
        }

        // Wiener skeleton over the partition.
        let mut wiener = Vec::with_capacity(partition.len());
        wiener.push(0.0);
        for m in 1..partition.len() {
            let dt = partition[m].t - partition[m - 1].t;
            let z: f64 = StandardNormal.sample(wiener_rng);
            let w = wiener[m - 1] + dt.max(0.0).sqrt() * z;
            wiener.push(w);
        }

        Ok(LevyDriver {
            dt_fine,
            n_fine,
            horizon,
            jump_times,
            jump_marks,
            partition,
            wiener,
        })
    }

    /// Exact evaluation on the grid with step `stride * dt_fine`.
    /// Integration intervals split at chain epochs and jump epochs, so the
    /// regime modulation carries no discretization error.
    pub fn evaluate(&self, params: &RegimeLevyParams, chain: &ChainPath, stride: usize) -> Result<LevyPath> {
        if stride == 0 || self.n_fine % stride != 0 {
            return Err(Error::Validation(format!(
                "stride {stride} must divide the {} fine cells",
                self.n_fine
            )));
        }
        params.validate(chain.n_states())?;

        let mut values = Vec::with_capacity(self.n_fine / stride + 1);
        let mut gamma_sum = Vec::with_capacity(values.capacity());
        let mut jumps = Vec::with_capacity(self.jump_times.len());
        let mut chain_epoch_values = Vec::with_capacity(chain.epochs.len());
        let mut x = 0.0f64;
        let mut gamma_running = 0.0f64;
        values.push(x);
        gamma_sum.push(gamma_running);

        for m in 1..self.partition.len() {
            let p = self.partition[m];
            let prev = self.partition[m - 1];
            // Regime is constant on the open interval; prev.t sits at its start.
            let state = chain.state_at(prev.t);
            x += params.drift[state] * (p.t - prev.t)
                + params.volatility[state] * (self.wiener[m] - self.wiener[m - 1]);
            if let Some(ji) = p.jump_idx {
                let raw = self.jump_marks[ji as usize];
                let applied = params.transforms[state].apply(raw);
                jumps.push(LevyJump {
                    time: p.t,
                    raw,
                    applied,
                    pre_value: x,
                    pre_state: state,
                });
                x += applied;
                gamma_running += applied;
            }
            if p.epoch_idx.is_some() {
                chain_epoch_values.push(x);
            }
            if let Some(fi) = p.fine_idx {
                if fi as usize % stride == 0 {
                    values.push(x);
                    gamma_sum.push(gamma_running);
                }
            }
        }

        Ok(LevyPath {
            dt: stride as f64 * self.dt_fine,
            horizon: self.horizon,
            values,
            jumps,
            gamma_sum,
            chain_epoch_values,
            chain_id: chain.id,
        })
    }

    /// Textbook discretization for convergence tests: coefficients (and the
    /// jump transform) frozen at the regime occupied at the left endpoint of
    /// each grid cell, no splitting at chain epochs. Shares the Wiener
    /// skeleton and jump stream with `evaluate`.
    pub fn evaluate_frozen(
        &self,
        params: &RegimeLevyParams,
        chain: &ChainPath,
        stride: usize,
    ) -> Result<Vec<f64>> {
        if stride == 0 || self.n_fine % stride != 0 {
            return Err(Error::Validation(format!(
                "stride {stride} must divide the {} fine cells",
                self.n_fine
            )));
        }
        // Wiener values at fine grid points.
        let mut w_fine = vec![0.0f64; self.n_fine + 1];
        for (m, p) in self.partition.iter().enumerate() {
            if let Some(fi) = p.fine_idx {
                w_fine[fi as usize] = self.wiener[m];
            }
        }
        let n_cells = self.n_fine / stride;
        let dt = stride as f64 * self.dt_fine;
        let mut out = Vec::with_capacity(n_cells + 1);
        let mut x = 0.0f64;
        out.push(x);
        let mut ji = 0usize;
        for c in 0..n_cells {
            let t_left = c as f64 * dt;
            let t_right = (c + 1) as f64 * dt;
            let state = chain.state_at(t_left);
            let dw = w_fine[(c + 1) * stride] - w_fine[c * stride];
            x += params.drift[state] * dt + params.volatility[state] * dw;
            while ji < self.jump_times.len() && self.jump_times[ji] <= t_right {
                if self.jump_times[ji] > t_left {
                    x += params.transforms[state].apply(self.jump_marks[ji]);
                }
                ji += 1;
            }
            out.push(x);
        }
        Ok(out)
    }
}

/// Simulate the Levy component on a uniform grid with step `dt`.
pub fn simulate_levy(
    params: &RegimeLevyParams,
    chain: &ChainPath,
    dt: f64,
    seed: u64,
) -> Result<LevyPath> {
    let mut wiener_rng = path_rng(seed, 0, Stream::Wiener);
    let mut jump_rng = path_rng(seed, 0, Stream::LevyJump);
    simulate_levy_with(params, chain, dt, &mut wiener_rng, &mut jump_rng)
}

pub fn simulate_levy_with<R: Rng + ?Sized>(
    params: &RegimeLevyParams,
    chain: &ChainPath,
    dt: f64,
    wiener_rng: &mut R,
    jump_rng: &mut R,
) -> Result<LevyPath> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("grid step {dt} must be positive")));
    }
    params.validate(chain.n_states())?;
    let levy_side = params.check_levy_exponential_moments(1.0);
    if let Some((i, (_, detail))) = levy_side.iter().enumerate().find(|(_, (ok, _))| !ok) {
        return Err(Error::MomentCondition(format!(
            "jump measure for state {}: {detail}",
            i + 1
        )));
    }
    let n_cells = (chain.horizon / dt).round() as usize;
    if n_cells == 0 || ((n_cells as f64) * dt - chain.horizon).abs() > 1e-9 * chain.horizon.max(1.0) {
        return Err(Error::Validation(format!(
            "grid step {dt} must evenly divide the horizon {}",
            chain.horizon
        )));
    }
    let driver = LevyDriver::new(
        chain,
        params.jump_rate,
        &params.mark_dist,
        dt,
        n_cells,
        wiener_rng,
        jump_rng,
    )?;
    driver.evaluate(params, chain, 1)
}

/// Power-jump processes of the Levy component with their exact compensators.
#[derive(Debug, Clone)]
pub struct PowerJumpFamily {
    pub max_order: usize,
    pub dt: f64,
    /// Row k-1: the order-k power sum at grid times (order 1 is the component
    /// itself).
    pub power_sums: Vec<Vec<f64>>,
    pub compensators: Vec<Vec<f64>>,
    pub martingales: Vec<Vec<f64>>,
}

pub fn power_jump_family(
    path: &LevyPath,
    params: &RegimeLevyParams,
    chain: &ChainPath,
    max_order: usize,
) -> Result<PowerJumpFamily> {
    if max_order == 0 {
        return Err(Error::Validation("power-jump family needs max order >= 1".into()));
    }
    if chain.id != path.chain_id {
        return Err(Error::Validation(
            "levy path was not generated from this chain realization".into(),
        ));
    }
    // Compensators need E[gamma^k] for k <= 2*max_order in closed form.
    for state in 0..chain.n_states() {
        params
            .gamma_moment(state, params.transforms[state].required_mark_order(2 * max_order))
            .map_err(|e| Error::Validation(format!("state {}: {e}", state + 1)))?;
    }

    let n = path.values.len();
    let mut power_sums = vec![vec![0.0; n]; max_order];
    let mut compensators = vec![vec![0.0; n]; max_order];
    let mut martingales = vec![vec![0.0; n]; max_order];

    for g in 0..n {
        let t = if g == n - 1 { path.horizon } else { path.time(g) };
        for k in 1..=max_order {
            let mut comp = 0.0;
            for state in 0..chain.n_states() {
                let occ = chain.occupation(state, t);
                if occ > 0.0 {
                    let mut rate = params.power_compensator_rate(state, k)?;
                    if k == 1 {
                        rate += params.drift[state];
                    }
                    comp += occ * rate;
                }
            }
            compensators[k - 1][g] = comp;
        }
    }

    // Jump power sums carried exactly from the records.
    let mut ji = 0usize;
    let mut running = vec![0.0f64; max_order];
    for g in 0..n {
        let t = if g == n - 1 { path.horizon } else { path.time(g) };
        while ji < path.jumps.len() && path.jumps[ji].time <= t {
            let a = path.jumps[ji].applied;
            let mut p = 1.0;
            for k in 1..=max_order {
                p *= a;
                running[k - 1] += p;
            }
            ji += 1;
        }
        for k in 2..=max_order {
            power_sums[k - 1][g] = running[k - 1];
        }
        power_sums[0][g] = path.values[g];
    }

    for k in 1..=max_order {
        for g in 0..n {
            martingales[k - 1][g] = power_sums[k - 1][g] - compensators[k - 1][g];
        }
    }

    Ok(PowerJumpFamily {
        max_order,
        dt: path.dt,
        power_sums,
        compensators,
        martingales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{simulate_chain, ChainSpec};
    use crate::stats::RunningMoments;

    fn two_state_spec() -> ChainSpec {
        ChainSpec {
            intensities: vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            initial_dist: vec![0.5, 0.5],
        }
    }

    fn flat_params(
        drift: f64,
        vol: f64,
        rate: f64,
        dist: MarkDistribution,
        n: usize,
    ) -> RegimeLevyParams {
        RegimeLevyParams {
            drift: vec![drift; n],
            volatility: vec![vol; n],
            transforms: vec![JumpTransform::Identity; n],
            jump_rate: rate,
            mark_dist: dist,
        }
    }

    #[test]
    fn brownian_terminal_variance_matches_horizon() {
        let spec = two_state_spec();
        let params = flat_params(0.0, 1.0, 0.0, MarkDistribution::PointMass { value: 0.0 }, 2);
        let mut acc = RunningMoments::default();
        let horizon = 1.0;
        for seed in 0..100_000u64 {
            let chain = simulate_chain(&spec, horizon, seed).unwrap();
            let path = simulate_levy(&params, &chain, 0.125, seed).unwrap();
            acc.push(path.values[path.n_cells()]);
        }
        assert!(acc.mean().abs() <= 4.0 * acc.std_err());
        // Var estimate of X(T); se of the sample variance of a Gaussian is
        // roughly var*sqrt(2/n).
        let var = acc.variance();
        let se = var * (2.0 / acc.n as f64).sqrt();
        assert!(
            (var - horizon).abs() <= 4.0 * se,
            "terminal variance {var} vs {horizon}"
        );
    }

    #[test]
    fn pure_modulated_drift_is_exact_occupation_sum() {
        let spec = two_state_spec();
        let params = RegimeLevyParams {
            drift: vec![1.0, 2.0],
            volatility: vec![0.0, 0.0],
            transforms: vec![JumpTransform::Identity; 2],
            jump_rate: 0.0,
            mark_dist: MarkDistribution::PointMass { value: 0.0 },
        };
        for seed in 0..50u64 {
            let chain = simulate_chain(&spec, 2.0, seed).unwrap();
            let path = simulate_levy(&params, &chain, 0.25, seed).unwrap();
            let want = chain.occupation(0, 2.0) * 1.0 + chain.occupation(1, 2.0) * 2.0;
            assert!(
                (path.values[path.n_cells()] - want).abs() < 1e-12,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn unit_jump_poisson_counts() {
        let spec = two_state_spec();
        let params = flat_params(0.0, 0.0, 1.0, MarkDistribution::PointMass { value: 1.0 }, 2);
        let horizon = 1.0;
        let mut acc = RunningMoments::default();
        for seed in 0..100_000u64 {
            let chain = simulate_chain(&spec, horizon, seed).unwrap();
            let path = simulate_levy(&params, &chain, 0.25, seed).unwrap();
            let terminal = path.values[path.n_cells()];
            assert_eq!(terminal, path.jumps.len() as f64);
            acc.push(terminal);
        }
        assert!(
            (acc.mean() - horizon).abs() <= 4.0 * acc.std_err(),
            "mean {} vs {horizon}",
            acc.mean()
        );
    }

    #[test]
    fn no_jumps_means_trivial_power_family() {
        let spec = two_state_spec();
        let params = flat_params(0.3, 1.0, 0.0, MarkDistribution::PointMass { value: 0.0 }, 2);
        let chain = simulate_chain(&spec, 1.0, 5).unwrap();
        let path = simulate_levy(&params, &chain, 0.125, 5).unwrap();
        let fam = power_jump_family(&path, &params, &chain, 3).unwrap();
        for k in 2..=3 {
            assert!(fam.power_sums[k - 1].iter().all(|&v| v == 0.0));
            assert!(fam.martingales[k - 1].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_jump_second_order_martingale_is_centered() {
        let spec = two_state_spec();
        let params = flat_params(0.0, 0.0, 1.0, MarkDistribution::PointMass { value: 1.0 }, 2);
        let mut acc = RunningMoments::default();
        for seed in 0..100_000u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let path = simulate_levy(&params, &chain, 0.5, seed).unwrap();
            let fam = power_jump_family(&path, &params, &chain, 2).unwrap();
            let g = path.n_cells();
            assert_eq!(fam.power_sums[1][g], path.jumps.len() as f64);
            acc.push(fam.martingales[1][g]);
        }
        assert!(acc.mean().abs() <= 4.0 * acc.std_err(), "mean {}", acc.mean());
    }

    /// On {-1, +1} marks the cubes equal the marks, so the order-3 jump
    /// content coincides with the order-1 jump content pathwise.
    #[test]
    fn rademacher_third_order_collapses() {
        let spec = two_state_spec();
        let params = flat_params(0.0, 0.0, 2.0, MarkDistribution::rademacher(), 2);
        for seed in 0..30u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let path = simulate_levy(&params, &chain, 0.25, seed).unwrap();
            let fam = power_jump_family(&path, &params, &chain, 3).unwrap();
            for g in 0..path.values.len() {
                assert_eq!(fam.martingales[2][g], fam.power_sums[2][g]); // odd moments vanish
                assert_eq!(fam.power_sums[2][g], path.gamma_sum[g]);
            }
        }
    }

    #[test]
    fn quadratic_variation_matches_second_power_exactly() {
        let spec = two_state_spec();
        let params = flat_params(0.1, 0.5, 1.5, MarkDistribution::rademacher(), 2);
        for seed in 0..20u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let path = simulate_levy(&params, &chain, 0.25, seed).unwrap();
            let fam = power_jump_family(&path, &params, &chain, 2).unwrap();
            let qv: f64 = path.jumps.iter().map(|j| j.applied * j.applied).sum();
            assert_eq!(fam.power_sums[1][path.n_cells()], qv);
        }
    }

    #[test]
    fn even_orders_are_nondecreasing() {
        let spec = two_state_spec();
        let params = flat_params(0.0, 0.3, 2.0, MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 }, 2);
        for seed in 0..20u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let path = simulate_levy(&params, &chain, 0.125, seed).unwrap();
            let fam = power_jump_family(&path, &params, &chain, 4).unwrap();
            for w in fam.power_sums[1].windows(2) {
                assert!(w[1] >= w[0]);
            }
            for w in fam.power_sums[3].windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn jump_content_invariant_under_refinement() {
        let spec = two_state_spec();
        let params = flat_params(0.2, 0.7, 1.0, MarkDistribution::rademacher(), 2);
        let chain = simulate_chain(&spec, 1.0, 3).unwrap();
        let mut wiener = path_rng(3, 0, Stream::Wiener);
        let mut jumpr = path_rng(3, 0, Stream::LevyJump);
        let driver =
            LevyDriver::new(&chain, 1.0, &params.mark_dist, 1.0 / 64.0, 64, &mut wiener, &mut jumpr)
                .unwrap();
        let fine = driver.evaluate(&params, &chain, 1).unwrap();
        let coarse = driver.evaluate(&params, &chain, 8).unwrap();
        assert_eq!(fine.jumps.len(), coarse.jumps.len());
        for (a, b) in fine.jumps.iter().zip(&coarse.jumps) {
            assert_eq!(a.time, b.time);
            assert_eq!(a.applied, b.applied);
        }
        // Shared skeleton: coarse grid values coincide with the fine ones.
        for (i, &v) in coarse.values.iter().enumerate() {
            assert_eq!(v, fine.values[i * 8]);
        }
    }

    /// The frozen-coefficient scheme converges at strong order 1/2 toward the
    /// exact path under shared randomness.
    #[test]
    fn frozen_scheme_strong_convergence() {
        let spec = ChainSpec {
            intensities: vec![vec![-4.0, 4.0], vec![4.0, -4.0]],
            initial_dist: vec![0.5, 0.5],
        };
        let params = RegimeLevyParams {
            drift: vec![0.5, -0.5],
            volatility: vec![0.2, 1.4],
            transforms: vec![JumpTransform::Identity; 2],
            jump_rate: 0.0,
            mark_dist: MarkDistribution::PointMass { value: 0.0 },
        };
        let n_fine = 1024usize; // reference level dt/64 with dt = 1/16
        let dt_fine = 1.0 / n_fine as f64;
        let mut err_coarse = RunningMoments::default();
        let mut err_mid = RunningMoments::default();
        for seed in 0..4000u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let mut wiener = path_rng(seed, 0, Stream::Wiener);
            let mut jumpr = path_rng(seed, 0, Stream::LevyJump);
            let driver = LevyDriver::new(
                &chain,
                0.0,
                &params.mark_dist,
                dt_fine,
                n_fine,
                &mut wiener,
                &mut jumpr,
            )
            .unwrap();
            let reference = driver.evaluate_frozen(&params, &chain, 1).unwrap();
            let coarse = driver.evaluate_frozen(&params, &chain, 64).unwrap();
            let mid = driver.evaluate_frozen(&params, &chain, 16).unwrap();
            let r = reference[n_fine];
            err_coarse.push((coarse[coarse.len() - 1] - r).powi(2));
            err_mid.push((mid[mid.len() - 1] - r).powi(2));
        }
        let rms_coarse = err_coarse.mean().sqrt();
        let rms_mid = err_mid.mean().sqrt();
        assert!(
            rms_coarse / rms_mid >= 1.8,
            "strong-order ratio {} (coarse {rms_coarse}, mid {rms_mid})",
            rms_coarse / rms_mid
        );
    }

    #[test]
    fn moment_condition_catalog_verdicts() {
        let gauss = MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 };
        let mut params = flat_params(0.0, 1.0, 1.0, gauss.clone(), 2);
        params.transforms = vec![JumpTransform::Linear { slope: 2.0 }; 2];
        let laws = vec![gauss.clone(), gauss.clone()];
        let report = check_moment_condition(&params, &laws, 5.0, 0.01);
        assert!(report.pass);

        let bounded = flat_params(0.0, 1.0, 1.0, MarkDistribution::Uniform { lo: -2.0, hi: 2.0 }, 2);
        assert!(check_moment_condition(&bounded, &laws, 100.0, 0.01).pass);

        let mut cubic = flat_params(0.0, 1.0, 1.0, gauss.clone(), 2);
        cubic.transforms = vec![
            JumpTransform::Identity,
            JumpTransform::AffineOdd { slope: 1.0, cubic: 0.5 },
        ];
        let report = check_moment_condition(&cubic, &laws, 0.1, 0.01);
        assert!(!report.pass);
        assert!(report.states[0].levy_ok);
        assert!(!report.states[1].levy_ok, "cubic state must be named");
        assert!(report.failure_summary().contains("state 2"));

        // Double-exponential impulse law: threshold at the smaller rate.
        let de = MarkDistribution::DoubleExponential { p_up: 0.5, rate_up: 3.0, rate_down: 2.0 };
        let ok = check_moment_condition(&bounded, &[de.clone(), de.clone()], 1.9, 0.01);
        assert!(ok.pass);
        let fail = check_moment_condition(&bounded, &[de.clone(), de], 2.1, 0.01);
        assert!(!fail.pass);
    }

    #[test]
    fn simulate_rejects_bad_grid_and_cubic_gaussian() {
        let spec = two_state_spec();
        let chain = simulate_chain(&spec, 1.0, 1).unwrap();
        let params = flat_params(0.0, 1.0, 0.0, MarkDistribution::PointMass { value: 0.0 }, 2);
        assert!(simulate_levy(&params, &chain, 0.0, 1).is_err());
        assert!(simulate_levy(&params, &chain, 0.3, 1).is_err());

        let mut cubic = flat_params(0.0, 0.0, 1.0, MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 }, 2);
        cubic.transforms = vec![JumpTransform::AffineOdd { slope: 1.0, cubic: 1.0 }; 2];
        let err = simulate_levy(&cubic, &chain, 0.25, 1).unwrap_err();
        assert!(matches!(err, Error::MomentCondition(_)));
    }

    #[test]
    fn affine_odd_moments_match_expansion() {
        let dist = MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 };
        let tr = JumpTransform::AffineOdd { slope: 2.0, cubic: 0.5 };
        // E(2x + 0.5x^3)^2 = 4m2 + 2*2*0.5*m4 + 0.25*m6 = 4 + 6 + 3.75
        let got = tr.moment(&dist, 2).unwrap();
        assert!((got - 13.75).abs() < 1e-12, "{got}");
    }

    #[test]
    fn same_seed_same_path() {
        let spec = two_state_spec();
        let params = flat_params(0.1, 0.9, 1.0, MarkDistribution::rademacher(), 2);
        let chain = simulate_chain(&spec, 1.0, 11).unwrap();
        let a = simulate_levy(&params, &chain, 0.125, 11).unwrap();
        let b = simulate_levy(&params, &chain, 0.125, 11).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.jumps.len(), b.jumps.len());
    }
}
