//! Finite-state background chain: exact event-driven simulation, the marked
//! counting processes per destination state, and their compensators.
//!
//! Compensators are evaluated in closed form from holding intervals, so every
//! downstream martingale test sees no quadrature error.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{path_rng, splitmix64, Stream};

const ROW_SUM_TOL: f64 = 1e-12;
const MAX_EPOCHS: usize = 20_000_000;

/// Intensity matrix and initial distribution of the background chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    /// N x N rate matrix; off-diagonal entries are jump rates, each diagonal
    /// entry is minus its row's off-diagonal sum.
    pub intensities: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
}

impl ChainSpec {
    pub fn n_states(&self) -> usize {
        self.initial_dist.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 {
            return Err(Error::Validation("chain needs at least one state".into()));
        }
        if self.intensities.len() != n {
            return Err(Error::Validation(format!(
                "intensity matrix has {} rows for {} states",
                self.intensities.len(),
                n
            )));
        }
        for (i, row) in self.intensities.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "intensity row {} has {} entries for {} states",
                    i + 1,
                    row.len(),
                    n
                )));
            }
            let mut sum = 0.0;
            for (j, &r) in row.iter().enumerate() {
                if i != j && r < 0.0 {
                    return Err(Error::Validation(format!(
                        "negative transition rate {} at ({}, {})",
                        r,
                        i + 1,
                        j + 1
                    )));
                }
                if !r.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite rate at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                sum += r;
            }
            if sum.abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!(
                    "intensity row {} sums to {:.3e}, expected 0",
                    i + 1,
                    sum
                )));
            }
        }
        let mut total = 0.0;
        for (i, &p) in self.initial_dist.iter().enumerate() {
            if p < 0.0 || !p.is_finite() {
                return Err(Error::Validation(format!(
                    "initial probability {} for state {} invalid",
                    p,
                    i + 1
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Validation(format!(
                "initial distribution sums to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.intensities[state][state]
    }
}

/// One realized trajectory: jump epochs in (0, horizon] and the destination
/// state of each jump.
#[derive(Debug, Clone)]
pub struct ChainPath {
    pub horizon: f64,
    pub initial_state: usize,
    pub epochs: Vec<f64>,
    /// Destination state per epoch; consecutive states always differ.
    pub states: Vec<usize>,
    n_states: usize,
    /// Cumulative occupation per state at each epoch (row k = up to epoch k).
    occ_prefix: Vec<f64>,
    /// Fingerprint over the exact float content, for cross-module identity checks.
    pub id: u64,
}

impl ChainPath {
    pub fn new(
        horizon: f64,
        initial_state: usize,
        epochs: Vec<f64>,
        states: Vec<usize>,
        n_states: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Validation(format!("horizon {horizon} must be positive")));
        }
        if epochs.len() != states.len() {
            return Err(Error::Validation("epoch/state length mismatch".into()));
        }
        let mut prev_t = 0.0;
        let mut prev_s = initial_state;
        for (&t, &s) in epochs.iter().zip(&states) {
            if !(t > prev_t) || t > horizon {
                return Err(Error::Validation(format!(
                    "epochs must be strictly increasing within (0, {horizon}], got {t} after {prev_t}"
                )));
            }
            if s == prev_s {
                return Err(Error::Validation(format!("epoch at {t} does not change the state")));
            }
            if s >= n_states {
                return Err(Error::Validation(format!("state index {s} out of range")));
            }
            prev_t = t;
            prev_s = s;
        }
        let mut path = ChainPath {
            horizon,
            initial_state,
            epochs,
            states,
            n_states,
            occ_prefix: Vec::new(),
            id: 0,
        };
        path.build_index();
        Ok(path)
    }

    fn build_index(&mut self) {
        let n = self.n_states;
        let m = self.epochs.len();
        let mut occ = vec![0.0; (m + 1) * n];
        let mut t_prev = 0.0;
        let mut s_prev = self.initial_state;
        for k in 0..m {
            let row = (k + 1) * n;
            occ.copy_within(k * n..(k + 1) * n, row);
            occ[row + s_prev] += self.epochs[k] - t_prev;
            t_prev = self.epochs[k];
            s_prev = self.states[k];
        }
        self.occ_prefix = occ;

        let mut h = 0x6d_61_70_5fu64 ^ (self.initial_state as u64).wrapping_mul(0x100_0193);
        let mix = |v: u64, h: &mut u64| {
            *h ^= v;
            let mut s = *h;
            *h = splitmix64(&mut s);
        };
        mix(self.horizon.to_bits(), &mut h);
        for (&t, &s) in self.epochs.iter().zip(&self.states) {
            mix(t.to_bits(), &mut h);
            mix(s as u64, &mut h);
        }
        self.id = h;
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Number of epochs <= t.
    pub fn epochs_until(&self, t: f64) -> usize {
        self.epochs.partition_point(|&e| e <= t)
    }

    /// Right-continuous state J(t).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.epochs_until(t);
        if k == 0 {
            self.initial_state
        } else {
            self.states[k - 1]
        }
    }

    /// Left limit J(t-).
    pub fn state_before(&self, t: f64) -> usize {
        let k = self.epochs.partition_point(|&e| e < t);
        if k == 0 {
            self.initial_state
        } else {
            self.states[k - 1]
        }
    }

    /// Occupation time of `state` on [0, t].
    pub fn occupation(&self, state: usize, t: f64) -> f64 {
        let k = self.epochs_until(t);
        let base = self.occ_prefix[k * self.n_states + state];
        let t_k = if k == 0 { 0.0 } else { self.epochs[k - 1] };
        let current = if k == 0 { self.initial_state } else { self.states[k - 1] };
        if current == state {
            base + (t - t_k)
        } else {
            base
        }
    }

    /// Occupation time of `state` on (a, b].
    pub fn occupation_between(&self, state: usize, a: f64, b: f64) -> f64 {
        self.occupation(state, b) - self.occupation(state, a)
    }
}

/// Exact event-driven simulation: exponential holding times with the exit
/// rate of the occupied state, destinations by the embedded chain.
pub fn simulate_chain_with<R: Rng + ?Sized>(
    spec: &ChainSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath> {
    spec.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::Validation(format!("horizon {horizon} must be positive")));
    }
    let n = spec.n_states();

    let u = rng.gen::<f64>();
    let mut cum = 0.0;
    let mut state = n - 1;
    for (i, &p) in spec.initial_dist.iter().enumerate() {
        cum += p;
        if u < cum {
            state = i;
            break;
        }
    }
    let initial_state = state;

    let mut t = 0.0;
    let mut epochs = Vec::new();
    let mut states = Vec::new();
    loop {
        let rate = spec.exit_rate(state);
        if rate <= 0.0 {
            break; // absorbing
        }
        t += Exp::new(rate).unwrap().sample(rng);
        if t > horizon {
            break;
        }
        let target = rng.gen::<f64>() * rate;
        let mut cum = 0.0;
        let mut next = state;
        for j in 0..n {
            if j == state {
                continue;
            }
            cum += spec.intensities[state][j];
            if target < cum {
                next = j;
                break;
            }
        }
        if next == state {
            // target landed on the rounding slack past the last positive rate
            next = (0..n).rev().find(|&j| j != state && spec.intensities[state][j] > 0.0).unwrap();
        }
        epochs.push(t);
        states.push(next);
        state = next;
        if epochs.len() > MAX_EPOCHS {
            return Err(Error::Numeric(format!(
                "chain produced more than {MAX_EPOCHS} epochs; rates too large for horizon {horizon}"
            )));
        }
    }
    ChainPath::new(horizon, initial_state, epochs, states, n)
}

/// Seed-addressed wrapper; identical seed gives a bit-identical path.
pub fn simulate_chain(spec: &ChainSpec, horizon: f64, seed: u64) -> Result<ChainPath> {
    let mut rng = path_rng(seed, 0, Stream::Chain);
    simulate_chain_with(spec, horizon, &mut rng)
}

/// Counting processes per destination state with their closed-form
/// compensators.
#[derive(Debug, Clone)]
pub struct CountingSet {
    rates: Vec<Vec<f64>>,
    epochs_into: Vec<Vec<f64>>,
    path: ChainPath,
}

pub fn counting_and_compensators(path: &ChainPath, spec: &ChainSpec) -> Result<CountingSet> {
    spec.validate()?;
    if spec.n_states() != path.n_states() {
        return Err(Error::Validation(format!(
            "path has {} states, spec has {}",
            path.n_states(),
            spec.n_states()
        )));
    }
    let mut epochs_into = vec![Vec::new(); spec.n_states()];
    for (&t, &s) in path.epochs.iter().zip(&path.states) {
        epochs_into[s].push(t);
    }
    Ok(CountingSet {
        rates: spec.intensities.clone(),
        epochs_into,
        path: path.clone(),
    })
}

impl CountingSet {
    pub fn n_states(&self) -> usize {
        self.rates.len()
    }

    /// Jump count into state j up to time t.
    pub fn count(&self, j: usize, t: f64) -> f64 {
        self.epochs_into[j].partition_point(|&e| e <= t) as f64
    }

    /// Left limit of the count at t (epochs strictly before t).
    pub fn count_before(&self, j: usize, t: f64) -> f64 {
        self.epochs_into[j].partition_point(|&e| e < t) as f64
    }

    /// Compensator: integral of the jump intensity into j over [0, t],
    /// computed exactly from holding intervals.
    pub fn compensator(&self, j: usize, t: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n_states() {
            if i == j {
                continue;
            }
            let rate = self.rates[i][j];
            if rate != 0.0 {
                total += rate * self.path.occupation(i, t);
            }
        }
        total
    }

    pub fn compensator_between(&self, j: usize, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n_states() {
            if i == j {
                continue;
            }
            let rate = self.rates[i][j];
            if rate != 0.0 {
                total += rate * self.path.occupation_between(i, a, b);
            }
        }
        total
    }

    /// Compensated count (the jump martingale into state j).
    pub fn martingale(&self, j: usize, t: f64) -> f64 {
        self.count(j, t) - self.compensator(j, t)
    }

    /// Instantaneous intensity of jumps into j at time t (left limits).
    pub fn intensity(&self, j: usize, t: f64) -> f64 {
        let from = self.path.state_before(t);
        if from == j {
            0.0
        } else {
            self.rates[from][j]
        }
    }

    pub fn epochs_into(&self, j: usize) -> &[f64] {
        &self.epochs_into[j]
    }

    pub fn path(&self) -> &ChainPath {
        &self.path
    }
}

/// E[count of jumps into `state` over one unit of time], from the forward
/// equation integrated with a fixed-step classical Runge-Kutta scheme.
pub fn expected_jumps_per_unit(spec: &ChainSpec, state: usize) -> Result<f64> {
    spec.validate()?;
    let n = spec.n_states();
    if state >= n {
        return Err(Error::Validation(format!("state index {state} out of range")));
    }

    // y = (occupancy probabilities, accumulated expected count)
    let deriv = |y: &[f64], dy: &mut [f64]| {
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += spec.intensities[i][j] * y[i];
            }
            dy[j] = acc;
        }
        let mut flow = 0.0;
        for i in 0..n {
            if i != state {
                flow += y[i] * spec.intensities[i][state];
            }
        }
        dy[n] = flow;
    };

    let steps = 1000usize; // h = 1e-3
    let h = 1.0 / steps as f64;
    let mut y: Vec<f64> = spec.initial_dist.iter().copied().chain([0.0]).collect();
    let mut k1 = vec![0.0; n + 1];
    let mut k2 = vec![0.0; n + 1];
    let mut k3 = vec![0.0; n + 1];
    let mut k4 = vec![0.0; n + 1];
    let mut tmp = vec![0.0; n + 1];
    for _ in 0..steps {
        deriv(&y, &mut k1);
        for i in 0..=n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, &mut k2);
        for i in 0..=n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, &mut k3);
        for i in 0..=n {
            tmp[i] = y[i] + h * k3[i];
        }
        deriv(&tmp, &mut k4);
        for i in 0..=n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(y[n].max(0.0))
}
