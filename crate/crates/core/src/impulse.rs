//! Transition-triggered jumps: one draw per chain epoch, assigned to the
//! destination state, plus the power sums and compensated versions built from
//! them, and the assembly of the full process.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainPath, CountingSet};
use crate::dist::MarkDistribution;
use crate::error::{Error, Result};
use crate::levy::LevyPath;
use crate::rng::{path_rng, Stream};

/// Per-state law of the transition-triggered jump size, with exact moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpLawSet {
    pub laws: Vec<MarkDistribution>,
    /// Highest power order callers may request.
    pub max_moment_order: usize,
}

impl JumpLawSet {
    pub fn new(laws: Vec<MarkDistribution>) -> Self {
        JumpLawSet {
            laws,
            max_moment_order: 16,
        }
    }

    pub fn n_states(&self) -> usize {
        self.laws.len()
    }

    pub fn validate(&self, n_states: usize) -> Result<()> {
        if self.laws.len() != n_states {
            return Err(Error::Validation(format!(
                "need one impulse law per state: got {} for {} states",
                self.laws.len(),
                n_states
            )));
        }
        for (i, law) in self.laws.iter().enumerate() {
            law.validate()
                .map_err(|e| Error::Validation(format!("impulse law for state {}: {e}", i + 1)))?;
            // Moment-sequence consistency: Hankel form must be PSD.
            law.check_hankel_psd((self.max_moment_order / 2).min(6))
                .map_err(|e| Error::Validation(format!("impulse law for state {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// E (U^(i))^l.
    pub fn moment(&self, state: usize, order: usize) -> Result<f64> {
        if order > self.max_moment_order {
            return Err(Error::Validation(format!(
                "impulse moment order {order} exceeds configured maximum {}",
                self.max_moment_order
            )));
        }
        self.laws[state].moment(order)
    }
}

/// One transition-triggered jump.
#[derive(Debug, Clone, Copy)]
pub struct ImpulseRecord {
    pub time: f64,
    /// Destination state of the triggering transition.
    pub state: usize,
    pub value: f64,
}

/// Realized impulse processes up to power order `max_power`.
#[derive(Debug, Clone)]
pub struct ImpulsePath {
    pub records: Vec<ImpulseRecord>,
    pub max_power: usize,
    pub chain_id: u64,
    n_states: usize,
    /// Per state: epoch times of jumps into it.
    times: Vec<Vec<f64>>,
    /// Per state, per power l=1..=max_power: prefix sums of value^l.
    prefix: Vec<Vec<Vec<f64>>>,
}

impl ImpulsePath {
    /// Assemble the per-state power sums from explicit records (also used
    /// when reloading persisted paths).
    pub fn from_records(
        records: Vec<ImpulseRecord>,
        max_power: usize,
        chain_id: u64,
        n_states: usize,
    ) -> Self {
        let mut times = vec![Vec::new(); n_states];
        let mut prefix = vec![vec![vec![0.0]; max_power]; n_states];
        for r in &records {
            times[r.state].push(r.time);
            let mut p = 1.0;
            for l in 1..=max_power {
                p *= r.value;
                let col = &mut prefix[r.state][l - 1];
                let last = *col.last().unwrap();
                col.push(last + p);
            }
        }
        ImpulsePath {
            records,
            max_power,
            chain_id,
            n_states,
            times,
            prefix,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Power sum of order l over jumps into `state` up to time t.
    pub fn power_sum(&self, state: usize, order: usize, t: f64) -> f64 {
        assert!(order >= 1 && order <= self.max_power, "order {order} not simulated");
        let k = self.times[state].partition_point(|&e| e <= t);
        self.prefix[state][order - 1][k]
    }

    /// Left limit of the power sum at t (jumps strictly before t).
    pub fn power_sum_before(&self, state: usize, order: usize, t: f64) -> f64 {
        assert!(order >= 1 && order <= self.max_power, "order {order} not simulated");
        let k = self.times[state].partition_point(|&e| e < t);
        self.prefix[state][order - 1][k]
    }

    /// Compensated power sum; the compensator is the order-l moment times the
    /// counting compensator.
    pub fn martingale(
        &self,
        state: usize,
        order: usize,
        t: f64,
        laws: &JumpLawSet,
        counting: &CountingSet,
    ) -> Result<f64> {
        Ok(self.power_sum(state, order, t) - laws.moment(state, order)? * counting.compensator(state, t))
    }
}

/// Draw one jump per chain epoch from the destination state's law.
/// The draw stream is independent of the Brownian and Poisson streams.
pub fn simulate_impulse_with<R: Rng + ?Sized>(
    chain: &ChainPath,
    laws: &JumpLawSet,
    max_power: usize,
    rng: &mut R,
) -> Result<ImpulsePath> {
    laws.validate(chain.n_states())?;
    if max_power == 0 || max_power > laws.max_moment_order {
        return Err(Error::Validation(format!(
            "impulse power order {max_power} outside 1..={}",
            laws.max_moment_order
        )));
    }
    let mut records = Vec::with_capacity(chain.epochs.len());
    for (&t, &s) in chain.epochs.iter().zip(&chain.states) {
        records.push(ImpulseRecord {
            time: t,
            state: s,
            value: laws.laws[s].sample(rng),
        });
    }
    Ok(ImpulsePath::from_records(records, max_power, chain.id, chain.n_states()))
}

pub fn simulate_impulse(
    chain: &ChainPath,
    laws: &JumpLawSet,
    max_power: usize,
    seed: u64,
) -> Result<ImpulsePath> {
    let mut rng = path_rng(seed, 0, Stream::Impulse);
    simulate_impulse_with(chain, laws, max_power, &mut rng)
}

/// The full process on the grid: Levy component plus all first-order impulse
/// sums, with jumps aligned at the exact chain epochs.
#[derive(Debug, Clone)]
pub struct FullPath {
    pub dt: f64,
    pub horizon: f64,
    pub values: Vec<f64>,
    pub chain_id: u64,
}

pub fn assemble_x(levy: &LevyPath, impulse: &ImpulsePath) -> Result<FullPath> {
    if levy.chain_id != impulse.chain_id {
        return Err(Error::Validation(
            "levy and impulse paths were built on different chain realizations".into(),
        ));
    }
    let n = levy.values.len();
    let mut values = Vec::with_capacity(n);
    for g in 0..n {
        let t = if g == n - 1 { levy.horizon } else { levy.time(g) };
        let mut x = levy.values[g];
        for i in 0..impulse.n_states() {
            for l in [1usize] {
                x += impulse.power_sum(i, l, t);
            }
        }
        values.push(x);
    }
    Ok(FullPath {
        dt: levy.dt,
        horizon: levy.horizon,
        values,
        chain_id: levy.chain_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{counting_and_compensators, simulate_chain, ChainSpec};
    use crate::levy::{simulate_levy, JumpTransform, RegimeLevyParams};
    use crate::stats::{welch_p_value, RunningMoments};

    fn two_state_spec() -> ChainSpec {
        ChainSpec {
            intensities: vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            initial_dist: vec![0.5, 0.5],
        }
    }

    fn zero_levy(n: usize) -> RegimeLevyParams {
        RegimeLevyParams {
            drift: vec![0.0; n],
            volatility: vec![0.0; n],
            transforms: vec![JumpTransform::Identity; n],
            jump_rate: 0.0,
            mark_dist: MarkDistribution::PointMass { value: 0.0 },
        }
    }

    #[test]
    fn zero_impulse_laws_vanish_and_x_reduces() {
        let spec = two_state_spec();
        let laws = JumpLawSet::new(vec![MarkDistribution::PointMass { value: 0.0 }; 2]);
        let params = RegimeLevyParams {
            drift: vec![0.1, -0.2],
            volatility: vec![0.5, 1.0],
            transforms: vec![JumpTransform::Identity; 2],
            jump_rate: 1.0,
            mark_dist: MarkDistribution::rademacher(),
        };
        for seed in 0..20u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let counting = counting_and_compensators(&chain, &spec).unwrap();
            let imp = simulate_impulse(&chain, &laws, 2, seed).unwrap();
            let levy = simulate_levy(&params, &chain, 0.25, seed).unwrap();
            for l in 1..=2 {
                for i in 0..2 {
                    assert_eq!(imp.power_sum(i, l, 1.0), 0.0);
                    assert_eq!(imp.martingale(i, l, 1.0, &laws, &counting).unwrap(), 0.0);
                }
            }
            let full = assemble_x(&levy, &imp).unwrap();
            assert_eq!(full.values, levy.values);
        }
    }

    /// Point-mass jumps make the impulse sums exact multiples of the counts.
    #[test]
    fn point_mass_collapses_to_counting() {
        let spec = two_state_spec();
        let c = 2.5; // dyadic mantissa: c * (small integer) is exact
        let laws = JumpLawSet::new(vec![MarkDistribution::PointMass { value: c }; 2]);
        for seed in 0..30u64 {
            let chain = simulate_chain(&spec, 2.0, seed).unwrap();
            let counting = counting_and_compensators(&chain, &spec).unwrap();
            let imp = simulate_impulse(&chain, &laws, 1, seed).unwrap();
            for i in 0..2 {
                for &t in &[0.5, 1.0, 2.0] {
                    // Pure jump sums: bit-exact multiple of the count.
                    assert_eq!(imp.power_sum(i, 1, t), c * counting.count(i, t));
                    // Compensated identity: exact in exact arithmetic; the two
                    // evaluation orders differ by at most an ulp of the
                    // compensator product.
                    let lhs = imp.martingale(i, 1, t, &laws, &counting).unwrap();
                    let rhs = c * counting.martingale(i, t);
                    assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn point_mass_nondyadic_within_rounding() {
        let spec = two_state_spec();
        let c = 0.1;
        let laws = JumpLawSet::new(vec![MarkDistribution::PointMass { value: c }; 2]);
        let chain = simulate_chain(&spec, 50.0, 7).unwrap();
        let counting = counting_and_compensators(&chain, &spec).unwrap();
        let imp = simulate_impulse(&chain, &laws, 1, 7).unwrap();
        for i in 0..2 {
            let n = counting.count(i, 50.0);
            let err = (imp.power_sum(i, 1, 50.0) - c * n).abs();
            assert!(err <= 1e-12 * n.max(1.0));
        }
    }

    /// Squares of +/-1 jumps make the order-2 sums equal the counts pathwise.
    #[test]
    fn rademacher_second_power_is_count() {
        let spec = two_state_spec();
        let laws = JumpLawSet::new(vec![MarkDistribution::rademacher(); 2]);
        let mut acc = RunningMoments::default();
        for seed in 0..100_000u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let counting = counting_and_compensators(&chain, &spec).unwrap();
            let imp = simulate_impulse(&chain, &laws, 2, seed).unwrap();
            acc.push(imp.martingale(0, 1, 1.0, &laws, &counting).unwrap());
            if seed < 200 {
                for i in 0..2 {
                    assert_eq!(imp.power_sum(i, 2, 1.0), counting.count(i, 1.0));
                    assert_eq!(
                        imp.martingale(i, 2, 1.0, &laws, &counting).unwrap(),
                        counting.martingale(i, 1.0)
                    );
                }
            }
        }
        assert!(acc.mean().abs() <= 4.0 * acc.std_err(), "mean {}", acc.mean());
    }

    #[test]
    fn impulse_jumps_only_at_matching_epochs() {
        let spec = two_state_spec();
        let laws = JumpLawSet::new(vec![
            MarkDistribution::Gaussian { mean: 0.5, std_dev: 1.0 },
            MarkDistribution::Uniform { lo: -1.0, hi: 1.0 },
        ]);
        let chain = simulate_chain(&spec, 3.0, 13).unwrap();
        let imp = simulate_impulse(&chain, &laws, 3, 13).unwrap();
        assert_eq!(imp.records.len(), chain.epochs.len());
        for (r, (&t, &s)) in imp.records.iter().zip(chain.epochs.iter().zip(&chain.states)) {
            assert_eq!(r.time, t);
            assert_eq!(r.state, s);
        }
        // Power-l jump equals the first-order jump to the l-th power.
        for r in &imp.records {
            let before = imp.power_sum(r.state, 3, r.time) - imp.power_sum(r.state, 3, r.time * (1.0 - 1e-12));
            assert!((before - r.value.powi(3)).abs() <= 1e-9 * r.value.powi(3).abs().max(1.0));
        }
    }

    #[test]
    fn no_common_jumps_between_levy_and_chain() {
        let spec = two_state_spec();
        let params = RegimeLevyParams {
            drift: vec![0.0; 2],
            volatility: vec![1.0; 2],
            transforms: vec![JumpTransform::Identity; 2],
            jump_rate: 2.0,
            mark_dist: MarkDistribution::rademacher(),
        };
        for seed in 0..200u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let levy = simulate_levy(&params, &chain, 0.25, seed).unwrap();
            for j in &levy.jumps {
                assert!(chain.epochs.iter().all(|&e| e != j.time));
            }
        }
    }

    #[test]
    fn assemble_rejects_mismatched_chains() {
        let spec = two_state_spec();
        let laws = JumpLawSet::new(vec![MarkDistribution::rademacher(); 2]);
        let chain_a = simulate_chain(&spec, 1.0, 1).unwrap();
        let chain_b = simulate_chain(&spec, 1.0, 2).unwrap();
        let levy = simulate_levy(&zero_levy(2), &chain_a, 0.25, 1).unwrap();
        let imp = simulate_impulse(&chain_b, &laws, 1, 2).unwrap();
        assert!(assemble_x(&levy, &imp).is_err());
    }

    #[test]
    fn pure_impulse_process_sums_impulses() {
        let spec = two_state_spec();
        let laws = JumpLawSet::new(vec![MarkDistribution::rademacher(); 2]);
        let chain = simulate_chain(&spec, 1.0, 21).unwrap();
        let levy = simulate_levy(&zero_levy(2), &chain, 0.125, 21).unwrap();
        let imp = simulate_impulse(&chain, &laws, 1, 21).unwrap();
        let full = assemble_x(&levy, &imp).unwrap();
        let want: f64 = imp.records.iter().map(|r| r.value).sum();
        assert!((full.values[full.values.len() - 1] - want).abs() < 1e-12);
    }

    /// One state, identity transform, no impulses: stationary independent
    /// increments, so first- and second-half increments share a location.
    #[test]
    fn single_state_reduction_has_stationary_increments() {
        let spec = ChainSpec {
            intensities: vec![vec![0.0]],
            initial_dist: vec![1.0],
        };
        let params = RegimeLevyParams {
            drift: vec![0.2],
            volatility: vec![1.0],
            transforms: vec![JumpTransform::Identity],
            jump_rate: 1.0,
            mark_dist: MarkDistribution::rademacher(),
        };
        let laws = JumpLawSet::new(vec![MarkDistribution::PointMass { value: 0.0 }]);
        let mut first = RunningMoments::default();
        let mut second = RunningMoments::default();
        for seed in 0..20_000u64 {
            let chain = simulate_chain(&spec, 1.0, seed).unwrap();
            let levy = simulate_levy(&params, &chain, 0.5, seed).unwrap();
            let imp = simulate_impulse(&chain, &laws, 1, seed).unwrap();
            let full = assemble_x(&levy, &imp).unwrap();
            first.push(full.values[1] - full.values[0]);
            second.push(full.values[2] - full.values[1]);
        }
        let p = welch_p_value(&first, &second);
        assert!(p > 0.01, "two-sample location test p = {p}");
    }

    #[test]
    fn rejects_power_beyond_available_moments() {
        let spec = two_state_spec();
        let laws = JumpLawSet::new(vec![MarkDistribution::rademacher(); 2]);
        let chain = simulate_chain(&spec, 1.0, 1).unwrap();
        assert!(simulate_impulse(&chain, &laws, 17, 1).is_err());
        let imp = simulate_impulse(&chain, &laws, 2, 1).unwrap();
        assert!(laws.moment(0, 17).is_err());
        drop(imp);
    }
}
