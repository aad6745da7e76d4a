//! A validated scenario: parameter objects, basis coefficients, moment caches
//! and deterministic per-path simulation addressed by (master seed, index).

use crate::chain::{
    counting_and_compensators, expected_jumps_per_unit, simulate_chain_with, ChainPath, ChainSpec,
    CountingSet,
};
use crate::error::{Error, Result};
use crate::harness::config::ScenarioConfig;
use crate::impulse::{simulate_impulse_with, ImpulsePath, JumpLawSet};
use crate::levy::{
    check_moment_condition, LevyDriver, LevyPath, MomentConditionReport, RegimeLevyParams,
};
use crate::ortho::{
    orthonormalize, teugels_gram, uniform_coefficients, BasisCoefficients, GramMatrix,
};
use crate::rng::{path_rng, Stream};

/// Default probe for the exponential-moment gate.
pub const MOMENT_PROBE_LAMBDA: f64 = 1.0;
pub const MOMENT_PROBE_EPSILON: f64 = 0.01;

pub struct Scenario {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub chain_spec: ChainSpec,
    pub levy_params: RegimeLevyParams,
    pub laws: JumpLawSet,
    /// E[count of jumps into state i over unit time].
    pub e_count: Vec<f64>,
    pub teugels_grams: Vec<GramMatrix>,
    pub teugels_coeffs: Vec<BasisCoefficients>,
    /// None for unreachable states (no impulse basis exists there).
    pub impulse_grams: Vec<Option<GramMatrix>>,
    pub impulse_coeffs: Vec<Option<BasisCoefficients>>,
    pub moment_report: MomentConditionReport,
    /// gamma moment table [state][order].
    gamma_moments: Vec<Vec<f64>>,
    /// impulse moment table [state][order].
    impulse_moments: Vec<Vec<f64>>,
    n_cells: usize,
    max_jump_power: usize,
}

/// One simulated path with everything derived processes need.
pub struct PathRealization {
    pub index: u64,
    pub chain: ChainPath,
    pub counting: CountingSet,
    pub levy: LevyPath,
    pub impulse: ImpulsePath,
    /// Applied-jump times (copy of the record times, for binary search).
    pub jump_times: Vec<f64>,
    /// Prefix sums of applied-jump powers, rows k=1..=max_jump_power.
    pub jump_power_prefix: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate_core()?;
        let chain_spec = config.chain_spec();
        let levy_params = config.levy_params();
        let laws = config.jump_laws();
        let n = config.n_states();
        let k_order = config.truncation.teugels_order;
        let l_order = config.truncation.impulse_order;
        if l_order > laws.max_moment_order / 2 {
            return Err(Error::Validation(format!(
                "impulse order {l_order} needs moments beyond the law catalog maximum"
            )));
        }

        let moment_report =
            check_moment_condition(&levy_params, &laws.laws, MOMENT_PROBE_LAMBDA, MOMENT_PROBE_EPSILON);
        if !moment_report.pass {
            return Err(Error::MomentCondition(moment_report.failure_summary()));
        }

        let mut e_count = Vec::with_capacity(n);
        for i in 0..n {
            e_count.push(expected_jumps_per_unit(&chain_spec, i)?);
        }

        let mut teugels_grams = Vec::with_capacity(n);
        let mut teugels_coeffs = Vec::with_capacity(n);
        for i in 0..n {
            let g = teugels_gram(&levy_params, i, k_order)?;
            teugels_coeffs.push(orthonormalize(&g, config.pivot_tol)?);
            teugels_grams.push(g);
        }

        let mut impulse_grams = Vec::with_capacity(n);
        let mut impulse_coeffs = Vec::with_capacity(n);
        for i in 0..n {
            if e_count[i] > 1e-12 {
                let g = GramMatrix::impulse_from_law(&laws.laws[i], e_count[i], i, l_order + 1)?;
                impulse_coeffs.push(Some(orthonormalize(&g, config.pivot_tol)?));
                impulse_grams.push(Some(g));
            } else {
                impulse_grams.push(None);
                impulse_coeffs.push(None);
            }
        }

        let max_jump_power = k_order.max(3);
        let gamma_cache_order = (2 * k_order).max(max_jump_power);
        let mut gamma_moments = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(gamma_cache_order + 1);
            for k in 0..=gamma_cache_order {
                row.push(levy_params.gamma_moment(i, k)?);
            }
            gamma_moments.push(row);
        }
        // Moments up to 2L: compensators need l, bracket densities need 2l.
        let mut impulse_moments = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(2 * l_order + 1);
            for l in 0..=2 * l_order {
                row.push(laws.moment(i, l)?);
            }
            impulse_moments.push(row);
        }

        let n_cells = config.n_cells();
        let config_hash = config.hash();
        Ok(Scenario {
            config,
            config_hash,
            chain_spec,
            levy_params,
            laws,
            e_count,
            teugels_grams,
            teugels_coeffs,
            impulse_grams,
            impulse_coeffs,
            moment_report,
            gamma_moments,
            impulse_moments,
            n_cells,
            max_jump_power,
        })
    }

    pub fn n_states(&self) -> usize {
        self.chain_spec.n_states()
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn dt(&self) -> f64 {
        self.config.grid_step
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn k_order(&self) -> usize {
        self.config.truncation.teugels_order
    }

    pub fn l_order(&self) -> usize {
        self.config.truncation.impulse_order
    }

    pub fn max_jump_power(&self) -> usize {
        self.max_jump_power
    }

    pub fn gamma_moment(&self, state: usize, order: usize) -> f64 {
        self.gamma_moments[state][order]
    }

    pub fn impulse_moment(&self, state: usize, order: usize) -> f64 {
        self.impulse_moments[state][order]
    }

    /// Shared coefficient set for the power-jump basis when the Levy
    /// parameters are state-independent; otherwise state 1's set is used for
    /// path assembly and cross-state orthonormality is only reported.
    pub fn teugels_uniform(&self) -> Option<&BasisCoefficients> {
        uniform_coefficients(&self.teugels_coeffs)
    }

    pub fn h_coeffs(&self) -> &BasisCoefficients {
        self.teugels_uniform().unwrap_or(&self.teugels_coeffs[0])
    }

    pub fn probe_times(&self) -> Vec<f64> {
        let count = self.config.probes.count;
        let stride = self.n_cells / count;
        (1..=count)
            .map(|k| (k * stride) as f64 * self.dt())
            .collect()
    }

    pub fn simulate_path(&self, index: u64) -> Result<PathRealization> {
        let seed = self.config.master_seed;
        let mut chain_rng = path_rng(seed, index, Stream::Chain);
        let chain = simulate_chain_with(&self.chain_spec, self.horizon(), &mut chain_rng)?;
        let counting = counting_and_compensators(&chain, &self.chain_spec)?;

        let mut wiener_rng = path_rng(seed, index, Stream::Wiener);
        let mut jump_rng = path_rng(seed, index, Stream::LevyJump);
        let driver = LevyDriver::new(
            &chain,
            self.levy_params.jump_rate,
            &self.levy_params.mark_dist,
            self.dt(),
            self.n_cells,
            &mut wiener_rng,
            &mut jump_rng,
        )?;
        let levy = driver.evaluate(&self.levy_params, &chain, 1)?;

        let mut impulse_rng = path_rng(seed, index, Stream::Impulse);
        let impulse = simulate_impulse_with(&chain, &self.laws, self.l_order(), &mut impulse_rng)?;

        Ok(self.finish_path(index, chain, counting, levy, impulse))
    }

    /// Chain, driver and impulse draws for one path at an arbitrary finest
    /// grid; lets callers evaluate the same randomness at several strides.
    pub fn drive_path(
        &self,
        index: u64,
        dt_fine: f64,
        n_fine: usize,
    ) -> Result<(ChainPath, CountingSet, LevyDriver, ImpulsePath)> {
        let seed = self.config.master_seed;
        let mut chain_rng = path_rng(seed, index, Stream::Chain);
        let chain = simulate_chain_with(&self.chain_spec, self.horizon(), &mut chain_rng)?;
        let counting = counting_and_compensators(&chain, &self.chain_spec)?;
        let mut wiener_rng = path_rng(seed, index, Stream::Wiener);
        let mut jump_rng = path_rng(seed, index, Stream::LevyJump);
        let driver = LevyDriver::new(
            &chain,
            self.levy_params.jump_rate,
            &self.levy_params.mark_dist,
            dt_fine,
            n_fine,
            &mut wiener_rng,
            &mut jump_rng,
        )?;
        let mut impulse_rng = path_rng(seed, index, Stream::Impulse);
        let impulse = simulate_impulse_with(&chain, &self.laws, self.l_order(), &mut impulse_rng)?;
        Ok((chain, counting, driver, impulse))
    }

    pub fn finish_path(
        &self,
        index: u64,
        chain: ChainPath,
        counting: CountingSet,
        levy: LevyPath,
        impulse: ImpulsePath,
    ) -> PathRealization {
        let jump_times: Vec<f64> = levy.jumps.iter().map(|j| j.time).collect();
        let mut jump_power_prefix = vec![vec![0.0]; self.max_jump_power];
        for j in &levy.jumps {
            let mut p = 1.0;
            for k in 1..=self.max_jump_power {
                p *= j.applied;
                let col = &mut jump_power_prefix[k - 1];
                let last = *col.last().unwrap();
                col.push(last + p);
            }
        }
        PathRealization {
            index,
            chain,
            counting,
            levy,
            impulse,
            jump_times,
            jump_power_prefix,
        }
    }
}

/// Contiguous block of path indices under one scenario's seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PathRange {
    pub start: u64,
    pub count: u64,
}

impl PathRange {
    pub fn new(start: u64, count: u64) -> Self {
        PathRange { start, count }
    }

    pub fn end(&self) -> u64 {
        self.start + self.count
    }

    pub fn overlaps(&self, other: &PathRange) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

/// Fixed chunk size for parallel reductions. Chunk boundaries (and therefore
/// the merge order of partial sums) never depend on the worker count, so
/// results are bit-identical at any parallelism.
pub const PATH_CHUNK: u64 = 1024;

/// Fold an accumulator over raw path indices: chunks run in parallel, each
/// chunk folds its indices in order, and chunk results merge in chunk order.
pub fn fold_path_indices<Acc, Init, Fold, Merge>(
    range: PathRange,
    init: Init,
    fold: Fold,
    merge: Merge,
) -> Result<Acc>
where
    Acc: Send,
    Init: Fn() -> Acc + Sync,
    Fold: Fn(&mut Acc, u64) -> Result<()> + Sync,
    Merge: Fn(&mut Acc, Acc),
{
    use rayon::prelude::*;
    let n_chunks = (range.count + PATH_CHUNK - 1) / PATH_CHUNK;
    let partials: Vec<Result<Acc>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = range.start + c * PATH_CHUNK;
            let hi = (lo + PATH_CHUNK).min(range.end());
            let mut acc = init();
            for idx in lo..hi {
                fold(&mut acc, idx)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for p in partials {
        merge(&mut total, p?);
    }
    Ok(total)
}

/// Fold an accumulator over simulated paths (see `fold_path_indices` for the
/// determinism contract).
pub fn fold_paths<Acc, Init, Fold, Merge>(
    scn: &Scenario,
    range: PathRange,
    init: Init,
    fold: Fold,
    merge: Merge,
) -> Result<Acc>
where
    Acc: Send,
    Init: Fn() -> Acc + Sync,
    Fold: Fn(&mut Acc, &PathRealization) -> Result<()> + Sync,
    Merge: Fn(&mut Acc, Acc),
{
    fold_path_indices(
        range,
        init,
        |acc, idx| {
            let real = scn.simulate_path(idx)?;
            fold(acc, &real)
        },
        merge,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::MarkDistribution;
    use crate::harness::config::ScenarioConfig;
    use crate::levy::JumpTransform;

    #[test]
    fn canonical_scenario_builds() {
        let scn = Scenario::new(ScenarioConfig::canonical()).unwrap();
        assert_eq!(scn.n_states(), 2);
        assert!((scn.e_count[0] - 0.5).abs() < 1e-10);
        assert!(scn.teugels_uniform().is_some());
        // Rademacher impulse laws: orders 2 and 3 collapse onto 0 and 1.
        for c in scn.impulse_coeffs.iter().flatten() {
            assert_eq!(c.kept, vec![0, 1]);
        }
        // Power-jump gram [[2,0,1],[0,1,0],[1,0,1]] has full rank.
        assert_eq!(scn.teugels_coeffs[0].kept, vec![0, 1, 2]);
        let probes = scn.probe_times();
        assert_eq!(probes.len(), 8);
        assert!((probes[7] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_gate_rejects_cubic_gaussian() {
        let mut cfg = ScenarioConfig::canonical();
        cfg.levy.jump_dist = MarkDistribution::Gaussian { mean: 0.0, std_dev: 1.0 };
        cfg.levy.gamma = vec![
            JumpTransform::Identity,
            JumpTransform::AffineOdd { slope: 1.0, cubic: 0.2 },
        ];
        let err = match Scenario::new(cfg) {
            Err(e) => e,
            Ok(_) => panic!("cubic gaussian must be refused"),
        };
        assert!(matches!(err, Error::MomentCondition(_)));
        assert!(err.to_string().contains("state 2"));
    }

    #[test]
    fn unreachable_state_gets_no_impulse_basis() {
        let mut cfg = ScenarioConfig::canonical();
        cfg.chain.intensities = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
        cfg.chain.initial_dist = vec![1.0, 0.0];
        let scn = Scenario::new(cfg).unwrap();
        assert!(scn.impulse_coeffs[1].is_none(), "state 2 unreachable");
        assert!(scn.impulse_coeffs[0].is_none(), "nothing jumps at all");
    }

    #[test]
    fn paths_are_reproducible_and_streams_independent() {
        let scn = Scenario::new(ScenarioConfig::canonical()).unwrap();
        let a = scn.simulate_path(7).unwrap();
        let b = scn.simulate_path(7).unwrap();
        assert_eq!(a.chain.epochs, b.chain.epochs);
        assert_eq!(a.levy.values, b.levy.values);
        assert_eq!(
            a.impulse.records.iter().map(|r| r.value).collect::<Vec<_>>(),
            b.impulse.records.iter().map(|r| r.value).collect::<Vec<_>>()
        );
        let c = scn.simulate_path(8).unwrap();
        assert_ne!(a.chain.id, c.chain.id);
    }
}
