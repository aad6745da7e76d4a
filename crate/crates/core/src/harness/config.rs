//! Scenario configuration: a TOML key-value tree mapping onto the module
//! parameter types. States are 1-based in files and reports, 0-based in code.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::ChainSpec;
use crate::dist::MarkDistribution;
use crate::error::{Error, Result};
use crate::impulse::JumpLawSet;
use crate::levy::{JumpTransform, RegimeLevyParams};
use crate::represent::{MonomialTerm, PayoffSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub horizon: f64,
    pub grid_step: f64,
    pub master_seed: u64,
    #[serde(default = "default_pivot_tol")]
    pub pivot_tol: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub chain: ChainConfig,
    pub levy: LevyConfig,
    pub impulse: ImpulseConfig,
    #[serde(default)]
    pub paths: PathCounts,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub probes: ProbeConfig,
    #[serde(default)]
    pub representation: RepresentationConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_pivot_tol() -> f64 {
    crate::ortho::DEFAULT_PIVOT_TOL
}

fn default_output_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChainConfig {
    pub intensities: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LevyConfig {
    pub mu0: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub jump_rate: f64,
    pub jump_dist: MarkDistribution,
    pub gamma: Vec<JumpTransform>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImpulseConfig {
    pub laws: Vec<MarkDistribution>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PathCounts {
    pub estimation: u64,
    pub evaluation: u64,
    /// Paths persisted in full to the columnar store.
    pub persisted: u64,
    /// Number of reporting cells in the persisted grid (the simulation grid
    /// decimated by n_cells / persist_points).
    pub persist_points: usize,
}

impl Default for PathCounts {
    fn default() -> Self {
        PathCounts {
            estimation: 100_000,
            evaluation: 100_000,
            persisted: 64,
            persist_points: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Truncation {
    /// K: highest power-jump order carried.
    pub teugels_order: usize,
    /// L: highest impulse power carried.
    pub impulse_order: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            teugels_order: 3,
            impulse_order: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ProbeConfig {
    /// Probe times k * horizon / count, k = 1..=count.
    pub count: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { count: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RepresentationConfig {
    pub buckets: usize,
    /// Refinement sweeps over the bucket regressions. The default warm-start
    /// estimator is already unbiased for every catalog payoff (their
    /// conditional expectations lie in the feature span); sweeps help only
    /// for payoffs outside it, at the cost of extra estimation noise.
    pub sweeps: usize,
    #[serde(default)]
    pub payoff: Option<PayoffConfig>,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        RepresentationConfig {
            buckets: 8,
            sweeps: 0,
            payoff: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OracleConfig {
    pub paths: u64,
    /// Grid steps, coarse to fine; each must be a power-of-two multiple of
    /// the finest.
    pub dt_levels: Vec<f64>,
    /// 1-based impulse state.
    pub i_state: usize,
    /// 1-based counting state.
    pub j_state: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            paths: 256,
            dt_levels: vec![1.0 / 256.0, 1.0 / 1024.0, 1.0 / 4096.0],
            i_state: 1,
            j_state: 1,
        }
    }
}

/// Payoff description with 1-based states, as written in config files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffConfig {
    TerminalLinear,
    TerminalSquare,
    TerminalCount { state: usize },
    TerminalImpulse { state: usize },
    Indicator { state: usize },
    Polynomial { terms: Vec<TermConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TermConfig {
    pub coeff: f64,
    #[serde(default)]
    pub x_power: usize,
    #[serde(default)]
    pub count_power: usize,
    #[serde(default)]
    pub impulse_power: usize,
    #[serde(default = "one")]
    pub count_state: usize,
    #[serde(default = "one")]
    pub impulse_state: usize,
}

fn one() -> usize {
    1
}

impl PayoffConfig {
    pub fn to_payoff(&self, n_states: usize) -> Result<PayoffSpec> {
        let check = |s: usize| -> Result<usize> {
            if s == 0 || s > n_states {
                Err(Error::Config(format!(
                    "state index {s} outside 1..={n_states}"
                )))
            } else {
                Ok(s - 1)
            }
        };
        Ok(match self {
            PayoffConfig::TerminalLinear => PayoffSpec::TerminalLinear,
            PayoffConfig::TerminalSquare => PayoffSpec::TerminalSquare,
            PayoffConfig::TerminalCount { state } => PayoffSpec::TerminalCount { state: check(*state)? },
            PayoffConfig::TerminalImpulse { state } => {
                PayoffSpec::TerminalImpulse { state: check(*state)? }
            }
            PayoffConfig::Indicator { state } => PayoffSpec::Indicator { state: check(*state)? },
            PayoffConfig::Polynomial { terms } => {
                let mut out = Vec::with_capacity(terms.len());
                for t in terms {
                    out.push(MonomialTerm {
                        coeff: t.coeff,
                        x_power: t.x_power,
                        count_power: t.count_power,
                        impulse_power: t.impulse_power,
                        count_state: check(t.count_state)?,
                        impulse_state: check(t.impulse_state)?,
                    });
                }
                PayoffSpec::Polynomial { terms: out }
            }
        })
    }
}

impl ScenarioConfig {
    /// The repository's default regression scenario: two symmetric states,
    /// unit-rate symmetric two-point Levy jumps, symmetric two-point
    /// impulses, unit horizon on a 2^-10 grid.
    pub fn canonical() -> Self {
        ScenarioConfig {
            horizon: 1.0,
            grid_step: 1.0 / 1024.0,
            master_seed: 20260809,
            pivot_tol: default_pivot_tol(),
            output_dir: default_output_dir(),
            chain: ChainConfig {
                intensities: vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
                initial_dist: vec![0.5, 0.5],
            },
            levy: LevyConfig {
                mu0: vec![0.0, 0.0],
                sigma0: vec![1.0, 1.0],
                jump_rate: 1.0,
                jump_dist: MarkDistribution::rademacher(),
                gamma: vec![JumpTransform::Identity, JumpTransform::Identity],
            },
            impulse: ImpulseConfig {
                laws: vec![MarkDistribution::rademacher(), MarkDistribution::rademacher()],
            },
            paths: PathCounts::default(),
            truncation: Truncation::default(),
            probes: ProbeConfig::default(),
            representation: RepresentationConfig::default(),
            oracle: OracleConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized config; stamped into every manifest and
    /// report for reproducibility.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_states(&self) -> usize {
        self.chain.initial_dist.len()
    }

    pub fn chain_spec(&self) -> ChainSpec {
        ChainSpec {
            intensities: self.chain.intensities.clone(),
            initial_dist: self.chain.initial_dist.clone(),
        }
    }

    pub fn levy_params(&self) -> RegimeLevyParams {
        RegimeLevyParams {
            drift: self.levy.mu0.clone(),
            volatility: self.levy.sigma0.clone(),
            transforms: self.levy.gamma.clone(),
            jump_rate: self.levy.jump_rate,
            mark_dist: self.levy.jump_dist.clone(),
        }
    }

    pub fn jump_laws(&self) -> JumpLawSet {
        JumpLawSet::new(self.impulse.laws.clone())
    }

    pub fn n_cells(&self) -> usize {
        (self.horizon / self.grid_step).round() as usize
    }

    /// Component validation: everything except the production path-count
    /// minimum (enforced separately so unit tests can run small).
    pub fn validate_core(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Validation(format!("horizon {} must be positive", self.horizon)));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::Validation(format!(
                "grid step {} must be positive",
                self.grid_step
            )));
        }
        let n_cells = self.n_cells();
        if n_cells == 0
            || ((n_cells as f64) * self.grid_step - self.horizon).abs()
                > 1e-9 * self.horizon.max(1.0)
        {
            return Err(Error::Validation(format!(
                "grid step {} must evenly divide the horizon {}",
                self.grid_step, self.horizon
            )));
        }
        self.chain_spec().validate()?;
        self.levy_params().validate(self.n_states())?;
        self.jump_laws().validate(self.n_states())?;
        if self.truncation.teugels_order == 0 || self.truncation.impulse_order == 0 {
            return Err(Error::Validation("truncation orders must be >= 1".into()));
        }
        if self.probes.count == 0 || n_cells % self.probes.count != 0 {
            return Err(Error::Validation(format!(
                "probe count {} must divide the {} grid cells",
                self.probes.count, n_cells
            )));
        }
        if self.representation.buckets == 0 || n_cells % self.representation.buckets != 0 {
            return Err(Error::Validation(format!(
                "bucket count {} must divide the {} grid cells",
                self.representation.buckets, n_cells
            )));
        }
        if self.paths.persist_points == 0 || n_cells % self.paths.persist_points != 0 {
            return Err(Error::Validation(format!(
                "persist_points {} must divide the {} grid cells",
                self.paths.persist_points, n_cells
            )));
        }
        if !(self.pivot_tol > 0.0 && self.pivot_tol < 1.0) {
            return Err(Error::Validation(format!(
                "pivot tolerance {} outside (0, 1)",
                self.pivot_tol
            )));
        }
        if let Some(p) = &self.representation.payoff {
            p.to_payoff(self.n_states())?.validate(self.n_states())?;
        }
        Ok(())
    }

    /// Full validation including the production path-count minimum.
    pub fn validate(&self) -> Result<()> {
        self.validate_core()?;
        if self.paths.estimation < 1000 || self.paths.evaluation < 1000 {
            return Err(Error::Validation(format!(
                "path counts must be >= 1000 (got estimation {}, evaluation {})",
                self.paths.estimation, self.paths.evaluation
            )));
        }
        Ok(())
    }
}
