use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, ContractParams};
use crate::clearing::AlgoConfig;
use crate::error::{Error, Result};
use crate::mechanisms::MechanismChoice;

fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// A full experiment scenario. Every section is optional in a config file;
/// omitted keys take the defaults below (n = 20, m = 100, alpha ~ U(5, 20),
/// beta ~ U(0.5, 5), tau = 0.5, g = 1, R = 1000).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub population: PopulationConfig,
    pub contract: ContractConfig,
    pub algo: AlgoConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformRange {
    pub lo: f64,
    pub hi: f64,
}

impl UniformRange {
    pub fn mean(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n: usize,
    pub alpha: UniformRange,
    pub beta: UniformRange,
    /// Fixed agents used in every replication instead of sampling. `n` must
    /// match their count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<AgentSpec>>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n: 20,
            alpha: UniformRange { lo: 5.0, hi: 20.0 },
            beta: UniformRange { lo: 0.5, hi: 5.0 },
            agents: None,
        }
    }
}

/// A fee given either as one value or as a grid of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeeSpec {
    Scalar(f64),
    Grid(Vec<f64>),
}

impl FeeSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            FeeSpec::Scalar(v) => vec![*v],
            FeeSpec::Grid(v) => v.clone(),
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            FeeSpec::Scalar(v) => Some(*v),
            FeeSpec::Grid(v) if v.len() == 1 => Some(v[0]),
            FeeSpec::Grid(_) => None,
        }
    }

    fn validate(&self, key: &str) -> Result<()> {
        let pts = self.points();
        if pts.is_empty() {
            return Err(config_err(key, "grid must not be empty"));
        }
        if let Some(bad) = pts.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(config_err(
                key,
                format!("fees must be non-negative and finite, got {bad}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractConfig {
    pub capacity: f64,
    pub tau: FeeSpec,
    pub g: FeeSpec,
}

impl Default for ContractConfig {
    fn default() -> Self {
        Self {
            capacity: 100.0,
            tau: FeeSpec::Scalar(0.5),
            g: FeeSpec::Scalar(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub replications: usize,
    pub master_seed: u64,
    pub mechanisms: Vec<MechanismChoice>,
    pub eps_part: f64,
    /// Report the price of fairness (against the equal split) per replication.
    /// Skipped automatically above [`super::POF_MAX_AGENTS`] agents.
    pub compute_pof: bool,
    pub shock: ShockConfig,
    pub regret: RegretConfig,
    pub statics: StaticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            replications: 1000,
            master_seed: 0,
            mechanisms: MechanismChoice::ALL_DEFAULT.to_vec(),
            eps_part: crate::metrics::DEFAULT_EPS_PART,
            compute_pof: true,
            shock: ShockConfig::default(),
            regret: RegretConfig::default(),
            statics: StaticsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShockConfig {
    pub horizon: usize,
    /// When false the fee stays at `contract.tau` for the whole horizon.
    pub enabled: bool,
    pub shock_time: usize,
    pub tau_after: f64,
}

impl Default for ShockConfig {
    fn default() -> Self {
        Self {
            horizon: 200,
            enabled: true,
            shock_time: 50,
            tau_after: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretConfig {
    pub horizon: usize,
    /// Relative amplitude of the sinusoidal drift on every alpha.
    pub amplitude: f64,
    /// Drift period in rounds; defaults to the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Base step of `eta_t = eta0 / sqrt(t + 1)`; defaults to `1 / L` at the
    /// largest drifted alphas.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    /// Round at which every alpha is multiplied by `jump_factor`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_at: Option<usize>,
    pub jump_factor: f64,
    /// Start from the round-0 equilibrium price and allocation instead of
    /// `mu = 0` and empty allocations.
    pub start_at_equilibrium: bool,
    /// Smallest horizon included in the log-log fit.
    pub fit_min: usize,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            amplitude: 0.1,
            period: None,
            eta0: None,
            jump_at: None,
            jump_factor: 1.0,
            start_at_equilibrium: false,
            fit_min: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticsConfig {
    pub capacities: Vec<f64>,
}

impl Default for StaticsConfig {
    fn default() -> Self {
        Self {
            capacities: vec![10.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0, 300.0],
        }
    }
}

impl ScenarioConfig {
    /// Checks every invariant, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let p = &self.population;
        if p.n == 0 {
            return Err(config_err("population.n", "must be at least 1"));
        }
        for (key, r) in [("population.alpha", p.alpha), ("population.beta", p.beta)] {
            if !(r.lo > 0.0 && r.lo.is_finite() && r.hi.is_finite()) {
                return Err(config_err(
                    key,
                    format!("bounds must be positive and finite, got [{}, {}]", r.lo, r.hi),
                ));
            }
            if r.lo > r.hi {
                return Err(config_err(key, format!("lo {} exceeds hi {}", r.lo, r.hi)));
            }
        }
        if let Some(agents) = &p.agents {
            if agents.len() != p.n {
                return Err(config_err(
                    "population.n",
                    format!("must equal the number of listed agents ({})", agents.len()),
                ));
            }
            for (i, a) in agents.iter().enumerate() {
                AgentParams::new(i as u64, a.alpha, a.beta)
                    .map_err(|e| config_err(format!("population.agents[{i}]"), e.to_string()))?;
            }
        }

        let c = &self.contract;
        if !(c.capacity > 0.0 && c.capacity.is_finite()) {
            return Err(config_err(
                "contract.capacity",
                format!("must be positive and finite, got {}", c.capacity),
            ));
        }
        c.tau.validate("contract.tau")?;
        c.g.validate("contract.g")?;

        self.algo.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => config_err(format!("algo.{name}"), reason),
            other => other,
        })?;

        let e = &self.experiment;
        if e.replications == 0 {
            return Err(config_err("experiment.replications", "must be at least 1"));
        }
        if e.mechanisms.is_empty() {
            return Err(config_err("experiment.mechanisms", "must list at least one mechanism"));
        }
        if !(e.eps_part > 0.0 && e.eps_part.is_finite()) {
            return Err(config_err(
                "experiment.eps_part",
                format!("must be positive, got {}", e.eps_part),
            ));
        }
        let s = &e.shock;
        if !(s.tau_after >= 0.0 && s.tau_after.is_finite()) {
            return Err(config_err(
                "experiment.shock.tau_after",
                format!("must be non-negative, got {}", s.tau_after),
            ));
        }
        let r = &e.regret;
        if r.horizon == 0 {
            return Err(config_err("experiment.regret.horizon", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&r.amplitude) {
            return Err(config_err(
                "experiment.regret.amplitude",
                format!("must lie in [0, 1) to keep alpha positive, got {}", r.amplitude),
            ));
        }
        if let Some(period) = r.period {
            if !(period > 0.0 && period.is_finite()) {
                return Err(config_err(
                    "experiment.regret.period",
                    format!("must be positive, got {period}"),
                ));
            }
        }
        if let Some(eta0) = r.eta0 {
            if !(eta0 > 0.0 && eta0.is_finite()) {
                return Err(config_err(
                    "experiment.regret.eta0",
                    format!("must be positive, got {eta0}"),
                ));
            }
        }
        if !(r.jump_factor > 0.0 && r.jump_factor.is_finite()) {
            return Err(config_err(
                "experiment.regret.jump_factor",
                format!("must be positive, got {}", r.jump_factor),
            ));
        }
        if r.fit_min == 0 {
            return Err(config_err("experiment.regret.fit_min", "must be at least 1"));
        }
        let caps = &e.statics.capacities;
        if caps.is_empty() {
            return Err(config_err("experiment.statics.capacities", "must not be empty"));
        }
        if let Some(bad) = caps.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(config_err(
                "experiment.statics.capacities",
                format!("capacities must be positive, got {bad}"),
            ));
        }
        if caps.windows(2).any(|w| w[1] < w[0]) {
            return Err(config_err(
                "experiment.statics.capacities",
                "grid must be non-decreasing",
            ));
        }
        Ok(())
    }

    /// The contract at a scalar fee pair; fails when either fee is a grid.
    pub fn contract(&self) -> Result<ContractParams> {
        let tau = self
            .contract
            .tau
            .scalar()
            .ok_or_else(|| config_err("contract.tau", "a single value is required here, not a grid"))?;
        let g = self
            .contract
            .g
            .scalar()
            .ok_or_else(|| config_err("contract.g", "a single value is required here, not a grid"))?;
        ContractParams::new(self.contract.capacity, tau, g)
    }

    /// Mean `(alpha, beta)` used to calibrate the flat contract.
    pub fn mean_parameters(&self) -> (f64, f64) {
        match &self.population.agents {
            Some(agents) if !agents.is_empty() => {
                let n = agents.len() as f64;
                (
                    agents.iter().map(|a| a.alpha).sum::<f64>() / n,
                    agents.iter().map(|a| a.beta).sum::<f64>() / n,
                )
            }
            _ => (self.population.alpha.mean(), self.population.beta.mean()),
        }
    }
}
