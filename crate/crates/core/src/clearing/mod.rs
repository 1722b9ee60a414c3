//! Contract-clearing equilibria.
//!
//! An equilibrium is a price `mu* >= 0` and allocation `x*` such that every
//! agent best-responds to `mu*` and aggregate demand meets capacity, with the
//! usual complementary slackness when capacity is not scarce:
//! `S(mu*) <= m` and `mu* (m - S(mu*)) = 0`.
//!
//! Two independent routes are provided. [`clear_bisection`] brackets the root
//! of the monotone aggregate demand directly and serves as the oracle.
//! [`clear_decentralized`] and [`clear_stochastic`] run the primal-dual scheme:
//! agents answer the posted price with proximal best responses and the
//! contract moves the price along excess demand, projected onto `mu >= 0`.

mod bisection;
mod diagnostics;
mod dual_ascent;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, ContractParams};
use crate::error::{Error, Result};

pub use bisection::{clear_bisection, ORACLE_TOL};
pub use diagnostics::{diagnose_rates, RateDiagnostics};
pub use dual_ascent::{clear_decentralized, clear_stochastic, DualAscent, NoiseModel, STOCHASTIC_WINDOW};

/// Step sizes for the price update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// Fixed `eta`; must satisfy `0 < eta < 2/L`.
    Constant { eta: f64 },
    /// Fixed `eta = factor / L`, resolved against the instance. `factor` must
    /// lie in `(0, 2)`.
    LipschitzScaled { factor: f64 },
    /// `eta_t = eta0 / (t + 1)^power`.
    Diminishing { eta0: f64, power: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::LipschitzScaled { factor: 1.0 }
    }
}

impl StepSchedule {
    pub fn is_diminishing(&self) -> bool {
        matches!(self, StepSchedule::Diminishing { .. })
    }

    /// Resolves the schedule against a Lipschitz bound into a function of the
    /// iteration counter.
    pub fn resolve(&self, lipschitz: f64) -> Result<ResolvedSteps> {
        match *self {
            StepSchedule::Constant { eta } => {
                let limit = 2.0 / lipschitz;
                if !(eta > 0.0 && eta < limit) {
                    return Err(Error::StepTooLarge { eta, limit });
                }
                Ok(ResolvedSteps::Constant(eta))
            }
            StepSchedule::LipschitzScaled { factor } => {
                if !(factor > 0.0 && factor < 2.0) {
                    return Err(Error::invalid(
                        "step.factor",
                        format!("must lie in (0, 2), got {factor}"),
                    ));
                }
                Ok(ResolvedSteps::Constant(factor / lipschitz))
            }
            StepSchedule::Diminishing { eta0, power } => {
                if !(eta0 > 0.0 && eta0.is_finite()) {
                    return Err(Error::invalid("step.eta0", format!("must be positive, got {eta0}")));
                }
                if !(power > 0.0 && power <= 1.0) {
                    return Err(Error::invalid("step.power", format!("must lie in (0, 1], got {power}")));
                }
                Ok(ResolvedSteps::Diminishing { eta0, power })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedSteps {
    Constant(f64),
    Diminishing { eta0: f64, power: f64 },
}

impl ResolvedSteps {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            ResolvedSteps::Constant(eta) => eta,
            ResolvedSteps::Diminishing { eta0, power } => eta0 / ((t + 1) as f64).powf(power),
        }
    }
}

/// Tuning of the decentralized algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub step: StepSchedule,
    /// Weight of the proximal anchor in each agent's subproblem.
    pub gamma: f64,
    /// Primal tolerance in demand units; `None` means `1e-6 * m`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_primal: Option<f64>,
    pub tol_dual: f64,
    pub max_iters: usize,
    pub mc_samples: usize,
    pub noise_sigma: f64,
    pub mu_init: f64,
    /// Keep every round's allocation vector in the trace.
    pub record_allocations: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            step: StepSchedule::default(),
            gamma: 1e-6,
            tol_primal: None,
            tol_dual: 1e-8,
            max_iters: 100_000,
            mc_samples: 1,
            noise_sigma: 0.0,
            mu_init: 0.0,
            record_allocations: true,
        }
    }
}

impl AlgoConfig {
    pub fn primal_tolerance(&self, capacity: f64) -> f64 {
        self.tol_primal.unwrap_or(1e-6 * capacity)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("gamma", self.gamma)?;
        positive("tol_dual", self.tol_dual)?;
        if let Some(tp) = self.tol_primal {
            positive("tol_primal", tp)?;
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(
                "noise_sigma",
                format!("must be non-negative, got {}", self.noise_sigma),
            ));
        }
        if !(self.mu_init >= 0.0 && self.mu_init.is_finite()) {
            return Err(Error::invalid(
                "mu_init",
                format!("must be non-negative, got {}", self.mu_init),
            ));
        }
        Ok(())
    }
}

/// One round of the primal-dual iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub t: usize,
    /// Price posted in this round.
    pub mu: f64,
    /// Price after the dual update.
    pub mu_next: f64,
    /// Allocations computed in this round; empty when not recorded.
    pub allocations: Vec<f64>,
    pub s_hat: f64,
    /// `|s_hat - m|`.
    pub r_primal: f64,
    /// `|mu_next - mu|`.
    pub r_dual: f64,
    /// Largest per-agent change in allocation over the round.
    #[serde(default)]
    pub r_alloc: f64,
}

impl IterateRecord {
    /// Primal residual that honours complementary slackness: excess supply is
    /// not a violation once the price has been pushed to zero.
    pub fn kkt_residual(&self, capacity: f64) -> f64 {
        kkt_residual(self.s_hat, capacity, self.mu_next)
    }
}

pub(crate) fn kkt_residual(s_hat: f64, capacity: f64, mu_next: f64) -> f64 {
    if mu_next > 0.0 {
        (s_hat - capacity).abs()
    } else {
        (s_hat - capacity).max(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateTrace {
    pub records: Vec<IterateRecord>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn prices(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.mu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingSolution {
    pub allocations: Vec<f64>,
    pub mu_star: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: IterateTrace,
    /// `max(0, m - sum x)`.
    pub slack: f64,
    /// `|sum x - m|` when the price is positive. Non-zero only when aggregate
    /// demand jumps over capacity (fixed fees) or the run stopped early.
    pub clearing_gap: f64,
}

impl ClearingSolution {
    pub fn total(&self) -> f64 {
        self.allocations.iter().sum()
    }

    pub(crate) fn from_allocations(
        allocations: Vec<f64>,
        mu_star: f64,
        capacity: f64,
        converged: bool,
        iterations: usize,
        trace: IterateTrace,
    ) -> Self {
        let total: f64 = allocations.iter().sum();
        let clearing_gap = if mu_star > 0.0 { (total - capacity).abs() } else { 0.0 };
        Self {
            allocations,
            mu_star,
            converged,
            iterations,
            trace,
            slack: (capacity - total).max(0.0),
            clearing_gap,
        }
    }
}

/// `S(mu) = sum_i x_i*(mu)`.
pub fn aggregate_demand(agents: &[AgentParams], c: &ContractParams, mu: f64) -> f64 {
    agents.iter().map(|a| a.best_response(c, mu)).sum()
}

pub fn best_responses(agents: &[AgentParams], c: &ContractParams, mu: f64) -> Vec<f64> {
    agents.iter().map(|a| a.best_response(c, mu)).collect()
}

/// Global Lipschitz constant of `S` on `mu >= 0`: `sum_i alpha_i / (beta_i + tau)^2`.
pub fn lipschitz_bound(agents: &[AgentParams], c: &ContractParams) -> Result<f64> {
    if agents.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    Ok(agents
        .iter()
        .map(|a| {
            let d = a.beta() + c.fee_tau;
            a.alpha() / (d * d)
        })
        .sum())
}

/// Projected dual ascent: `max{0, mu + eta (s_hat - m)}`.
pub fn dual_update(mu: f64, eta: f64, s_hat: f64, m: f64) -> f64 {
    (mu + eta * (s_hat - m)).max(0.0)
}

/// Price above which every agent demands nothing: `max_i alpha_i - tau`.
pub fn price_ceiling(agents: &[AgentParams], c: &ContractParams) -> f64 {
    agents.iter().map(|a| a.alpha()).fold(f64::NEG_INFINITY, f64::max) - c.fee_tau
}
