use serde::{Deserialize, Serialize};

use crate::agent::ContractParams;
use crate::clearing::{clear_bisection, kkt_residual, lipschitz_bound, DualAscent, ORACLE_TOL};
use crate::error::{Error, Result};
use crate::mechanisms::ration_to_capacity;
use crate::metrics::MetricsReport;

use super::{sample_population, ScenarioConfig};

/// Length of the pre-shock and post-shock efficiency windows.
pub const SHOCK_WINDOW: usize = 30;
/// Consecutive in-tolerance rounds that count as re-convergence.
pub const RECONVERGENCE_RUN: usize = 10;

/// Per-round fee paths over a finite horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeSchedule {
    pub tau_path: Vec<f64>,
    pub g_path: Vec<f64>,
    pub shock_time: Option<usize>,
}

impl FeeSchedule {
    pub fn constant(horizon: usize, tau: f64, g: f64) -> Self {
        Self {
            tau_path: vec![tau; horizon],
            g_path: vec![g; horizon],
            shock_time: None,
        }
    }

    /// `tau_before` on `[0, t0)`, `tau_after` from `t0` on.
    pub fn tau_jump(horizon: usize, tau_before: f64, tau_after: f64, t0: usize, g: f64) -> Self {
        let tau_path = (0..horizon)
            .map(|t| if t < t0 { tau_before } else { tau_after })
            .collect();
        Self {
            tau_path,
            g_path: vec![g; horizon],
            shock_time: Some(t0),
        }
    }

    /// The schedule a scenario's shock section describes.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let c = cfg.contract()?;
        let s = &cfg.experiment.shock;
        Ok(if s.enabled {
            Self::tau_jump(s.horizon, c.fee_tau, s.tau_after, s.shock_time, c.fee_g)
        } else {
            Self::constant(s.horizon, c.fee_tau, c.fee_g)
        })
    }

    pub fn horizon(&self) -> usize {
        self.tau_path.len()
    }

    /// Round splitting the two measurement windows: the shock time, or the
    /// midpoint of an unshocked horizon.
    pub fn split_round(&self) -> usize {
        self.shock_time.unwrap_or(self.horizon() / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.horizon();
        if self.g_path.len() != horizon {
            return Err(Error::LengthMismatch {
                expected: horizon,
                found: self.g_path.len(),
            });
        }
        if let Some(bad) = self
            .tau_path
            .iter()
            .chain(&self.g_path)
            .find(|v| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::invalid(
                "fee path",
                format!("fees must be non-negative, got {bad}"),
            ));
        }
        let t0 = self.split_round();
        if t0 < SHOCK_WINDOW || horizon < t0 + SHOCK_WINDOW {
            return Err(Error::invalid(
                "horizon",
                format!("horizon {horizon} with split round {t0} leaves no room for two {SHOCK_WINDOW}-round windows"),
            ));
        }
        Ok(())
    }

    fn contract_at(&self, capacity: f64, t: usize) -> Result<ContractParams> {
        ContractParams::new(capacity, self.tau_path[t], self.g_path[t])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockRound {
    pub t: usize,
    pub tau: f64,
    pub g: f64,
    /// Price posted in this round.
    pub mu: f64,
    pub s_hat: f64,
    pub kkt_residual: f64,
    /// Played allocation, rationed to capacity.
    pub allocations: Vec<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockResult {
    pub rounds: Vec<ShockRound>,
    pub pre_efficiency: f64,
    pub post_efficiency: f64,
    pub resilience: Option<f64>,
    /// First round after the shock that starts a run of
    /// [`RECONVERGENCE_RUN`] in-tolerance rounds.
    pub reconvergence_round: Option<usize>,
    pub final_mu: f64,
    /// Oracle clearing price under the final round's fees.
    pub oracle_mu_final: f64,
}

/// Plays one dual-ascent round per period on the population of replication
/// `replication`, with each round's fees taken from `schedule`.
///
/// The step size is resolved once, against the Lipschitz bound at the lowest
/// fee on the path (the largest bound), so it stays stable throughout.
pub fn shock_run(cfg: &ScenarioConfig, schedule: &FeeSchedule, replication: usize) -> Result<ShockResult> {
    cfg.validate()?;
    schedule.validate()?;
    let agents = sample_population(cfg, replication)?;
    let m = cfg.contract.capacity;
    let eps = cfg.experiment.eps_part;
    let tol_p = cfg.algo.primal_tolerance(m);

    let t_min = (0..schedule.horizon())
        .min_by(|&a, &b| schedule.tau_path[a].total_cmp(&schedule.tau_path[b]))
        .unwrap_or(0);
    let steps = cfg
        .algo
        .step
        .resolve(lipschitz_bound(&agents, &schedule.contract_at(m, t_min)?)?)?;

    let mut state = DualAscent::new(agents.len(), cfg.algo.mu_init);
    let mut rounds = Vec::with_capacity(schedule.horizon());
    for t in 0..schedule.horizon() {
        let c = schedule.contract_at(m, t)?;
        let rec = state.step(&agents, &c, steps.at(t), cfg.algo.gamma, None);
        let (x, _) = ration_to_capacity(&state.allocations, m);
        let metrics = MetricsReport::evaluate(&x, &agents, &c, c.fee_tau + rec.mu, eps)?;
        rounds.push(ShockRound {
            t,
            tau: c.fee_tau,
            g: c.fee_g,
            mu: rec.mu,
            s_hat: rec.s_hat,
            kkt_residual: kkt_residual(rec.s_hat, m, rec.mu_next),
            allocations: x,
            metrics,
        });
    }

    let t0 = schedule.split_round();
    let mean_eff = |rs: &[ShockRound]| rs.iter().map(|r| r.metrics.efficiency).sum::<f64>() / rs.len() as f64;
    let pre_efficiency = mean_eff(&rounds[t0 - SHOCK_WINDOW..t0]);
    let post_efficiency = mean_eff(&rounds[rounds.len() - SHOCK_WINDOW..]);

    let reconvergence_round = (t0 + 1..rounds.len().saturating_sub(RECONVERGENCE_RUN - 1))
        .find(|&t| rounds[t..t + RECONVERGENCE_RUN].iter().all(|r| r.kkt_residual <= tol_p));

    let last = schedule.contract_at(m, schedule.horizon() - 1)?;
    Ok(ShockResult {
        rounds,
        pre_efficiency,
        post_efficiency,
        resilience: crate::metrics::resilience(pre_efficiency, post_efficiency),
        reconvergence_round,
        final_mu: state.mu,
        oracle_mu_final: clear_bisection(&agents, &last, ORACLE_TOL)?.mu_star,
    })
}
