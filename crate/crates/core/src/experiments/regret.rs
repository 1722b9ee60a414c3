use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, ContractParams};
use crate::clearing::{clear_bisection, lipschitz_bound, DualAscent, ORACLE_TOL};
use crate::error::Result;
use crate::mechanisms::ration_to_capacity;
use crate::metrics::efficiency;

use super::{sample_population, ScenarioConfig};

/// Number of log-spaced horizons used in the slope fit.
const FIT_POINTS: usize = 41;

/// Deterministic multiplicative drift on every agent's alpha:
/// `1 + amplitude sin(2 pi t / period)`, times `jump_factor` from `jump_at` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub amplitude: f64,
    pub period: f64,
    pub jump_at: Option<usize>,
    pub jump_factor: f64,
}

impl DriftModel {
    pub fn factor(&self, t: usize) -> f64 {
        let wave = 1.0 + self.amplitude * (TAU * t as f64 / self.period).sin();
        match self.jump_at {
            Some(at) if t >= at => wave * self.jump_factor,
            _ => wave,
        }
    }

    /// Upper bound of [`factor`](Self::factor) over all rounds.
    pub fn max_factor(&self) -> f64 {
        let jump = if self.jump_at.is_some() {
            self.jump_factor.max(1.0)
        } else {
            1.0
        };
        (1.0 + self.amplitude) * jump
    }

    fn apply(&self, agents: &[AgentParams], t: usize) -> Result<Vec<AgentParams>> {
        let f = self.factor(t);
        agents.iter().map(|a| a.with_alpha(a.alpha() * f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretResult {
    /// Cumulative regret after `T` rounds, for `T = 1..=horizon`.
    pub cumulative: Vec<f64>,
    /// Least-squares slope of `ln regret(T)` against `ln T` over the fit
    /// range; `None` with fewer than two positive points.
    pub slope: Option<f64>,
    pub fit_range: (usize, usize),
    pub eta0: f64,
    /// `regret(2T) / regret(T)` for `T` in {100, 1000} where `2T` fits the horizon.
    pub doubling_ratios: Vec<(usize, f64)>,
}

impl RegretResult {
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.cumulative.get(i)).copied()
    }
}

/// Least-squares slope of `ln y` on `ln x` over points with `x, y > 0`.
pub(crate) fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn fit_horizons(lo: usize, hi: usize) -> Vec<usize> {
    if lo >= hi {
        return vec![hi];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut ts: Vec<usize> = (0..FIT_POINTS)
        .map(|k| (a + (b - a) * k as f64 / (FIT_POINTS - 1) as f64).exp().round() as usize)
        .map(|t| t.clamp(lo, hi))
        .collect();
    ts.dedup();
    ts
}

/// Plays dual ascent with `eta_t = eta0 / sqrt(t + 1)` against drifting
/// valuations and accumulates dynamic regret against per-round oracle
/// clearing allocations. The played allocation is the round's demand,
/// rationed to capacity.
pub fn regret_experiment(cfg: &ScenarioConfig, replication: usize) -> Result<RegretResult> {
    cfg.validate()?;
    let rc = &cfg.experiment.regret;
    let base = sample_population(cfg, replication)?;
    let c: ContractParams = cfg.contract()?;
    let eps = cfg.experiment.eps_part;
    let drift = DriftModel {
        amplitude: rc.amplitude,
        period: rc.period.unwrap_or(rc.horizon as f64),
        jump_at: rc.jump_at,
        jump_factor: rc.jump_factor,
    };

    let eta0 = match rc.eta0 {
        Some(eta0) => eta0,
        None => {
            let peak: Vec<AgentParams> = base
                .iter()
                .map(|a| a.with_alpha(a.alpha() * drift.max_factor()))
                .collect::<Result<_>>()?;
            1.0 / lipschitz_bound(&peak, &c)?
        }
    };

    let mut state = DualAscent::new(base.len(), 0.0);
    if rc.start_at_equilibrium {
        let start = clear_bisection(&drift.apply(&base, 0)?, &c, ORACLE_TOL)?;
        state.mu = start.mu_star;
        state.allocations = start.allocations;
    }

    let mut cumulative = Vec::with_capacity(rc.horizon);
    let mut total = 0.0;
    for t in 0..rc.horizon {
        let agents = drift.apply(&base, t)?;
        let eta = eta0 / ((t + 1) as f64).sqrt();
        state.step(&agents, &c, eta, cfg.algo.gamma, None);
        let (played, _) = ration_to_capacity(&state.allocations, c.capacity_m);
        let oracle = clear_bisection(&agents, &c, ORACLE_TOL)?;
        total += efficiency(&oracle.allocations, &agents, &c, eps)? - efficiency(&played, &agents, &c, eps)?;
        cumulative.push(total);
    }

    let fit_range = (rc.fit_min.min(rc.horizon), rc.horizon);
    let points: Vec<(f64, f64)> = fit_horizons(fit_range.0, fit_range.1)
        .into_iter()
        .map(|t| (t as f64, cumulative[t - 1]))
        .collect();
    let doubling_ratios = [100, 1000]
        .into_iter()
        .filter(|&t| 2 * t <= rc.horizon)
        .map(|t| (t, cumulative[2 * t - 1] / cumulative[t - 1]))
        .collect();

    Ok(RegretResult {
        slope: log_log_slope(&points),
        cumulative,
        fit_range,
        eta0,
        doubling_ratios,
    })
}
