use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, ContractParams};
use crate::error::{Error, Result};

use super::{aggregate_demand, lipschitz_bound, IterateTrace};

const ERROR_FLOOR: f64 = 1e-8;
const FEJER_SLACK: f64 = 1e-12;
const MIN_PRICE_STEP: f64 = 1e-9;

/// Empirical convergence diagnostics of a dual trajectory against a reference
/// price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDiagnostics {
    /// Largest one-step error ratio `|mu_{t+1} - mu*| / |mu_t - mu*|` over
    /// steps whose error exceeds `1e-8`; `None` when no step qualifies.
    pub contraction_kappa: Option<f64>,
    pub fejer_violations: usize,
    /// `(T, (1/T) sum_{t<T} r_t)` for every prefix length, where `r_t` is the
    /// complementary-slackness primal residual.
    pub ergodic_residual_curve: Vec<(usize, f64)>,
    pub lipschitz_l: f64,
    /// Smallest observed `|dS/dmu|` between visited prices.
    pub strong_mono_alpha: f64,
}

impl RateDiagnostics {
    /// `T` times the running mean residual, i.e. the cumulative residual.
    pub fn cumulative_residual(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.ergodic_residual_curve
            .iter()
            .map(|&(t, mean)| (t, t as f64 * mean))
    }
}

pub fn diagnose_rates(
    trace: &IterateTrace,
    mu_star_oracle: f64,
    agents: &[AgentParams],
    c: &ContractParams,
) -> Result<RateDiagnostics> {
    if trace.is_empty() {
        return Err(Error::invalid("trace", "must contain at least one iterate"));
    }
    let lipschitz_l = lipschitz_bound(agents, c)?;

    // Price sequence mu_0, mu_1, ..., mu_T.
    let mut prices: Vec<f64> = trace.prices().collect();
    prices.push(trace.records.last().map(|r| r.mu_next).unwrap_or_default());

    let mut kappa: Option<f64> = None;
    let mut fejer_violations = 0;
    for w in prices.windows(2) {
        let (before, after) = ((w[0] - mu_star_oracle).abs(), (w[1] - mu_star_oracle).abs());
        if after > before + FEJER_SLACK {
            fejer_violations += 1;
        }
        if before > ERROR_FLOOR {
            let ratio = after / before;
            kappa = Some(kappa.map_or(ratio, |k: f64| k.max(ratio)));
        }
    }

    let m = c.capacity_m;
    let mut running = 0.0;
    let ergodic_residual_curve = trace
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            running += r.kkt_residual(m);
            (i + 1, running / (i + 1) as f64)
        })
        .collect();

    let mut strong_mono_alpha = f64::INFINITY;
    let demand: Vec<f64> = prices.iter().map(|&mu| aggregate_demand(agents, c, mu)).collect();
    for i in 1..prices.len() {
        let dmu = prices[i] - prices[i - 1];
        if dmu.abs() > MIN_PRICE_STEP {
            let slope = ((demand[i] - demand[i - 1]) / dmu).abs();
            strong_mono_alpha = strong_mono_alpha.min(slope);
        }
    }
    if !strong_mono_alpha.is_finite() {
        strong_mono_alpha = 0.0;
    }

    Ok(RateDiagnostics {
        contraction_kappa: kappa,
        fejer_violations,
        ergodic_residual_curve,
        lipschitz_l,
        strong_mono_alpha,
    })
}
