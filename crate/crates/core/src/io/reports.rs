//! Result tables for each experiment output.

use crate::agent::AgentParams;
use crate::clearing::{ClearingSolution, RateDiagnostics};
use crate::error::Result;
use crate::experiments::{RegretResult, ScenarioConfig, ShockResult, Stat, SweepResult};

use super::{config_digest, Cell, ResultTable};

fn provenance(table: ResultTable, cfg: &ScenarioConfig) -> Result<ResultTable> {
    Ok(table
        .with_meta("artifact_version", env!("CARGO_PKG_VERSION"))
        .with_meta("config_digest", config_digest(cfg)?)
        .with_meta("master_seed", cfg.experiment.master_seed))
}

fn opt_string<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

const STAT_COLUMNS: [&str; 9] = [
    "efficiency",
    "gini",
    "fairness",
    "participation",
    "avg_cost",
    "price",
    "violation",
    "rel_eff",
    "pof",
];

pub fn sweep_table(result: &SweepResult, cfg: &ScenarioConfig) -> Result<ResultTable> {
    let mut header = vec!["mechanism".to_string(), "tau".into(), "g".into(), "replications".into()];
    for name in STAT_COLUMNS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    header.extend(["feasible_rate".into(), "nonconverged".into(), "d_eff_d_tau".into()]);
    let mut table = ResultTable::new(header);
    for row in &result.rows {
        let mut cells: Vec<Cell> = vec![
            row.mechanism.as_str().into(),
            row.tau.into(),
            row.g.into(),
            row.replications.into(),
        ];
        let stats: [Option<Stat>; 9] = [
            Some(row.efficiency),
            Some(row.gini),
            Some(row.fairness),
            Some(row.participation),
            Some(row.avg_cost),
            Some(row.price),
            Some(row.capacity_violation),
            row.rel_eff,
            row.pof,
        ];
        for s in stats {
            cells.push(s.map(|s| s.mean).into());
            cells.push(s.map(|s| s.std).into());
        }
        cells.extend([
            row.feasible_rate.into(),
            row.nonconverged.into(),
            row.d_eff_d_tau.into(),
        ]);
        table.push_row(cells)?;
    }
    provenance(table, cfg)
}

pub fn clearing_table(
    agents: &[AgentParams],
    solution: &ClearingSolution,
    oracle_mu: f64,
    diagnostics: Option<&RateDiagnostics>,
    cfg: &ScenarioConfig,
) -> Result<ResultTable> {
    let mut table = ResultTable::new(["agent", "alpha", "beta", "allocation"]);
    for (a, x) in agents.iter().zip(&solution.allocations) {
        table.push_row(vec![
            Cell::Int(a.id() as i64),
            a.alpha().into(),
            a.beta().into(),
            (*x).into(),
        ])?;
    }
    let mut table = table
        .with_meta("mu_star", solution.mu_star)
        .with_meta("oracle_mu", oracle_mu)
        .with_meta("converged", solution.converged)
        .with_meta("iterations", solution.iterations)
        .with_meta("slack", solution.slack);
    if let Some(d) = diagnostics {
        table = table
            .with_meta("contraction_kappa", opt_string(d.contraction_kappa))
            .with_meta("fejer_violations", d.fejer_violations)
            .with_meta("lipschitz_l", d.lipschitz_l);
    }
    provenance(table, cfg)
}

pub fn shock_table(result: &ShockResult, cfg: &ScenarioConfig) -> Result<ResultTable> {
    let mut table = ResultTable::new([
        "t",
        "tau",
        "g",
        "mu",
        "s_hat",
        "kkt_residual",
        "efficiency",
        "gini",
        "participation",
        "avg_cost",
    ]);
    for r in &result.rounds {
        table.push_row(vec![
            r.t.into(),
            r.tau.into(),
            r.g.into(),
            r.mu.into(),
            r.s_hat.into(),
            r.kkt_residual.into(),
            r.metrics.efficiency.into(),
            r.metrics.gini.into(),
            r.metrics.participation.into(),
            r.metrics.avg_cost.into(),
        ])?;
    }
    let table = table
        .with_meta("pre_efficiency", result.pre_efficiency)
        .with_meta("post_efficiency", result.post_efficiency)
        .with_meta("resilience", opt_string(result.resilience))
        .with_meta("reconvergence_round", opt_string(result.reconvergence_round))
        .with_meta("final_mu", result.final_mu)
        .with_meta("oracle_mu_final", result.oracle_mu_final);
    provenance(table, cfg)
}

pub fn regret_table(result: &RegretResult, cfg: &ScenarioConfig) -> Result<ResultTable> {
    let mut table = ResultTable::new(["T", "cumulative_regret"]);
    for (i, r) in result.cumulative.iter().enumerate() {
        table.push_row(vec![(i + 1).into(), (*r).into()])?;
    }
    let doubling: Vec<String> = result.doubling_ratios.iter().map(|(t, r)| format!("{t}:{r}")).collect();
    let table = table
        .with_meta("slope", opt_string(result.slope))
        .with_meta("fit_range", format!("{}..{}", result.fit_range.0, result.fit_range.1))
        .with_meta("eta0", result.eta0)
        .with_meta("doubling_ratios", doubling.join(" "));
    provenance(table, cfg)
}

pub fn statics_table(series: &[(f64, f64)], cfg: &ScenarioConfig) -> Result<ResultTable> {
    let mut table = ResultTable::new(["capacity", "mu_star"]);
    for &(m, mu) in series {
        table.push_row(vec![m.into(), mu.into()])?;
    }
    provenance(table, cfg)
}
