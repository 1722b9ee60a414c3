//! Seeded experiment protocols: population sampling, replicated mechanism
//! comparisons, fee sweeps and sensitivity grids, fee shocks, regret under
//! drifting valuations and capacity comparative statics.
//!
//! Every random draw comes from a ChaCha substream keyed by the master seed,
//! a domain tag and the replication index, so replications can run in
//! parallel and still aggregate to bit-identical results.

mod config;
mod regret;
mod shock;

use rand::distr::{Distribution, Uniform};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, ContractParams};
use crate::clearing::{clear_bisection, AlgoConfig, ORACLE_TOL};
use crate::error::{Error, Result};
use crate::mechanisms::{allocate, allocate_no_enforcement, calibrate_flat_fee, MechanismChoice, MechanismKind};
use crate::metrics::{efficiency, equal_split, price_of_fairness, MetricsReport};

pub use config::{
    AgentSpec, ContractConfig, ExperimentConfig, FeeSpec, PopulationConfig, RegretConfig, ScenarioConfig, ShockConfig,
    StaticsConfig, UniformRange,
};
pub use regret::{regret_experiment, DriftModel, RegretResult};
pub use shock::{shock_run, FeeSchedule, ShockResult, ShockRound, RECONVERGENCE_RUN, SHOCK_WINDOW};

/// Largest population for which the price of fairness is computed.
pub const POF_MAX_AGENTS: usize = 100;

/// Substream domains.
pub(crate) mod domain {
    pub const POPULATION: u64 = 1;
    pub const CLEARING: u64 = 2;
    pub const MOVIELENS_COST: u64 = 3;
}

/// Deterministic generator for `(master_seed, domain, index)`.
pub fn substream(master_seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

pub(crate) fn substream_seed(master_seed: u64, domain: u64, index: u64) -> u64 {
    substream(master_seed, domain, index).next_u64()
}

/// Draws the population of replication `replication` (or returns the fixed
/// agent list when the config names one).
pub fn sample_population(cfg: &ScenarioConfig, replication: usize) -> Result<Vec<AgentParams>> {
    let p = &cfg.population;
    if let Some(agents) = &p.agents {
        return agents
            .iter()
            .enumerate()
            .map(|(i, a)| AgentParams::new(i as u64, a.alpha, a.beta))
            .collect();
    }
    let uniform = |key: &str, r: UniformRange| {
        Uniform::new_inclusive(r.lo, r.hi).map_err(|e| Error::Config {
            key: key.into(),
            message: e.to_string(),
        })
    };
    let alpha = uniform("population.alpha", p.alpha)?;
    let beta = uniform("population.beta", p.beta)?;
    let mut rng = substream(cfg.experiment.master_seed, domain::POPULATION, replication as u64);
    (0..p.n)
        .map(|i| {
            let a = alpha.sample(&mut rng);
            let b = beta.sample(&mut rng);
            AgentParams::new(i as u64, a, b)
        })
        .collect()
}

/// Mean and population standard deviation (divisor `R`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

/// One aggregated row: a mechanism at one fee pair over all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mechanism: String,
    pub tau: f64,
    pub g: f64,
    pub replications: usize,
    pub efficiency: Stat,
    pub gini: Stat,
    pub fairness: Stat,
    pub participation: Stat,
    pub avg_cost: Stat,
    /// Scarcity surcharge (clearing price or flat fee).
    pub price: Stat,
    pub capacity_violation: Stat,
    pub feasible_rate: f64,
    pub nonconverged: usize,
    /// Efficiency relative to no enforcement, per replication.
    pub rel_eff: Option<Stat>,
    pub pof: Option<Stat>,
    /// Central-difference slope of mean efficiency in tau (interior grid
    /// points of a sensitivity grid only).
    pub d_eff_d_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub master_seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone)]
struct Outcome {
    metrics: MetricsReport,
    surcharge: f64,
    violation: f64,
    feasible: bool,
    converged: bool,
    rel_eff: Option<f64>,
}

fn experiment_algo(cfg: &ScenarioConfig) -> AlgoConfig {
    AlgoConfig {
        record_allocations: false,
        ..cfg.algo.clone()
    }
}

fn resolve_mechanisms(
    choices: &[MechanismChoice],
    c: &ContractParams,
    (alpha_mean, beta_mean): (f64, f64),
    n: usize,
) -> Result<Vec<MechanismKind>> {
    let mut calibrated = None;
    choices
        .iter()
        .map(|choice| {
            choice.resolve(|| {
                if calibrated.is_none() {
                    calibrated = Some(calibrate_flat_fee(alpha_mean, beta_mean, n, c)?);
                }
                Ok(calibrated.unwrap_or_default())
            })
        })
        .collect()
}

fn evaluate_replication(
    agents: &[AgentParams],
    c: &ContractParams,
    kinds: &[MechanismKind],
    algo: &AlgoConfig,
    rng_seed: u64,
    eps: f64,
    with_pof: bool,
) -> Result<Vec<Outcome>> {
    let baseline = efficiency(&allocate_no_enforcement(agents, c).quantities, agents, c, eps)?;
    let pof = if with_pof && agents.len() <= POF_MAX_AGENTS && !agents.is_empty() {
        price_of_fairness(agents, c, &equal_split(agents.len(), c.capacity_m), eps)?
    } else {
        None
    };
    kinds
        .iter()
        .map(|&kind| {
            let a = allocate(kind, agents, c, algo, rng_seed)?;
            let mut metrics = MetricsReport::evaluate(&a.quantities, agents, c, a.unit_price, eps)?;
            metrics.pof = pof;
            let rel_eff = (baseline != 0.0).then(|| metrics.efficiency / baseline);
            Ok(Outcome {
                metrics,
                surcharge: a.surcharge,
                violation: a.capacity_violation,
                feasible: a.feasible,
                converged: a.converged,
                rel_eff,
            })
        })
        .collect()
}

fn aggregate(kind: MechanismKind, c: &ContractParams, outcomes: &[&Outcome]) -> SweepRow {
    let collect = |f: &dyn Fn(&Outcome) -> f64| outcomes.iter().map(|o| f(o)).collect::<Vec<_>>();
    let stat = |f: &dyn Fn(&Outcome) -> f64| Stat::of(&collect(f)).expect("at least one replication");
    let optional = |f: &dyn Fn(&Outcome) -> Option<f64>| {
        let values: Vec<f64> = outcomes.iter().filter_map(|o| f(o)).collect();
        Stat::of(&values)
    };
    let r = outcomes.len();
    SweepRow {
        mechanism: kind.label().to_string(),
        tau: c.fee_tau,
        g: c.fee_g,
        replications: r,
        efficiency: stat(&|o| o.metrics.efficiency),
        gini: stat(&|o| o.metrics.gini),
        fairness: stat(&|o| o.metrics.fairness_one_minus_gini),
        participation: stat(&|o| o.metrics.participation),
        avg_cost: stat(&|o| o.metrics.avg_cost),
        price: stat(&|o| o.surcharge),
        capacity_violation: stat(&|o| o.violation),
        feasible_rate: outcomes.iter().filter(|o| o.feasible).count() as f64 / r as f64,
        nonconverged: outcomes.iter().filter(|o| !o.converged).count(),
        rel_eff: optional(&|o| o.rel_eff),
        pof: optional(&|o| o.metrics.pof),
        d_eff_d_tau: None,
    }
}

/// Runs `R` replications of every mechanism in `choices` at contract `c`,
/// drawing the population of replication `r` from `population(r)`.
/// Replications run in parallel; rows aggregate in index order.
pub fn replicate<P>(
    cfg: &ScenarioConfig,
    c: &ContractParams,
    choices: &[MechanismChoice],
    mean_params: (f64, f64),
    population: P,
) -> Result<Vec<SweepRow>>
where
    P: Fn(usize) -> Result<Vec<AgentParams>> + Sync,
{
    c.validate()?;
    let n = cfg.population.n;
    let kinds = resolve_mechanisms(choices, c, mean_params, n)?;
    let algo = experiment_algo(cfg);
    let e = &cfg.experiment;
    let per_rep: Vec<Vec<Outcome>> = (0..e.replications)
        .into_par_iter()
        .map(|r| {
            let agents = population(r)?;
            let seed = substream_seed(e.master_seed, domain::CLEARING, r as u64);
            evaluate_replication(&agents, c, &kinds, &algo, seed, e.eps_part, e.compute_pof)
        })
        .collect::<Result<_>>()?;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let column: Vec<&Outcome> = per_rep.iter().map(|rep| &rep[k]).collect();
            aggregate(kind, c, &column)
        })
        .collect())
}

/// All replications of one mechanism at the scenario's scalar fees.
pub fn run_replications(cfg: &ScenarioConfig, mechanism: MechanismChoice) -> Result<SweepRow> {
    cfg.validate()?;
    let c = cfg.contract()?;
    let rows = replicate(cfg, &c, &[mechanism], cfg.mean_parameters(), |r| {
        sample_population(cfg, r)
    })?;
    Ok(rows.into_iter().next().expect("one mechanism"))
}

/// Every configured mechanism on shared populations at the scalar fees.
pub fn compare_mechanisms(cfg: &ScenarioConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let c = cfg.contract()?;
    let rows = replicate(cfg, &c, &cfg.experiment.mechanisms, cfg.mean_parameters(), |r| {
        sample_population(cfg, r)
    })?;
    result(cfg, rows)
}

/// Every configured mechanism on the MovieLens population. Replication `r`
/// redraws the cost coefficients from its own substream; capacity defaults to
/// one unit per five users.
pub fn compare_movielens(
    cfg: &ScenarioConfig,
    data: &crate::io::MovieLensData,
    capacity: Option<f64>,
) -> Result<SweepResult> {
    if data.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut cfg = cfg.clone();
    cfg.population.n = data.len();
    cfg.population.agents = None;
    cfg.contract.capacity = capacity.unwrap_or_else(|| data.default_capacity());
    cfg.validate()?;
    let c = cfg.contract()?;
    let master = cfg.experiment.master_seed;
    let mean_beta = 0.5 * (crate::io::BETA_LO + crate::io::BETA_HI);
    let rows = replicate(
        &cfg,
        &c,
        &cfg.experiment.mechanisms,
        (data.mean_alpha(), mean_beta),
        |r| data.population(substream_seed(master, domain::POPULATION, r as u64)),
    )?;
    result(&cfg, rows)
}

fn result(cfg: &ScenarioConfig, rows: Vec<SweepRow>) -> Result<SweepResult> {
    Ok(SweepResult {
        rows,
        master_seed: cfg.experiment.master_seed,
        config_digest: crate::io::config_digest(cfg)?,
    })
}

/// The proposed mechanism over the full `tau x g` factorial, tau-major.
/// Replication `r` uses the same population at every grid point.
fn factorial(cfg: &ScenarioConfig) -> Result<(Vec<SweepRow>, Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let taus = cfg.contract.tau.points();
    let gs = cfg.contract.g.points();
    let mut rows = Vec::with_capacity(taus.len() * gs.len());
    for &tau in &taus {
        for &g in &gs {
            let c = ContractParams::new(cfg.contract.capacity, tau, g)?;
            rows.extend(replicate(
                cfg,
                &c,
                &[MechanismChoice::ProposedEquilibrium],
                cfg.mean_parameters(),
                |r| sample_population(cfg, r),
            )?);
        }
    }
    Ok((rows, taus, gs))
}

/// One row per tau grid point (times each g point).
pub fn fee_sweep(cfg: &ScenarioConfig) -> Result<SweepResult> {
    let (rows, _, _) = factorial(cfg)?;
    result(cfg, rows)
}

/// Full `tau x g` factorial plus central-difference `dEff/dtau` at interior
/// tau points; edge points carry no slope.
pub fn sensitivity_grid(cfg: &ScenarioConfig) -> Result<SweepResult> {
    let (mut rows, taus, gs) = factorial(cfg)?;
    let k = gs.len();
    for i in 1..taus.len().saturating_sub(1) {
        for j in 0..k {
            let lo = rows[(i - 1) * k + j].efficiency.mean;
            let hi = rows[(i + 1) * k + j].efficiency.mean;
            let span = taus[i + 1] - taus[i - 1];
            if span != 0.0 {
                rows[i * k + j].d_eff_d_tau = Some((hi - lo) / span);
            }
        }
    }
    result(cfg, rows)
}

/// Oracle clearing price for every capacity of the grid, on the population of
/// replication 0.
pub fn capacity_statics(cfg: &ScenarioConfig, capacities: &[f64]) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if capacities.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("capacities", "grid must be non-decreasing"));
    }
    let agents = sample_population(cfg, 0)?;
    let base = cfg.contract()?;
    capacities
        .iter()
        .map(|&m| {
            let c = ContractParams::new(m, base.fee_tau, base.fee_g)?;
            Ok((m, clear_bisection(&agents, &c, ORACLE_TOL)?.mu_star))
        })
        .collect()
}
