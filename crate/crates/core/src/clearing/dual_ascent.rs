use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::agent::{AgentParams, ContractParams};
use crate::error::{Error, Result};

use super::{
    dual_update, kkt_residual, lipschitz_bound, AlgoConfig, ClearingSolution, IterateRecord, IterateTrace,
    ResolvedSteps, StepSchedule,
};

/// Trailing window over which stochastic runs average residuals before testing
/// the tolerances.
pub const STOCHASTIC_WINDOW: usize = 50;

/// Additive Gaussian noise on participating agents' demand reports, averaged
/// over `samples` independent re-reports per round.
#[derive(Debug)]
pub struct NoiseModel<'a> {
    pub sigma: f64,
    pub samples: usize,
    pub rng: &'a mut ChaCha8Rng,
}

impl NoiseModel<'_> {
    fn estimate(&mut self, allocations: &[f64]) -> f64 {
        let exact: f64 = allocations.iter().sum();
        if self.sigma == 0.0 {
            return exact;
        }
        let normal = Normal::new(0.0, self.sigma).expect("sigma validated as finite and non-negative");
        let mut total = 0.0;
        for _ in 0..self.samples {
            for &x in allocations {
                // Agents that exited have nothing to report.
                if x > 0.0 {
                    total += (x + normal.sample(self.rng)).max(0.0);
                }
            }
        }
        total / self.samples as f64
    }
}

/// State of the primal-dual iteration between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAscent {
    pub mu: f64,
    pub allocations: Vec<f64>,
    pub t: usize,
}

impl DualAscent {
    /// Starts at price `mu_init` with every agent holding nothing.
    pub fn new(n: usize, mu_init: f64) -> Self {
        Self {
            mu: mu_init,
            allocations: vec![0.0; n],
            t: 0,
        }
    }

    /// One round: proximal best responses at the current price, demand
    /// estimate, projected price update.
    pub fn step(
        &mut self,
        agents: &[AgentParams],
        c: &ContractParams,
        eta: f64,
        gamma: f64,
        noise: Option<&mut NoiseModel<'_>>,
    ) -> IterateRecord {
        debug_assert_eq!(agents.len(), self.allocations.len());
        let mut r_alloc: f64 = 0.0;
        for (x, a) in self.allocations.iter_mut().zip(agents) {
            let next = a.proximal_best_response(c, self.mu, *x, gamma);
            r_alloc = r_alloc.max((next - *x).abs());
            *x = next;
        }
        let s_hat = match noise {
            Some(model) => model.estimate(&self.allocations),
            None => self.allocations.iter().sum(),
        };
        let m = c.capacity_m;
        let mu_next = dual_update(self.mu, eta, s_hat, m);
        let record = IterateRecord {
            t: self.t,
            mu: self.mu,
            mu_next,
            allocations: Vec::new(),
            s_hat,
            r_primal: (s_hat - m).abs(),
            r_dual: (mu_next - self.mu).abs(),
            r_alloc,
        };
        self.mu = mu_next;
        self.t += 1;
        record
    }
}

#[derive(Clone, Copy)]
enum StopRule {
    LastIterate,
    Window(usize),
}

fn run(
    agents: &[AgentParams],
    c: &ContractParams,
    cfg: &AlgoConfig,
    steps: ResolvedSteps,
    rng_seed: u64,
    stop: StopRule,
) -> ClearingSolution {
    let m = c.capacity_m;
    let tol_p = cfg.primal_tolerance(m);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut noise = NoiseModel {
        sigma: cfg.noise_sigma,
        samples: cfg.mc_samples,
        rng: &mut rng,
    };
    let mut state = DualAscent::new(agents.len(), cfg.mu_init);
    let mut trace = IterateTrace::default();
    let mut converged = false;
    let (mut window_excess, mut window_dual) = (0.0, 0.0);

    while state.t < cfg.max_iters {
        let eta = steps.at(state.t);
        let mut record = state.step(agents, c, eta, cfg.gamma, Some(&mut noise));
        if cfg.record_allocations {
            record.allocations = state.allocations.clone();
        }
        let done = match stop {
            // The allocation test keeps a run from stopping while the proximal
            // iterates still lag the best responses at the current price.
            StopRule::LastIterate => {
                record.kkt_residual(m) <= tol_p && record.r_dual <= cfg.tol_dual && record.r_alloc <= tol_p
            }
            StopRule::Window(w) => {
                window_excess += record.s_hat - m;
                window_dual += record.r_dual;
                let n = trace.records.len() + 1;
                if n > w {
                    let old = &trace.records[n - 1 - w];
                    window_excess -= old.s_hat - m;
                    window_dual -= old.r_dual;
                }
                n >= w
                    && kkt_residual(m + window_excess / w as f64, m, record.mu_next) <= tol_p
                    && window_dual / w as f64 <= cfg.tol_dual
                    && record.r_alloc <= tol_p
            }
        };
        trace.records.push(record);
        if done {
            converged = true;
            break;
        }
    }

    let iterations = state.t;
    ClearingSolution::from_allocations(state.allocations, state.mu, m, converged, iterations, trace)
}

fn resolve_steps(agents: &[AgentParams], c: &ContractParams, cfg: &AlgoConfig) -> Result<ResolvedSteps> {
    let lipschitz = lipschitz_bound(agents, c)?;
    cfg.step.resolve(lipschitz)
}

fn trivial(agents: &[AgentParams], c: &ContractParams) -> ClearingSolution {
    ClearingSolution::from_allocations(
        vec![0.0; agents.len()],
        0.0,
        c.capacity_m,
        true,
        0,
        IterateTrace::default(),
    )
}

/// Decentralized clearing: repeated rounds of proximal best responses and
/// projected dual ascent until both the (complementary-slackness aware)
/// primal residual and the price change fall below tolerance.
///
/// Exhausting `max_iters` is not an error; the solution comes back with
/// `converged = false` and the full trace.
pub fn clear_decentralized(
    agents: &[AgentParams],
    c: &ContractParams,
    cfg: &AlgoConfig,
    rng_seed: u64,
) -> Result<ClearingSolution> {
    c.validate()?;
    cfg.validate()?;
    if agents.is_empty() {
        return Ok(trivial(agents, c));
    }
    let steps = resolve_steps(agents, c, cfg)?;
    Ok(run(agents, c, cfg, steps, rng_seed, StopRule::LastIterate))
}

/// Robbins-Monro variant for noisy demand reports. Requires a diminishing
/// schedule with power in `(0.5, 1]`; tolerances are tested on the mean over
/// the last [`STOCHASTIC_WINDOW`] rounds.
pub fn clear_stochastic(
    agents: &[AgentParams],
    c: &ContractParams,
    cfg: &AlgoConfig,
    rng_seed: u64,
) -> Result<ClearingSolution> {
    c.validate()?;
    cfg.validate()?;
    match cfg.step {
        StepSchedule::Diminishing { power, .. } if power > 0.5 && power <= 1.0 => {}
        other => {
            return Err(Error::invalid(
                "step",
                format!("stochastic clearing needs a diminishing schedule with power in (0.5, 1], got {other:?}"),
            ))
        }
    }
    if agents.is_empty() {
        return Ok(trivial(agents, c));
    }
    let steps = resolve_steps(agents, c, cfg)?;
    Ok(run(
        agents,
        c,
        cfg,
        steps,
        rng_seed,
        StopRule::Window(STOCHASTIC_WINDOW),
    ))
}
