//! Performance metrics of an allocation: efficiency, Gini inequality,
//! participation, average cost, price of fairness, resilience and dynamic
//! regret.

use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, ContractParams, Preferences};
use crate::clearing::{clear_bisection, ORACLE_TOL};
use crate::error::{Error, Result};

/// Allocations at or below this level count as non-participation.
pub const DEFAULT_EPS_PART: f64 = 1e-6;

/// Largest population for which the fixed-fee welfare optimum is found by
/// exhaustive participant-subset search.
pub const EXACT_SUBSET_LIMIT: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub efficiency: f64,
    pub gini: f64,
    pub fairness_one_minus_gini: f64,
    pub participation: f64,
    pub avg_cost: f64,
    pub pof: Option<f64>,
    pub resilience_r: Option<f64>,
    pub regret: Option<f64>,
}

impl MetricsReport {
    /// Efficiency, Gini, participation and average cost of one allocation.
    pub fn evaluate(
        x: &[f64],
        agents: &[AgentParams],
        c: &ContractParams,
        unit_price: f64,
        eps_part: f64,
    ) -> Result<Self> {
        let gini = gini(x)?;
        Ok(Self {
            efficiency: efficiency(x, agents, c, eps_part)?,
            gini,
            fairness_one_minus_gini: 1.0 - gini,
            participation: participation_rate(x, eps_part),
            avg_cost: avg_cost(x, c, unit_price, eps_part),
            pof: None,
            resilience_r: None,
            regret: None,
        })
    }
}

fn check_allocation(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if let Some(&bad) = x.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain {
            what: "allocation",
            requirement: "non-negative and finite",
            value: bad,
        });
    }
    Ok(())
}

/// `sum_i (V_i(x_i) - C_i(x_i)) - tau sum_i x_i - g ||x||_0`.
pub fn efficiency(x: &[f64], agents: &[AgentParams], c: &ContractParams, eps_part: f64) -> Result<f64> {
    check_allocation(x, agents.len())?;
    let surplus: f64 = agents.iter().zip(x).map(|(a, &xi)| a.value(xi) - a.cost(xi)).sum();
    let total: f64 = x.iter().sum();
    let participants = x.iter().filter(|&&xi| xi > eps_part).count();
    Ok(surplus - c.fee_tau * total - c.fee_g * participants as f64)
}

/// Mean absolute pairwise difference over twice the mean; zero for an
/// all-zero vector.
pub fn gini(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::invalid("x", "gini of an empty allocation"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Ok(0.0);
    }
    // sum_{i,j} |x_i - x_j| = 2 sum_k (2k - n + 1) x_(k) over the sorted vector.
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, v)| (2.0 * k as f64 - n + 1.0) * v)
        .sum();
    Ok((2.0 * weighted / (2.0 * n * n * mean)).max(0.0))
}

pub fn participation_rate(x: &[f64], eps_part: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().filter(|&&v| v > eps_part).count() as f64 / x.len() as f64
}

/// Mean over participating agents of `unit_price * x_i + g`.
pub fn avg_cost(x: &[f64], c: &ContractParams, unit_price: f64, eps_part: f64) -> f64 {
    let (count, sum) = x
        .iter()
        .filter(|&&v| v > eps_part)
        .fold((0usize, 0.0), |(n, s), &v| (n + 1, s + unit_price * v + c.fee_g));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Post-shock over pre-shock efficiency; undefined unless `eff_pre > 0`.
pub fn resilience(eff_pre: f64, eff_post: f64) -> Option<f64> {
    (eff_pre > 0.0).then(|| eff_post / eff_pre)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxEfficiency {
    pub value: f64,
    pub allocation: Vec<f64>,
    /// False when the participant set came from the greedy heuristic.
    pub exact: bool,
}

/// Maximum of the efficiency over feasible allocations `sum x <= m`.
///
/// Without a fixed fee the program is concave and separable, so the clearing
/// allocation attains the maximum. With `g > 0` each participant set is
/// solved as a fee-free clearing problem and charged `g` per participant;
/// sets are enumerated exhaustively up to [`EXACT_SUBSET_LIMIT`] agents and
/// pruned greedily beyond.
pub fn max_efficiency(agents: &[AgentParams], c: &ContractParams, eps_part: f64) -> Result<MaxEfficiency> {
    let free = c.with_g(0.0);
    let n = agents.len();
    let solve = |mask: &[bool]| -> Result<(f64, Vec<f64>)> {
        let subset: Vec<AgentParams> = agents
            .iter()
            .zip(mask)
            .filter_map(|(a, &keep)| keep.then_some(*a))
            .collect();
        let sol = clear_bisection(&subset, &free, ORACLE_TOL)?;
        let mut x = vec![0.0; n];
        let mut it = sol.allocations.into_iter();
        for (slot, &keep) in x.iter_mut().zip(mask) {
            if keep {
                *slot = it.next().unwrap_or(0.0);
            }
        }
        Ok((efficiency(&x, agents, c, eps_part)?, x))
    };

    if c.fee_g == 0.0 {
        let (value, allocation) = solve(&vec![true; n])?;
        return Ok(MaxEfficiency {
            value,
            allocation,
            exact: true,
        });
    }

    if n <= EXACT_SUBSET_LIMIT {
        let mut best = (0.0, vec![0.0; n]);
        for bits in 1u32..(1u32 << n) {
            let mask: Vec<bool> = (0..n).map(|i| bits & (1 << i) != 0).collect();
            let (value, x) = solve(&mask)?;
            if value > best.0 {
                best = (value, x);
            }
        }
        return Ok(MaxEfficiency {
            value: best.0,
            allocation: best.1,
            exact: true,
        });
    }

    let mut mask = vec![true; n];
    let mut best = solve(&mask)?;
    loop {
        let mut improved: Option<(usize, (f64, Vec<f64>))> = None;
        let active: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        for i in active {
            mask[i] = false;
            let cand = solve(&mask)?;
            mask[i] = true;
            let current = improved.as_ref().map_or(best.0, |(_, b)| b.0);
            if cand.0 > current {
                improved = Some((i, cand));
            }
        }
        match improved {
            Some((i, cand)) => {
                mask[i] = false;
                best = cand;
            }
            None => break,
        }
    }
    if best.0 < 0.0 {
        best = (0.0, vec![0.0; n]);
    }
    Ok(MaxEfficiency {
        value: best.0,
        allocation: best.1,
        exact: false,
    })
}

/// `m / n` to every agent.
pub fn equal_split(n: usize, capacity: f64) -> Vec<f64> {
    vec![capacity / n.max(1) as f64; n]
}

/// Maximum efficiency over the efficiency of `fair_allocation`; `None` when
/// the latter is not positive.
pub fn price_of_fairness(
    agents: &[AgentParams],
    c: &ContractParams,
    fair_allocation: &[f64],
    eps_part: f64,
) -> Result<Option<f64>> {
    check_allocation(fair_allocation, agents.len())?;
    let total: f64 = fair_allocation.iter().sum();
    if total > c.capacity_m * (1.0 + 1e-9) {
        return Err(Error::Infeasible {
            total,
            capacity: c.capacity_m,
        });
    }
    let fair = efficiency(fair_allocation, agents, c, eps_part)?;
    if fair <= 0.0 {
        return Ok(None);
    }
    Ok(Some(max_efficiency(agents, c, eps_part)?.value / fair))
}

/// One round's regret: efficiency of the clearing allocation for this round's
/// parameters minus efficiency of the realized allocation.
pub fn regret_increment(realized: &[f64], agents: &[AgentParams], c: &ContractParams, eps_part: f64) -> Result<f64> {
    let oracle = clear_bisection(agents, c, ORACLE_TOL)?;
    Ok(efficiency(&oracle.allocations, agents, c, eps_part)? - efficiency(realized, agents, c, eps_part)?)
}

/// Cumulative regret of a realized allocation sequence against per-round
/// clearing comparators. Terms are summed as they are, without clamping.
pub fn dynamic_regret(
    realized: &[Vec<f64>],
    agents_per_round: &[Vec<AgentParams>],
    c_per_round: &[ContractParams],
    eps_part: f64,
) -> Result<f64> {
    if realized.len() != agents_per_round.len() {
        return Err(Error::LengthMismatch {
            expected: realized.len(),
            found: agents_per_round.len(),
        });
    }
    if realized.len() != c_per_round.len() {
        return Err(Error::LengthMismatch {
            expected: realized.len(),
            found: c_per_round.len(),
        });
    }
    realized
        .iter()
        .zip(agents_per_round)
        .zip(c_per_round)
        .map(|((x, agents), c)| regret_increment(x, agents, c, eps_part))
        .sum()
}
