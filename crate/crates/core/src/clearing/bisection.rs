use crate::agent::{AgentParams, ContractParams};
use crate::error::{Error, Result};

use super::{aggregate_demand, best_responses, price_ceiling, ClearingSolution, IterateTrace};

/// Bracket width used when the bisection serves as a reference solution.
pub const ORACLE_TOL: f64 = 1e-12;

/// Clearing price by bisection on the monotone aggregate demand.
///
/// When `S(0) <= m` capacity is slack and the price is zero. Otherwise the
/// bracket `[0, max_i alpha_i - tau]` is halved, keeping `S(lo) > m >= S(hi)`,
/// until it is narrower than `tol` or stops shrinking in floating point.
///
/// With fixed fees `S` can jump over `m`. The returned price is then the
/// feasible bracket end (`hi`) and the jump shows up in `clearing_gap`.
pub fn clear_bisection(agents: &[AgentParams], c: &ContractParams, tol: f64) -> Result<ClearingSolution> {
    c.validate()?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid("tol", format!("must be positive and finite, got {tol}")));
    }
    let m = c.capacity_m;

    let s0 = aggregate_demand(agents, c, 0.0);
    if s0 <= m {
        let x = best_responses(agents, c, 0.0);
        return Ok(ClearingSolution::from_allocations(
            x,
            0.0,
            m,
            true,
            0,
            IterateTrace::default(),
        ));
    }

    let mut lo = 0.0;
    let mut hi = price_ceiling(agents, c);
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if aggregate_demand(agents, c, mid) > m {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }

    let over = aggregate_demand(agents, c, lo) - m;
    let under = m - aggregate_demand(agents, c, hi);
    let mu = if over < under && over <= 1e-9 * m { lo } else { hi };
    let x = best_responses(agents, c, mu);
    Ok(ClearingSolution::from_allocations(
        x,
        mu,
        m,
        true,
        iterations,
        IterateTrace::default(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(alpha: f64, beta: f64) -> Vec<AgentParams> {
        (0..2).map(|i| AgentParams::new(i, alpha, beta).unwrap()).collect()
    }

    #[test]
    fn canonical_instance() {
        let c = ContractParams::new(8.0, 0.0, 0.0).unwrap();
        let sol = clear_bisection(&pair(10.0, 1.0), &c, ORACLE_TOL).unwrap();
        assert!((sol.mu_star - 1.0).abs() < 1e-10);
        for x in &sol.allocations {
            assert!((x - 4.0).abs() < 1e-10);
        }
        assert!(sol.converged);
        assert!(sol.mu_star * sol.slack <= 1e-6);
    }

    #[test]
    fn slack_equilibrium() {
        let c = ContractParams::new(100.0, 0.0, 0.0).unwrap();
        let sol = clear_bisection(&pair(2.0, 1.0), &c, ORACLE_TOL).unwrap();
        assert_eq!(sol.mu_star, 0.0);
        assert_eq!(sol.allocations, vec![1.0, 1.0]);
        assert_eq!(sol.slack, 98.0);
    }

    #[test]
    fn tight_capacity() {
        let c = ContractParams::new(2.0, 0.0, 0.0).unwrap();
        let sol = clear_bisection(&pair(10.0, 1.0), &c, ORACLE_TOL).unwrap();
        assert!((sol.mu_star - 4.0).abs() < 1e-10);
        for x in &sol.allocations {
            assert!((x - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_market() {
        let c = ContractParams::new(5.0, 0.0, 0.0).unwrap();
        let sol = clear_bisection(&[], &c, ORACLE_TOL).unwrap();
        assert_eq!(sol.mu_star, 0.0);
        assert!(sol.allocations.is_empty());
        // Fee above every valuation slope: nobody demands.
        let c = ContractParams::new(5.0, 30.0, 0.0).unwrap();
        let sol = clear_bisection(&pair(10.0, 1.0), &c, ORACLE_TOL).unwrap();
        assert_eq!(sol.mu_star, 0.0);
        assert_eq!(sol.total(), 0.0);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let c = ContractParams::new(8.0, 0.0, 0.0).unwrap();
        assert!(clear_bisection(&pair(10.0, 1.0), &c, 0.0).is_err());
        assert!(clear_bisection(&pair(10.0, 1.0), &c, f64::NAN).is_err());
    }

    #[test]
    fn fixed_fee_jump_stays_feasible() {
        // A single agent whose demand jumps from ~0.5 to 0 when the fixed fee
        // stops paying; capacity sits inside the jump.
        let a = vec![AgentParams::new(0, 10.0, 1.0).unwrap()];
        let c = ContractParams::new(0.2, 0.0, 1.0).unwrap();
        let sol = clear_bisection(&a, &c, ORACLE_TOL).unwrap();
        assert!(sol.total() <= c.capacity_m);
        assert!(sol.mu_star > 0.0);
        assert!(sol.clearing_gap > 0.0);
    }
}
