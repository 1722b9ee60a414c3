use clearing_core::clearing::best_responses;
use clearing_core::{
    aggregate_demand, clear_bisection, clear_decentralized, AgentParams, AlgoConfig, ContractParams, ORACLE_TOL,
};
use proptest::prelude::*;

fn two_agents(alpha: f64, beta: f64) -> Vec<AgentParams> {
    (0..2).map(|i| AgentParams::new(i, alpha, beta).unwrap()).collect()
}

// Frozen values for the symmetric two-agent instance: x_i = m/2, mu = alpha/(1+m/2) - beta.
#[test]
fn symmetric_pair_frozen() {
    let agents = two_agents(10.0, 1.0);
    for (m, mu) in [(8.0, 1.0), (2.0, 4.0), (18.0, 0.0)] {
        let c = ContractParams::new(m, 0.0, 0.0).unwrap();
        let sol = clear_bisection(&agents, &c, ORACLE_TOL).unwrap();
        assert!((sol.mu_star - mu).abs() < 1e-9, "m = {m}: {}", sol.mu_star);
        for x in &sol.allocations {
            assert!((x - m / 2.0).abs() < 1e-8);
        }
    }
}

#[test]
fn per_unit_fee_shifts_the_price() {
    let agents = two_agents(10.0, 1.0);
    let c = ContractParams::new(8.0, 0.5, 0.0).unwrap();
    let sol = clear_bisection(&agents, &c, ORACLE_TOL).unwrap();
    assert!((sol.mu_star - 0.5).abs() < 1e-9);
}

#[test]
fn decentralized_agrees_with_bisection_on_slack_and_binding() {
    let agents: Vec<_> = [(5.0, 0.5), (12.0, 2.0), (20.0, 4.0), (8.0, 1.0)]
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| AgentParams::new(i as u64, a, b).unwrap())
        .collect();
    for m in [5.0, 15.0, 40.0] {
        let c = ContractParams::new(m, 0.3, 0.0).unwrap();
        let oracle = clear_bisection(&agents, &c, ORACLE_TOL).unwrap();
        let sol = clear_decentralized(&agents, &c, &AlgoConfig::default(), 0).unwrap();
        assert!(sol.converged, "m = {m}");
        assert!((sol.mu_star - oracle.mu_star).abs() <= 1e-6, "m = {m}");
        for (x, y) in sol.allocations.iter().zip(&oracle.allocations) {
            assert!((x - y).abs() <= 1e-4, "m = {m}: {x} vs {y}");
        }
    }
}

fn population() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((1.0f64..25.0, 0.2f64..5.0), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn demand_is_non_increasing_in_price(params in population(), tau in 0.0f64..2.0, mu in 0.0f64..5.0, dmu in 0.0f64..5.0) {
        let agents: Vec<_> = params.iter().enumerate().map(|(i, &(a, b))| AgentParams::new(i as u64, a, b).unwrap()).collect();
        let c = ContractParams::new(10.0, tau, 0.0).unwrap();
        prop_assert!(aggregate_demand(&agents, &c, mu + dmu) <= aggregate_demand(&agents, &c, mu) + 1e-12);
    }

    #[test]
    fn oracle_clears_and_respects_slackness(params in population(), m in 1.0f64..80.0, tau in 0.0f64..2.0) {
        let agents: Vec<_> = params.iter().enumerate().map(|(i, &(a, b))| AgentParams::new(i as u64, a, b).unwrap()).collect();
        let c = ContractParams::new(m, tau, 0.0).unwrap();
        let sol = clear_bisection(&agents, &c, ORACLE_TOL).unwrap();
        prop_assert!(sol.mu_star >= 0.0);
        prop_assert!(sol.allocations.iter().all(|&x| x >= 0.0));
        prop_assert!(sol.total() <= m * (1.0 + 1e-9));
        if sol.mu_star > 0.0 {
            prop_assert!((sol.total() - m).abs() <= 1e-6 * m);
        }
        let max_alpha = params.iter().map(|p| p.0).fold(0.0, f64::max);
        prop_assert!(sol.mu_star < max_alpha);
        let br = best_responses(&agents, &c, sol.mu_star);
        for (x, y) in sol.allocations.iter().zip(&br) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn price_falls_as_capacity_grows(params in population(), m in 1.0f64..40.0, dm in 0.5f64..20.0) {
        let agents: Vec<_> = params.iter().enumerate().map(|(i, &(a, b))| AgentParams::new(i as u64, a, b).unwrap()).collect();
        let lo = clear_bisection(&agents, &ContractParams::new(m, 0.0, 0.0).unwrap(), ORACLE_TOL).unwrap();
        let hi = clear_bisection(&agents, &ContractParams::new(m + dm, 0.0, 0.0).unwrap(), ORACLE_TOL).unwrap();
        prop_assert!(hi.mu_star <= lo.mu_star + 1e-10);
    }

    #[test]
    fn dual_ascent_tracks_oracle(params in population(), m in 2.0f64..60.0) {
        let agents: Vec<_> = params.iter().enumerate().map(|(i, &(a, b))| AgentParams::new(i as u64, a, b).unwrap()).collect();
        let c = ContractParams::new(m, 0.0, 0.0).unwrap();
        let cfg = AlgoConfig::default();
        let oracle = clear_bisection(&agents, &c, ORACLE_TOL).unwrap();
        let sol = clear_decentralized(&agents, &c, &cfg, 3).unwrap();
        prop_assert!(sol.converged);
        prop_assert!((sol.mu_star - oracle.mu_star).abs() <= 1e-5);
    }
}
