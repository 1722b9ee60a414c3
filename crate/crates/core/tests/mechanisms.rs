use clearing_core::mechanisms::{allocate_proportional, calibrate_flat_fee, ration_to_capacity};
use clearing_core::{allocate, clear_bisection, AgentParams, AlgoConfig, ContractParams, MechanismKind, ORACLE_TOL};
use proptest::prelude::*;

fn agents(params: &[(f64, f64)]) -> Vec<AgentParams> {
    params
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| AgentParams::new(i as u64, a, b).unwrap())
        .collect()
}

const KINDS: [MechanismKind; 4] = [
    MechanismKind::NoEnforcement,
    MechanismKind::Proportional,
    MechanismKind::FlatContract { flat_fee: 0.5 },
    MechanismKind::ProposedEquilibrium,
];

#[test]
fn canonical_pair_under_each_mechanism() {
    let pop = agents(&[(10.0, 1.0), (10.0, 1.0)]);
    let c = ContractParams::new(8.0, 0.0, 0.0).unwrap();
    let cfg = AlgoConfig::default();
    let ne = allocate(MechanismKind::NoEnforcement, &pop, &c, &cfg, 0).unwrap();
    assert_eq!(ne.quantities, vec![9.0, 9.0]);
    assert!(!ne.feasible);
    assert!((ne.capacity_violation - 10.0).abs() < 1e-12);

    let prop = allocate(MechanismKind::Proportional, &pop, &c, &cfg, 0).unwrap();
    assert_eq!(prop.quantities, vec![4.0, 4.0]);
    assert!(prop.rationed && prop.feasible);

    let ours = allocate(MechanismKind::ProposedEquilibrium, &pop, &c, &cfg, 0).unwrap();
    assert!(ours.feasible && ours.converged);
    assert!((ours.surcharge - 1.0).abs() < 1e-6);
    for (x, p) in ours.quantities.iter().zip(&ours.payments) {
        assert!((x - 4.0).abs() < 1e-4);
        assert!((p - ours.unit_price * x).abs() < 1e-12);
    }
}

#[test]
fn flat_fee_calibration_is_the_representative_price() {
    let c = ContractParams::new(8.0, 0.0, 0.0).unwrap();
    let fee = calibrate_flat_fee(10.0, 1.0, 2, &c).unwrap();
    let direct = clear_bisection(&agents(&[(10.0, 1.0); 2]), &c, ORACLE_TOL).unwrap();
    assert_eq!(fee, direct.mu_star);
    assert!((fee - 1.0).abs() < 1e-9);
}

#[test]
fn negative_flat_fee_is_rejected() {
    let pop = agents(&[(10.0, 1.0)]);
    let c = ContractParams::new(8.0, 0.0, 0.0).unwrap();
    assert!(allocate(
        MechanismKind::FlatContract { flat_fee: -1.0 },
        &pop,
        &c,
        &AlgoConfig::default(),
        0
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn enforcing_mechanisms_stay_within_capacity(
        params in prop::collection::vec((1.0f64..25.0, 0.2f64..5.0), 1..15),
        m in 1.0f64..60.0,
        tau in 0.0f64..1.5,
        g in 0.0f64..2.0,
    ) {
        let pop = agents(&params);
        let c = ContractParams::new(m, tau, g).unwrap();
        for kind in KINDS {
            let a = allocate(kind, &pop, &c, &AlgoConfig::default(), 11).unwrap();
            prop_assert!(a.quantities.iter().all(|&x| x >= 0.0));
            prop_assert_eq!(a.payments.len(), pop.len());
            if kind != MechanismKind::NoEnforcement {
                prop_assert!(a.feasible, "{:?} total {} > {}", kind, a.total(), m);
            }
            for (x, p) in a.quantities.iter().zip(&a.payments) {
                let expected = if *x > 0.0 { a.unit_price * x + g } else { 0.0 };
                prop_assert!((p - expected).abs() <= 1e-9 * (1.0 + expected));
            }
        }
    }

    #[test]
    fn proportional_is_scale_free(
        params in prop::collection::vec((1.0f64..25.0, 0.2f64..5.0), 1..15),
        m in 1.0f64..60.0,
        k in 0.1f64..10.0,
    ) {
        let demands: Vec<f64> = params.iter().map(|p| p.0).collect();
        let scaled: Vec<f64> = demands.iter().map(|d| d * k).collect();
        let (a, _) = ration_to_capacity(&demands, m);
        let (b, _) = ration_to_capacity(&scaled, m * k);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x * k - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
        let pop = agents(&params);
        let c = ContractParams::new(m, 0.0, 0.0).unwrap();
        let alloc = allocate_proportional(&pop, &c);
        prop_assert!(alloc.total() <= m * (1.0 + 1e-12));
    }
}
