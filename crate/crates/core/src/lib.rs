//! Capacity-constrained resource allocation mediated by a clearing contract.
//!
//! Agents with concave valuations draw from a shared capacity; the contract
//! charges per-unit and fixed fees and posts a shadow price that clears the
//! capacity constraint. This crate computes those equilibria, compares the
//! resulting mechanism with simple baselines, and runs the seeded experiment
//! protocols (fee sweeps, sensitivity grids, shocks, regret under drift).

pub mod agent;
pub mod clearing;
pub mod error;
pub mod experiments;
pub mod io;
pub mod mechanisms;
pub mod metrics;

pub use agent::{AgentParams, ContractParams, Preferences};
pub use clearing::{
    aggregate_demand, clear_bisection, clear_decentralized, clear_stochastic, diagnose_rates, dual_update,
    lipschitz_bound, AlgoConfig, ClearingSolution, IterateRecord, IterateTrace, RateDiagnostics, StepSchedule,
    ORACLE_TOL,
};
pub use error::{Error, Result};
pub use experiments::{FeeSchedule, ScenarioConfig, SweepResult, SweepRow};
pub use io::{Format, ResultTable};
pub use mechanisms::{allocate, Allocation, MechanismChoice, MechanismKind};
pub use metrics::MetricsReport;
