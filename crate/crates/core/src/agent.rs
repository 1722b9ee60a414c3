//! Agent economic primitives.
//!
//! Every agent holds a strictly concave valuation `V(x)` and a convex cost
//! `C(x)` of the quantity it draws from the shared resource. The contract
//! charges a per-unit fee `tau`, a fixed execution fee `g` on participation,
//! and the clearing price `mu` on top of `tau`:
//!
//! ```text
//! U(x; mu) = V(x) - C(x) - (tau + mu) x - g 1{x > 0}
//! ```
//!
//! Only the log-linear family `V(x) = alpha ln(1 + x)`, `C(x) = beta x` ships.
//! Its best response has the closed form `max{0, alpha / (beta + tau + mu) - 1}`
//! before the participation check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value and cost evaluations of a single agent. Implementors must supply a
/// strictly concave, increasing valuation and a convex, increasing cost.
pub trait Preferences {
    fn value(&self, x: f64) -> f64;
    fn marginal_value(&self, x: f64) -> f64;
    fn cost(&self, x: f64) -> f64;
    fn marginal_cost(&self, x: f64) -> f64;
}

/// One agent of the log-linear family: `V(x) = alpha ln(1 + x)`, `C(x) = beta x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAgent", into = "RawAgent")]
pub struct AgentParams {
    id: u64,
    alpha: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawAgent {
    #[serde(default)]
    id: u64,
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawAgent> for AgentParams {
    type Error = Error;

    fn try_from(raw: RawAgent) -> Result<Self> {
        AgentParams::new(raw.id, raw.alpha, raw.beta)
    }
}

impl From<AgentParams> for RawAgent {
    fn from(a: AgentParams) -> Self {
        RawAgent {
            id: a.id,
            alpha: a.alpha,
            beta: a.beta,
        }
    }
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("must be positive and finite, got {value}"),
        ))
    }
}

fn require_non_negative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("must be non-negative and finite, got {value}"),
        ))
    }
}

fn check_quantity(x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "allocation",
            requirement: "non-negative and finite",
            value: x,
        })
    }
}

impl AgentParams {
    pub fn new(id: u64, alpha: f64, beta: f64) -> Result<Self> {
        require_positive("alpha", alpha)?;
        require_positive("beta", beta)?;
        Ok(Self { id, alpha, beta })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.id, alpha, self.beta)
    }

    /// Demand at a zero total price: the point where marginal value meets
    /// marginal cost. Every best response is bounded by it.
    pub fn demand_upper_bound(&self) -> f64 {
        (self.alpha / self.beta - 1.0).max(0.0)
    }

    /// Best response to clearing price `mu`, including the participation
    /// check against the fixed fee. Ties at zero payoff participate.
    pub fn best_response(&self, contract: &ContractParams, mu: f64) -> f64 {
        let price = self.beta + contract.fee_tau + mu;
        let candidate = (self.alpha / price - 1.0).max(0.0);
        if candidate > 0.0 && self.payoff_unchecked(contract, mu, candidate) < 0.0 {
            0.0
        } else {
            candidate
        }
    }

    /// Maximiser over `x >= 0` of `U(x; mu) - gamma/2 (x - x_prev)^2`.
    ///
    /// On `x > 0` the stationarity condition
    /// `alpha / (1 + x) - p - gamma (x - x_prev) = 0`, `p = beta + tau + mu`,
    /// is the quadratic `gamma x^2 + b x + c = 0` with `b = p + gamma (1 - x_prev)`
    /// and `c = p - gamma x_prev - alpha`. Its larger root is the unique
    /// stationary point on `(-1, inf)`.
    pub fn proximal_best_response(&self, contract: &ContractParams, mu: f64, x_prev: f64, gamma: f64) -> f64 {
        let p = self.beta + contract.fee_tau + mu;
        let b = p + gamma * (1.0 - x_prev);
        let c = p - gamma * x_prev - self.alpha;
        let disc = (b * b - 4.0 * gamma * c).max(0.0).sqrt();
        // Pick the cancellation-free form of the larger root.
        let root = if b > 0.0 {
            -2.0 * c / (b + disc)
        } else {
            (disc - b) / (2.0 * gamma)
        };
        let candidate = root.max(0.0);
        if candidate == 0.0 || contract.fee_g == 0.0 {
            return candidate;
        }
        let anchor = |x: f64| 0.5 * gamma * (x - x_prev) * (x - x_prev);
        let inside = self.payoff_unchecked(contract, mu, candidate) - anchor(candidate);
        let outside = -anchor(0.0);
        if inside >= outside {
            candidate
        } else {
            0.0
        }
    }

    fn payoff_unchecked(&self, contract: &ContractParams, mu: f64, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        self.value(x) - self.cost(x) - (contract.fee_tau + mu) * x - contract.fee_g
    }
}

impl Preferences for AgentParams {
    fn value(&self, x: f64) -> f64 {
        self.alpha * x.ln_1p()
    }

    fn marginal_value(&self, x: f64) -> f64 {
        self.alpha / (1.0 + x)
    }

    fn cost(&self, x: f64) -> f64 {
        self.beta * x
    }

    fn marginal_cost(&self, _x: f64) -> f64 {
        self.beta
    }
}

/// Contract environment: shared capacity and the two fees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractParams {
    pub capacity_m: f64,
    pub fee_tau: f64,
    pub fee_g: f64,
}

impl ContractParams {
    pub fn new(capacity_m: f64, fee_tau: f64, fee_g: f64) -> Result<Self> {
        let c = Self {
            capacity_m,
            fee_tau,
            fee_g,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("capacity_m", self.capacity_m)?;
        require_non_negative("fee_tau", self.fee_tau)?;
        require_non_negative("fee_g", self.fee_g)
    }

    pub fn with_tau(self, fee_tau: f64) -> Self {
        Self { fee_tau, ..self }
    }

    pub fn with_g(self, fee_g: f64) -> Self {
        Self { fee_g, ..self }
    }

    pub fn with_capacity(self, capacity_m: f64) -> Self {
        Self { capacity_m, ..self }
    }
}

pub fn valuation(a: &AgentParams, x: f64) -> Result<f64> {
    check_quantity(x)?;
    Ok(a.value(x))
}

pub fn cost(a: &AgentParams, x: f64) -> Result<f64> {
    check_quantity(x)?;
    Ok(a.cost(x))
}

/// `V(x) - C(x) - (tau + mu) x - g 1{x > 0}`; exactly zero at `x = 0`.
pub fn payoff(a: &AgentParams, c: &ContractParams, mu: f64, x: f64) -> Result<f64> {
    check_quantity(x)?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Domain {
            what: "price mu",
            requirement: "non-negative and finite",
            value: mu,
        });
    }
    Ok(a.payoff_unchecked(c, mu, x))
}

pub fn best_response(a: &AgentParams, c: &ContractParams, mu: f64) -> f64 {
    a.best_response(c, mu)
}

pub fn proximal_best_response(a: &AgentParams, c: &ContractParams, mu: f64, x_prev: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
    }
    check_quantity(x_prev)?;
    Ok(a.proximal_best_response(c, mu, x_prev, gamma))
}

pub fn demand_upper_bound(a: &AgentParams) -> f64 {
    a.demand_upper_bound()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agent(alpha: f64, beta: f64) -> AgentParams {
        AgentParams::new(0, alpha, beta).unwrap()
    }

    fn contract(tau: f64, g: f64) -> ContractParams {
        ContractParams::new(100.0, tau, g).unwrap()
    }

    #[test]
    fn valuation_examples() {
        assert_eq!(valuation(&agent(10.0, 1.0), 0.0).unwrap(), 0.0);
        let v = valuation(&agent(10.0, 1.0), 9.0).unwrap();
        assert!((v - 23.02585092994046).abs() < 1e-12);
        let v = valuation(&agent(1.0, 1.0), std::f64::consts::E - 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost(&agent(10.0, 1.0), 9.0).unwrap(), 9.0);
        assert_eq!(cost(&agent(10.0, 0.5), 4.0).unwrap(), 2.0);
        assert_eq!(cost(&agent(10.0, 5.0), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_quantity_is_a_domain_error() {
        let a = agent(10.0, 1.0);
        assert!(matches!(valuation(&a, -1.0), Err(Error::Domain { .. })));
        assert!(matches!(cost(&a, -0.5), Err(Error::Domain { .. })));
        assert!(payoff(&a, &contract(0.0, 0.0), 0.0, -1e-9).is_err());
        assert!(payoff(&a, &contract(0.0, 0.0), -1.0, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(AgentParams::new(0, 0.0, 1.0).is_err());
        assert!(AgentParams::new(0, 1.0, -1.0).is_err());
        assert!(AgentParams::new(0, f64::NAN, 1.0).is_err());
        assert!(AgentParams::new(0, f64::INFINITY, 1.0).is_err());
        assert!(ContractParams::new(0.0, 0.0, 0.0).is_err());
        assert!(ContractParams::new(1.0, -0.1, 0.0).is_err());
        assert!(ContractParams::new(1.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn payoff_examples() {
        let u = payoff(&agent(10.0, 1.0), &contract(0.0, 1.0), 0.0, 9.0).unwrap();
        assert!((u - 13.02585092994046).abs() < 1e-12);
        assert_eq!(payoff(&agent(3.0, 2.0), &contract(1.0, 5.0), 2.0, 0.0).unwrap(), 0.0);
        let u = payoff(&agent(10.0, 1.0), &contract(0.5, 0.0), 0.5, 4.0).unwrap();
        assert!((u - 8.094379124341003).abs() < 1e-12);
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(best_response(&agent(10.0, 1.0), &contract(0.0, 1.0), 0.0), 9.0);
        assert_eq!(best_response(&agent(2.0, 1.0), &contract(1.0, 0.0), 1.0), 0.0);
        // Interior candidate x = 2 loses money once g = 20 is charged.
        assert_eq!(best_response(&agent(6.0, 1.0), &contract(0.5, 20.0), 0.5), 0.0);
        assert_eq!(best_response(&agent(6.0, 1.0), &contract(0.5, 0.0), 0.5), 2.0);
    }

    #[test]
    fn zero_payoff_tie_participates() {
        // Pick g equal to the interior payoff so the gate sits exactly on the tie.
        let a = agent(10.0, 1.0);
        let c0 = contract(0.0, 0.0);
        let g = payoff(&a, &c0, 0.0, 9.0).unwrap();
        let c = contract(0.0, g);
        assert_eq!(best_response(&a, &c, 0.0), 9.0);
    }

    #[test]
    fn proximal_examples() {
        let a = agent(10.0, 1.0);
        let c = contract(0.0, 0.0);
        let x = proximal_best_response(&a, &c, 0.0, 3.7, 1e-9).unwrap();
        assert!((x - 9.0).abs() < 1e-4);
        let x = proximal_best_response(&a, &c, 0.0, 0.0, 1.0).unwrap();
        assert!((x - 2.1622776601683795).abs() < 1e-12);
        for gamma in [1e-6, 0.1, 1.0, 50.0] {
            let x = proximal_best_response(&a, &c, 1.5, 3.0, gamma).unwrap();
            assert!((x - 3.0).abs() < 1e-12, "gamma {gamma}: {x}");
        }
        assert!(proximal_best_response(&a, &c, 0.0, 0.0, 0.0).is_err());
        assert!(proximal_best_response(&a, &c, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(demand_upper_bound(&agent(10.0, 1.0)), 9.0);
        assert_eq!(demand_upper_bound(&agent(1.0, 2.0)), 0.0);
        assert_eq!(demand_upper_bound(&agent(5.0, 5.0)), 0.0);
    }

    fn regularized(a: &AgentParams, c: &ContractParams, mu: f64, x_prev: f64, gamma: f64, x: f64) -> f64 {
        payoff(a, c, mu, x).unwrap() - 0.5 * gamma * (x - x_prev).powi(2)
    }

    proptest! {
        #[test]
        fn best_response_monotone_and_bounded(
            alpha in 5.0f64..20.0,
            beta in 0.5f64..5.0,
            tau in 0.0f64..2.0,
            g in 0.0f64..5.0,
            mut mus in proptest::collection::vec(0.0f64..1000.0, 2..40),
        ) {
            let a = agent(alpha, beta);
            let c = contract(tau, g);
            mus.sort_by(f64::total_cmp);
            let xs: Vec<f64> = mus.iter().map(|&mu| best_response(&a, &c, mu)).collect();
            for w in xs.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            for &x in &xs {
                prop_assert!(x >= 0.0 && x <= demand_upper_bound(&a));
            }
        }

        #[test]
        fn strictly_decreasing_where_positive_without_fixed_fee(
            alpha in 5.0f64..20.0,
            beta in 0.5f64..5.0,
            tau in 0.0f64..2.0,
            mu in 0.0f64..10.0,
            dmu in 1e-3f64..1.0,
        ) {
            let a = agent(alpha, beta);
            let c = contract(tau, 0.0);
            let hi = best_response(&a, &c, mu + dmu);
            if hi > 0.0 {
                prop_assert!(hi < best_response(&a, &c, mu));
            }
        }

        #[test]
        fn first_order_condition_holds(
            alpha in 5.0f64..20.0,
            beta in 0.5f64..5.0,
            tau in 0.0f64..2.0,
            mu in 0.0f64..20.0,
        ) {
            let a = agent(alpha, beta);
            let c = contract(tau, 0.0);
            let x = best_response(&a, &c, mu);
            if x > 0.0 {
                let foc = a.marginal_value(x) - a.marginal_cost(x) - (tau + mu);
                prop_assert!(foc.abs() <= 1e-9, "foc residual {foc}");
            }
        }

        #[test]
        fn proximal_reduces_to_best_response(
            alpha in 5.0f64..20.0,
            beta in 0.5f64..5.0,
            tau in 0.0f64..2.0,
            g in 0.0f64..5.0,
            mu in 0.0f64..20.0,
            x_prev in 0.0f64..40.0,
        ) {
            let a = agent(alpha, beta);
            let c = contract(tau, g);
            let prox = proximal_best_response(&a, &c, mu, x_prev, 1e-9).unwrap();
            let exact = best_response(&a, &c, mu);
            // Near the participation threshold the two gates may disagree by
            // O(gamma); exclude that sliver.
            let margin = if exact > 0.0 { payoff(&a, &c, mu, exact).unwrap() } else { 1.0 };
            if margin.abs() > 1e-6 {
                prop_assert!((prox - exact).abs() <= 1e-4, "prox {prox} exact {exact}");
            }
        }

        #[test]
        fn payoff_zero_at_exit(
            alpha in 0.1f64..50.0,
            beta in 0.1f64..10.0,
            tau in 0.0f64..5.0,
            g in 0.0f64..10.0,
            mu in 0.0f64..100.0,
        ) {
            prop_assert_eq!(payoff(&agent(alpha, beta), &contract(tau, g), mu, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn proximal_matches_grid_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..12 {
            let a = agent(rng.random_range(5.0..20.0), rng.random_range(0.5..5.0));
            let c = contract(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            let mu = rng.random_range(0.0..3.0);
            let x_prev = rng.random_range(0.0..10.0);
            let gamma = rng.random_range(0.05..3.0);
            let closed = proximal_best_response(&a, &c, mu, x_prev, gamma).unwrap();
            let upper = demand_upper_bound(&a).max(x_prev);
            let steps = (upper / 1e-4).ceil() as usize;
            let mut best = (0.0, regularized(&a, &c, mu, x_prev, gamma, 0.0));
            for k in 1..=steps {
                let x = (k as f64 * 1e-4).min(upper);
                let v = regularized(&a, &c, mu, x_prev, gamma, x);
                if v > best.1 {
                    best = (x, v);
                }
            }
            assert!((closed - best.0).abs() <= 1e-3, "closed {closed} grid {}", best.0);
        }
    }
}
