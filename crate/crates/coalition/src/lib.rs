//! Numerical solvers for dynamic coalition portfolio selection with
//! Epstein-Zin recursive utility.
//!
//! A coalition of `N` agents shares one wealth process, invests in a single
//! risky asset and a riskless account, and splits consumption. Each agent
//! values consumption through an Epstein-Zin recursive utility with a common
//! risk aversion `gamma` and EIS parameter `alpha` but an individual discount
//! rate `rho_i`. Because the aggregate objective couples a forward wealth SDE
//! with backward utility equations, the Pareto problem is time-inconsistent;
//! the useful object is the time-consistent *equilibrium* strategy, obtained
//! from a coupled terminal-value ODE system for the per-agent value factors
//! `theta_i`.
//!
//! The crate provides:
//!
//! - [`model`]: parameter containers, validation, well-posedness
//!   classification, time grids, and strategy representations;
//! - [`ode`]: a fixed-step RK4 terminal-value integrator with cubic-Hermite
//!   dense output and an observed-order estimator;
//! - [`recursive_utility`]: the Epstein-Zin aggregator, the value-factor
//!   representation of utility for an arbitrary admissible strategy, and
//!   comparison-theorem bounds;
//! - [`equilibrium`]: the coupled equilibrium ODE system, the equilibrium
//!   strategies, an epsilon-perturbation verifier of the equilibrium
//!   property, and monotonicity/ordering checks;
//! - [`baselines`]: the one-agent optimal strategy (in two ODE forms that are
//!   adjudicated by Monte Carlo), the pre-committed CRRA strategy anchored at
//!   a fixed time, and the CRRA equilibrium specialization;
//! - [`montecarlo`]: seeded, reproducible simulation of the wealth SDE and
//!   direct expectation checks of the utility representation.

pub mod baselines;
pub mod equilibrium;
pub mod model;
pub mod montecarlo;
pub mod ode;
pub mod recursive_utility;
pub mod rng;

pub use baselines::{
    crra_equilibrium, one_agent_mc_oracle, solve_one_agent, solve_precommitted_crra,
    CrraEquilibrium, OneAgentForm, OneAgentSolution, PrecommittedSolution,
};
pub use equilibrium::{
    check_consumption_ordering, check_theta_monotonicity, solve_equilibrium, verify_equilibrium,
    verify_perturbation, ConsumptionOrderingReport, EquilibriumField, EquilibriumSolution,
    MonotonicityReport, PerturbationReport,
};
pub use model::{
    classify_a1, classify_a1_with, validate, A1Branch, A1Denominator, A1Status, CoalitionSpec,
    Interpolation, MarketParams, Strategy, StrategyProfile, TimeGrid, Violation,
};
pub use montecarlo::{
    check_utility_representation, crra_expectation_check, simulate_wealth, AgentUtilityCheck,
    CrraExpectationReport, PathSet, Scheme, UtilityCheckReport,
};
pub use ode::{integrate_terminal, observed_order, OrderEstimate, Trajectory, VectorField};
pub use recursive_utility::{
    theta_bounds, theta_for_strategy, utility_value, Aggregator, BoundPair, Provenance,
    ThetaSystem,
};

/// Errors shared by the solver and simulation modules.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A state component became NaN or infinite during integration.
    #[error("state became non-finite at t = {time} (component {component})")]
    NonFiniteState { time: f64, component: usize },

    /// Terminal state length does not match the field dimension.
    #[error("dimension mismatch: field has dimension {expected}, state has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A value factor reached zero or below at a grid node.
    #[error("theta lost positivity at t = {time} (component {component}){guidance}")]
    PositivityLoss {
        time: f64,
        component: usize,
        guidance: String,
    },

    /// An argument left the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation that requires gamma = 1 - alpha exactly was called with
    /// a genuinely recursive specification.
    #[error("not CRRA: gamma = {gamma} but 1 - alpha = {one_minus_alpha}; equality must be exact")]
    NotCrra { gamma: f64, one_minus_alpha: f64 },

    /// A perturbation window [t, t + epsilon] leaves the horizon.
    #[error("bad epsilon: t = {t} plus epsilon = {epsilon} exceeds the horizon T = {horizon}")]
    BadEpsilon { t: f64, epsilon: f64, horizon: f64 },

    /// A theta system and a path set were built on different grids.
    #[error("grid mismatch: theta system and path set use different time grids")]
    GridMismatch,

    /// Every Euler-Maruyama path hit nonpositive wealth.
    #[error("all {0} Euler-Maruyama paths reached nonpositive wealth")]
    AllPathsDied(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
