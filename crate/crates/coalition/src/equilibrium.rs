//! The coupled equilibrium ODE system for the coalition's value factors, the
//! equilibrium strategies it induces, a perturbation verifier for the
//! equilibrium property, and monotonicity/ordering checks.
//!
//! The equilibrium system for `theta = (theta_1..theta_N)` is
//!
//! ```text
//! theta_i' + (1-g) theta_i [ M - S^{1/(a-1)} sum_k theta_k^beta ]
//!          - (1-g) rho_i / a theta_i
//!          + (1-g)/a theta_i^beta S^{a/(a-1)} = 0,      theta_i(T) = 1,
//! ```
//!
//! with `S = sum_j theta_j`, `beta = (1-g-a)/((1-a)(1-g))` and
//! `M = nu + (mu-nu)^2/(2 g s^2)`. The induced strategies are the constant
//! total investment fraction `(mu-nu)/(g s^2)` and the per-agent consumption
//! fractions `c_i(t) = S(t)^{1/(a-1)} theta_i(t)^beta`. Only the total
//! investment enters the dynamics; where a per-agent profile is required the
//! total is split equally.

use crate::model::{CoalitionSpec, MarketParams, Strategy, TimeGrid};
use crate::ode::{integrate_terminal, VectorField};
use crate::recursive_utility::{
    as_positivity_loss, check_inputs, Provenance, StrategyThetaField, ThetaSystem,
};
use crate::{classify_a1, Error, Result};

/// Default tolerance on the perturbation slopes `(J^eps - J)/eps`.
pub const DEFAULT_SLOPE_TOLERANCE: f64 = 1e-6;

/// Default epsilon ladder for the perturbation verifier.
pub const DEFAULT_EPSILONS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Slack allowed when checking the value-factor ordering at grid nodes.
const MONOTONICITY_SLACK: f64 = 1e-10;

pub(crate) fn consumption_exponent_sum(alpha: f64) -> f64 {
    1.0 / (alpha - 1.0)
}

pub(crate) fn consumption_exponent_own(gamma: f64, alpha: f64) -> f64 {
    (1.0 - gamma - alpha) / ((1.0 - alpha) * (1.0 - gamma))
}

/// Right-hand side of the coupled equilibrium system, exposed so the
/// integrator's behavior on it (order studies, step refinement) can be probed
/// directly.
pub struct EquilibriumField {
    gamma: f64,
    alpha: f64,
    rhos: Vec<f64>,
    merton_drift: f64,
}

impl EquilibriumField {
    pub fn new(spec: &CoalitionSpec, market: &MarketParams) -> Self {
        Self {
            gamma: spec.gamma,
            alpha: spec.alpha,
            rhos: spec.discount_rates.clone(),
            merton_drift: market.merton_drift(spec.gamma),
        }
    }
}

impl VectorField for EquilibriumField {
    fn dimension(&self) -> usize {
        self.rhos.len()
    }

    fn eval(&self, _t: f64, theta: &[f64], out: &mut [f64]) {
        let g = self.gamma;
        let a = self.alpha;
        let beta = consumption_exponent_own(g, a);
        let total: f64 = theta.iter().sum();
        let total_sum_pow = total.powf(consumption_exponent_sum(a));
        let total_src_pow = total.powf(a / (a - 1.0));
        let sum_beta: f64 = theta.iter().map(|th| th.powf(beta)).sum();
        for (i, (&th, &rho)) in theta.iter().zip(&self.rhos).enumerate() {
            let linear = (1.0 - g) * th * (self.merton_drift - total_sum_pow * sum_beta)
                - (1.0 - g) * rho / a * th;
            let source = (1.0 - g) / a * th.powf(beta) * total_src_pow;
            out[i] = -(linear + source);
        }
    }
}

/// Solved equilibrium system plus the strategies it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    theta: ThetaSystem,
    market: MarketParams,
}

impl EquilibriumSolution {
    pub fn theta(&self) -> &ThetaSystem {
        &self.theta
    }

    pub fn spec(&self) -> &CoalitionSpec {
        self.theta.spec()
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    pub fn grid(&self) -> &TimeGrid {
        self.theta.grid()
    }

    pub fn n_agents(&self) -> usize {
        self.theta.n_agents()
    }

    /// Total equilibrium investment fraction `(mu-nu)/(gamma sigma^2)`;
    /// constant in time and independent of the discount rates.
    pub fn total_investment(&self) -> f64 {
        self.market.merton_fraction(self.spec().gamma)
    }

    /// Equilibrium consumption fraction of agent `i` at time `t`.
    pub fn consumption(&self, agent: usize, t: f64) -> f64 {
        let mut thetas = vec![0.0; self.n_agents()];
        self.theta.thetas_at(t, &mut thetas);
        consumption_from_thetas(self.spec().gamma, self.spec().alpha, &thetas, agent)
    }

    /// All equilibrium consumption fractions at `t`, written into `out`.
    pub fn consumptions_at(&self, t: f64, out: &mut [f64]) {
        let mut thetas = vec![0.0; self.n_agents()];
        self.theta.thetas_at(t, &mut thetas);
        for i in 0..self.n_agents() {
            out[i] = consumption_from_thetas(self.spec().gamma, self.spec().alpha, &thetas, i);
        }
    }

    /// Coalition value factor `v(t) = (1/N) sum_i theta_i(t)`.
    pub fn value_factor(&self, t: f64) -> f64 {
        self.theta.value_factor(t)
    }

    /// The induced feedback strategy with the total investment split equally
    /// across agents.
    pub fn strategy(&self) -> EquilibriumStrategy<'_> {
        EquilibriumStrategy { solution: self }
    }
}

pub(crate) fn consumption_from_thetas(gamma: f64, alpha: f64, thetas: &[f64], agent: usize) -> f64 {
    let total: f64 = thetas.iter().sum();
    total.powf(consumption_exponent_sum(alpha))
        * thetas[agent].powf(consumption_exponent_own(gamma, alpha))
}

/// Equal-split feedback view of an [`EquilibriumSolution`].
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumStrategy<'a> {
    solution: &'a EquilibriumSolution,
}

impl Strategy for EquilibriumStrategy<'_> {
    fn n_agents(&self) -> usize {
        self.solution.n_agents()
    }

    fn investment(&self, _t: f64, out: &mut [f64]) {
        let share = self.solution.total_investment() / self.n_agents() as f64;
        out.fill(share);
    }

    fn consumption(&self, t: f64, out: &mut [f64]) {
        self.solution.consumptions_at(t, out);
    }

    fn total_investment(&self, _t: f64) -> f64 {
        self.solution.total_investment()
    }
}

/// Integrates the equilibrium system backward from `theta_i(T) = 1`.
///
/// The sufficient well-posedness condition is not required; when positivity
/// is lost the error carries the classification outcome as guidance.
pub fn solve_equilibrium(
    spec: &CoalitionSpec,
    market: &MarketParams,
    grid: &TimeGrid,
) -> Result<EquilibriumSolution> {
    check_inputs(spec, market, spec.n_agents())?;
    let field = EquilibriumField::new(spec, market);
    let terminal = vec![1.0; spec.n_agents()];
    let with_guidance = |err: Error| match as_positivity_loss(err) {
        Error::PositivityLoss {
            time, component, ..
        } => Error::PositivityLoss {
            time,
            component,
            guidance: format!("; {}", classify_a1(spec, market).detail),
        },
        other => other,
    };
    let trajectory = integrate_terminal(&field, &terminal, grid).map_err(with_guidance)?;
    let theta = ThetaSystem::from_trajectory(trajectory, spec.clone(), Provenance::Equilibrium)
        .map_err(with_guidance)?;
    Ok(EquilibriumSolution {
        theta,
        market: *market,
    })
}

/// One rung of the perturbation ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSample {
    pub epsilon: f64,
    /// Coalition objective with the perturbation active on `[t, t+eps)`.
    pub perturbed_value: f64,
    /// Coalition objective with the base strategy replayed on the same
    /// subgrid; agrees with `base_value` to solver tolerance and cancels the
    /// shared discretization error out of the slope.
    pub replayed_base_value: f64,
    pub slope: f64,
}

/// Outcome of the local-deviation test at one time.
///
/// `slope = (J^eps - J^eps_base) / eps` for each epsilon, where both values
/// come from the value-factor ODE on `[t, t+eps]` with the perturbed and the
/// base strategy respectively. The verdict passes iff every slope is at most
/// `slope_tolerance`; an equilibrium base admits no perturbation with a
/// positive slope in the small-epsilon limit.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub t: f64,
    pub x: f64,
    /// `J = (1/N) sum_i theta_i(t) x^{1-g} / (1-g)` from the base system.
    pub base_value: f64,
    pub samples: Vec<PerturbationSample>,
    pub slope_tolerance: f64,
    pub pass: bool,
}

impl PerturbationReport {
    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.slope)
    }

    pub fn max_slope(&self) -> f64 {
        self.slopes().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Tests whether `base_strategy` (with value factors `base_theta`) survives a
/// local deviation to `perturbation` on `[t, t+eps)` for each epsilon.
///
/// For every epsilon the value-factor ODE is solved backward on
/// `[t, t + eps]` from the terminal condition `theta^eps(t+eps) =
/// base_theta(t+eps)`, once with the perturbed strategy and once with the
/// base strategy on the identical subgrid.
pub fn verify_perturbation<B, P>(
    spec: &CoalitionSpec,
    market: &MarketParams,
    base_theta: &ThetaSystem,
    base_strategy: &B,
    t: f64,
    perturbation: &P,
    epsilons: &[f64],
    x: f64,
    slope_tolerance: f64,
) -> Result<PerturbationReport>
where
    B: Strategy + ?Sized,
    P: Strategy + ?Sized,
{
    check_inputs(spec, market, base_strategy.n_agents())?;
    if perturbation.n_agents() != spec.n_agents() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_agents(),
            got: perturbation.n_agents(),
        });
    }
    let grid = base_theta.grid();
    let horizon = grid.t_end();
    if !(t >= grid.t0() && t < horizon) {
        return Err(Error::Domain(format!(
            "perturbation time t = {t} must lie in [{}, {horizon})",
            grid.t0()
        )));
    }
    if epsilons.is_empty() {
        return Err(Error::Domain("at least one epsilon is required".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Domain(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x must be positive, got {x}")));
    }

    let n = spec.n_agents() as f64;
    let factor = x.powf(1.0 - spec.gamma) / (1.0 - spec.gamma) / n;
    let mut thetas = vec![0.0; spec.n_agents()];
    base_theta.thetas_at(t, &mut thetas);
    let base_value = factor * thetas.iter().sum::<f64>();

    let mut samples = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut end = t + eps;
        if end > horizon {
            // rounding slack: 0.9 + 0.1 lands one ulp past 1.0
            if end - horizon <= 1e-9 * (horizon - grid.t0()) {
                end = horizon;
            } else {
                return Err(Error::BadEpsilon {
                    t,
                    epsilon: eps,
                    horizon,
                });
            }
        }
        base_theta.thetas_at(end, &mut thetas);
        let sub_steps = ((eps / grid.dt()).ceil() as usize).max(16);
        let sub_grid = TimeGrid::new(t, end, sub_steps);

        let perturbed_field = StrategyThetaField::new(spec, market, perturbation);
        let perturbed = integrate_terminal(&perturbed_field, &thetas, &sub_grid)
            .map_err(as_positivity_loss)?;
        let base_field = StrategyThetaField::new(spec, market, base_strategy);
        let replayed =
            integrate_terminal(&base_field, &thetas, &sub_grid).map_err(as_positivity_loss)?;

        let perturbed_value = factor * perturbed.state(0).iter().sum::<f64>();
        let replayed_base_value = factor * replayed.state(0).iter().sum::<f64>();
        samples.push(PerturbationSample {
            epsilon: eps,
            perturbed_value,
            replayed_base_value,
            slope: (perturbed_value - replayed_base_value) / eps,
        });
    }
    let pass = samples.iter().all(|s| s.slope <= slope_tolerance);
    Ok(PerturbationReport {
        t,
        x,
        base_value,
        samples,
        slope_tolerance,
        pass,
    })
}

/// [`verify_perturbation`] against an equilibrium solution with the default
/// epsilon ladder semantics, evaluated at `x = 1` (the verdict is
/// `x`-independent by homogeneity).
pub fn verify_equilibrium<P: Strategy + ?Sized>(
    solution: &EquilibriumSolution,
    t: f64,
    perturbation: &P,
    epsilons: &[f64],
) -> Result<PerturbationReport> {
    verify_perturbation(
        solution.spec(),
        solution.market(),
        solution.theta(),
        &solution.strategy(),
        t,
        perturbation,
        epsilons,
        1.0,
        DEFAULT_SLOPE_TOLERANCE,
    )
}

/// A broken ordering instance at one grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingViolation {
    /// Agent with the smaller discount rate.
    pub agent_lo: usize,
    /// Agent with the larger discount rate.
    pub agent_hi: usize,
    pub time: f64,
    pub value_lo: f64,
    pub value_hi: f64,
}

const MAX_RECORDED_VIOLATIONS: usize = 16;

/// Outcome of the value-factor ordering check.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub pass: bool,
    /// First few counterexamples, capped; `total_violations` counts all.
    pub counterexamples: Vec<OrderingViolation>,
    pub total_violations: usize,
}

/// Checks that a smaller discount rate yields a pointwise larger value
/// factor: `rho_i <= rho_j` implies `theta_i(s) >= theta_j(s)` at every node
/// (up to `1e-10` slack).
pub fn check_theta_monotonicity(solution: &EquilibriumSolution) -> MonotonicityReport {
    let spec = solution.spec();
    let grid = solution.grid();
    let mut counterexamples = Vec::new();
    let mut total = 0usize;
    for i in 0..spec.n_agents() {
        for j in 0..spec.n_agents() {
            if spec.discount_rates[i] > spec.discount_rates[j] {
                continue;
            }
            for k in 0..=grid.n_steps() {
                let lo = solution.theta().node_theta(i, k);
                let hi = solution.theta().node_theta(j, k);
                if lo < hi - MONOTONICITY_SLACK {
                    total += 1;
                    if counterexamples.len() < MAX_RECORDED_VIOLATIONS {
                        counterexamples.push(OrderingViolation {
                            agent_lo: i,
                            agent_hi: j,
                            time: grid.node(k),
                            value_lo: lo,
                            value_hi: hi,
                        });
                    }
                }
            }
        }
    }
    MonotonicityReport {
        pass: total == 0,
        counterexamples,
        total_violations: total,
    }
}

/// Where `gamma` sits relative to `1 - alpha`, which decides the direction of
/// the consumption ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumptionRegime {
    /// `gamma < 1 - alpha`: the more patient agent consumes more.
    BelowCrra,
    /// `gamma == 1 - alpha`: consumption is agent-independent.
    Crra,
    /// `gamma > 1 - alpha`: the more patient agent consumes less.
    AboveCrra,
}

/// Outcome of the consumption ordering check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumptionOrderingReport {
    pub regime: ConsumptionRegime,
    pub pass: bool,
    pub counterexamples: Vec<OrderingViolation>,
    pub total_violations: usize,
}

/// Checks the regime-dependent pointwise ordering of the equilibrium
/// consumption fractions: for `rho_i <= rho_j`, `c_i >= c_j` when
/// `gamma <= 1 - alpha` and `c_i <= c_j` when `gamma >= 1 - alpha` (both,
/// i.e. equality, at `gamma = 1 - alpha`).
pub fn check_consumption_ordering(solution: &EquilibriumSolution) -> ConsumptionOrderingReport {
    let spec = solution.spec();
    let grid = solution.grid();
    let regime = if spec.is_crra() {
        ConsumptionRegime::Crra
    } else if spec.gamma < 1.0 - spec.alpha {
        ConsumptionRegime::BelowCrra
    } else {
        ConsumptionRegime::AboveCrra
    };
    let mut counterexamples = Vec::new();
    let mut total = 0usize;
    let mut consumptions = vec![0.0; spec.n_agents()];
    for k in 0..=grid.n_steps() {
        let t = grid.node(k);
        let mut thetas = vec![0.0; spec.n_agents()];
        for (i, th) in thetas.iter_mut().enumerate() {
            *th = solution.theta().node_theta(i, k);
        }
        for (i, c) in consumptions.iter_mut().enumerate() {
            *c = consumption_from_thetas(spec.gamma, spec.alpha, &thetas, i);
        }
        for i in 0..spec.n_agents() {
            for j in 0..spec.n_agents() {
                if spec.discount_rates[i] > spec.discount_rates[j] {
                    continue;
                }
                let (lo, hi) = (consumptions[i], consumptions[j]);
                let broken = match regime {
                    ConsumptionRegime::BelowCrra => lo < hi - MONOTONICITY_SLACK,
                    ConsumptionRegime::AboveCrra => lo > hi + MONOTONICITY_SLACK,
                    ConsumptionRegime::Crra => (lo - hi).abs() > MONOTONICITY_SLACK,
                };
                if broken {
                    total += 1;
                    if counterexamples.len() < MAX_RECORDED_VIOLATIONS {
                        counterexamples.push(OrderingViolation {
                            agent_lo: i,
                            agent_hi: j,
                            time: t,
                            value_lo: lo,
                            value_hi: hi,
                        });
                    }
                }
            }
        }
    }
    ConsumptionOrderingReport {
        regime,
        pass: total == 0,
        counterexamples,
        total_violations: total,
    }
}
