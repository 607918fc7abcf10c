//! The Epstein-Zin aggregator, the value-factor representation of recursive
//! utility for an arbitrary admissible strategy, and comparison-theorem
//! bounds on the value factors.
//!
//! For a strategy `(pi, c)` the utility of agent `i` is
//! `Y_i(s) = theta_i(s) X(s)^{1-gamma} / (1-gamma)` where the positive factor
//! `theta_i` solves a scalar terminal-value ODE driven by the strategy. The
//! bound pair `(delta, kappa)` sandwiches every `theta_i` between the
//! solutions of linear comparison equations.

use crate::model::{validate, CoalitionSpec, MarketParams, Strategy, TimeGrid};
use crate::ode::{integrate_terminal, Trajectory, VectorField};
use crate::{Error, Result};

/// One agent's preference triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregator {
    pub gamma: f64,
    pub alpha: f64,
    pub rho: f64,
}

impl Aggregator {
    pub fn new(gamma: f64, alpha: f64, rho: f64) -> Self {
        Self { gamma, alpha, rho }
    }

    /// The Epstein-Zin generator
    /// `g(q, y) = a^{-1} ((1-g)y)^{1 - a/(1-g)} [q^a - rho ((1-g)y)^{a/(1-g)}]`
    /// for consumption rate `q >= 0` and utility level `y` with
    /// `(1-gamma) y > 0`.
    pub fn value(&self, q: f64, y: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return Err(Error::Domain(format!("aggregator requires q >= 0, got {q}")));
        }
        let scaled = (1.0 - self.gamma) * y;
        if !(scaled > 0.0) {
            return Err(Error::Domain(format!(
                "aggregator requires (1-gamma) y > 0, got {scaled}"
            )));
        }
        let outer = scaled.powf(1.0 - self.alpha / (1.0 - self.gamma));
        let inner = q.powf(self.alpha) - self.rho * scaled.powf(self.alpha / (1.0 - self.gamma));
        Ok(outer * inner / self.alpha)
    }

    /// Terminal reward `h(x) = x^{1-gamma} / (1-gamma)`.
    pub fn terminal_reward(&self, x: f64) -> f64 {
        x.powf(1.0 - self.gamma) / (1.0 - self.gamma)
    }
}

/// Which solver produced a [`ThetaSystem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ForStrategy,
    Equilibrium,
    OneAgent,
    PrecommittedCrra,
}

/// Per-agent value factors `theta_1..theta_N` on a grid, strictly positive at
/// every node, with `theta_i(T) = 1` (or the stored terminal condition).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSystem {
    trajectory: Trajectory,
    spec: CoalitionSpec,
    provenance: Provenance,
}

impl ThetaSystem {
    /// Wraps a solved trajectory, enforcing strict positivity at every node.
    pub fn from_trajectory(
        trajectory: Trajectory,
        spec: CoalitionSpec,
        provenance: Provenance,
    ) -> Result<Self> {
        assert_eq!(trajectory.dimension(), spec.n_agents());
        for k in 0..=trajectory.grid().n_steps() {
            let state = trajectory.state(k);
            if let Some(i) = state.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::PositivityLoss {
                    time: trajectory.grid().node(k),
                    component: i,
                    guidance: String::new(),
                });
            }
        }
        Ok(Self {
            trajectory,
            spec,
            provenance,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn grid(&self) -> &TimeGrid {
        self.trajectory.grid()
    }

    pub fn spec(&self) -> &CoalitionSpec {
        &self.spec
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n_agents(&self) -> usize {
        self.spec.n_agents()
    }

    /// Dense-output value of `theta_i` at `t`.
    pub fn theta(&self, agent: usize, t: f64) -> f64 {
        self.trajectory.eval_component(agent, t)
    }

    /// `theta_i` at grid node `k`.
    pub fn node_theta(&self, agent: usize, k: usize) -> f64 {
        self.trajectory.state(k)[agent]
    }

    /// All `theta_i(t)` written into `out`.
    pub fn thetas_at(&self, t: f64, out: &mut [f64]) {
        self.trajectory.eval_into(t, out);
    }

    /// Coalition value factor `v(t) = (1/N) sum_i theta_i(t)`.
    pub fn value_factor(&self, t: f64) -> f64 {
        let mut buf = vec![0.0; self.n_agents()];
        self.thetas_at(t, &mut buf);
        buf.iter().sum::<f64>() / self.n_agents() as f64
    }
}

/// Utility level `Y_i(t) = theta_i(t) x^{1-gamma} / (1-gamma)` for positive
/// arguments.
pub fn utility_value(theta_i_at_t: f64, x: f64, gamma: f64) -> Result<f64> {
    if !(theta_i_at_t > 0.0 && x > 0.0) {
        return Err(Error::Domain(format!(
            "utility_value requires theta > 0 and x > 0, got theta = {theta_i_at_t}, x = {x}"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0,1), got {gamma}")));
    }
    Ok(theta_i_at_t * x.powf(1.0 - gamma) / (1.0 - gamma))
}

/// The value-factor ODE right-hand side for a fixed strategy:
///
/// `theta_i' = -[(1-g) theta_i B_i(t) + (1-g)/a theta_i^{(1-g-a)/(1-g)} c_i(t)^a]`
///
/// with `B_i(t) = (mu-nu) P(t) - C(t) + nu - g s^2 P(t)^2 / 2 - rho_i / a`,
/// `P` and `C` the strategy's total investment and consumption fractions.
pub(crate) struct StrategyThetaField<'a, S: Strategy + ?Sized> {
    gamma: f64,
    alpha: f64,
    rhos: &'a [f64],
    market: MarketParams,
    strategy: &'a S,
}

impl<'a, S: Strategy + ?Sized> StrategyThetaField<'a, S> {
    pub(crate) fn new(spec: &'a CoalitionSpec, market: &MarketParams, strategy: &'a S) -> Self {
        Self {
            gamma: spec.gamma,
            alpha: spec.alpha,
            rhos: &spec.discount_rates,
            market: *market,
            strategy,
        }
    }
}

impl<S: Strategy + ?Sized> VectorField for StrategyThetaField<'_, S> {
    fn dimension(&self) -> usize {
        self.rhos.len()
    }

    fn eval(&self, t: f64, theta: &[f64], out: &mut [f64]) {
        let n = self.rhos.len();
        let mut pi = vec![0.0; n];
        let mut c = vec![0.0; n];
        self.strategy.investment(t, &mut pi);
        self.strategy.consumption(t, &mut c);
        let total_pi: f64 = pi.iter().sum();
        let total_c: f64 = c.iter().sum();
        let g = self.gamma;
        let a = self.alpha;
        let sigma = self.market.sigma;
        let common = self.market.risk_premium() * total_pi - total_c + self.market.nu
            - 0.5 * g * sigma * sigma * total_pi * total_pi;
        let source_exp = (1.0 - g - a) / (1.0 - g);
        for i in 0..n {
            let bracket = common - self.rhos[i] / a;
            let source = (1.0 - g) / a * theta[i].powf(source_exp) * c[i].powf(a);
            out[i] = -((1.0 - g) * theta[i] * bracket + source);
        }
    }
}

/// Solves the value-factor system for an arbitrary admissible strategy,
/// backward from `theta_i(T) = 1`.
pub fn theta_for_strategy<S: Strategy + ?Sized>(
    spec: &CoalitionSpec,
    market: &MarketParams,
    strategy: &S,
    grid: &TimeGrid,
) -> Result<ThetaSystem> {
    check_inputs(spec, market, strategy.n_agents())?;
    let field = StrategyThetaField::new(spec, market, strategy);
    let terminal = vec![1.0; spec.n_agents()];
    let trajectory = integrate_terminal(&field, &terminal, grid).map_err(as_positivity_loss)?;
    ThetaSystem::from_trajectory(trajectory, spec.clone(), Provenance::ForStrategy)
}

/// The fields of this family can only lose finiteness through a nonpositive
/// base under a fractional power, so a non-finite state is reported as lost
/// positivity at the offending node.
pub(crate) fn as_positivity_loss(err: Error) -> Error {
    match err {
        Error::NonFiniteState { time, component } => Error::PositivityLoss {
            time,
            component,
            guidance: String::new(),
        },
        other => other,
    }
}

pub(crate) fn check_inputs(
    spec: &CoalitionSpec,
    market: &MarketParams,
    strategy_agents: usize,
) -> Result<()> {
    let violations = validate(spec, market);
    if !violations.is_empty() {
        let joined = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Domain(joined));
    }
    if strategy_agents != spec.n_agents() {
        return Err(Error::DimensionMismatch {
            expected: spec.n_agents(),
            got: strategy_agents,
        });
    }
    Ok(())
}

/// Positive constants with `delta <= theta_i(s) <= kappa` at every node, from
/// the linear comparison equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPair {
    pub delta: f64,
    pub kappa: f64,
}

enum BoundKind {
    /// Consumption source dropped entirely; solution bounds theta from below.
    Bare,
    /// Source replaced by `(1-g)/a (1 + theta) c^a`, valid for
    /// `gamma <= 1 - alpha`.
    OnePlus,
    /// Source replaced by the constant-in-theta majorant
    /// `(1-g)/a delta^{(1-g-a)/(1-g)} c^a`, valid for `gamma > 1 - alpha`.
    FrozenAt(f64),
}

struct BoundField<'a, S: Strategy + ?Sized> {
    gamma: f64,
    alpha: f64,
    rho: f64,
    agent: usize,
    market: MarketParams,
    strategy: &'a S,
    kind: BoundKind,
}

impl<S: Strategy + ?Sized> VectorField for BoundField<'_, S> {
    fn dimension(&self) -> usize {
        1
    }

    fn eval(&self, t: f64, theta: &[f64], out: &mut [f64]) {
        let n = self.strategy.n_agents();
        let mut pi = vec![0.0; n];
        let mut c = vec![0.0; n];
        self.strategy.investment(t, &mut pi);
        self.strategy.consumption(t, &mut c);
        let total_pi: f64 = pi.iter().sum();
        let total_c: f64 = c.iter().sum();
        let g = self.gamma;
        let a = self.alpha;
        let sigma = self.market.sigma;
        let bracket = self.market.risk_premium() * total_pi - total_c + self.market.nu
            - 0.5 * g * sigma * sigma * total_pi * total_pi
            - self.rho / a;
        let ca = c[self.agent].powf(a);
        let source = match self.kind {
            BoundKind::Bare => 0.0,
            BoundKind::OnePlus => (1.0 - g) / a * (1.0 + theta[0]) * ca,
            BoundKind::FrozenAt(delta) => {
                (1.0 - g) / a * delta.powf((1.0 - g - a) / (1.0 - g)) * ca
            }
        };
        out[0] = -((1.0 - g) * theta[0] * bracket + source);
    }
}

/// Comparison-theorem sandwich for [`theta_for_strategy`] on the same inputs:
/// `delta` is the smallest node value of the source-free linear solution over
/// all agents, `kappa` the largest node value of the majorized linear
/// solution. The majorant depends on the risk-aversion regime; for
/// `gamma > 1 - alpha` it needs each agent's `delta_i` first.
pub fn theta_bounds<S: Strategy + ?Sized>(
    spec: &CoalitionSpec,
    market: &MarketParams,
    strategy: &S,
    grid: &TimeGrid,
) -> Result<BoundPair> {
    check_inputs(spec, market, strategy.n_agents())?;
    let g = spec.gamma;
    let a = spec.alpha;
    let solve = |agent: usize, kind: BoundKind| -> Result<Trajectory> {
        let field = BoundField {
            gamma: g,
            alpha: a,
            rho: spec.discount_rates[agent],
            agent,
            market: *market,
            strategy,
            kind,
        };
        integrate_terminal(&field, &[1.0], grid).map_err(as_positivity_loss)
    };

    let mut delta = f64::INFINITY;
    let mut deltas = Vec::with_capacity(spec.n_agents());
    for agent in 0..spec.n_agents() {
        let lower = solve(agent, BoundKind::Bare)?;
        let delta_i = lower.node_min(0);
        if !(delta_i > 0.0) {
            return Err(Error::PositivityLoss {
                time: grid.t0(),
                component: agent,
                guidance: " (lower comparison solution collapsed)".into(),
            });
        }
        deltas.push(delta_i);
        delta = delta.min(delta_i);
    }

    let mut kappa = f64::NEG_INFINITY;
    for agent in 0..spec.n_agents() {
        let kind = if g <= 1.0 - a {
            BoundKind::OnePlus
        } else {
            BoundKind::FrozenAt(deltas[agent])
        };
        let upper = solve(agent, kind)?;
        kappa = kappa.max(upper.node_max(0));
    }
    debug_assert!(delta <= kappa);
    Ok(BoundPair { delta, kappa })
}
