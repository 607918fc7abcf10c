//! Parameter containers, validation, well-posedness classification, time
//! grids, and strategy representations shared by all solvers.

/// Single risky asset market: riskless rate `nu`, appreciation rate `mu`,
/// volatility `sigma`. Requires `mu > nu` and `sigma > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    /// Riskless interest rate, per unit time.
    pub nu: f64,
    /// Appreciation rate of the risky asset, per unit time.
    pub mu: f64,
    /// Volatility of the risky asset, per sqrt unit time.
    pub sigma: f64,
}

impl MarketParams {
    pub fn new(nu: f64, mu: f64, sigma: f64) -> Self {
        Self { nu, mu, sigma }
    }

    /// Excess return `mu - nu` of the risky asset.
    pub fn risk_premium(&self) -> f64 {
        self.mu - self.nu
    }

    /// Total wealth fraction `(mu - nu) / (gamma sigma^2)` invested in the
    /// risky asset by the equilibrium (and one-agent optimal) strategy.
    pub fn merton_fraction(&self, gamma: f64) -> f64 {
        self.risk_premium() / (gamma * self.sigma * self.sigma)
    }

    /// `nu + (mu - nu)^2 / (2 gamma sigma^2)`, the growth rate produced by
    /// the equilibrium investment before consumption.
    pub fn merton_drift(&self, gamma: f64) -> f64 {
        self.nu + self.risk_premium().powi(2) / (2.0 * gamma * self.sigma * self.sigma)
    }
}

/// Coalition preferences: common risk aversion `gamma` in (0,1), common EIS
/// parameter `alpha` in (0,1) (the EIS itself is `1/(1-alpha)`), horizon `T`,
/// and one nonnegative discount rate per agent. Pareto weights are uniform
/// `1/N`; the solvers are derived under that weighting and no other weighting
/// is representable.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionSpec {
    pub gamma: f64,
    pub alpha: f64,
    pub horizon: f64,
    pub discount_rates: Vec<f64>,
}

impl CoalitionSpec {
    pub fn new(gamma: f64, alpha: f64, horizon: f64, discount_rates: Vec<f64>) -> Self {
        Self {
            gamma,
            alpha,
            horizon,
            discount_rates,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.discount_rates.len()
    }

    /// True iff `gamma == 1 - alpha` exactly, the additively separable case
    /// in which the recursive utility collapses to CRRA expected utility.
    pub fn is_crra(&self) -> bool {
        self.gamma == 1.0 - self.alpha
    }

    /// Single-agent specification sharing this coalition's preferences.
    pub fn single_agent(&self, rho: f64) -> CoalitionSpec {
        CoalitionSpec::new(self.gamma, self.alpha, self.horizon, vec![rho])
    }
}

/// One violated invariant, as data rather than an error.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every type invariant of `spec` and `market`; returns an empty list
/// iff all hold. Pure: identical inputs yield identical lists.
pub fn validate(spec: &CoalitionSpec, market: &MarketParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, message: String| out.push(Violation { field, message });

    if !(spec.gamma > 0.0 && spec.gamma < 1.0) {
        push("gamma", "gamma must lie in (0,1)".into());
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        push("alpha", "alpha must lie in (0,1)".into());
    }
    if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
        push("horizon", "horizon must be positive and finite".into());
    }
    if spec.discount_rates.is_empty() {
        push("discount_rates", "at least one agent is required".into());
    }
    for (i, rho) in spec.discount_rates.iter().enumerate() {
        if !(*rho >= 0.0 && rho.is_finite()) {
            push(
                "discount_rates",
                format!("discount rate rho_{} must be nonnegative, got {rho}", i + 1),
            );
        }
    }
    if !(market.mu > market.nu) {
        push("mu", "mu must exceed nu".into());
    }
    if !market.nu.is_finite() || !market.mu.is_finite() {
        push("market", "market rates must be finite".into());
    }
    if !(market.sigma > 0.0 && market.sigma.is_finite()) {
        push("sigma", "sigma must be positive".into());
    }
    out
}

/// Which power of sigma divides the risk-premium term in the branch-one
/// well-posedness inequality. `Sigma` is the inequality as stated;
/// `SigmaSquared` matches the `(mu-nu)^2 / (2 gamma sigma^2)` drift term used
/// by every solver. Neither is asserted as ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum A1Denominator {
    Sigma,
    SigmaSquared,
}

/// Which sufficient condition for well-posedness of the equilibrium ODE
/// holds. The two branches are checked independently and may both hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum A1Branch {
    Neither,
    BranchOne,
    BranchTwo,
    Both,
}

/// Result of the well-posedness classification.
#[derive(Debug, Clone, PartialEq)]
pub struct A1Status {
    pub branch: A1Branch,
    pub detail: String,
}

impl A1Status {
    /// True iff at least one branch holds.
    pub fn holds(&self) -> bool {
        self.branch != A1Branch::Neither
    }

    pub fn branch_one(&self) -> bool {
        matches!(self.branch, A1Branch::BranchOne | A1Branch::Both)
    }

    pub fn branch_two(&self) -> bool {
        matches!(self.branch, A1Branch::BranchTwo | A1Branch::Both)
    }
}

/// Classifies the sufficient condition with the bound as stated
/// (denominator `2 gamma sigma`).
///
/// Branch one: `gamma` in (0,1) and `max_i rho_i <= alpha nu +
/// (mu-nu)^2 / (2 gamma sigma)`. Branch two: `gamma >= 1 - alpha`.
/// The condition is sufficient only; solvers proceed regardless and monitor
/// positivity at runtime.
pub fn classify_a1(spec: &CoalitionSpec, market: &MarketParams) -> A1Status {
    classify_a1_with(spec, market, A1Denominator::Sigma)
}

/// [`classify_a1`] with an explicit choice of the branch-one denominator.
pub fn classify_a1_with(
    spec: &CoalitionSpec,
    market: &MarketParams,
    denominator: A1Denominator,
) -> A1Status {
    let max_rho = spec
        .discount_rates
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let denom = match denominator {
        A1Denominator::Sigma => market.sigma,
        A1Denominator::SigmaSquared => market.sigma * market.sigma,
    };
    let threshold = spec.alpha * market.nu + market.risk_premium().powi(2) / (2.0 * spec.gamma * denom);
    let gamma_ok = spec.gamma > 0.0 && spec.gamma < 1.0;
    let one = gamma_ok && max_rho <= threshold;
    let two = gamma_ok && spec.gamma >= 1.0 - spec.alpha;
    let branch = match (one, two) {
        (true, true) => A1Branch::Both,
        (true, false) => A1Branch::BranchOne,
        (false, true) => A1Branch::BranchTwo,
        (false, false) => A1Branch::Neither,
    };
    let detail = format!(
        "branch one: max rho = {max_rho} vs threshold {threshold} ({}) -> {}; \
         branch two: gamma = {} vs 1 - alpha = {} -> {}",
        match denominator {
            A1Denominator::Sigma => "denominator 2*gamma*sigma",
            A1Denominator::SigmaSquared => "denominator 2*gamma*sigma^2",
        },
        if one { "holds" } else { "fails" },
        spec.gamma,
        1.0 - spec.alpha,
        if two { "holds" } else { "fails" },
    );
    A1Status { branch, detail }
}

/// Uniform grid `t0 = s_0 < s_1 < ... < s_n = t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Panics if `n_steps == 0` or the span is empty or not finite.
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Self {
        assert!(n_steps >= 1, "n_steps must be positive");
        assert!(
            t_end > t0 && t0.is_finite() && t_end.is_finite(),
            "grid span must be nonempty and finite, got [{t0}, {t_end}]"
        );
        let n = n_steps as f64;
        let nodes = (0..=n_steps)
            .map(|k| (t0 * (n - k as f64) + t_end * k as f64) / n)
            .collect();
        Self {
            t0,
            t_end,
            n_steps,
            nodes,
        }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t_end
    }

    /// Same span with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid::new(self.t0, self.t_end, self.n_steps * factor)
    }

    /// Index of the step interval containing `t`, and the offset of `t` into
    /// that interval as a fraction of `dt`. `t == t_end` maps to the last
    /// interval with fraction 1.
    pub(crate) fn locate(&self, t: f64) -> (usize, f64) {
        debug_assert!(self.contains(t), "t = {t} outside grid span");
        let raw = ((t - self.t0) / self.dt()).floor();
        let k = (raw as usize).min(self.n_steps - 1);
        let s = (t - self.nodes[k]) / self.dt();
        (k, s.clamp(0.0, 1.0))
    }

    /// Index of the node exactly at `t`, if there is one.
    pub(crate) fn node_index(&self, t: f64) -> Option<usize> {
        let k = (((t - self.t0) / self.dt()).round() as usize).min(self.n_steps);
        (self.nodes[k] == t).then_some(k)
    }
}

/// A feedback strategy: per-agent investment and consumption fractions of
/// coalition wealth as functions of time.
pub trait Strategy {
    fn n_agents(&self) -> usize;

    /// Writes `pi_i(t)` for every agent into `out`.
    fn investment(&self, t: f64, out: &mut [f64]);

    /// Writes `c_i(t)` for every agent into `out`.
    fn consumption(&self, t: f64, out: &mut [f64]);

    fn total_investment(&self, t: f64) -> f64 {
        let mut buf = vec![0.0; self.n_agents()];
        self.investment(t, &mut buf);
        buf.iter().sum()
    }

    fn total_consumption(&self, t: f64) -> f64 {
        let mut buf = vec![0.0; self.n_agents()];
        self.consumption(t, &mut buf);
        buf.iter().sum()
    }
}

impl<S: Strategy + ?Sized> Strategy for &S {
    fn n_agents(&self) -> usize {
        (**self).n_agents()
    }
    fn investment(&self, t: f64, out: &mut [f64]) {
        (**self).investment(t, out)
    }
    fn consumption(&self, t: f64, out: &mut [f64]) {
        (**self).consumption(t, out)
    }
}

/// How sampled strategy values are read between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Right-continuous: the value on `[s_k, s_{k+1})` is the node-`k` value.
    PiecewiseConstant,
    PiecewiseLinear,
}

/// Strategy stored as per-node samples on a [`TimeGrid`] with a declared
/// interpolation. Values must be finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    grid: TimeGrid,
    interpolation: Interpolation,
    n_agents: usize,
    /// Row-major `(n_steps + 1) x n_agents`.
    investment: Vec<f64>,
    consumption: Vec<f64>,
}

impl StrategyProfile {
    /// Builds from explicit node samples, row-major `(n_steps+1) x n_agents`.
    pub fn from_samples(
        grid: TimeGrid,
        interpolation: Interpolation,
        n_agents: usize,
        investment: Vec<f64>,
        consumption: Vec<f64>,
    ) -> Self {
        let expected = (grid.n_steps() + 1) * n_agents;
        assert_eq!(investment.len(), expected, "investment sample count");
        assert_eq!(consumption.len(), expected, "consumption sample count");
        Self {
            grid,
            interpolation,
            n_agents,
            investment,
            consumption,
        }
    }

    /// Constant-in-time profile with per-agent values.
    pub fn constant(grid: TimeGrid, investment: &[f64], consumption: &[f64]) -> Self {
        assert_eq!(investment.len(), consumption.len());
        let n_agents = investment.len();
        let rows = grid.n_steps() + 1;
        Self {
            grid,
            interpolation: Interpolation::PiecewiseConstant,
            n_agents,
            investment: investment.repeat(rows),
            consumption: consumption.repeat(rows),
        }
    }

    /// All-zero strategy (no investment, no consumption).
    pub fn zero(grid: TimeGrid, n_agents: usize) -> Self {
        Self::constant(grid, &vec![0.0; n_agents], &vec![0.0; n_agents])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Every violated admissibility requirement (finite, nonnegative).
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, values) in [("investment", &self.investment), ("consumption", &self.consumption)]
        {
            if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                out.push(Violation {
                    field: name,
                    message: format!("{name} values must be finite and nonnegative, got {bad}"),
                });
            }
        }
        out
    }

    fn read(&self, table: &[f64], t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_agents);
        let (k, s) = self.grid.locate(t);
        let row = |r: usize| &table[r * self.n_agents..(r + 1) * self.n_agents];
        match self.interpolation {
            Interpolation::PiecewiseConstant => {
                let r = if s >= 1.0 { k + 1 } else { k };
                out.copy_from_slice(row(r));
            }
            Interpolation::PiecewiseLinear => {
                let (lo, hi) = (row(k), row(k + 1));
                for i in 0..self.n_agents {
                    out[i] = lo[i] + s * (hi[i] - lo[i]);
                }
            }
        }
    }
}

impl Strategy for StrategyProfile {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn investment(&self, t: f64, out: &mut [f64]) {
        self.read(&self.investment, t, out);
    }

    fn consumption(&self, t: f64, out: &mut [f64]) {
        self.read(&self.consumption, t, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> (CoalitionSpec, MarketParams) {
        (
            CoalitionSpec::new(0.1, 0.3, 1.0, vec![0.01, 0.2]),
            MarketParams::new(0.02, 0.08, 0.15),
        )
    }

    fn fig2() -> (CoalitionSpec, MarketParams) {
        (
            CoalitionSpec::new(0.8, 0.25, 1.0, vec![0.0, 0.18]),
            MarketParams::new(0.1, 0.2, 0.05),
        )
    }

    #[test]
    fn validate_accepts_good_inputs() {
        let spec = CoalitionSpec::new(0.5, 0.5, 1.0, vec![0.01]);
        let market = MarketParams::new(0.02, 0.08, 0.15);
        assert!(validate(&spec, &market).is_empty());
    }

    #[test]
    fn validate_rejects_gamma_boundary() {
        let spec = CoalitionSpec::new(1.0, 0.5, 1.0, vec![0.01]);
        let market = MarketParams::new(0.02, 0.08, 0.15);
        let violations = validate(&spec, &market);
        assert!(violations.iter().any(|v| v.message == "gamma must lie in (0,1)"));
    }

    #[test]
    fn validate_rejects_zero_sigma() {
        let spec = CoalitionSpec::new(0.5, 0.5, 1.0, vec![0.01]);
        let market = MarketParams::new(0.02, 0.08, 0.0);
        let violations = validate(&spec, &market);
        assert!(violations.iter().any(|v| v.message == "sigma must be positive"));
    }

    #[test]
    fn validate_is_pure() {
        let spec = CoalitionSpec::new(2.0, -0.5, -1.0, vec![-0.1]);
        let market = MarketParams::new(0.05, 0.02, -1.0);
        assert_eq!(validate(&spec, &market), validate(&spec, &market));
    }

    #[test]
    fn a1_fig2_is_branch_two() {
        let (spec, market) = fig2();
        let status = classify_a1(&spec, &market);
        assert!(status.branch_two(), "{}", status.detail);
    }

    #[test]
    fn a1_fig1_is_neither_as_stated() {
        // threshold as stated: 0.3*0.02 + 0.06^2/(2*0.1*0.15) = 0.126 < 0.2
        let (spec, market) = fig1();
        let status = classify_a1(&spec, &market);
        assert_eq!(status.branch, A1Branch::Neither, "{}", status.detail);
    }

    #[test]
    fn a1_fig1_branch_one_with_variance_denominator() {
        // 0.3*0.02 + 0.06^2/(2*0.1*0.15^2) = 0.806 >= 0.2
        let (spec, market) = fig1();
        let status = classify_a1_with(&spec, &market, A1Denominator::SigmaSquared);
        assert!(status.branch_one(), "{}", status.detail);
    }

    #[test]
    fn a1_zero_rho_always_branch_one() {
        let market = MarketParams::new(0.02, 0.08, 0.15);
        for gamma in [0.05, 0.3, 0.6, 0.95] {
            let spec = CoalitionSpec::new(gamma, 0.3, 1.0, vec![0.0, 0.0]);
            assert!(classify_a1(&spec, &market).branch_one());
        }
    }

    #[test]
    fn a1_both_branches_can_hold() {
        let (spec, market) = fig2();
        let spec = CoalitionSpec::new(spec.gamma, spec.alpha, 1.0, vec![0.0]);
        assert_eq!(classify_a1(&spec, &market).branch, A1Branch::Both);
    }

    #[test]
    fn time_grid_nodes_are_uniform_and_exact() {
        let grid = TimeGrid::new(0.0, 1.0, 1000);
        assert_eq!(grid.node(0), 0.0);
        assert_eq!(grid.node(1000), 1.0);
        let dt = grid.dt();
        for w in grid.nodes().windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - dt).abs() < 1e-15);
        }
    }

    #[test]
    fn piecewise_constant_is_right_continuous() {
        let grid = TimeGrid::new(0.0, 1.0, 2);
        let profile = StrategyProfile::from_samples(
            grid,
            Interpolation::PiecewiseConstant,
            1,
            vec![1.0, 2.0, 3.0],
            vec![10.0, 20.0, 30.0],
        );
        let mut out = [0.0];
        profile.investment(0.0, &mut out);
        assert_eq!(out[0], 1.0);
        profile.investment(0.25, &mut out);
        assert_eq!(out[0], 1.0);
        profile.investment(0.5, &mut out);
        assert_eq!(out[0], 2.0);
        profile.investment(1.0, &mut out);
        assert_eq!(out[0], 3.0);
        profile.consumption(0.75, &mut out);
        assert_eq!(out[0], 20.0);
    }

    #[test]
    fn piecewise_linear_interpolates() {
        let grid = TimeGrid::new(0.0, 1.0, 2);
        let profile = StrategyProfile::from_samples(
            grid,
            Interpolation::PiecewiseLinear,
            1,
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 4.0],
        );
        let mut out = [0.0];
        profile.investment(0.25, &mut out);
        assert!((out[0] - 0.5).abs() < 1e-15);
        profile.consumption(0.75, &mut out);
        assert!((out[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn strategy_profile_validate_flags_negative() {
        let grid = TimeGrid::new(0.0, 1.0, 1);
        let profile = StrategyProfile::from_samples(
            grid,
            Interpolation::PiecewiseConstant,
            1,
            vec![0.5, -0.5],
            vec![0.0, 0.0],
        );
        assert_eq!(profile.validate().len(), 1);
    }

    #[test]
    fn strategy_evaluation_is_finite_nonnegative_across_span() {
        let grid = TimeGrid::new(0.0, 1.0, 7);
        let rows = 8;
        let inv: Vec<f64> = (0..rows).map(|k| k as f64 * 0.3).collect();
        let cons: Vec<f64> = (0..rows).map(|k| (rows - k) as f64 * 0.1).collect();
        for interp in [Interpolation::PiecewiseConstant, Interpolation::PiecewiseLinear] {
            let p = StrategyProfile::from_samples(grid.clone(), interp, 1, inv.clone(), cons.clone());
            assert!(p.validate().is_empty());
            let mut out = [0.0];
            for j in 0..=100 {
                let t = j as f64 / 100.0;
                p.investment(t, &mut out);
                assert!(out[0].is_finite() && out[0] >= 0.0);
                p.consumption(t, &mut out);
                assert!(out[0].is_finite() && out[0] >= 0.0);
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Raising any discount rate never turns branch one from false to true.
            #[test]
            fn a1_branch_one_monotone_in_rho(
                gamma in 0.05f64..0.95,
                alpha in 0.05f64..0.95,
                rho in 0.0f64..1.0,
                bump in 0.0f64..1.0,
            ) {
                let market = MarketParams::new(0.02, 0.08, 0.15);
                let lo = CoalitionSpec::new(gamma, alpha, 1.0, vec![rho]);
                let hi = CoalitionSpec::new(gamma, alpha, 1.0, vec![rho + bump]);
                let before = classify_a1(&lo, &market).branch_one();
                let after = classify_a1(&hi, &market).branch_one();
                prop_assert!(!(after && !before));
            }
        }
    }
}
