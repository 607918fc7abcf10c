//! Baselines against which the coalition equilibrium is compared: the
//! one-agent optimal strategy, the pre-committed CRRA strategy anchored at a
//! fixed time, and the CRRA specialization of the equilibrium.
//!
//! The one-agent value-factor ODE exists in two forms that differ by one
//! power of theta in the nonlinear term. `Derived` is the single-agent
//! specialization of the coalition equilibrium system (nonlinear exponent
//! `1 - a/((1-a)(1-g))`); `AsPrinted` keeps the exponent
//! `-a/((1-a)(1-g))`. Both are retained and adjudicated against a Monte
//! Carlo evaluation of the utility they claim to represent.

use crate::equilibrium::{solve_equilibrium, EquilibriumSolution};
use crate::model::{CoalitionSpec, MarketParams, Strategy, TimeGrid};
use crate::montecarlo::{
    check_utility_representation, simulate_wealth, Scheme, UtilityCheckReport,
};
use crate::ode::{integrate_terminal, Trajectory, VectorField};
use crate::recursive_utility::{as_positivity_loss, check_inputs, Provenance, ThetaSystem};
use crate::{Error, Result};

/// Exponent of theta in the optimal consumption rule
/// `c*(t) = theta(t)^{-a/((1-a)(1-g))}`.
pub(crate) fn consumption_power(gamma: f64, alpha: f64) -> f64 {
    -alpha / ((1.0 - alpha) * (1.0 - gamma))
}

/// Which one-agent value-factor ODE to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneAgentForm {
    /// Single-agent specialization of the equilibrium system; consistent with
    /// the value-factor representation of utility.
    Derived,
    /// Nonlinear term with one power of theta fewer.
    AsPrinted,
}

struct OneAgentField {
    gamma: f64,
    alpha: f64,
    rho: f64,
    merton_drift: f64,
    nonlinear_exponent: f64,
}

impl VectorField for OneAgentField {
    fn dimension(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, theta: &[f64], out: &mut [f64]) {
        let g = self.gamma;
        let a = self.alpha;
        let th = theta[0];
        let linear = (1.0 - g) * th * self.merton_drift - (1.0 - g) * self.rho / a * th;
        let nonlinear = (1.0 / a - 1.0) * (1.0 - g) * th.powf(self.nonlinear_exponent);
        out[0] = -(linear + nonlinear);
    }
}

/// One-agent optimal investment-consumption solution.
#[derive(Debug, Clone, PartialEq)]
pub struct OneAgentSolution {
    theta: ThetaSystem,
    market: MarketParams,
    form: OneAgentForm,
}

impl OneAgentSolution {
    pub fn theta(&self) -> &ThetaSystem {
        &self.theta
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    pub fn form(&self) -> OneAgentForm {
        self.form
    }

    pub fn rho(&self) -> f64 {
        self.theta.spec().discount_rates[0]
    }

    pub fn grid(&self) -> &TimeGrid {
        self.theta.grid()
    }

    /// Constant optimal investment fraction `(mu-nu)/(gamma sigma^2)`.
    pub fn pi_star(&self) -> f64 {
        self.market.merton_fraction(self.theta.spec().gamma)
    }

    /// Optimal consumption fraction `c*(t) = theta(t)^{-a/((1-a)(1-g))}`.
    pub fn c_star(&self, t: f64) -> f64 {
        let spec = self.theta.spec();
        self.theta
            .theta(0, t)
            .powf(consumption_power(spec.gamma, spec.alpha))
    }

    /// Feedback view of the solution.
    pub fn strategy(&self) -> OneAgentStrategy<'_> {
        OneAgentStrategy { solution: self }
    }
}

/// [`Strategy`] view of a [`OneAgentSolution`].
#[derive(Debug, Clone, Copy)]
pub struct OneAgentStrategy<'a> {
    solution: &'a OneAgentSolution,
}

impl Strategy for OneAgentStrategy<'_> {
    fn n_agents(&self) -> usize {
        1
    }

    fn investment(&self, _t: f64, out: &mut [f64]) {
        out[0] = self.solution.pi_star();
    }

    fn consumption(&self, t: f64, out: &mut [f64]) {
        out[0] = self.solution.c_star(t);
    }
}

/// Solves the one-agent value-factor ODE backward from `theta(T) = 1` in the
/// requested form and attaches the consumption rule.
pub fn solve_one_agent(
    gamma: f64,
    alpha: f64,
    rho: f64,
    market: &MarketParams,
    grid: &TimeGrid,
    form: OneAgentForm,
) -> Result<OneAgentSolution> {
    let spec = CoalitionSpec::new(gamma, alpha, grid.t_end(), vec![rho]);
    check_inputs(&spec, market, 1)?;
    let base_exponent = consumption_power(gamma, alpha);
    let field = OneAgentField {
        gamma,
        alpha,
        rho,
        merton_drift: market.merton_drift(gamma),
        nonlinear_exponent: match form {
            OneAgentForm::Derived => 1.0 + base_exponent,
            OneAgentForm::AsPrinted => base_exponent,
        },
    };
    let trajectory = integrate_terminal(&field, &[1.0], grid).map_err(as_positivity_loss)?;
    let theta = ThetaSystem::from_trajectory(trajectory, spec, Provenance::OneAgent)?;
    Ok(OneAgentSolution {
        theta,
        market: *market,
        form,
    })
}

/// Monte Carlo adjudication of a one-agent solution: simulates the wealth
/// under `(pi*, c*)` on `grid` and checks the value-factor representation of
/// the utility by direct expectation. The solution's ODE form is re-solved on
/// `grid` so the factors, the strategy, and the paths share one grid.
///
/// A `Derived` solution satisfies the representation up to Monte Carlo noise;
/// the `AsPrinted` discrepancy is what the report records.
pub fn one_agent_mc_oracle(
    solution: &OneAgentSolution,
    x0: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<UtilityCheckReport> {
    let spec = solution.theta.spec().clone();
    let on_grid = solve_one_agent(
        spec.gamma,
        spec.alpha,
        solution.rho(),
        &solution.market,
        grid,
        solution.form,
    )?;
    let strategy = on_grid.strategy();
    let paths = simulate_wealth(
        &solution.market,
        &strategy,
        x0,
        grid,
        n_paths,
        seed,
        Scheme::ExactLog,
    )?;
    check_utility_representation(&spec, &solution.market, &strategy, on_grid.theta(), &paths)
}

/// Pre-committed CRRA solution anchored at a fixed decision time: optimal for
/// the objective frozen at the anchor, and in general abandoned by later
/// selves.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecommittedSolution {
    spec: CoalitionSpec,
    market: MarketParams,
    anchor: f64,
    theta: Trajectory,
}

impl PrecommittedSolution {
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn grid(&self) -> &TimeGrid {
        self.theta.grid()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::PrecommittedCrra
    }

    /// The scalar factor `theta^t(s)` on `[anchor, T]`.
    pub fn theta_value(&self, s: f64) -> f64 {
        self.theta.eval_component(0, s)
    }

    /// Pre-committed consumption fraction
    /// `c_i(s) = (N theta^t(s) e^{a rho_i (s - anchor)})^{1/(a-1)}`.
    pub fn consumption(&self, agent: usize, s: f64) -> f64 {
        let a = self.spec.alpha;
        let n = self.spec.n_agents() as f64;
        let rho = self.spec.discount_rates[agent];
        (n * self.theta_value(s) * (a * rho * (s - self.anchor)).exp()).powf(1.0 / (a - 1.0))
    }

    /// Constant total investment fraction `(mu-nu)/((1-a) sigma^2)`.
    pub fn total_investment(&self) -> f64 {
        self.market.risk_premium() / ((1.0 - self.spec.alpha) * self.market.sigma * self.market.sigma)
    }
}

struct PrecommittedField {
    alpha: f64,
    anchor: f64,
    rhos: Vec<f64>,
    linear_coeff: f64,
}

impl VectorField for PrecommittedField {
    fn dimension(&self) -> usize {
        1
    }

    fn eval(&self, s: f64, theta: &[f64], out: &mut [f64]) {
        let a = self.alpha;
        let n = self.rhos.len() as f64;
        let discount_sum: f64 = self
            .rhos
            .iter()
            .map(|rho| (a * rho * (s - self.anchor) / (a - 1.0)).exp())
            .sum();
        let nonlinear = (1.0 - a)
            * n.powf(1.0 / (a - 1.0))
            * discount_sum
            * theta[0].powf(a / (a - 1.0));
        out[0] = -(self.linear_coeff * theta[0] + nonlinear);
    }
}

/// Solves the anchored CRRA problem on `[anchor, T]` with `n_steps` uniform
/// steps. Requires `gamma == 1 - alpha` exactly and `anchor` in `[0, T)`.
pub fn solve_precommitted_crra(
    spec: &CoalitionSpec,
    market: &MarketParams,
    anchor: f64,
    n_steps: usize,
) -> Result<PrecommittedSolution> {
    check_inputs(spec, market, spec.n_agents())?;
    if !spec.is_crra() {
        return Err(Error::NotCrra {
            gamma: spec.gamma,
            one_minus_alpha: 1.0 - spec.alpha,
        });
    }
    if !(anchor >= 0.0 && anchor < spec.horizon) {
        return Err(Error::Domain(format!(
            "anchor {anchor} must lie in [0, {})",
            spec.horizon
        )));
    }
    let a = spec.alpha;
    let grid = TimeGrid::new(anchor, spec.horizon, n_steps);
    let field = PrecommittedField {
        alpha: a,
        anchor,
        rhos: spec.discount_rates.clone(),
        linear_coeff: a * market.risk_premium().powi(2)
            / (2.0 * (1.0 - a) * market.sigma * market.sigma),
    };
    let n = spec.n_agents() as f64;
    let terminal: f64 = spec
        .discount_rates
        .iter()
        .map(|rho| (-a * rho * (spec.horizon - anchor)).exp())
        .sum::<f64>()
        / n;
    let theta = integrate_terminal(&field, &[terminal], &grid).map_err(as_positivity_loss)?;
    for k in 0..=grid.n_steps() {
        if !(theta.state(k)[0] > 0.0) {
            return Err(Error::PositivityLoss {
                time: grid.node(k),
                component: 0,
                guidance: String::new(),
            });
        }
    }
    Ok(PrecommittedSolution {
        spec: spec.clone(),
        market: *market,
        anchor,
        theta,
    })
}

/// Equilibrium solution in the CRRA case together with the largest observed
/// spread between per-agent consumptions (which is zero up to rounding: the
/// CRRA equilibrium consumption is agent-independent).
#[derive(Debug, Clone, PartialEq)]
pub struct CrraEquilibrium {
    pub solution: EquilibriumSolution,
    pub max_consumption_spread: f64,
}

/// Solves the equilibrium under `gamma == 1 - alpha` (exact equality
/// required) and measures the agent-independence of consumption.
pub fn crra_equilibrium(
    spec: &CoalitionSpec,
    market: &MarketParams,
    grid: &TimeGrid,
) -> Result<CrraEquilibrium> {
    if !spec.is_crra() {
        return Err(Error::NotCrra {
            gamma: spec.gamma,
            one_minus_alpha: 1.0 - spec.alpha,
        });
    }
    let solution = solve_equilibrium(spec, market, grid)?;
    let mut spread = 0.0f64;
    let mut consumptions = vec![0.0; spec.n_agents()];
    for &t in grid.nodes() {
        solution.consumptions_at(t, &mut consumptions);
        for i in 0..spec.n_agents() {
            for j in (i + 1)..spec.n_agents() {
                spread = spread.max((consumptions[i] - consumptions[j]).abs());
            }
        }
    }
    Ok(CrraEquilibrium {
        solution,
        max_consumption_spread: spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1_market() -> MarketParams {
        MarketParams::new(0.02, 0.08, 0.15)
    }

    #[test]
    fn one_agent_consumption_monotone_in_rho() {
        let grid = TimeGrid::new(0.0, 1.0, 1000);
        let lo = solve_one_agent(0.1, 0.3, 0.01, &fig1_market(), &grid, OneAgentForm::Derived)
            .unwrap();
        let hi =
            solve_one_agent(0.1, 0.3, 0.2, &fig1_market(), &grid, OneAgentForm::Derived).unwrap();
        for &t in grid.nodes() {
            assert!(lo.c_star(t) <= hi.c_star(t) + 1e-12);
        }
    }

    #[test]
    fn forms_differ_measurably() {
        let grid = TimeGrid::new(0.0, 1.0, 500);
        let derived =
            solve_one_agent(0.1, 0.3, 0.01, &fig1_market(), &grid, OneAgentForm::Derived).unwrap();
        let printed = solve_one_agent(
            0.1,
            0.3,
            0.01,
            &fig1_market(),
            &grid,
            OneAgentForm::AsPrinted,
        )
        .unwrap();
        let gap = (derived.theta().node_theta(0, 0) - printed.theta().node_theta(0, 0)).abs();
        assert!(gap > 1e-2, "forms nearly coincide, gap {gap}");
    }

    #[test]
    fn derived_form_matches_single_agent_equilibrium() {
        let grid = TimeGrid::new(0.0, 1.0, 1000);
        let spec = CoalitionSpec::new(0.1, 0.3, 1.0, vec![0.05]);
        let eq = solve_equilibrium(&spec, &fig1_market(), &grid).unwrap();
        let one =
            solve_one_agent(0.1, 0.3, 0.05, &fig1_market(), &grid, OneAgentForm::Derived).unwrap();
        let mut worst = 0.0f64;
        for k in 0..=grid.n_steps() {
            worst = worst.max((eq.theta().node_theta(0, k) - one.theta().node_theta(0, k)).abs());
        }
        assert!(worst <= 1e-8, "worst theta deviation {worst}");
        for &t in grid.nodes() {
            assert!((eq.consumption(0, t) - one.c_star(t)).abs() <= 1e-8);
        }
    }

    #[test]
    fn mc_oracle_accepts_derived_form() {
        let market = MarketParams::new(0.02, 0.08, 0.15);
        let solve_grid = TimeGrid::new(0.0, 1.0, 400);
        let sol =
            solve_one_agent(0.5, 0.4, 0.05, &market, &solve_grid, OneAgentForm::Derived).unwrap();
        let mc_grid = TimeGrid::new(0.0, 1.0, 500);
        let report = one_agent_mc_oracle(&sol, 1.0, &mc_grid, 20_000, 21).unwrap();
        assert!(report.max_z() <= 3.0, "z = {}", report.max_z());
    }

    #[test]
    fn mc_oracle_exposes_as_printed_gap() {
        // At moderate volatility the printed form's deterministic gap
        // dominates the Monte Carlo noise.
        let market = MarketParams::new(0.02, 0.08, 0.15);
        let grid = TimeGrid::new(0.0, 1.0, 500);
        let derived =
            solve_one_agent(0.5, 0.4, 0.05, &market, &grid, OneAgentForm::Derived).unwrap();
        let printed =
            solve_one_agent(0.5, 0.4, 0.05, &market, &grid, OneAgentForm::AsPrinted).unwrap();
        let d = one_agent_mc_oracle(&derived, 1.0, &grid, 20_000, 33).unwrap();
        let p = one_agent_mc_oracle(&printed, 1.0, &grid, 20_000, 33).unwrap();
        assert!(
            p.agents[0].abs_difference > d.agents[0].abs_difference,
            "printed gap {} vs derived gap {}",
            p.agents[0].abs_difference,
            d.agents[0].abs_difference
        );
    }

    #[test]
    fn zero_consumption_sanity_matches_closed_form() {
        // c forced to 0, rho = 0: theta(t) = exp((1-g) M (T-t)) with
        // M = nu + (mu-nu)^2/(2 g sigma^2), and the utility is
        // E[X(T)^{1-g}]/(1-g).
        use crate::model::StrategyProfile;
        let market = MarketParams::new(0.02, 0.08, 0.15);
        let gamma = 0.5;
        let grid = TimeGrid::new(0.0, 1.0, 500);
        let pi = market.merton_fraction(gamma);
        let strategy = StrategyProfile::constant(grid.clone(), &[pi], &[0.0]);
        let paths =
            simulate_wealth(&market, &strategy, 1.0, &grid, 20_000, 17, Scheme::ExactLog).unwrap();
        let nodes = grid.n_steps();
        let samples: Vec<f64> = (0..paths.n_paths())
            .map(|p| paths.wealth(p, nodes).powf(1.0 - gamma) / (1.0 - gamma))
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (samples.len() - 1) as f64;
        let se = (var / samples.len() as f64).sqrt();
        let theta0 = ((1.0 - gamma) * market.merton_drift(gamma)).exp();
        let analytic = theta0 / (1.0 - gamma);
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "mean {mean}, analytic {analytic}, se {se}"
        );
    }

    #[test]
    fn precommitted_consumption_ratio_identity() {
        let spec = CoalitionSpec::new(0.5, 0.5, 1.0, vec![0.05, 0.3]);
        let market = fig1_market();
        let sol = solve_precommitted_crra(&spec, &market, 0.0, 500).unwrap();
        let a = spec.alpha;
        for &s in sol.grid().nodes() {
            let ratio = sol.consumption(0, s) / sol.consumption(1, s);
            let expected = (a * (spec.discount_rates[1] - spec.discount_rates[0]) * s
                / (1.0 - a))
                .exp();
            assert!(
                (ratio - expected).abs() <= 1e-8,
                "s = {s}: ratio {ratio} vs {expected}"
            );
        }
    }

    #[test]
    fn precommitted_symmetric_rates_are_agent_independent() {
        let spec = CoalitionSpec::new(0.5, 0.5, 1.0, vec![0.2, 0.2, 0.2]);
        let sol = solve_precommitted_crra(&spec, &fig1_market(), 0.25, 300).unwrap();
        for &s in sol.grid().nodes() {
            let c0 = sol.consumption(0, s);
            assert_eq!(sol.consumption(1, s), c0);
            assert_eq!(sol.consumption(2, s), c0);
        }
    }

    #[test]
    fn precommitted_plans_depend_on_the_anchor() {
        let spec = CoalitionSpec::new(0.5, 0.5, 1.0, vec![0.01, 0.4]);
        let market = fig1_market();
        let from_zero = solve_precommitted_crra(&spec, &market, 0.0, 1000).unwrap();
        let from_half = solve_precommitted_crra(&spec, &market, 0.5, 500).unwrap();
        let witness =
            (from_zero.consumption(0, 0.7) - from_half.consumption(0, 0.7)).abs();
        assert!(witness > 1e-4, "plans coincide, witness {witness}");
    }

    #[test]
    fn precommitted_requires_exact_crra() {
        let spec = CoalitionSpec::new(0.5 + 1e-9, 0.5, 1.0, vec![0.1]);
        assert!(matches!(
            solve_precommitted_crra(&spec, &fig1_market(), 0.0, 100),
            Err(Error::NotCrra { .. })
        ));
    }

    #[test]
    fn crra_equilibrium_consumption_is_agent_independent() {
        let spec = CoalitionSpec::new(0.5, 0.5, 1.0, vec![0.01, 0.2]);
        let grid = TimeGrid::new(0.0, 1.0, 1000);
        let crra = crra_equilibrium(&spec, &fig1_market(), &grid).unwrap();
        assert!(
            crra.max_consumption_spread <= 1e-10,
            "spread {}",
            crra.max_consumption_spread
        );
    }

    #[test]
    fn crra_equilibrium_single_agent_matches_one_agent_rule() {
        let spec = CoalitionSpec::new(0.5, 0.5, 1.0, vec![0.1]);
        let grid = TimeGrid::new(0.0, 1.0, 500);
        let crra = crra_equilibrium(&spec, &fig1_market(), &grid).unwrap();
        let one =
            solve_one_agent(0.5, 0.5, 0.1, &fig1_market(), &grid, OneAgentForm::Derived).unwrap();
        for &t in grid.nodes() {
            let from_eq = crra.solution.consumption(0, t);
            let theta = crra.solution.theta().theta(0, t);
            assert!((from_eq - theta.powf(1.0 / (spec.alpha - 1.0))).abs() < 1e-12);
            assert!((from_eq - one.c_star(t)).abs() < 1e-8);
        }
    }
}
