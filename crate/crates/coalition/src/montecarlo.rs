//! Seeded simulation of the coalition wealth SDE under a feedback strategy,
//! and direct-expectation validation of the value-factor representation of
//! recursive utility.
//!
//! The wealth process follows
//! `dX = [nu X + (mu-nu) P(t) X - C(t) X] dt + sigma P(t) X dW` with `P` and
//! `C` the strategy's total investment and consumption fractions. With
//! deterministic feedback fractions the solution is exactly lognormal between
//! grid nodes, which the default `ExactLog` scheme exploits; Euler-Maruyama
//! is kept as an independent discretization.
//!
//! Paths are embarrassingly parallel. Every random draw is a pure function of
//! `(seed, path, step)` and the final reductions run in path-index order, so
//! results are bitwise identical for any thread count.

use rayon::prelude::*;

use crate::model::{CoalitionSpec, MarketParams, Strategy, TimeGrid};
use crate::recursive_utility::{theta_for_strategy, utility_value, ThetaSystem};
use crate::rng::PathRng;
use crate::{Error, Result};

/// Discretization of the wealth SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Samples the exact lognormal node-to-node transition; the deterministic
    /// log-drift integral and the noise variance `sigma^2 int P^2` are
    /// computed by the trapezoid rule on the step endpoints.
    ExactLog,
    /// Standard explicit scheme on the SDE itself. May produce nonpositive
    /// wealth; such paths are frozen and flagged.
    EulerMaruyama,
}

/// A seeded ensemble of simulated wealth paths on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    grid: TimeGrid,
    x0: f64,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
    /// Row-major `n_paths x (n_steps + 1)`.
    values: Vec<f64>,
    /// Paths that reached nonpositive wealth (Euler-Maruyama only), ascending.
    dead_paths: Vec<usize>,
}

impl PathSet {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Wealth of one path at one node.
    pub fn wealth(&self, path: usize, node: usize) -> f64 {
        self.path(path)[node]
    }

    /// All node values of one path.
    pub fn path(&self, path: usize) -> &[f64] {
        let nodes = self.grid.n_steps() + 1;
        &self.values[path * nodes..(path + 1) * nodes]
    }

    /// Indices of paths that hit nonpositive wealth.
    pub fn dead_paths(&self) -> &[usize] {
        &self.dead_paths
    }

    /// Mean and standard error of the terminal wealth over live paths.
    pub fn terminal_mean_and_se(&self) -> (f64, f64) {
        let nodes = self.grid.n_steps() + 1;
        let live: Vec<f64> = (0..self.n_paths)
            .filter(|p| !self.dead_paths.binary_search(p).is_ok())
            .map(|p| self.values[p * nodes + nodes - 1])
            .collect();
        mean_and_se(&live)
    }
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    assert!(n >= 1, "empty sample");
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Simulates `n_paths` wealth paths under `strategy` from `X(t0) = x0`.
///
/// Returns [`Error::AllPathsDied`] if Euler-Maruyama drove every path to
/// nonpositive wealth; individual dead paths are only flagged.
pub fn simulate_wealth<S: Strategy + ?Sized>(
    market: &MarketParams,
    strategy: &S,
    x0: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathSet> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::Domain(format!("x0 must be positive, got {x0}")));
    }
    if n_paths == 0 {
        return Err(Error::Domain("n_paths must be positive".into()));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let n_agents = strategy.n_agents();

    // Node samples of the total fractions; the per-step deterministic
    // integrals below are trapezoid rules over these.
    let mut total_pi = vec![0.0; n + 1];
    let mut total_c = vec![0.0; n + 1];
    let mut buf = vec![0.0; n_agents];
    for (k, &t) in grid.nodes().iter().enumerate() {
        strategy.investment(t, &mut buf);
        total_pi[k] = buf.iter().sum();
        strategy.consumption(t, &mut buf);
        total_c[k] = buf.iter().sum();
    }

    let sigma = market.sigma;
    let log_drift = |k: usize| -> f64 {
        let q = |j: usize| {
            market.nu + market.risk_premium() * total_pi[j]
                - total_c[j]
                - 0.5 * sigma * sigma * total_pi[j] * total_pi[j]
        };
        0.5 * dt * (q(k) + q(k + 1))
    };
    let log_vol = |k: usize| -> f64 {
        (sigma * sigma * 0.5 * dt * (total_pi[k] * total_pi[k] + total_pi[k + 1] * total_pi[k + 1]))
            .sqrt()
    };

    let nodes = n + 1;
    let mut values = vec![0.0; n_paths * nodes];
    let mut dead = vec![false; n_paths];

    match scheme {
        Scheme::ExactLog => {
            let drifts: Vec<f64> = (0..n).map(log_drift).collect();
            let vols: Vec<f64> = (0..n).map(log_vol).collect();
            values
                .par_chunks_mut(nodes)
                .enumerate()
                .for_each(|(p, row)| {
                    let rng = PathRng::new(seed, p as u64);
                    let mut log_x = x0.ln();
                    row[0] = x0;
                    for k in 0..n {
                        log_x += drifts[k] + vols[k] * rng.normal(k as u64);
                        row[k + 1] = log_x.exp();
                    }
                });
        }
        Scheme::EulerMaruyama => {
            let sqrt_dt = dt.sqrt();
            values
                .par_chunks_mut(nodes)
                .zip(dead.par_iter_mut())
                .enumerate()
                .for_each(|(p, (row, dead_flag))| {
                    let rng = PathRng::new(seed, p as u64);
                    let mut x = x0;
                    row[0] = x0;
                    for k in 0..n {
                        if !*dead_flag {
                            let drift =
                                market.nu + market.risk_premium() * total_pi[k] - total_c[k];
                            let diffusion = sigma * total_pi[k] * sqrt_dt * rng.normal(k as u64);
                            x *= 1.0 + drift * dt + diffusion;
                            if x <= 0.0 {
                                *dead_flag = true;
                            }
                        }
                        row[k + 1] = x;
                    }
                });
        }
    }
    let dead_paths: Vec<usize> = dead
        .iter()
        .enumerate()
        .filter_map(|(p, d)| d.then_some(p))
        .collect();
    if dead_paths.len() == n_paths {
        return Err(Error::AllPathsDied(n_paths));
    }
    Ok(PathSet {
        grid: grid.clone(),
        x0,
        n_paths,
        seed,
        scheme,
        values,
        dead_paths,
    })
}

/// Per-agent comparison of a Monte Carlo utility estimate with its
/// value-factor prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentUtilityCheck {
    pub mc_estimate: f64,
    pub analytic: f64,
    pub abs_difference: f64,
    pub std_error: f64,
    /// `abs_difference / std_error`; zero ensemble dispersion reports 0 when
    /// the difference is exactly zero and infinity otherwise.
    pub z_score: f64,
}

impl AgentUtilityCheck {
    fn new(mc_estimate: f64, analytic: f64, std_error: f64) -> Self {
        let abs_difference = (mc_estimate - analytic).abs();
        let z_score = if std_error > 0.0 {
            abs_difference / std_error
        } else if abs_difference == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            mc_estimate,
            analytic,
            abs_difference,
            std_error,
            z_score,
        }
    }

    /// Statistical agreement, with an absolute floor for deterministic
    /// ensembles whose standard error vanishes.
    pub fn agrees(&self, z_max: f64, atol: f64) -> bool {
        self.z_score <= z_max || self.abs_difference <= atol * self.analytic.abs().max(1.0)
    }
}

/// Per-agent outcome of [`check_utility_representation`].
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityCheckReport {
    pub agents: Vec<AgentUtilityCheck>,
    /// Paths entering the ensemble (dead paths are excluded).
    pub n_paths_used: usize,
    pub excluded_paths: usize,
}

impl UtilityCheckReport {
    pub fn max_z(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.z_score)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_agree(&self, z_max: f64, atol: f64) -> bool {
        self.agents.iter().all(|a| a.agrees(z_max, atol))
    }
}

/// Validates `Y_i(t0) = theta_i(t0) x0^{1-g}/(1-g)` by direct expectation:
/// along each path the running reward `g_i(c_i X, Y_i)` with
/// `Y_i = theta_i X^{1-g}/(1-g)` is integrated by the trapezoid rule over the
/// grid nodes, the terminal reward `X(T)^{1-g}/(1-g)` is added, and the path
/// average is compared with the value-factor prediction.
///
/// `theta` must be solved for the same `(spec, strategy)` and on the same
/// grid as `paths`.
pub fn check_utility_representation<S: Strategy + ?Sized>(
    spec: &CoalitionSpec,
    market: &MarketParams,
    strategy: &S,
    theta: &ThetaSystem,
    paths: &PathSet,
) -> Result<UtilityCheckReport> {
    let _ = market;
    if theta.grid() != paths.grid() {
        return Err(Error::GridMismatch);
    }
    let n_agents = spec.n_agents();
    if theta.n_agents() != n_agents || strategy.n_agents() != n_agents {
        return Err(Error::DimensionMismatch {
            expected: n_agents,
            got: theta.n_agents(),
        });
    }
    let grid = paths.grid();
    let n = grid.n_steps();
    let g = spec.gamma;
    let a = spec.alpha;

    // Path-independent nodal weights: g_i(c_i X, theta_i X^{1-g}/(1-g))
    // factors as X^{1-g} w_i with
    // w_i = [c_i^a theta_i^{(1-g-a)/(1-g)} - rho_i theta_i] / a.
    let source_exp = (1.0 - g - a) / (1.0 - g);
    let mut weights = vec![0.0; (n + 1) * n_agents];
    let mut c_buf = vec![0.0; n_agents];
    for (k, &t) in grid.nodes().iter().enumerate() {
        strategy.consumption(t, &mut c_buf);
        for i in 0..n_agents {
            let th = theta.node_theta(i, k);
            weights[k * n_agents + i] =
                (c_buf[i].powf(a) * th.powf(source_exp) - spec.discount_rates[i] * th) / a;
        }
    }
    // Trapezoid node coefficients.
    let dt = grid.dt();
    let trap = |k: usize| if k == 0 || k == n { 0.5 * dt } else { dt };

    let nodes = n + 1;
    let mut totals = vec![0.0; paths.n_paths() * n_agents];
    totals
        .par_chunks_mut(n_agents)
        .enumerate()
        .for_each(|(p, out)| {
            let row = paths.path(p);
            for k in 0..=n {
                let x_pow = row[k].powf(1.0 - g);
                let w = trap(k);
                for i in 0..n_agents {
                    out[i] += w * x_pow * weights[k * n_agents + i];
                }
            }
            let terminal = row[nodes - 1].powf(1.0 - g) / (1.0 - g);
            for item in out.iter_mut() {
                *item += terminal;
            }
        });

    let dead = paths.dead_paths();
    let mut agents = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let samples: Vec<f64> = (0..paths.n_paths())
            .filter(|p| dead.binary_search(p).is_err())
            .map(|p| totals[p * n_agents + i])
            .collect();
        let (mean, se) = mean_and_se(&samples);
        let analytic = utility_value(theta.node_theta(i, 0), paths.x0(), g)?;
        agents.push(AgentUtilityCheck::new(mean, analytic, se));
    }
    Ok(UtilityCheckReport {
        agents,
        n_paths_used: paths.n_paths() - dead.len(),
        excluded_paths: dead.len(),
    })
}

/// Per-agent outcome of [`crra_expectation_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrraExpectationReport {
    pub agents: Vec<AgentUtilityCheck>,
    pub n_paths_used: usize,
    pub excluded_paths: usize,
}

impl CrraExpectationReport {
    pub fn max_z(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.z_score)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_agree(&self, z_max: f64, atol: f64) -> bool {
        self.agents.iter().all(|a| a.agrees(z_max, atol))
    }
}

/// In the additively separable case `gamma = 1 - alpha` (exact equality
/// required), evaluates the discounted CRRA expected utility
/// `a^{-1} E[int e^{-rho_i (r-t0)} (c_i X)^a dr + e^{-rho_i (T-t0)} X(T)^a]`
/// directly by Monte Carlo and compares it with the value-factor prediction
/// for the same strategy; both estimate the same quantity.
///
/// The discount rate is `rho_i`, the linear-in-utility coefficient of the
/// aggregator at `gamma = 1 - alpha`; no other rate makes the two sides equal.
pub fn crra_expectation_check<S: Strategy + ?Sized>(
    spec: &CoalitionSpec,
    market: &MarketParams,
    strategy: &S,
    paths: &PathSet,
) -> Result<CrraExpectationReport> {
    if !spec.is_crra() {
        return Err(Error::NotCrra {
            gamma: spec.gamma,
            one_minus_alpha: 1.0 - spec.alpha,
        });
    }
    let theta = theta_for_strategy(spec, market, strategy, paths.grid())?;
    let n_agents = spec.n_agents();
    let grid = paths.grid();
    let n = grid.n_steps();
    let a = spec.alpha;
    let t0 = grid.t0();

    // Discounted consumption weights e^{-rho_i (t-t0)} c_i(t)^a / a.
    let mut weights = vec![0.0; (n + 1) * n_agents];
    let mut c_buf = vec![0.0; n_agents];
    for (k, &t) in grid.nodes().iter().enumerate() {
        strategy.consumption(t, &mut c_buf);
        for i in 0..n_agents {
            let disc = (-spec.discount_rates[i] * (t - t0)).exp();
            weights[k * n_agents + i] = disc * c_buf[i].powf(a) / a;
        }
    }
    let terminal_disc: Vec<f64> = (0..n_agents)
        .map(|i| (-spec.discount_rates[i] * (grid.t_end() - t0)).exp() / a)
        .collect();
    let dt = grid.dt();
    let trap = |k: usize| if k == 0 || k == n { 0.5 * dt } else { dt };

    let nodes = n + 1;
    let mut totals = vec![0.0; paths.n_paths() * n_agents];
    totals
        .par_chunks_mut(n_agents)
        .enumerate()
        .for_each(|(p, out)| {
            let row = paths.path(p);
            for k in 0..=n {
                let x_pow = row[k].powf(a);
                let w = trap(k);
                for i in 0..n_agents {
                    out[i] += w * x_pow * weights[k * n_agents + i];
                }
            }
            let x_term = row[nodes - 1].powf(a);
            for (i, item) in out.iter_mut().enumerate() {
                *item += terminal_disc[i] * x_term;
            }
        });

    let dead = paths.dead_paths();
    let mut agents = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let samples: Vec<f64> = (0..paths.n_paths())
            .filter(|p| dead.binary_search(p).is_err())
            .map(|p| totals[p * n_agents + i])
            .collect();
        let (mean, se) = mean_and_se(&samples);
        let analytic = utility_value(theta.node_theta(i, 0), paths.x0(), spec.gamma)?;
        agents.push(AgentUtilityCheck::new(mean, analytic, se));
    }
    Ok(CrraExpectationReport {
        agents,
        n_paths_used: paths.n_paths() - dead.len(),
        excluded_paths: dead.len(),
    })
}
