//! Fixed-step classical RK4 for terminal-value problems, with cubic-Hermite
//! dense output and a step-halving order estimator.
//!
//! Backward integration is realized by the substitution `tau = T - s`; there
//! is no separate forward code path. Fixed steps keep results bitwise
//! reproducible.

use crate::model::TimeGrid;
use crate::{Error, Result};

/// Right-hand side of a first-order vector ODE `y'(t) = f(t, y)`.
pub trait VectorField {
    fn dimension(&self) -> usize;

    /// Writes `f(t, state)` into `derivative`. Must be deterministic.
    fn eval(&self, t: f64, state: &[f64], derivative: &mut [f64]);
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn eval(&self, t: f64, state: &[f64], derivative: &mut [f64]) {
        (**self).eval(t, state, derivative)
    }
}

/// Solution samples on a grid, plus node derivatives for dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    /// Row-major `(n_steps + 1) x dim`.
    states: Vec<f64>,
    derivatives: Vec<f64>,
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// State vector at node `k`.
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Derivative vector at node `k`.
    pub fn derivative(&self, k: usize) -> &[f64] {
        &self.derivatives[k * self.dim..(k + 1) * self.dim]
    }

    /// Dense output at any `t` within the grid span, written into `out`.
    /// Node times reproduce stored node states exactly; between nodes the
    /// value is the cubic Hermite interpolant of the bracketing states and
    /// derivatives.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        assert!(self.grid.contains(t), "t = {t} outside trajectory span");
        assert_eq!(out.len(), self.dim);
        if let Some(k) = self.grid.node_index(t) {
            out.copy_from_slice(self.state(k));
            return;
        }
        let (k, s) = self.grid.locate(t);
        let h = self.grid.dt();
        let (y0, y1) = (self.state(k), self.state(k + 1));
        let (f0, f1) = (self.derivative(k), self.derivative(k + 1));
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for i in 0..self.dim {
            out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
        }
    }

    /// Dense output of a single component.
    pub fn eval_component(&self, component: usize, t: f64) -> f64 {
        let mut buf = vec![0.0; self.dim];
        self.eval_into(t, &mut buf);
        buf[component]
    }

    /// Smallest value of one component over all nodes.
    pub fn node_min(&self, component: usize) -> f64 {
        (0..=self.grid.n_steps())
            .map(|k| self.state(k)[component])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest value of one component over all nodes.
    pub fn node_max(&self, component: usize) -> f64 {
        (0..=self.grid.n_steps())
            .map(|k| self.state(k)[component])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Integrates `y' = f(t, y)` backward from `y(T) = terminal` to the front of
/// `grid` with classical RK4 on the grid steps. Fails with
/// [`Error::NonFiniteState`] at the first node where any component is NaN or
/// infinite.
pub fn integrate_terminal<F: VectorField + ?Sized>(
    field: &F,
    terminal: &[f64],
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let dim = field.dimension();
    if terminal.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: terminal.len(),
        });
    }
    let n = grid.n_steps();
    let h = grid.dt();
    let mut states = vec![0.0; (n + 1) * dim];
    let mut derivatives = vec![0.0; (n + 1) * dim];
    states[n * dim..].copy_from_slice(terminal);

    let mut y = terminal.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut stage = vec![0.0; dim];

    check_finite(&y, grid.node(n), grid)?;
    for k in (1..=n).rev() {
        let t = grid.node(k);
        field.eval(t, &y, &mut k1);
        derivatives[k * dim..(k + 1) * dim].copy_from_slice(&k1);
        for i in 0..dim {
            stage[i] = y[i] - 0.5 * h * k1[i];
        }
        field.eval(t - 0.5 * h, &stage, &mut k2);
        for i in 0..dim {
            stage[i] = y[i] - 0.5 * h * k2[i];
        }
        field.eval(t - 0.5 * h, &stage, &mut k3);
        for i in 0..dim {
            stage[i] = y[i] - h * k3[i];
        }
        field.eval(t - h, &stage, &mut k4);
        for i in 0..dim {
            y[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite(&y, grid.node(k - 1), grid)?;
        states[(k - 1) * dim..k * dim].copy_from_slice(&y);
    }
    field.eval(grid.node(0), &y, &mut k1);
    derivatives[..dim].copy_from_slice(&k1);
    if let Some(i) = derivatives.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            time: grid.node(i / dim),
            component: i % dim,
        });
    }

    Ok(Trajectory {
        grid: grid.clone(),
        dim,
        states,
        derivatives,
    })
}

fn check_finite(y: &[f64], time: f64, _grid: &TimeGrid) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        Some(component) => Err(Error::NonFiniteState { time, component }),
        None => Ok(()),
    }
}

/// Outcome of the step-halving order study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate {
    /// Both coarse solutions coincide with the reference; no ratio exists.
    Exact,
    /// `log2(err(dt) / err(dt/2))`, errors measured against a `dt/4`
    /// reference solution at shared nodes.
    Order(f64),
}

impl OrderEstimate {
    pub fn value(&self) -> Option<f64> {
        match self {
            OrderEstimate::Exact => None,
            OrderEstimate::Order(p) => Some(*p),
        }
    }
}

/// Estimates the integrator's convergence order on the given problem by
/// comparing solutions at `dt` and `dt/2` against a `dt/4` reference.
/// Expect about 4 for smooth fields. Requires an even step count.
pub fn observed_order<F: VectorField + ?Sized>(
    field: &F,
    terminal: &[f64],
    grid: &TimeGrid,
) -> Result<OrderEstimate> {
    if grid.n_steps() % 2 != 0 {
        return Err(Error::Domain("observed_order requires an even step count".into()));
    }
    let coarse = integrate_terminal(field, terminal, grid)?;
    let half = integrate_terminal(field, terminal, &grid.refined(2))?;
    let reference = integrate_terminal(field, terminal, &grid.refined(4))?;

    let err = |sol: &Trajectory, stride: usize| -> f64 {
        let mut worst = 0.0f64;
        for k in 0..=sol.grid().n_steps() {
            let a = sol.state(k);
            let b = reference.state(k * stride);
            for i in 0..sol.dimension() {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        worst
    };
    let err_coarse = err(&coarse, 4);
    let err_half = err(&half, 2);
    if err_half == 0.0 {
        return Ok(OrderEstimate::Exact);
    }
    Ok(OrderEstimate::Order((err_coarse / err_half).log2()))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;

    impl VectorField for Decay {
        fn dimension(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    struct ZeroField(usize);

    impl VectorField for ZeroField {
        fn dimension(&self) -> usize {
            self.0
        }
        fn eval(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
            dy.fill(0.0);
        }
    }

    /// y' = -b y with constant b, the shape of the comparison-bound equations.
    struct LinearConstant {
        b: f64,
    }

    impl VectorField for LinearConstant {
        fn dimension(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.b * y[0];
        }
    }

    #[test]
    fn decay_reaches_e_at_origin() {
        let grid = TimeGrid::new(0.0, 1.0, 100);
        let sol = integrate_terminal(&Decay, &[1.0], &grid).unwrap();
        assert!((sol.state(0)[0] - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn zero_field_is_constant() {
        let grid = TimeGrid::new(0.0, 1.0, 10);
        let sol = integrate_terminal(&ZeroField(2), &[3.5, -2.0], &grid).unwrap();
        for k in 0..=10 {
            assert_eq!(sol.state(k), &[3.5, -2.0]);
        }
    }

    #[test]
    fn linear_constant_matches_closed_form() {
        // theta(t) = exp(b (T - t)) for theta' = -b theta, theta(T) = 1.
        let b = (1.0 - 0.3) * (0.05 - 0.2 / 0.4);
        let grid = TimeGrid::new(0.0, 1.0, 200);
        let sol = integrate_terminal(&LinearConstant { b }, &[1.0], &grid).unwrap();
        for (k, &t) in grid.nodes().iter().enumerate() {
            let exact = (b * (1.0 - t)).exp();
            assert!((sol.state(k)[0] - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_output_matches_nodes_exactly() {
        let grid = TimeGrid::new(0.0, 1.0, 37);
        let sol = integrate_terminal(&Decay, &[1.0], &grid).unwrap();
        let mut out = [0.0];
        for (k, &t) in grid.nodes().iter().enumerate() {
            sol.eval_into(t, &mut out);
            assert_eq!(out[0], sol.state(k)[0]);
        }
    }

    #[test]
    fn dense_output_is_fourth_order_between_nodes() {
        let grid = TimeGrid::new(0.0, 1.0, 100);
        let sol = integrate_terminal(&Decay, &[1.0], &grid).unwrap();
        for j in 0..50 {
            let t = 0.005 + j as f64 * 0.02;
            let exact = (1.0 - t).exp();
            assert!((sol.eval_component(0, t) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn halving_shrinks_error_at_least_14x() {
        let exact = std::f64::consts::E;
        let run = |n: usize| {
            let grid = TimeGrid::new(0.0, 1.0, n);
            (integrate_terminal(&Decay, &[1.0], &grid).unwrap().state(0)[0] - exact).abs()
        };
        assert!(run(50) / run(100) >= 14.0);
        assert!(run(100) / run(200) >= 14.0);
    }

    #[test]
    fn integration_is_bitwise_deterministic() {
        let grid = TimeGrid::new(0.0, 1.0, 64);
        let a = integrate_terminal(&Decay, &[1.0], &grid).unwrap();
        let b = integrate_terminal(&Decay, &[1.0], &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn observed_order_near_four_for_decay() {
        let grid = TimeGrid::new(0.0, 1.0, 20);
        let order = observed_order(&Decay, &[1.0], &grid).unwrap().value().unwrap();
        assert!((3.8..=4.2).contains(&order), "order = {order}");
    }

    #[test]
    fn observed_order_zero_field_is_exact() {
        let grid = TimeGrid::new(0.0, 1.0, 10);
        assert_eq!(
            observed_order(&ZeroField(1), &[2.0], &grid).unwrap(),
            OrderEstimate::Exact
        );
    }

    #[test]
    fn observed_order_rejects_odd_steps() {
        let grid = TimeGrid::new(0.0, 1.0, 11);
        assert!(matches!(
            observed_order(&ZeroField(1), &[2.0], &grid),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let grid = TimeGrid::new(0.0, 1.0, 10);
        let err = integrate_terminal(&Decay, &[1.0, 2.0], &grid).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 1, got: 2 });
    }

    #[test]
    fn blow_up_reports_first_offending_node() {
        struct Quadratic;
        impl VectorField for Quadratic {
            fn dimension(&self) -> usize {
                1
            }
            fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
                dy[0] = -y[0] * y[0];
            }
        }
        let grid = TimeGrid::new(0.0, 1.0, 10);
        let err = integrate_terminal(&Quadratic, &[1e200], &grid).unwrap_err();
        match err {
            Error::NonFiniteState { time, component } => {
                assert_eq!(component, 0);
                assert!(time < 1.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
