//! Lagrangians, Hamiltonians and control systems, and the implicit residual systems they
//! generate on a Dirac algebroid.
//!
//! With `ξ = ∂L/∂y` and `p = −∂L/∂x` the Euler-Lagrange residual is the membership residual of
//! `(x, ξ, ẋ, ξ̇, p, y)` in `D`, where `ξ̇ = ∂²L/∂y∂x ẋ + ∂²L/∂y∂y ẏ`. The Hamilton residual uses
//! `y = ∂H/∂ξ`, `p = ∂H/∂x` and the rate `ξ̇` directly.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::algebroid::SkewAlgebroid;
use crate::constraints::{AffineConstraint, InducingConstraint, LinearConstraint};
use crate::dirac::{DiracAlgebroid, PhaseMembership, PHASE_TOL};
use crate::error::{check_finite, Error, Result};
use crate::numeric::{self, Probes};
use crate::solver::ImplicitProblem;

/// Relative tolerance for analytic partials against finite differences.
pub const GRADIENT_RTOL: f64 = 1e-5;

type Scalar2 = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type Vector2 = Arc<dyn Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync>;
type Matrix2 = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;

fn split<'a>(v: &'a [f64], at: usize) -> (&'a [f64], &'a [f64]) {
    v.split_at(at)
}

fn relative_mismatch(a: &[f64], b: &[f64]) -> f64 {
    let scale = 1.0 + a.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    a.iter().zip(b).fold(0.0_f64, |s, (p, q)| s.max((p - q).abs())) / scale
}

/// A Lagrangian `L(x, y)` on `E`, with optional analytic partials.
#[derive(Clone)]
pub struct LagrangianDef {
    base_dim: usize,
    fiber_dim: usize,
    time_dependent: bool,
    value: Scalar2,
    grad_x: Option<Vector2>,
    grad_y: Option<Vector2>,
    hess_yy: Option<Matrix2>,
    hess_yx: Option<Matrix2>,
}

impl fmt::Debug for LagrangianDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LagrangianDef")
            .field("base_dim", &self.base_dim)
            .field("fiber_dim", &self.fiber_dim)
            .field("time_dependent", &self.time_dependent)
            .finish_non_exhaustive()
    }
}

impl LagrangianDef {
    pub fn new<F>(base_dim: usize, fiber_dim: usize, value: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            base_dim,
            fiber_dim,
            time_dependent: false,
            value: Arc::new(value),
            grad_x: None,
            grad_y: None,
            hess_yy: None,
            hess_yx: None,
        }
    }

    /// `L(t, x, y)`, realized on the time-extended base: the first base coordinate is `t`.
    pub fn time_dependent<F>(base_dim: usize, fiber_dim: usize, value: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        let mut l = Self::new(base_dim + 1, fiber_dim, move |x, y| value(x[0], &x[1..], y));
        l.time_dependent = true;
        l
    }

    /// `∂L/∂x` (length n; on time-dependent Lagrangians the `t` slot comes first).
    pub fn with_grad_x<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad_x = Some(Arc::new(g));
        self
    }

    pub fn with_grad_y<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad_y = Some(Arc::new(g));
        self
    }

    /// `∂²L/∂y∂y` (`m × m`).
    pub fn with_hess_yy<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hess_yy = Some(Arc::new(g));
        self
    }

    /// `∂²L/∂y^i∂x^a` (`m × n`).
    pub fn with_hess_yx<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hess_yx = Some(Arc::new(g));
        self
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    fn check(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.base_dim || y.len() != self.fiber_dim {
            return Err(Error::Contract(format!(
                "Lagrangian expects (n, m) = ({}, {}), got ({}, {})",
                self.base_dim,
                self.fiber_dim,
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(x, y)?;
        let v = (self.value)(x, y);
        check_finite("Lagrangian", &[v])?;
        Ok(v)
    }

    fn fd_grad_x(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        numeric::gradient(|xx| (self.value)(xx, y), x)
    }

    fn fd_grad_y(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        numeric::gradient(|yy| (self.value)(x, yy), y)
    }

    fn raw_grad_y(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        match &self.grad_y {
            Some(g) => g(x, y),
            None => self.fd_grad_y(x, y),
        }
    }

    /// Second partials from function values on the joint vector `(x, y)`.
    fn joint_second(&self, x: &[f64], y: &[f64], rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let n = self.base_dim;
        let z: Vec<f64> = x.iter().chain(y).copied().collect();
        numeric::second_partials(|z| (self.value)(&z[..n], &z[n..]), &z, rows, cols)
    }

    fn fd_hess_yy(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        match &self.grad_y {
            Some(g) => numeric::jacobian(|yy| g(x, yy), y, self.fiber_dim),
            None => {
                let ys: Vec<usize> = (self.base_dim..self.base_dim + self.fiber_dim).collect();
                self.joint_second(x, y, &ys, &ys)
            }
        }
    }

    fn fd_hess_yx(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        match &self.grad_y {
            Some(g) => numeric::jacobian(|xx| g(xx, y), x, self.fiber_dim),
            None => {
                let ys: Vec<usize> = (self.base_dim..self.base_dim + self.fiber_dim).collect();
                let xs: Vec<usize> = (0..self.base_dim).collect();
                self.joint_second(x, y, &ys, &xs)
            }
        }
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(x, y)?;
        let g = match &self.grad_x {
            Some(g) => g(x, y),
            None => self.fd_grad_x(x, y),
        };
        check_finite("dL/dx", g.as_slice())?;
        Ok(g)
    }

    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(x, y)?;
        let g = self.raw_grad_y(x, y);
        check_finite("dL/dy", g.as_slice())?;
        Ok(g)
    }

    pub fn hess_yy(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x, y)?;
        let h = match &self.hess_yy {
            Some(h) => h(x, y),
            None => self.fd_hess_yy(x, y),
        };
        check_finite("d2L/dy2", h.as_slice())?;
        Ok(h)
    }

    pub fn hess_yx(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x, y)?;
        let h = match &self.hess_yx {
            Some(h) => h(x, y),
            None => self.fd_hess_yx(x, y),
        };
        check_finite("d2L/dydx", h.as_slice())?;
        Ok(h)
    }

    /// Largest relative mismatch between the supplied partials and finite differences.
    ///
    /// Fails with a contract error when it exceeds [`GRADIENT_RTOL`].
    pub fn validate(&self, probes: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (x, y) in probes {
            self.check(x, y)?;
            if let Some(g) = &self.grad_x {
                worst = worst.max(relative_mismatch(g(x, y).as_slice(), self.fd_grad_x(x, y).as_slice()));
            }
            if let Some(g) = &self.grad_y {
                worst = worst.max(relative_mismatch(g(x, y).as_slice(), self.fd_grad_y(x, y).as_slice()));
            }
            if let Some(h) = &self.hess_yy {
                worst = worst.max(relative_mismatch(h(x, y).as_slice(), self.fd_hess_yy(x, y).as_slice()));
            }
            if let Some(h) = &self.hess_yx {
                worst = worst.max(relative_mismatch(h(x, y).as_slice(), self.fd_hess_yx(x, y).as_slice()));
            }
        }
        if worst > GRADIENT_RTOL {
            return Err(Error::Contract(format!(
                "analytic Lagrangian partials disagree with finite differences (relative {worst:e})"
            )));
        }
        Ok(worst)
    }
}

/// Settings of the Newton inversion of the Legendre map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub starts: usize,
    pub max_condition: f64,
}

impl Default for LegendreSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-10,
            starts: 6,
            max_condition: 1e12,
        }
    }
}

/// A Hamiltonian `H(x, ξ)` on `E*`, with optional analytic partials.
#[derive(Clone)]
pub struct HamiltonianDef {
    base_dim: usize,
    fiber_dim: usize,
    value: Scalar2,
    grad_x: Option<Vector2>,
    grad_xi: Option<Vector2>,
    legendre: Option<LegendreSettings>,
}

impl fmt::Debug for HamiltonianDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianDef")
            .field("base_dim", &self.base_dim)
            .field("fiber_dim", &self.fiber_dim)
            .field("legendre", &self.legendre)
            .finish_non_exhaustive()
    }
}

impl HamiltonianDef {
    pub fn new<F>(base_dim: usize, fiber_dim: usize, value: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            base_dim,
            fiber_dim,
            value: Arc::new(value),
            grad_x: None,
            grad_xi: None,
            legendre: None,
        }
    }

    pub fn with_grad_x<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad_x = Some(Arc::new(g));
        self
    }

    pub fn with_grad_xi<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad_xi = Some(Arc::new(g));
        self
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    /// Inverse-map settings when this Hamiltonian came from [`legendre_transform`].
    pub fn legendre_settings(&self) -> Option<LegendreSettings> {
        self.legendre
    }

    fn check(&self, x: &[f64], xi: &[f64]) -> Result<()> {
        if x.len() != self.base_dim || xi.len() != self.fiber_dim {
            return Err(Error::Contract(format!(
                "Hamiltonian expects (n, m) = ({}, {}), got ({}, {})",
                self.base_dim,
                self.fiber_dim,
                x.len(),
                xi.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.check(x, xi)?;
        let v = (self.value)(x, xi);
        check_finite("Hamiltonian", &[v])?;
        Ok(v)
    }

    pub fn grad_x(&self, x: &[f64], xi: &[f64]) -> Result<DVector<f64>> {
        self.check(x, xi)?;
        let g = match &self.grad_x {
            Some(g) => g(x, xi),
            None => numeric::gradient(|xx| (self.value)(xx, xi), x),
        };
        check_finite("dH/dx", g.as_slice())?;
        Ok(g)
    }

    pub fn grad_xi(&self, x: &[f64], xi: &[f64]) -> Result<DVector<f64>> {
        self.check(x, xi)?;
        let g = match &self.grad_xi {
            Some(g) => g(x, xi),
            None => numeric::gradient(|pp| (self.value)(x, pp), xi),
        };
        check_finite("dH/dxi", g.as_slice())?;
        Ok(g)
    }

    /// Largest relative mismatch of the supplied partials against finite differences.
    pub fn validate(&self, probes: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (x, xi) in probes {
            self.check(x, xi)?;
            if let Some(g) = &self.grad_x {
                let fd = numeric::gradient(|xx| (self.value)(xx, xi), x);
                worst = worst.max(relative_mismatch(g(x, xi).as_slice(), fd.as_slice()));
            }
            if let Some(g) = &self.grad_xi {
                let fd = numeric::gradient(|pp| (self.value)(x, pp), xi);
                worst = worst.max(relative_mismatch(g(x, xi).as_slice(), fd.as_slice()));
            }
        }
        if worst > GRADIENT_RTOL {
            return Err(Error::Contract(format!(
                "analytic Hamiltonian partials disagree with finite differences (relative {worst:e})"
            )));
        }
        Ok(worst)
    }
}

/// A control-parametrized vakonomic constraint `y = f(x, u)` with cost `L(x, u)`.
#[derive(Clone)]
pub struct ControlSystem {
    base_dim: usize,
    fiber_dim: usize,
    control_dim: usize,
    f: Vector2,
    cost: Scalar2,
    df_dx: Option<Matrix2>,
    df_du: Option<Matrix2>,
    dl_dx: Option<Vector2>,
    dl_du: Option<Vector2>,
}

impl fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("base_dim", &self.base_dim)
            .field("fiber_dim", &self.fiber_dim)
            .field("control_dim", &self.control_dim)
            .finish_non_exhaustive()
    }
}

impl ControlSystem {
    pub fn new<F, L>(base_dim: usize, fiber_dim: usize, control_dim: usize, f: F, cost: L) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
        L: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        if control_dim == 0 {
            return Err(Error::Contract("a control system needs at least one control".into()));
        }
        Ok(Self {
            base_dim,
            fiber_dim,
            control_dim,
            f: Arc::new(f),
            cost: Arc::new(cost),
            df_dx: None,
            df_du: None,
            dl_dx: None,
            dl_du: None,
        })
    }

    pub fn with_df_dx<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.df_dx = Some(Arc::new(g));
        self
    }

    pub fn with_df_du<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.df_du = Some(Arc::new(g));
        self
    }

    pub fn with_dl_dx<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.dl_dx = Some(Arc::new(g));
        self
    }

    pub fn with_dl_du<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        self.dl_du = Some(Arc::new(g));
        self
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn check(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.base_dim || u.len() != self.control_dim {
            return Err(Error::Contract(format!(
                "control system expects (n, q) = ({}, {}), got ({}, {})",
                self.base_dim,
                self.control_dim,
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }

    pub fn f(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check(x, u)?;
        let v = (self.f)(x, u);
        if v.len() != self.fiber_dim {
            return Err(Error::Contract(format!(
                "f returned {} components, expected {}",
                v.len(),
                self.fiber_dim
            )));
        }
        check_finite("f", v.as_slice())?;
        Ok(v)
    }

    pub fn cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check(x, u)?;
        let v = (self.cost)(x, u);
        check_finite("cost", &[v])?;
        Ok(v)
    }

    pub fn df_dx(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x, u)?;
        let j = match &self.df_dx {
            Some(g) => g(x, u),
            None => numeric::jacobian(|xx| (self.f)(xx, u), x, self.fiber_dim),
        };
        check_finite("df/dx", j.as_slice())?;
        Ok(j)
    }

    pub fn df_du(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x, u)?;
        let j = match &self.df_du {
            Some(g) => g(x, u),
            None => numeric::jacobian(|uu| (self.f)(x, uu), u, self.fiber_dim),
        };
        check_finite("df/du", j.as_slice())?;
        Ok(j)
    }

    pub fn dl_dx(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check(x, u)?;
        let g = match &self.dl_dx {
            Some(g) => g(x, u),
            None => numeric::gradient(|xx| (self.cost)(xx, u), x),
        };
        check_finite("dL/dx", g.as_slice())?;
        Ok(g)
    }

    pub fn dl_du(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        self.check(x, u)?;
        let g = match &self.dl_du {
            Some(g) => g(x, u),
            None => numeric::gradient(|uu| (self.cost)(x, uu), u),
        };
        check_finite("dL/du", g.as_slice())?;
        Ok(g)
    }

    /// `H(x, u, ξ) = ξ·f(x, u) − L(x, u)`.
    pub fn hamiltonian(&self, x: &[f64], u: &[f64], xi: &[f64]) -> Result<f64> {
        Ok(DVector::from_column_slice(xi).dot(&self.f(x, u)?) - self.cost(x, u)?)
    }

    /// `∂H/∂u = ξ·∂f/∂u − ∂L/∂u`.
    pub fn stationarity(&self, x: &[f64], u: &[f64], xi: &[f64]) -> Result<DVector<f64>> {
        let xi = DVector::from_column_slice(xi);
        Ok(self.df_du(x, u)?.transpose() * xi - self.dl_du(x, u)?)
    }

    /// Largest relative mismatch of the supplied partials against finite differences.
    pub fn validate(&self, probes: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (x, u) in probes {
            self.check(x, u)?;
            if let Some(g) = &self.df_dx {
                let fd = numeric::jacobian(|xx| (self.f)(xx, u), x, self.fiber_dim);
                worst = worst.max(relative_mismatch(g(x, u).as_slice(), fd.as_slice()));
            }
            if let Some(g) = &self.df_du {
                let fd = numeric::jacobian(|uu| (self.f)(x, uu), u, self.fiber_dim);
                worst = worst.max(relative_mismatch(g(x, u).as_slice(), fd.as_slice()));
            }
            if let Some(g) = &self.dl_dx {
                let fd = numeric::gradient(|xx| (self.cost)(xx, u), x);
                worst = worst.max(relative_mismatch(g(x, u).as_slice(), fd.as_slice()));
            }
            if let Some(g) = &self.dl_du {
                let fd = numeric::gradient(|uu| (self.cost)(x, uu), u);
                worst = worst.max(relative_mismatch(g(x, u).as_slice(), fd.as_slice()));
            }
        }
        if worst > GRADIENT_RTOL {
            return Err(Error::Contract(format!(
                "analytic control-system partials disagree with finite differences (relative {worst:e})"
            )));
        }
        Ok(worst)
    }
}

fn check_dims(d: &DiracAlgebroid, n: usize, m: usize, what: &str) -> Result<()> {
    if d.base_dim() != n || d.fiber_dim() != m {
        return Err(Error::Contract(format!(
            "{what} has (n, m) = ({n}, {m}) but the structure has ({}, {})",
            d.base_dim(),
            d.fiber_dim()
        )));
    }
    Ok(())
}

/// The vertical derivative `(x, y) ↦ (x, ∂L/∂y)`.
pub fn legendre_map(l: &LagrangianDef, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
    l.grad_y(x, y)
}

/// [`legendre_map`] together with membership of the image in the phase bundle of `d`.
pub fn legendre_map_on(
    d: &DiracAlgebroid,
    l: &LagrangianDef,
    x: &[f64],
    y: &[f64],
) -> Result<(DVector<f64>, PhaseMembership)> {
    let xi = legendre_map(l, x, y)?;
    let phase = d.phase_membership(x, xi.as_slice())?;
    Ok((xi, phase))
}

/// Euler-Lagrange residual with its phase-membership channel.
#[derive(Debug, Clone)]
pub struct ElResidual {
    pub residual: DVector<f64>,
    pub phase: PhaseMembership,
}

/// Implicit Euler-Lagrange residual at state `(x, y)` and rate `(ẋ, ẏ)`.
pub fn el_residual(
    d: &DiracAlgebroid,
    l: &LagrangianDef,
    state: &[f64],
    rate: &[f64],
) -> Result<ElResidual> {
    let (n, m) = (d.base_dim(), d.fiber_dim());
    check_dims(d, l.base_dim(), l.fiber_dim(), "Lagrangian")?;
    if state.len() != n + m || rate.len() != n + m {
        return Err(Error::Contract("state and rate must have n+m entries".into()));
    }
    let (x, y) = split(state, n);
    let (xdot, ydot) = split(rate, n);
    let form = d.local_form(x)?;
    let xi = l.grad_y(x, y)?;
    let p = -l.grad_x(x, y)?;
    let xidot = l.hess_yx(x, y)? * DVector::from_column_slice(xdot)
        + l.hess_yy(x, y)? * DVector::from_column_slice(ydot);
    let residual = form.residual(xi.as_slice(), xdot, xidot.as_slice(), p.as_slice(), y);
    let phase_residual = form.phase_residual(x, xi.as_slice());
    let member = phase_residual.iter().all(|v| v.abs() <= PHASE_TOL);
    Ok(ElResidual {
        residual,
        phase: PhaseMembership {
            member,
            residual: phase_residual,
        },
    })
}

/// Implicit Hamilton residual at state `(x, ξ)` and rate `(ẋ, ξ̇)`.
pub fn hamilton_residual(
    d: &DiracAlgebroid,
    h: &HamiltonianDef,
    state: &[f64],
    rate: &[f64],
) -> Result<DVector<f64>> {
    let (n, m) = (d.base_dim(), d.fiber_dim());
    check_dims(d, h.base_dim(), h.fiber_dim(), "Hamiltonian")?;
    if state.len() != n + m || rate.len() != n + m {
        return Err(Error::Contract("state and rate must have n+m entries".into()));
    }
    let (x, xi) = split(state, n);
    let (xdot, xidot) = split(rate, n);
    let form = d.local_form(x)?;
    let y = h.grad_xi(x, xi)?;
    let p = h.grad_x(x, xi)?;
    Ok(form.residual(xi, xdot, xidot, p.as_slice(), y.as_slice()))
}

/// Solves `∂L/∂y(x, y) = ξ` for `y` by Newton's method.
pub fn inverse_legendre(
    l: &LagrangianDef,
    x: &[f64],
    xi: &[f64],
    settings: &LegendreSettings,
) -> Result<DVector<f64>> {
    let m = l.fiber_dim();
    if xi.len() != m {
        return Err(Error::Contract("xi has the wrong dimension".into()));
    }
    let target = DVector::from_column_slice(xi);
    let tol = settings.tolerance * (1.0 + target.amax());
    let fail = |reason: String| Error::Hyperregularity {
        x: x.to_vec(),
        xi: xi.to_vec(),
        reason,
    };
    let mut starts = vec![DVector::zeros(m), target.clone()];
    let mut probes = Probes::new(0x1e6e_d2e);
    while starts.len() < settings.starts.max(1) {
        let scale = 1.0 + target.amax();
        starts.push(DVector::from_vec(probes.point(m, scale)));
    }
    let mut last = String::new();
    for start in starts {
        let mut y = start;
        for _ in 0..settings.max_iterations {
            let g = l.grad_y(x, y.as_slice())? - &target;
            if g.amax() <= tol {
                return Ok(y);
            }
            let hess = l.hess_yy(x, y.as_slice())?;
            let s = numeric::singular_values(&hess);
            let (smax, smin) = (s[0], s[s.len() - 1]);
            if !(smin > 0.0) || smax / smin > settings.max_condition {
                return Err(fail(format!(
                    "vertical Hessian is singular (singular values {s:?})"
                )));
            }
            let step = hess
                .lu()
                .solve(&g)
                .ok_or_else(|| fail("vertical Hessian is singular".into()))?;
            y -= step;
        }
        let g = l.grad_y(x, y.as_slice())? - &target;
        if g.amax() <= tol {
            return Ok(y);
        }
        last = format!("Newton did not converge in {} iterations (|residual| {:e})", settings.max_iterations, g.amax());
    }
    Err(fail(last))
}

/// The Hamiltonian `H(x, ξ) = ξ·y − L(x, y)` with `y` the inverse Legendre image of `ξ`.
///
/// The inverse map is checked on `probes`; the gradients use `∂H/∂ξ = y`, `∂H/∂x = −∂L/∂x`.
pub fn legendre_transform(l: &LagrangianDef, probes: &[(Vec<f64>, Vec<f64>)]) -> Result<HamiltonianDef> {
    let settings = LegendreSettings::default();
    for (x, xi) in probes {
        inverse_legendre(l, x, xi, &settings)?;
    }
    let nan = |m: usize| DVector::from_element(m, f64::NAN);
    let (n, m) = (l.base_dim(), l.fiber_dim());
    let (l1, l2, l3) = (l.clone(), l.clone(), l.clone());
    let mut h = HamiltonianDef::new(n, m, move |x, xi| match inverse_legendre(&l1, x, xi, &settings) {
        Ok(y) => DVector::from_column_slice(xi).dot(&y) - l1.value(x, y.as_slice()).unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    })
    .with_grad_xi(move |x, xi| inverse_legendre(&l2, x, xi, &settings).unwrap_or_else(|_| nan(m)))
    .with_grad_x(move |x, xi| {
        inverse_legendre(&l3, x, xi, &settings)
            .and_then(|y| l3.grad_x(x, y.as_slice()))
            .map(|g| -g)
            .unwrap_or_else(|_| nan(n))
    });
    h.legendre = Some(settings);
    Ok(h)
}

/// Adapted fiber indices `(removed, distinguished)` of a constraint for the direct equations.
fn adapted_indices(v: &InducingConstraint, m: usize) -> Result<(Vec<usize>, Vec<usize>, Option<usize>)> {
    let (base, fiber, distinguished) = match v {
        InducingConstraint::Linear(LinearConstraint::Adapted { base, fiber }) => (base.clone(), fiber.clone(), None),
        InducingConstraint::Affine(AffineConstraint::Adapted {
            base,
            distinguished,
            fiber,
        }) => (base.clone(), fiber.clone(), Some(*distinguished)),
        _ => {
            return Err(Error::Contract(
                "direct nonholonomic equations need an adapted constraint".into(),
            ))
        }
    };
    if fiber.iter().chain(distinguished.iter()).any(|&i| i >= m) {
        return Err(Error::Contract("fiber selector out of range".into()));
    }
    Ok((base, fiber, distinguished))
}

/// Direct constrained Euler-Lagrange equations on a skew algebroid:
/// `ẋ = ρ y`, `y^I = 0` (and `y^d − 1` for affine constraints), and for each free `κ`
/// `d/dt ∂L/∂y^κ − ρ^a_κ ∂L/∂x^a − c^j_{iκ} y^i ∂L/∂y^j`.
///
/// Rows appear in the same order as [`el_residual`] on the induced structure.
pub fn nonholonomic_el_residual(
    a: &SkewAlgebroid,
    v: &InducingConstraint,
    l: &LagrangianDef,
    state: &[f64],
    rate: &[f64],
) -> Result<DVector<f64>> {
    let (n, m) = (a.base_dim(), a.fiber_dim());
    if l.base_dim() != n || l.fiber_dim() != m {
        return Err(Error::Contract("Lagrangian and algebroid dimensions differ".into()));
    }
    if state.len() != n + m || rate.len() != n + m {
        return Err(Error::Contract("state and rate must have n+m entries".into()));
    }
    let (_, fiber, distinguished) = adapted_indices(v, m)?;
    let (x, y) = split(state, n);
    let (xdot, ydot) = split(rate, n);
    let rho = a.eval_anchor(x)?;
    let c = a.eval_structure(x)?;
    let xi = l.grad_y(x, y)?;
    let dldx = l.grad_x(x, y)?;
    let xidot = l.hess_yx(x, y)? * DVector::from_column_slice(xdot)
        + l.hess_yy(x, y)? * DVector::from_column_slice(ydot);
    let yv = DVector::from_column_slice(y);

    let mut out = Vec::with_capacity(n + m);
    let anchor = DVector::from_column_slice(xdot) - &rho * &yv;
    out.extend(anchor.iter());
    if let Some(dd) = distinguished {
        out.push(y[dd] - 1.0);
    }
    out.extend(fiber.iter().map(|&i| y[i]));
    for kappa in 0..m {
        if fiber.contains(&kappa) || distinguished == Some(kappa) {
            continue;
        }
        let mut row = xidot[kappa] - (0..n).map(|b| rho[(b, kappa)] * dldx[b]).sum::<f64>();
        for i in 0..m {
            for j in 0..m {
                row -= c.get(j, i, kappa) * y[i] * xi[j];
            }
        }
        out.push(row);
    }
    Ok(DVector::from_vec(out))
}

/// The time extension of `d` (first base coordinate is time).
pub fn time_extend(d: &DiracAlgebroid) -> DiracAlgebroid {
    d.time_extended()
}

/// Pontryagin residual at state `(x, u, ξ)` and rate `(ẋ, ξ̇)`: the Hamilton equations of
/// `H = ξ·f − L` followed by the stationarity rows `ξ·∂f/∂u − ∂L/∂u`.
pub fn pmp_residual(
    sys: &ControlSystem,
    d: &DiracAlgebroid,
    state: &[f64],
    rate: &[f64],
) -> Result<DVector<f64>> {
    let (n, m, q) = (sys.base_dim(), sys.fiber_dim(), sys.control_dim());
    check_dims(d, n, m, "control system")?;
    match d.representation() {
        crate::dirac::Representation::OmegaGraph(_) => {
            return Err(Error::Contract(
                "the Pontryagin residual needs a Π-graph, canonical or general local structure".into(),
            ))
        }
        _ => {}
    }
    if state.len() != n + q + m || rate.len() != n + m {
        return Err(Error::Contract("state must be (x, u, ξ) and rate (ẋ, ξ̇)".into()));
    }
    let x = &state[..n];
    let u = &state[n..n + q];
    let xi = &state[n + q..];
    let (xdot, xidot) = split(rate, n);
    let form = d.local_form(x)?;
    let y = sys.f(x, u)?;
    let xiv = DVector::from_column_slice(xi);
    let p = sys.df_dx(x, u)?.transpose() * &xiv - sys.dl_dx(x, u)?;
    let dyn_rows = form.residual(xi, xdot, xidot, p.as_slice(), y.as_slice());
    let stat = sys.stationarity(x, u, xi)?;
    let mut out = DVector::zeros(dyn_rows.len() + q);
    out.rows_mut(0, dyn_rows.len()).copy_from(&dyn_rows);
    out.rows_mut(dyn_rows.len(), q).copy_from(&stat);
    Ok(out)
}

fn labels(prefix: &[String], rest: &[String]) -> Vec<String> {
    prefix.iter().chain(rest).cloned().collect()
}

fn index_probes(dim: usize) -> Vec<(f64, Vec<f64>)> {
    let mut probes = Probes::new(0x1d_e7ec7);
    (0..3).map(|_| (probes.scalar(0.0, 1.0), probes.point(dim, 0.9))).collect()
}

/// Mask with the fiber components and the support coordinates `x^A` of `d` set.
fn fiber_and_support_mask(d: &DiracAlgebroid, offset: usize) -> Result<Vec<bool>> {
    let (n, m) = (d.base_dim(), d.fiber_dim());
    let x0 = vec![0.0; n];
    let zero = d.local_form(&x0)?.base_zero;
    let mut mask = vec![false; n + m];
    for i in 0..m {
        mask[offset + i] = true;
    }
    for a in zero {
        mask[a] = true;
    }
    Ok(mask)
}

/// Euler-Lagrange dynamics as an implicit problem on states `(x, y)` and rates `(ẋ, ẏ)`.
///
/// Rows free of rates (pure constraints) are replaced by their time derivatives and kept in the
/// algebraic channel together with the phase-membership residual of `(x, ∂L/∂y)`.
pub fn el_problem(d: &DiracAlgebroid, l: &LagrangianDef) -> Result<ImplicitProblem> {
    let (n, m) = (d.base_dim(), d.fiber_dim());
    check_dims(d, l.base_dim(), l.fiber_dim(), "Lagrangian")?;
    let (d1, l1) = (d.clone(), l.clone());
    let (d2, l2) = (d.clone(), l.clone());
    let mut prob = ImplicitProblem::new(n + m, move |_t, s, r| Ok(el_residual(&d1, &l1, s, r)?.residual))
        .with_labels(labels(d.chart().base_labels(), d.chart().fiber_labels()))
        .with_algebraic(move |_t, s| {
            let (x, y) = split(s, n);
            let form = d2.local_form(x)?;
            let xi = l2.grad_y(x, y)?;
            Ok(form.phase_residual(x, xi.as_slice()))
        })
        .with_projection_mask(fiber_and_support_mask(d, n)?);
    if !l.is_time_dependent() {
        let l3 = l.clone();
        prob = prob.with_monitor("energy", move |_t, s| {
            let (x, y) = split(s, n);
            crate::solver::energy_monitor(&l3, x, y).unwrap_or(f64::NAN)
        });
    }
    prob.reduce_index(&index_probes(n + m))
}

/// Hamilton dynamics as an implicit problem on states `(x, ξ)` and rates `(ẋ, ξ̇)`.
pub fn hamilton_problem(d: &DiracAlgebroid, h: &HamiltonianDef) -> Result<ImplicitProblem> {
    let (n, m) = (d.base_dim(), d.fiber_dim());
    check_dims(d, h.base_dim(), h.fiber_dim(), "Hamiltonian")?;
    let (d1, h1) = (d.clone(), h.clone());
    let d2 = d.clone();
    let h3 = h.clone();
    let xi_labels: Vec<String> = d.chart().fiber_labels().iter().map(|s| format!("xi_{s}")).collect();
    let prob = ImplicitProblem::new(n + m, move |_t, s, r| hamilton_residual(&d1, &h1, s, r))
        .with_labels(labels(d.chart().base_labels(), &xi_labels))
        .with_algebraic(move |_t, s| {
            let (x, xi) = split(s, n);
            Ok(d2.local_form(x)?.phase_residual(x, xi))
        })
        .with_projection_mask(fiber_and_support_mask(d, n)?)
        .with_monitor("hamiltonian", move |_t, s| {
            let (x, xi) = split(s, n);
            h3.value(x, xi).unwrap_or(f64::NAN)
        });
    prob.reduce_index(&index_probes(n + m))
}

/// Pontryagin dynamics on states `(x, u, ξ)` and rates `(ẋ, u̇, ξ̇)`.
///
/// The stationarity rows are differentiated in time; projection moves the controls only.
pub fn pmp_problem(sys: &ControlSystem, d: &DiracAlgebroid) -> Result<ImplicitProblem> {
    let (n, m, q) = (sys.base_dim(), sys.fiber_dim(), sys.control_dim());
    check_dims(d, n, m, "control system")?;
    let (s1, d1) = (sys.clone(), d.clone());
    let (s2, s3) = (sys.clone(), sys.clone());
    let d2 = d.clone();
    let mut names: Vec<String> = d.chart().base_labels().to_vec();
    names.extend((1..=q).map(|k| format!("u{k}")));
    names.extend(d.chart().fiber_labels().iter().map(|s| format!("xi_{s}")));
    let mut mask = vec![false; n + q + m];
    for k in 0..q {
        mask[n + k] = true;
    }
    let prob = ImplicitProblem::new(n + q + m, move |_t, s, r| {
        let mut rate = Vec::with_capacity(n + m);
        rate.extend_from_slice(&r[..n]);
        rate.extend_from_slice(&r[n + q..]);
        pmp_residual(&s1, &d1, s, &rate)
    })
    .with_labels(names)
    .with_algebraic(move |_t, s| {
        let x = &s[..n];
        Ok(d2.local_form(x)?.phase_residual(x, &s[n + q..]))
    })
    .with_projection_mask(mask)
    .with_monitor("hamiltonian", move |_t, s| {
        s2.hamiltonian(&s[..n], &s[n..n + q], &s[n + q..]).unwrap_or(f64::NAN)
    })
    .with_monitor("stationarity", move |_t, s| {
        s3.stationarity(&s[..n], &s[n..n + q], &s[n + q..])
            .map(|v| v.amax())
            .unwrap_or(f64::NAN)
    });
    prob.reduce_index(&index_probes(n + q + m))
}
