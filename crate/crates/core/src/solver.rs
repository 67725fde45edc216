//! Time integration of implicit residual systems `R(t, s, ṡ) = 0`.
//!
//! Rates are found by Newton's method with a finite-difference Jacobian. Rows that do not
//! depend on the rate are constraints on the state; [`ImplicitProblem::reduce_index`] replaces
//! them by their time derivatives and moves the original rows to the algebraic channel, onto
//! which states are projected after every step.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::dirac::DiracAlgebroid;
use crate::dynamics::{el_residual, hamilton_residual, HamiltonianDef, LagrangianDef};
use crate::error::{Error, Result};
use crate::numeric::{self, Probes};

/// Residual tolerance of the rate solve.
pub const NEWTON_TOL: f64 = 1e-10;
/// Relative step tolerance of the rate solve.
pub const NEWTON_STEP_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
/// Rate Jacobians above this condition number are reported as degenerate.
pub const MAX_CONDITION: f64 = 1e12;
/// Final algebraic-channel norm required after projection.
pub const PROJECTION_TOL: f64 = 1e-10;
pub const PROJECTION_MAX_ITER: usize = 100;
/// Relative rate sensitivity below which a residual row counts as rate-free.
pub const RATE_FREE_TOL: f64 = 1e-10;

const PROJECTION_SKIP: f64 = 1e-12;

type ResidualFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Result<DVector<f64>> + Send + Sync>;
type AlgebraicFn = Arc<dyn Fn(f64, &[f64]) -> Result<DVector<f64>> + Send + Sync>;
type MonitorFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A square implicit system on `ℝ^dim` with an algebraic channel and named monitors.
#[derive(Clone)]
pub struct ImplicitProblem {
    dim: usize,
    raw: ResidualFn,
    algebraic: Option<AlgebraicFn>,
    rate_free: Vec<usize>,
    mask: Vec<bool>,
    monitors: Vec<(String, MonitorFn)>,
    labels: Vec<String>,
}

impl fmt::Debug for ImplicitProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImplicitProblem")
            .field("dim", &self.dim)
            .field("rate_free", &self.rate_free)
            .field("mask", &self.mask)
            .field("monitors", &self.monitor_names())
            .field("labels", &self.labels)
            .finish_non_exhaustive()
    }
}

impl ImplicitProblem {
    pub fn new<F>(dim: usize, residual: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Self {
            dim,
            raw: Arc::new(residual),
            algebraic: None,
            rate_free: Vec::new(),
            mask: vec![true; dim],
            monitors: Vec::new(),
            labels: (1..=dim).map(|i| format!("s{i}")).collect(),
        }
    }

    /// State constraints kept alongside the rate-free rows of the residual.
    pub fn with_algebraic<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &[f64]) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.algebraic = Some(Arc::new(g));
        self
    }

    /// State components that projection may move.
    pub fn with_projection_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_monitor<M>(mut self, name: &str, m: M) -> Self
    where
        M: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.monitors.push((name.to_string(), Arc::new(m)));
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn monitor_names(&self) -> Vec<String> {
        self.monitors.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Indices of residual rows replaced by their time derivatives.
    pub fn rate_free_rows(&self) -> &[usize] {
        &self.rate_free
    }

    /// Finds rows whose rate sensitivity vanishes at every probe `(t, state)` and differentiates
    /// them in time.
    pub fn reduce_index(mut self, probes: &[(f64, Vec<f64>)]) -> Result<Self> {
        if self.mask.len() != self.dim {
            return Err(Error::Contract("projection mask length differs from the state dimension".into()));
        }
        let mut rng = Probes::new(0x5a7e_f7ee);
        let mut free: Option<Vec<bool>> = None;
        for (t, s) in probes {
            if s.len() != self.dim {
                return Err(Error::Contract("probe state has the wrong dimension".into()));
            }
            let r = rng.point(self.dim, 1.0);
            let base = match (self.raw)(*t, s, &r) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let jac = numeric::jacobian(|rr| (self.raw)(*t, s, rr).unwrap_or_else(|_| base.clone()), &r, base.len());
            let scale = 1.0 + jac.amax();
            let flags: Vec<bool> = (0..jac.nrows())
                .map(|i| jac.row(i).amax() <= RATE_FREE_TOL * scale)
                .collect();
            free = Some(match free {
                None => flags,
                Some(prev) => prev.iter().zip(&flags).map(|(a, b)| *a && *b).collect(),
            });
        }
        let free = free.ok_or_else(|| {
            Error::Contract("the residual could not be evaluated at any index-detection probe".into())
        })?;
        self.rate_free = free.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect();
        Ok(self)
    }

    /// The raw residual, before rate-free rows are differentiated.
    pub fn raw_residual(&self, t: f64, s: &[f64], r: &[f64]) -> Result<DVector<f64>> {
        self.check(s, r)?;
        (self.raw)(t, s, r)
    }

    fn check(&self, s: &[f64], r: &[f64]) -> Result<()> {
        if s.len() != self.dim || r.len() != self.dim {
            return Err(Error::Contract(format!(
                "state and rate must have {} entries, got {} and {}",
                self.dim,
                s.len(),
                r.len()
            )));
        }
        Ok(())
    }

    /// The solved residual: raw rows, with rate-free rows replaced by their time derivatives
    /// along `(1, r)`.
    pub fn residual(&self, t: f64, s: &[f64], r: &[f64]) -> Result<DVector<f64>> {
        self.check(s, r)?;
        let mut out = (self.raw)(t, s, r)?;
        if out.len() != self.dim {
            return Err(Error::Contract(format!(
                "residual has {} rows but the state has {} components",
                out.len(),
                self.dim
            )));
        }
        if self.rate_free.is_empty() {
            return Ok(out);
        }
        let rmax = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let h = 1e-3 / rmax.max(1.0);
        let shifted = |tau: f64| -> Result<DVector<f64>> {
            let ss: Vec<f64> = s.iter().zip(r).map(|(a, b)| a + tau * b).collect();
            (self.raw)(t + tau, &ss, r)
        };
        let (p1, m1, p2, m2) = (shifted(h)?, shifted(-h)?, shifted(2.0 * h)?, shifted(-2.0 * h)?);
        for &i in &self.rate_free {
            out[i] = (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h);
        }
        Ok(out)
    }

    /// Algebraic channel: the rate-free raw rows followed by the user-supplied constraints.
    pub fn algebraic(&self, t: f64, s: &[f64]) -> Result<DVector<f64>> {
        if s.len() != self.dim {
            return Err(Error::Contract("state has the wrong dimension".into()));
        }
        let mut vals: Vec<f64> = Vec::new();
        if !self.rate_free.is_empty() {
            let raw = (self.raw)(t, s, &vec![0.0; self.dim])?;
            vals.extend(self.rate_free.iter().map(|&i| raw[i]));
        }
        if let Some(g) = &self.algebraic {
            vals.extend(g(t, s)?.iter());
        }
        Ok(DVector::from_vec(vals))
    }

    pub fn monitors(&self, t: f64, s: &[f64]) -> Vec<f64> {
        self.monitors.iter().map(|(_, m)| m(t, s)).collect()
    }
}

/// Outcome of one rate solve.
#[derive(Debug, Clone)]
pub struct RateSolution {
    pub rate: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Newton solver that keeps its last Jacobian factorization between calls.
struct Newton {
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl Newton {
    fn new() -> Self {
        Self { lu: None }
    }

    fn refresh<F>(&mut self, f: &F, r: &[f64], rows: usize, t: f64, s: &[f64]) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<DVector<f64>>,
    {
        let err = std::cell::RefCell::new(None);
        let jac = numeric::jacobian(
            |rr| match f(rr) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    DVector::zeros(rows)
                }
            },
            r,
            rows,
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let sv = numeric::singular_values(&jac);
        let smax = sv.first().copied().unwrap_or(0.0);
        let smin = sv.last().copied().unwrap_or(0.0);
        if !(smin > 0.0) || smax / smin > MAX_CONDITION {
            return Err(Error::Degenerate {
                t,
                state: s.to_vec(),
                singular_values: sv,
            });
        }
        self.lu = Some(jac.lu());
        Ok(())
    }

    fn solve<F>(&mut self, f: F, r0: &[f64], t: f64, s: &[f64]) -> Result<RateSolution>
    where
        F: Fn(&[f64]) -> Result<DVector<f64>>,
    {
        let mut r = DVector::from_column_slice(r0);
        let mut res = f(r.as_slice())?;
        let rows = res.len();
        if rows != r.len() {
            return Err(Error::Contract(format!(
                "residual has {rows} rows for {} rate unknowns",
                r.len()
            )));
        }
        let mut fresh = false;
        if self.lu.is_none() {
            self.refresh(&f, r.as_slice(), rows, t, s)?;
            fresh = true;
        }
        for it in 0..NEWTON_MAX_ITER {
            let norm = res.norm();
            if norm <= NEWTON_TOL {
                return Ok(RateSolution {
                    rate: r,
                    iterations: it,
                    residual_norm: norm,
                });
            }
            let lu = self.lu.as_ref().expect("factorization present");
            let delta = match lu.solve(&res) {
                Some(d) => d,
                None => {
                    self.refresh(&f, r.as_slice(), rows, t, s)?;
                    fresh = true;
                    continue;
                }
            };
            r -= &delta;
            let next = f(r.as_slice())?;
            let next_norm = next.norm();
            if delta.norm() <= NEWTON_STEP_TOL * (1.0 + r.norm()) {
                return Ok(RateSolution {
                    rate: r,
                    iterations: it + 1,
                    residual_norm: next_norm,
                });
            }
            if next_norm > 0.25 * norm && !fresh {
                self.refresh(&f, r.as_slice(), rows, t, s)?;
                fresh = true;
            } else {
                fresh = false;
            }
            res = next;
        }
        let norm = res.norm();
        if norm <= NEWTON_TOL {
            return Ok(RateSolution {
                rate: r,
                iterations: NEWTON_MAX_ITER,
                residual_norm: norm,
            });
        }
        Err(Error::NonConvergence {
            iterations: NEWTON_MAX_ITER,
            residual: norm,
        })
    }
}

/// Solves `residual(t, state, ·) = 0` for the rate, starting from `guess`.
pub fn solve_rate(prob: &ImplicitProblem, t: f64, state: &[f64], guess: &[f64]) -> Result<RateSolution> {
    prob.check(state, guess)?;
    Newton::new().solve(|r| prob.residual(t, state, r), guess, t, state)
}

fn masked_indices(prob: &ImplicitProblem) -> Vec<usize> {
    prob.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
}

/// Gauss-Newton projection of `state` onto the zero set of the algebraic channel.
fn project(prob: &ImplicitProblem, t: f64, state: &[f64]) -> Result<Vec<f64>> {
    let mut s = state.to_vec();
    let mut g = prob.algebraic(t, &s)?;
    if g.is_empty() || g.norm() <= PROJECTION_SKIP {
        return Ok(s);
    }
    let free = masked_indices(prob);
    if free.is_empty() {
        return Err(Error::Initialization("projection mask selects no state components".into()));
    }
    for _ in 0..PROJECTION_MAX_ITER {
        let sub: Vec<f64> = free.iter().map(|&i| s[i]).collect();
        let eval = |z: &[f64]| {
            let mut full = s.clone();
            for (k, &i) in free.iter().enumerate() {
                full[i] = z[k];
            }
            prob.algebraic(t, &full).unwrap_or_else(|_| DVector::from_element(g.len(), f64::NAN))
        };
        let jac = numeric::jacobian(eval, &sub, g.len());
        let step = numeric::min_norm_solve(&jac, &g);
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        for (k, &i) in free.iter().enumerate() {
            s[i] -= step[k];
        }
        g = prob.algebraic(t, &s)?;
        if g.norm() <= PROJECTION_SKIP || step.norm() <= 1e-15 * (1.0 + sub.iter().map(|v| v * v).sum::<f64>().sqrt()) {
            break;
        }
    }
    let norm = g.norm();
    if !(norm <= PROJECTION_TOL) {
        return Err(Error::Initialization(format!(
            "projection did not reach the algebraic constraints (residual norm {norm:e})"
        )));
    }
    Ok(s)
}

/// Consistent initialization: projects `guess` onto `{algebraic = 0}`.
pub fn project_initial(prob: &ImplicitProblem, t: f64, guess: &[f64]) -> Result<Vec<f64>> {
    if guess.len() != prob.dim {
        return Err(Error::Contract("guess has the wrong dimension".into()));
    }
    project(prob, t, guess)
}

/// One-step scheme used by [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rk4,
    ImplicitMidpoint,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "implicit-midpoint" | "midpoint" => Ok(Method::ImplicitMidpoint),
            other => Err(Error::Contract(format!("unknown integration method {other:?}"))),
        }
    }
}

/// Sampled solution of an implicit problem.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub labels: Vec<String>,
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
    pub monitor_names: Vec<String>,
    /// `monitors[k][i]` is monitor `k` at sample `i`.
    pub monitors: Vec<Vec<f64>>,
    /// Newton iterations spent on each step (zero for the initial sample).
    pub newton_iterations: Vec<usize>,
    /// Residual norm of the recorded rate at each sample.
    pub residual_norms: Vec<f64>,
    /// Algebraic-channel norm at each sample.
    pub algebraic_norms: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn monitor(&self, name: &str) -> Option<&[f64]> {
        self.monitor_names
            .iter()
            .position(|n| n == name)
            .map(|k| self.monitors[k].as_slice())
    }
}

struct Recorder {
    traj: Trajectory,
}

impl Recorder {
    fn push(&mut self, prob: &ImplicitProblem, t: f64, s: &[f64], rate: &RateSolution, iterations: usize) -> Result<()> {
        self.traj.t.push(t);
        self.traj.states.push(s.to_vec());
        self.traj.rates.push(rate.rate.as_slice().to_vec());
        self.traj.newton_iterations.push(iterations);
        self.traj.residual_norms.push(rate.residual_norm);
        self.traj.algebraic_norms.push(prob.algebraic(t, s)?.norm());
        for (k, v) in prob.monitors(t, s).into_iter().enumerate() {
            self.traj.monitors[k].push(v);
        }
        Ok(())
    }
}

fn axpy(s: &[f64], h: f64, r: &DVector<f64>) -> Vec<f64> {
    s.iter().zip(r.iter()).map(|(a, b)| a + h * b).collect()
}

/// Integrates `prob` from `(t0, state0)` to `t1` with `round((t1 − t0)/dt)` equal steps.
///
/// The initial state is projected first; every step is followed by re-projection.
pub fn integrate(
    prob: &ImplicitProblem,
    state0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t1 >= t0) || !dt.is_finite() || !t1.is_finite() || !t0.is_finite() {
        return Err(Error::Contract(format!("invalid time grid t0 = {t0}, t1 = {t1}, dt = {dt}")));
    }
    let steps = (((t1 - t0) / dt).round() as usize).max(if t1 > t0 { 1 } else { 0 });
    let h = if steps > 0 { (t1 - t0) / steps as f64 } else { 0.0 };
    let mut s = project_initial(prob, t0, state0)?;
    let mut newton = Newton::new();
    let mut stepper = Newton::new();
    let mut rec = Recorder {
        traj: Trajectory {
            labels: prob.labels.clone(),
            t: Vec::with_capacity(steps + 1),
            states: Vec::with_capacity(steps + 1),
            rates: Vec::with_capacity(steps + 1),
            monitor_names: prob.monitor_names(),
            monitors: vec![Vec::with_capacity(steps + 1); prob.monitors.len()],
            newton_iterations: Vec::with_capacity(steps + 1),
            residual_norms: Vec::with_capacity(steps + 1),
            algebraic_norms: Vec::with_capacity(steps + 1),
        },
    };
    let wrap = |step: usize, t: f64| move |e: Error| Error::Step { step, t, source: Box::new(e) };
    let mut t = t0;
    let mut current = newton
        .solve(|r| prob.residual(t, &s, r), &vec![0.0; prob.dim], t, &s)
        .map_err(wrap(0, t))?;
    rec.push(prob, t, &s, &current, 0)?;
    for k in 1..=steps {
        let t_next = t0 + k as f64 * h;
        let (next, iterations) = match method {
            Method::Rk4 => {
                let k1 = &current.rate;
                let s2 = axpy(&s, 0.5 * h, k1);
                let k2 = newton
                    .solve(|r| prob.residual(t + 0.5 * h, &s2, r), k1.as_slice(), t + 0.5 * h, &s2)
                    .map_err(wrap(k, t))?;
                let s3 = axpy(&s, 0.5 * h, &k2.rate);
                let k3 = newton
                    .solve(|r| prob.residual(t + 0.5 * h, &s3, r), k2.rate.as_slice(), t + 0.5 * h, &s3)
                    .map_err(wrap(k, t))?;
                let s4 = axpy(&s, h, &k3.rate);
                let k4 = newton
                    .solve(|r| prob.residual(t + h, &s4, r), k3.rate.as_slice(), t + h, &s4)
                    .map_err(wrap(k, t))?;
                let incr = (k1 + 2.0 * &k2.rate + 2.0 * &k3.rate + &k4.rate) / 6.0;
                (axpy(&s, h, &incr), k2.iterations + k3.iterations + k4.iterations)
            }
            Method::ImplicitMidpoint => {
                let tm = t + 0.5 * h;
                let sref = &s;
                let mid = stepper
                    .solve(
                        |r| prob.residual(tm, &axpy(sref, 0.5 * h, &DVector::from_column_slice(r)), r),
                        current.rate.as_slice(),
                        tm,
                        sref,
                    )
                    .map_err(wrap(k, t))?;
                (axpy(&s, h, &mid.rate), mid.iterations)
            }
        };
        s = project(prob, t_next, &next).map_err(wrap(k, t_next))?;
        t = t_next;
        current = newton
            .solve(|r| prob.residual(t, &s, r), current.rate.as_slice(), t, &s)
            .map_err(wrap(k, t))?;
        rec.push(prob, t, &s, &current, iterations + current.iterations)?;
    }
    Ok(rec.traj)
}

/// `E_L = y·∂L/∂y − L`.
pub fn energy_monitor(l: &LagrangianDef, x: &[f64], y: &[f64]) -> Result<f64> {
    if l.is_time_dependent() {
        return Err(Error::Contract("the energy monitor needs an autonomous Lagrangian".into()));
    }
    let p = l.grad_y(x, y)?;
    Ok(DVector::from_column_slice(y).dot(&p) - l.value(x, y)?)
}

/// The mechanics a trajectory was produced for.
#[derive(Debug, Clone, Copy)]
pub enum Mechanics<'a> {
    Lagrangian(&'a LagrangianDef),
    Hamiltonian(&'a HamiltonianDef),
}

/// Per-sample admissibility evidence along a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    /// Norm of the velocity rows at `(x, ẋ, y)`.
    pub velocity: Vec<f64>,
    /// Norm of the full membership residual.
    pub residual: Vec<f64>,
    pub max_velocity: f64,
    pub max_residual: f64,
}

/// Evaluates the velocity residual of `d` along `traj` (and the full residual for reference).
pub fn admissibility_report(d: &DiracAlgebroid, mech: Mechanics<'_>, traj: &Trajectory) -> Result<AdmissibilityReport> {
    let n = d.base_dim();
    let mut velocity = Vec::with_capacity(traj.len());
    let mut residual = Vec::with_capacity(traj.len());
    for (s, r) in traj.states.iter().zip(&traj.rates) {
        if s.len() != n + d.fiber_dim() || r.len() != s.len() {
            return Err(Error::Contract("trajectory does not match the structure dimensions".into()));
        }
        let x = &s[..n];
        let xdot = &r[..n];
        let form = d.local_form(x)?;
        let (y, full) = match mech {
            Mechanics::Lagrangian(l) => (s[n..].to_vec(), el_residual(d, l, s, r)?.residual),
            Mechanics::Hamiltonian(h) => (
                h.grad_xi(x, &s[n..])?.as_slice().to_vec(),
                hamilton_residual(d, h, s, r)?,
            ),
        };
        velocity.push(form.velocity_residual(xdot, &y).norm());
        residual.push(full.norm());
    }
    let max = |v: &[f64]| v.iter().fold(0.0_f64, |a, b| a.max(*b));
    Ok(AdmissibilityReport {
        max_velocity: max(&velocity),
        max_residual: max(&residual),
        velocity,
        residual,
    })
}

/// Largest `|E(t) − E(0)|` of a monitor channel.
pub fn max_drift(values: &[f64]) -> f64 {
    match values.first() {
        Some(e0) => values.iter().fold(0.0_f64, |a, e| a.max((e - e0).abs())),
        None => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirac::DiracAlgebroid;
    use crate::dynamics::el_problem;
    use crate::systems::{self, System};
    use std::collections::BTreeMap;
    use std::time::Instant;

    fn system(name: &str) -> System {
        systems::build(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn rolling_disc_rate() {
        let disc = system("rolling_disc");
        let prob = disc.lagrangian_problem().unwrap();
        assert_eq!(prob.rate_free_rows(), &[1, 2]);
        let sol = solve_rate(&prob, 0.0, &[0.4, 1.5, -0.5, 0.0, 0.0], &[0.0; 5]).unwrap();
        let expect = DVector::from_row_slice(&[1.5, 0.0, 0.0, 0.0, 0.0]);
        assert!((sol.rate - expect).amax() < 1e-9);
        assert!(sol.residual_norm <= NEWTON_TOL);
    }

    #[test]
    fn oscillator_rate() {
        let prob = system("harmonic_oscillator").lagrangian_problem().unwrap();
        let sol = solve_rate(&prob, 0.0, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((sol.rate[0]).abs() < 1e-12 && (sol.rate[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_lagrangian_is_degenerate() {
        let d = DiracAlgebroid::canonical(1).unwrap();
        let l = LagrangianDef::new(1, 1, |_, _| 0.0);
        let prob = el_problem(&d, &l).unwrap();
        match solve_rate(&prob, 0.5, &[1.0, 2.0], &[0.0, 0.0]) {
            Err(Error::Degenerate { t, state, singular_values }) => {
                assert_eq!(t, 0.5);
                assert_eq!(state, vec![1.0, 2.0]);
                assert_eq!(singular_values.len(), 2);
                assert!(singular_values[1] < 1e-12);
            }
            other => panic!("expected degeneracy, got {other:?}"),
        }
        let msg = solve_rate(&prob, 0.5, &[1.0, 2.0], &[0.0, 0.0]).unwrap_err().to_string();
        assert!(msg.starts_with("degenerate implicit dynamics at t = 0.5"));
    }

    #[test]
    fn projection_recovers_disc_phase_space() {
        let disc = system("rolling_disc");
        let prob = disc.hamiltonian_problem(false).unwrap();
        let mu = 0.5;
        let s = project_initial(&prob, 0.0, &[0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((s[3] - mu * s[2]).abs() < 1e-10 && s[4].abs() < 1e-10);
        let mut rng = Probes::new(3);
        for _ in 0..20 {
            let guess = rng.point(5, 2.0);
            let s = project_initial(&prob, 0.0, &guess).unwrap();
            let (c, sn) = (s[0].cos(), s[0].sin());
            assert!((s[3] - mu * c * s[2]).abs() < 1e-10);
            assert!((s[4] - mu * sn * s[2]).abs() < 1e-10);
            assert_eq!(s[0], guess[0]);
        }
    }

    #[test]
    fn projection_identity_cases() {
        let prob = system("harmonic_oscillator").lagrangian_problem().unwrap();
        assert!(prob.algebraic(0.0, &[0.3, 0.4]).unwrap().is_empty());
        assert_eq!(project_initial(&prob, 0.0, &[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
        let disc = system("rolling_disc").lagrangian_problem().unwrap();
        let feasible = [0.2, 1.0, 2.0, 0.0, 0.0];
        assert_eq!(project_initial(&disc, 0.0, &feasible).unwrap(), feasible.to_vec());
        let fixed = project_initial(&disc, 0.0, &[0.2, 1.0, 2.0, 0.3, -0.1]).unwrap();
        assert!(fixed[3].abs() < 1e-12 && fixed[4].abs() < 1e-12);
    }

    #[test]
    fn rolling_disc_closed_form_trajectory() {
        let disc = system("rolling_disc");
        let prob = disc.lagrangian_problem().unwrap();
        let start = Instant::now();
        let traj = integrate(&prob, &[0.0, 1.0, 2.0, 0.0, 0.0], 0.0, 1.0, 1e-3, Method::Rk4).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        let end = traj.last_state();
        assert_eq!(traj.len(), 1001);
        assert!((end[0] - 1.0).abs() <= 1e-8);
        assert!((end[1] - 1.0).abs() <= 1e-8 && (end[2] - 2.0).abs() <= 1e-8);
        assert!(traj.residual_norms.iter().all(|r| *r <= 1e-9));
        let adm = admissibility_report(&disc.structure, Mechanics::Lagrangian(disc.lagrangian.as_ref().unwrap()), &traj).unwrap();
        assert!(adm.max_velocity <= 1e-9);
        for slip in ["slip1", "slip2"] {
            assert!(traj.monitor(slip).unwrap().iter().all(|v| v.abs() <= 1e-7));
        }
        let energy = traj.monitor("energy").unwrap();
        assert!((energy[0] - 4.5).abs() < 1e-12);
        assert!(max_drift(energy) <= 1e-10);
        eprintln!("rolling disc: {elapsed:.3} s");
    }

    #[test]
    fn oscillator_accuracy_and_order() {
        let prob = system("harmonic_oscillator").lagrangian_problem().unwrap();
        let pi = std::f64::consts::PI;
        let traj = integrate(&prob, &[1.0, 0.0], 0.0, pi, 1e-3, Method::Rk4).unwrap();
        assert!((traj.last_state()[0] + 1.0).abs() <= 1e-6);
        let errors: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|dt| {
                let tr = integrate(&prob, &[1.0, 0.0], 0.0, 1.0, *dt, Method::Rk4).unwrap();
                (tr.last_state()[0] - 1.0_f64.cos()).abs()
            })
            .collect();
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 3.7, "observed order {order}");
        }
    }

    #[test]
    fn implicit_midpoint_conserves_quadratic_energy() {
        let prob = system("harmonic_oscillator").lagrangian_problem().unwrap();
        let traj = integrate(&prob, &[1.0, 0.0], 0.0, 10.0, 1e-2, Method::ImplicitMidpoint).unwrap();
        assert!(max_drift(traj.monitor("energy").unwrap()) < 1e-9);
        assert!((traj.last_state()[0] - 10.0_f64.cos()).abs() < 1e-3);
    }

    fn euler_reference(j: [f64; 3], w0: [f64; 3], t1: f64, dt: f64) -> [f64; 3] {
        let f = |w: [f64; 3]| {
            let m = [j[0] * w[0], j[1] * w[1], j[2] * w[2]];
            [
                (m[1] * w[2] - m[2] * w[1]) / j[0],
                (m[2] * w[0] - m[0] * w[2]) / j[1],
                (m[0] * w[1] - m[1] * w[0]) / j[2],
            ]
        };
        let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
        let steps = (t1 / dt).round() as usize;
        let h = t1 / steps as f64;
        let mut w = w0;
        for _ in 0..steps {
            let k1 = f(w);
            let k2 = f(add(w, k1, 0.5 * h));
            let k3 = f(add(w, k2, 0.5 * h));
            let k4 = f(add(w, k3, h));
            w = [0, 1, 2].map(|i| w[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
        w
    }

    #[test]
    fn euler_top_matches_reference() {
        let top = system("euler_top");
        let prob = top.lagrangian_problem().unwrap();
        let traj = integrate(&prob, &[1.0, 0.01, 0.0], 0.0, 5.0, 1e-3, Method::Rk4).unwrap();
        let reference = euler_reference([1.0, 2.0, 3.0], [1.0, 0.01, 0.0], 5.0, 1e-5);
        let end = traj.last_state();
        for i in 0..3 {
            assert!((end[i] - reference[i]).abs() <= 1e-5, "{end:?} vs {reference:?}");
        }
        assert!(max_drift(traj.monitor("momentum_norm2").unwrap()) <= 1e-5);
    }

    #[test]
    fn admissibility_detects_corruption() {
        let osc = system("harmonic_oscillator");
        let l = osc.lagrangian.as_ref().unwrap();
        let prob = osc.lagrangian_problem().unwrap();
        let mut traj = integrate(&prob, &[1.0, 0.0], 0.0, 1.0, 1e-2, Method::Rk4).unwrap();
        let clean = admissibility_report(&osc.structure, Mechanics::Lagrangian(l), &traj).unwrap();
        assert!(clean.max_velocity <= 1e-9);
        for s in traj.states.iter_mut() {
            s[1] += 1e-3;
        }
        let dirty = admissibility_report(&osc.structure, Mechanics::Lagrangian(l), &traj).unwrap();
        assert!(dirty.max_velocity >= 1e-4);
    }

    #[test]
    fn energy_monitor_examples() {
        let disc = system("rolling_disc");
        let l = disc.lagrangian.as_ref().unwrap();
        let e = energy_monitor(l, &[0.7], &[1.0, 2.0, 0.0, 0.0]).unwrap();
        assert!((e - (0.5 + 0.5 * 2.0 * 4.0)).abs() < 1e-12);
        let linear = LagrangianDef::new(1, 2, |_, y| 2.0 * y[0] - y[1]);
        assert!(energy_monitor(&linear, &[0.0], &[3.0, 4.0]).unwrap().abs() < 1e-8);
        let forced = system("forced_oscillator_timedep");
        assert!(energy_monitor(forced.lagrangian.as_ref().unwrap(), &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn energy_conservation_over_long_horizon() {
        for name in ["harmonic_oscillator", "rolling_disc"] {
            let sys = system(name);
            let prob = sys.lagrangian_problem().unwrap();
            let traj = integrate(&prob, &sys.default_state, 0.0, 10.0, 1e-3, Method::Rk4).unwrap();
            let e = traj.monitor("energy").unwrap();
            assert!(max_drift(e) <= 1e-6 * (1.0 + e[0].abs()), "{name}");
        }
    }

    #[test]
    fn hamiltonian_and_lagrangian_disc_agree() {
        let disc = system("rolling_disc");
        let lag = integrate(&disc.lagrangian_problem().unwrap(), &[0.0, 1.0, 2.0, 0.0, 0.0], 0.0, 1.0, 1e-3, Method::Rk4).unwrap();
        let ham_prob = disc.hamiltonian_problem(false).unwrap();
        let s0 = disc.legendre_state(&[0.0, 1.0, 2.0, 0.0, 0.0]).unwrap();
        let ham = integrate(&ham_prob, &s0, 0.0, 1.0, 1e-3, Method::Rk4).unwrap();
        for (a, b) in lag.states.iter().zip(&ham.states) {
            let mapped = disc.legendre_state(a).unwrap();
            for (p, q) in mapped.iter().zip(b) {
                assert!((p - q).abs() <= 1e-6);
            }
        }
        for slip in ["slip1", "slip2"] {
            assert!(ham.monitor(slip).unwrap().iter().all(|v| v.abs() <= 1e-9));
        }
    }

    #[test]
    fn time_extension_of_autonomous_system() {
        let osc = system("harmonic_oscillator");
        let l = osc.lagrangian.as_ref().unwrap().clone();
        let lt = LagrangianDef::time_dependent(1, 1, move |_, x, y| l.value(x, y).unwrap());
        let ext = el_problem(&osc.structure.time_extended(), &lt).unwrap();
        let plain = osc.lagrangian_problem().unwrap();
        let a = integrate(&plain, &[1.0, 0.0], 0.0, 2.0, 1e-2, Method::Rk4).unwrap();
        let b = integrate(&ext, &[0.0, 1.0, 0.0], 0.0, 2.0, 1e-2, Method::Rk4).unwrap();
        for ((sa, sb), t) in a.states.iter().zip(&b.states).zip(&a.t) {
            assert!((sb[0] - t).abs() < 1e-12);
            assert!((sa[0] - sb[1]).abs() < 1e-9 && (sa[1] - sb[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn forced_oscillator_runs_with_explicit_time() {
        let sys = system("forced_oscillator_timedep");
        let prob = sys.lagrangian_problem().unwrap();
        assert!(prob.monitor_names().is_empty());
        let traj = integrate(&prob, &sys.default_state, 0.0, 3.0, 1e-3, Method::Rk4).unwrap();
        let end = traj.last_state();
        assert!((end[0] - 3.0).abs() < 1e-12);
        let fine = integrate(&prob, &sys.default_state, 0.0, 3.0, 5e-4, Method::Rk4).unwrap();
        assert!((end[1] - fine.last_state()[1]).abs() < 1e-9);
    }

    #[test]
    fn lqr_follows_hamiltonian_system() {
        let lqr = system("lqr_pmp");
        let prob = lqr.pmp_problem().unwrap();
        let (x0, xi0) = (1.0, -0.5);
        let traj = integrate(&prob, &[x0, 0.3, xi0], 0.0, 1.0, 1e-3, Method::Rk4).unwrap();
        for (t, s) in traj.t.iter().zip(&traj.states) {
            let x = x0 * t.cosh() + xi0 * t.sinh();
            let xi = x0 * t.sinh() + xi0 * t.cosh();
            assert!((s[0] - x).abs() <= 1e-6 && (s[2] - xi).abs() <= 1e-6);
            assert!((s[1] - s[2]).abs() <= 1e-9);
        }
        assert!(traj.monitor("stationarity").unwrap().iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn invalid_grid_is_rejected() {
        let prob = system("harmonic_oscillator").lagrangian_problem().unwrap();
        assert!(integrate(&prob, &[1.0, 0.0], 0.0, 1.0, 0.0, Method::Rk4).is_err());
        assert!(integrate(&prob, &[1.0, 0.0], 1.0, 0.0, 0.1, Method::Rk4).is_err());
        assert_eq!("implicit-midpoint".parse::<Method>().unwrap(), Method::ImplicitMidpoint);
    }
}
