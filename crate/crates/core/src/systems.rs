//! Built-in mechanical systems.
//!
//! Each entry bundles a Dirac algebroid (with any constraint already induced), its Lagrangian
//! with analytic partials, the closed-form Hamiltonian where one exists, default initial data
//! and extra monitors.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::algebroid::SkewAlgebroid;
use crate::constraints::{induce, LinearConstraint};
use crate::dirac::DiracAlgebroid;
use crate::dynamics::{
    el_problem, hamilton_problem, legendre_transform, pmp_problem, ControlSystem, HamiltonianDef,
    LagrangianDef,
};
use crate::error::{Error, Result};
use crate::numeric::Probes;
use crate::solver::ImplicitProblem;

/// Formalisms a system can be run in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formalism {
    Lagrangian,
    Hamiltonian,
    Pmp,
}

impl std::str::FromStr for Formalism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lagrangian" => Ok(Formalism::Lagrangian),
            "hamiltonian" => Ok(Formalism::Hamiltonian),
            "pmp" => Ok(Formalism::Pmp),
            other => Err(Error::Contract(format!("unknown formalism {other:?}"))),
        }
    }
}

/// Catalog entry.
#[derive(Debug, Clone, Serialize)]
pub struct SystemInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub formalisms: Vec<Formalism>,
    pub params: BTreeMap<&'static str, f64>,
    /// Labels of the Lagrangian (or control) state.
    pub state: Vec<String>,
    pub default_state: Vec<f64>,
}

type Monitor = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A fully built system.
#[derive(Clone)]
pub struct System {
    pub name: &'static str,
    pub structure: DiracAlgebroid,
    /// Unconstrained algebroid and constraint, when the structure was induced.
    pub algebroid: Option<SkewAlgebroid>,
    pub constraint: Option<LinearConstraint>,
    pub lagrangian: Option<LagrangianDef>,
    pub hamiltonian: Option<HamiltonianDef>,
    pub control: Option<ControlSystem>,
    /// Default Lagrangian state `(x, y)`, or `(x, u, ξ)` for control systems.
    pub default_state: Vec<f64>,
    /// Base coordinates that are angles on a circle chart treated as the real line.
    pub angles: Vec<usize>,
    lagrangian_monitors: Vec<(String, Monitor)>,
    hamiltonian_monitors: Vec<(String, Monitor)>,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System")
            .field("name", &self.name)
            .field("structure", &self.structure)
            .field("default_state", &self.default_state)
            .finish_non_exhaustive()
    }
}

const NAMES: [&str; 6] = [
    "canonical_particle",
    "harmonic_oscillator",
    "rolling_disc",
    "euler_top",
    "forced_oscillator_timedep",
    "lqr_pmp",
];

fn defaults(name: &str) -> Result<BTreeMap<&'static str, f64>> {
    let list: &[(&'static str, f64)] = match name {
        "canonical_particle" => &[("mass", 1.0)],
        "harmonic_oscillator" => &[("mass", 1.0), ("k", 1.0)],
        "rolling_disc" => &[("mass", 1.0), ("radius", 1.0), ("j1", 1.0), ("j2", 1.0)],
        "euler_top" => &[("j1", 1.0), ("j2", 2.0), ("j3", 3.0)],
        "forced_oscillator_timedep" => &[("k", 1.0), ("amplitude", 0.5), ("omega", 2.0)],
        "lqr_pmp" => &[],
        other => return Err(Error::Contract(format!("unknown system {other:?}"))),
    };
    Ok(list.iter().copied().collect())
}

/// All built-in systems with their default parameters.
pub fn catalog() -> Vec<SystemInfo> {
    NAMES
        .iter()
        .map(|&name| {
            let sys = build(name, &BTreeMap::new()).expect("built-in systems build with defaults");
            let (description, formalisms) = match name {
                "canonical_particle" => (
                    "free particle on the line, L = m y^2/2, on the canonical structure of TM",
                    vec![Formalism::Lagrangian, Formalism::Hamiltonian],
                ),
                "harmonic_oscillator" => (
                    "harmonic oscillator L = m y^2/2 - k x^2/2 on the canonical structure of TM",
                    vec![Formalism::Lagrangian, Formalism::Hamiltonian],
                ),
                "rolling_disc" => (
                    "vertical disc rolling without slipping; structure induced from the reduced algebroid over the heading circle by y3 = y4 = 0",
                    vec![Formalism::Lagrangian, Formalism::Hamiltonian],
                ),
                "euler_top" => (
                    "free rigid body on so(3) with principal moments j1, j2, j3",
                    vec![Formalism::Lagrangian, Formalism::Hamiltonian],
                ),
                "forced_oscillator_timedep" => (
                    "oscillator with stiffness k(1 + amplitude cos(omega t)) on the time-extended canonical structure",
                    vec![Formalism::Lagrangian],
                ),
                "lqr_pmp" => (
                    "scalar linear-quadratic control problem x' = u, cost (x^2 + u^2)/2, via the Pontryagin residual",
                    vec![Formalism::Pmp],
                ),
                _ => unreachable!(),
            };
            let labels = match name {
                "lqr_pmp" => vec!["x1".into(), "u1".into(), "xi_v1".into()],
                _ => {
                    let c = sys.structure.chart();
                    c.base_labels().iter().chain(c.fiber_labels()).cloned().collect()
                }
            };
            SystemInfo {
                name,
                description,
                formalisms,
                params: defaults(name).expect("known name"),
                state: labels,
                default_state: sys.default_state.clone(),
            }
        })
        .collect()
}

/// Maps accepted parameter spellings to the catalog names.
fn canonical_param(key: &str) -> &str {
    match key {
        "m" => "mass",
        "R" | "r" => "radius",
        "J1" => "j1",
        "J2" => "j2",
        "J3" => "j3",
        "spring" => "k",
        other => other,
    }
}

/// Builds a system by name; parameters not given keep their defaults.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<System> {
    let mut params = defaults(name)?;
    for (k, v) in overrides {
        match params.get_mut(canonical_param(k)) {
            Some(slot) => *slot = *v,
            None => return Err(Error::Contract(format!("system {name:?} has no parameter {k:?}"))),
        }
        if !v.is_finite() {
            return Err(Error::Contract(format!("parameter {k:?} must be finite")));
        }
    }
    let p = |k: &str| params[k];
    match name {
        "canonical_particle" => oscillator("canonical_particle", p("mass"), 0.0, vec![0.0, 1.0]),
        "harmonic_oscillator" => oscillator("harmonic_oscillator", p("mass"), p("k"), vec![1.0, 0.0]),
        "rolling_disc" => rolling_disc(p("mass"), p("radius"), p("j1"), p("j2")),
        "euler_top" => euler_top([p("j1"), p("j2"), p("j3")]),
        "forced_oscillator_timedep" => forced_oscillator(p("k"), p("amplitude"), p("omega")),
        "lqr_pmp" => lqr(),
        _ => unreachable!(),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) {
        return Err(Error::Contract(format!("parameter {name} must be positive, got {v}")));
    }
    Ok(())
}

fn bare(name: &'static str, structure: DiracAlgebroid, default_state: Vec<f64>) -> System {
    System {
        name,
        structure,
        algebroid: None,
        constraint: None,
        lagrangian: None,
        hamiltonian: None,
        control: None,
        default_state,
        angles: Vec::new(),
        lagrangian_monitors: Vec::new(),
        hamiltonian_monitors: Vec::new(),
    }
}

fn oscillator(name: &'static str, mass: f64, k: f64, state: Vec<f64>) -> Result<System> {
    if !(mass >= 0.0) {
        return Err(Error::Contract(format!("parameter mass must be non-negative, got {mass}")));
    }
    let mut sys = bare(name, DiracAlgebroid::canonical(1)?, state);
    sys.lagrangian = Some(
        LagrangianDef::new(1, 1, move |x, y| 0.5 * mass * y[0] * y[0] - 0.5 * k * x[0] * x[0])
            .with_grad_x(move |x, _| DVector::from_element(1, -k * x[0]))
            .with_grad_y(move |_, y| DVector::from_element(1, mass * y[0]))
            .with_hess_yy(move |_, _| DMatrix::from_element(1, 1, mass))
            .with_hess_yx(|_, _| DMatrix::zeros(1, 1)),
    );
    if mass == 0.0 {
        // singular Lagrangian: no Hamiltonian, runs fail with a degeneracy error
        return Ok(sys);
    }
    sys.hamiltonian = Some(
        HamiltonianDef::new(1, 1, move |x, xi| 0.5 * xi[0] * xi[0] / mass + 0.5 * k * x[0] * x[0])
            .with_grad_x(move |x, _| DVector::from_element(1, k * x[0]))
            .with_grad_xi(move |_, xi| DVector::from_element(1, xi[0] / mass)),
    );
    Ok(sys)
}

/// Mass matrix of the rolling disc in the quasi-velocities `y`.
fn disc_mass(m: f64, r: f64, j1: f64, j2: f64, phi: f64) -> DMatrix<f64> {
    let (s, c) = phi.sin_cos();
    DMatrix::from_row_slice(
        4,
        4,
        &[
            j1, 0.0, 0.0, 0.0,
            0.0, m * r * r + j2, m * r * c, m * r * s,
            0.0, m * r * c, m, 0.0,
            0.0, m * r * s, 0.0, m,
        ],
    )
}

fn rolling_disc(m: f64, r: f64, j1: f64, j2: f64) -> Result<System> {
    for (n, v) in [("mass", m), ("radius", r), ("j1", j1), ("j2", j2)] {
        positive(n, v)?;
    }
    let algebroid = SkewAlgebroid::rolling_disc(r)?;
    let constraint = LinearConstraint::adapted(vec![], vec![2, 3]);
    let structure = induce(&DiracAlgebroid::pi_graph(algebroid.clone()), constraint.clone())?;
    let mut sys = bare("rolling_disc", structure, vec![0.0, 1.0, 2.0, 0.0, 0.0]);
    sys.algebroid = Some(algebroid);
    sys.constraint = Some(constraint);
    sys.angles = vec![0];
    sys.lagrangian = Some(
        LagrangianDef::new(1, 4, move |x, y| {
            let mass = disc_mass(m, r, j1, j2, x[0]);
            let y = DVector::from_column_slice(y);
            0.5 * y.dot(&(mass * &y))
        })
        .with_grad_y(move |x, y| disc_mass(m, r, j1, j2, x[0]) * DVector::from_column_slice(y))
        .with_grad_x(move |x, y| {
            let (s, c) = x[0].sin_cos();
            DVector::from_element(1, m * r * y[1] * (-y[2] * s + y[3] * c))
        })
        .with_hess_yy(move |x, _| disc_mass(m, r, j1, j2, x[0]))
        .with_hess_yx(move |x, y| {
            let (s, c) = x[0].sin_cos();
            DMatrix::from_column_slice(
                4,
                1,
                &[0.0, m * r * (-y[2] * s + y[3] * c), -m * r * y[1] * s, m * r * y[1] * c],
            )
        }),
    );
    let shear = move |phi: f64, xi: &[f64]| {
        let (s, c) = phi.sin_cos();
        xi[1] - r * xi[2] * c - r * xi[3] * s
    };
    sys.hamiltonian = Some(
        HamiltonianDef::new(1, 4, move |x, xi| {
            let w = shear(x[0], xi);
            0.5 * xi[0] * xi[0] / j1 + 0.5 * w * w / j2 + 0.5 * (xi[2] * xi[2] + xi[3] * xi[3]) / m
        })
        .with_grad_xi(move |x, xi| {
            let (s, c) = x[0].sin_cos();
            let w = shear(x[0], xi) / j2;
            DVector::from_vec(vec![xi[0] / j1, w, -r * c * w + xi[2] / m, -r * s * w + xi[3] / m])
        })
        .with_grad_x(move |x, xi| {
            let (s, c) = x[0].sin_cos();
            let w = shear(x[0], xi) / j2;
            DVector::from_element(1, w * (r * xi[2] * s - r * xi[3] * c))
        }),
    );
    sys.lagrangian_monitors = vec![
        ("slip1".to_string(), Arc::new(|_, s: &[f64]| s[3]) as Monitor),
        ("slip2".to_string(), Arc::new(|_, s: &[f64]| s[4]) as Monitor),
    ];
    let h = sys.hamiltonian.clone().expect("set above");
    let h2 = h.clone();
    sys.hamiltonian_monitors = vec![
        (
            "slip1".to_string(),
            Arc::new(move |_, s: &[f64]| h.grad_xi(&s[..1], &s[1..]).map(|g| g[2]).unwrap_or(f64::NAN)) as Monitor,
        ),
        (
            "slip2".to_string(),
            Arc::new(move |_, s: &[f64]| h2.grad_xi(&s[..1], &s[1..]).map(|g| g[3]).unwrap_or(f64::NAN)) as Monitor,
        ),
    ];
    Ok(sys)
}

fn euler_top(j: [f64; 3]) -> Result<System> {
    for (n, v) in [("j1", j[0]), ("j2", j[1]), ("j3", j[2])] {
        positive(n, v)?;
    }
    let mut sys = bare("euler_top", DiracAlgebroid::pi_graph(SkewAlgebroid::so3()?), vec![1.0, 0.01, 0.0]);
    sys.algebroid = SkewAlgebroid::so3().ok();
    let jm = DMatrix::from_diagonal(&DVector::from_row_slice(&j));
    sys.lagrangian = Some(
        LagrangianDef::new(0, 3, move |_, y| 0.5 * (0..3).map(|i| j[i] * y[i] * y[i]).sum::<f64>())
            .with_grad_x(|_, _| DVector::zeros(0))
            .with_grad_y(move |_, y| DVector::from_fn(3, |i, _| j[i] * y[i]))
            .with_hess_yy(move |_, _| jm.clone())
            .with_hess_yx(|_, _| DMatrix::zeros(3, 0)),
    );
    sys.hamiltonian = Some(
        HamiltonianDef::new(0, 3, move |_, xi| 0.5 * (0..3).map(|i| xi[i] * xi[i] / j[i]).sum::<f64>())
            .with_grad_x(|_, _| DVector::zeros(0))
            .with_grad_xi(move |_, xi| DVector::from_fn(3, |i, _| xi[i] / j[i])),
    );
    sys.lagrangian_monitors = vec![(
        "momentum_norm2".to_string(),
        Arc::new(move |_, s: &[f64]| (0..3).map(|i| (j[i] * s[i]).powi(2)).sum::<f64>()) as Monitor,
    )];
    sys.hamiltonian_monitors = vec![(
        "momentum_norm2".to_string(),
        Arc::new(|_, s: &[f64]| s.iter().map(|v| v * v).sum::<f64>()) as Monitor,
    )];
    Ok(sys)
}

fn forced_oscillator(k: f64, amplitude: f64, omega: f64) -> Result<System> {
    let stiffness = move |t: f64| k * (1.0 + amplitude * (omega * t).cos());
    let structure = DiracAlgebroid::canonical(1)?.time_extended();
    let mut sys = bare("forced_oscillator_timedep", structure, vec![0.0, 1.0, 0.0]);
    sys.lagrangian = Some(
        LagrangianDef::time_dependent(1, 1, move |t, x, y| 0.5 * y[0] * y[0] - 0.5 * stiffness(t) * x[0] * x[0])
            .with_grad_x(move |x, _| {
                let dk = -k * amplitude * omega * (omega * x[0]).sin();
                DVector::from_vec(vec![-0.5 * dk * x[1] * x[1], -stiffness(x[0]) * x[1]])
            })
            .with_grad_y(|_, y| DVector::from_element(1, y[0]))
            .with_hess_yy(|_, _| DMatrix::from_element(1, 1, 1.0))
            .with_hess_yx(|_, _| DMatrix::zeros(1, 2)),
    );
    Ok(sys)
}

fn lqr() -> Result<System> {
    let mut sys = bare("lqr_pmp", DiracAlgebroid::canonical(1)?, vec![1.0, 0.0, 0.0]);
    sys.control = Some(
        ControlSystem::new(
            1,
            1,
            1,
            |_, u| DVector::from_element(1, u[0]),
            |x, u| 0.5 * (x[0] * x[0] + u[0] * u[0]),
        )?
        .with_df_dx(|_, _| DMatrix::zeros(1, 1))
        .with_df_du(|_, _| DMatrix::from_element(1, 1, 1.0))
        .with_dl_dx(|x, _| DVector::from_element(1, x[0]))
        .with_dl_du(|_, u| DVector::from_element(1, u[0])),
    );
    Ok(sys)
}

/// Deterministic Legendre-domain probes `(x, ξ)` for a system with a Lagrangian.
pub fn legendre_probes(sys: &System, count: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let l = sys
        .lagrangian
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("system {} has no Lagrangian", sys.name)))?;
    let mut probes = Probes::new(seed);
    (0..count)
        .map(|_| {
            let x = probes.point(l.base_dim(), 1.5);
            let y = probes.point(l.fiber_dim(), 1.5);
            let xi = l.grad_y(&x, &y)?;
            Ok((x, xi.as_slice().to_vec()))
        })
        .collect()
}

impl System {
    fn require_lagrangian(&self) -> Result<&LagrangianDef> {
        self.lagrangian
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("system {} has no Lagrangian formulation", self.name)))
    }

    /// Euler-Lagrange problem on `(x, y)` with the system monitors attached.
    pub fn lagrangian_problem(&self) -> Result<ImplicitProblem> {
        let mut prob = el_problem(&self.structure, self.require_lagrangian()?)?;
        for (name, m) in &self.lagrangian_monitors {
            let m = m.clone();
            prob = prob.with_monitor(name, move |t, s| m(t, s));
        }
        Ok(prob)
    }

    /// The closed-form Hamiltonian, or the numeric Legendre transform of the Lagrangian.
    pub fn hamiltonian_def(&self, numeric_legendre: bool) -> Result<HamiltonianDef> {
        if numeric_legendre || self.hamiltonian.is_none() {
            let l = self.require_lagrangian()?;
            let mut probes = Probes::new(0x1e7);
            for _ in 0..5 {
                let x = probes.point(l.base_dim(), 1.5);
                let y = probes.point(l.fiber_dim(), 1.5);
                let s = crate::numeric::singular_values(&l.hess_yy(&x, &y)?);
                let (hi, lo) = (s.first().copied().unwrap_or(0.0), s.last().copied().unwrap_or(0.0));
                if !(lo > hi * 1e-12) {
                    return Err(Error::Hyperregularity {
                        xi: l.grad_y(&x, &y)?.as_slice().to_vec(),
                        x,
                        reason: format!("vertical Hessian is singular (singular values {s:?})"),
                    });
                }
            }
            return legendre_transform(l, &legendre_probes(self, 5, 0x1e6)?);
        }
        Ok(self.hamiltonian.clone().expect("checked above"))
    }

    /// Hamilton problem on `(x, ξ)`.
    pub fn hamiltonian_problem(&self, numeric_legendre: bool) -> Result<ImplicitProblem> {
        let h = self.hamiltonian_def(numeric_legendre)?;
        let mut prob = hamilton_problem(&self.structure, &h)?;
        for (name, m) in &self.hamiltonian_monitors {
            let m = m.clone();
            prob = prob.with_monitor(name, move |t, s| m(t, s));
        }
        Ok(prob)
    }

    pub fn pmp_problem(&self) -> Result<ImplicitProblem> {
        let sys = self
            .control
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("system {} has no control formulation", self.name)))?;
        pmp_problem(sys, &self.structure)
    }

    /// Legendre image `(x, ∂L/∂y)` of a Lagrangian state.
    pub fn legendre_state(&self, state: &[f64]) -> Result<Vec<f64>> {
        let l = self.require_lagrangian()?;
        let n = l.base_dim();
        if state.len() != n + l.fiber_dim() {
            return Err(Error::Contract("state has the wrong dimension".into()));
        }
        let xi = l.grad_y(&state[..n], &state[n..])?;
        Ok(state[..n].iter().copied().chain(xi.iter().copied()).collect())
    }
}
