//! Structure checks reported next to a run.

use diralg_core::numeric::{self, Probes};
use diralg_core::systems::System;
use diralg_core::{check_integrability, DiracAlgebroid};
use serde::Serialize;
use serde_json::{json, Value};

use crate::scenario::Check;

pub const ISOTROPY_TOL: f64 = 1e-9;
pub const JACOBI_TOL: f64 = 1e-6;
pub const CORE_ANGLE_TOL: f64 = 1e-8;
pub const LEGENDRE_TOL: f64 = 1e-6;

const PROBES: usize = 16;
const PROBE_SEED: u64 = 0xd1ac;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// Outcome of one check; `details` carries check-specific fields.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(flatten)]
    pub details: serde_json::Map<String, Value>,
}

impl CheckResult {
    fn skipped(reason: impl Into<String>) -> Self {
        let mut details = serde_json::Map::new();
        details.insert("reason".into(), Value::String(reason.into()));
        CheckResult {
            status: Status::Skipped,
            max_violation: None,
            tolerance: None,
            details,
        }
    }

    fn measured(violation: f64, tol: f64) -> Self {
        CheckResult {
            status: if violation <= tol { Status::Pass } else { Status::Fail },
            max_violation: Some(violation),
            tolerance: Some(tol),
            details: serde_json::Map::new(),
        }
    }

    fn error(message: String) -> Self {
        let mut details = serde_json::Map::new();
        details.insert("error".into(), Value::String(message));
        CheckResult {
            status: Status::Fail,
            max_violation: None,
            tolerance: None,
            details,
        }
    }
}

/// Base points: the initial one followed by seeded probes around it.
fn base_points(d: &DiracAlgebroid, x0: &[f64]) -> Vec<Vec<f64>> {
    let mut probes = Probes::new(PROBE_SEED);
    let mut pts = vec![x0.to_vec()];
    for _ in 1..PROBES {
        let dx = probes.point(d.base_dim(), 2.0);
        pts.push(x0.iter().zip(&dx).map(|(a, b)| a + b).collect());
    }
    pts
}

pub fn run_check(check: Check, sys: &System, x0: &[f64]) -> CheckResult {
    let d = &sys.structure;
    let result = match check {
        Check::Isotropy => isotropy(d, x0),
        Check::Jacobi => return jacobi(sys, x0),
        Check::Integrability => return integrability(d),
        Check::CoreAnnihilator => core_annihilator(d, x0),
        Check::LegendreEquivalence => return legendre(sys),
    };
    result.unwrap_or_else(|e| CheckResult::error(e.to_string()))
}

fn isotropy(d: &DiracAlgebroid, x0: &[f64]) -> diralg_core::Result<CheckResult> {
    let mut probes = Probes::new(PROBE_SEED ^ 1);
    let mut worst = 0.0_f64;
    for x in base_points(d, x0) {
        let xi = probes.point(d.fiber_dim(), 2.0);
        worst = worst.max(d.max_isotropy_defect(&x, &xi)?);
    }
    Ok(CheckResult::measured(worst, ISOTROPY_TOL))
}

fn jacobi(sys: &System, x0: &[f64]) -> CheckResult {
    let Some(alg) = sys.algebroid.clone().or_else(|| sys.structure.as_pi_graph()) else {
        return CheckResult::skipped("structure has no underlying algebroid bracket");
    };
    if alg.base_dim() != x0.len() {
        return CheckResult::skipped("algebroid base differs from the structure base");
    }
    let mut worst = 0.0_f64;
    for x in base_points(&sys.structure, x0) {
        match alg.max_basis_jacobiator(&x) {
            Ok(v) => worst = worst.max(v),
            Err(e) => return CheckResult::error(e.to_string()),
        }
    }
    CheckResult::measured(worst, JACOBI_TOL)
}

fn integrability(d: &DiracAlgebroid) -> CheckResult {
    match check_integrability(d) {
        Ok(rep) => {
            let mut details = serde_json::Map::new();
            details.insert("cond1".into(), json!(rep.cond1));
            details.insert("cond2".into(), json!(rep.cond2));
            details.insert("max_cond1".into(), json!(rep.max_cond1));
            details.insert("max_cond2".into(), json!(rep.max_cond2));
            details.insert("dirac_lie".into(), json!(rep.dirac_lie()));
            details.insert("witnesses".into(), json!(rep.witnesses));
            details.insert("probes".into(), json!(rep.probes));
            CheckResult {
                status: Status::Pass,
                max_violation: Some(rep.max_cond1.max(rep.max_cond2)),
                tolerance: None,
                details,
            }
        }
        Err(e) => CheckResult::skipped(e.to_string()),
    }
}

fn core_annihilator(d: &DiracAlgebroid, x0: &[f64]) -> diralg_core::Result<CheckResult> {
    let mut worst = 0.0_f64;
    for x in base_points(d, x0) {
        let core = d.core_at(&x)?;
        let ann = numeric::null_space(&d.velocity_basis(&x)?.transpose());
        worst = worst.max(numeric::max_principal_angle(&core, &ann));
    }
    Ok(CheckResult::measured(worst, CORE_ANGLE_TOL))
}

/// `H(x, ∂L/∂y) = y·∂L/∂y − L` and `∂H/∂ξ = y` for the Hamiltonian the run would use,
/// checked against the numeric transform when a closed form exists.
fn legendre(sys: &System) -> CheckResult {
    let Some(l) = sys.lagrangian.as_ref() else {
        return CheckResult::skipped("system has no Lagrangian");
    };
    let inner = || -> diralg_core::Result<CheckResult> {
        let n = l.base_dim();
        let mut probes = Probes::new(PROBE_SEED ^ 2);
        let mut worst = 0.0_f64;
        let mut closed_gap = None;
        let candidates = if sys.hamiltonian.is_some() {
            vec![sys.hamiltonian_def(false)?, sys.hamiltonian_def(true)?]
        } else {
            vec![sys.hamiltonian_def(true)?]
        };
        for _ in 0..PROBES {
            let x = probes.point(n, 1.5);
            let y = probes.point(l.fiber_dim(), 1.5);
            let xi = l.grad_y(&x, &y)?;
            let energy = y.iter().zip(xi.iter()).map(|(a, b)| a * b).sum::<f64>() - l.value(&x, &y)?;
            for h in &candidates {
                let value = h.value(&x, xi.as_slice())?;
                let grad = h.grad_xi(&x, xi.as_slice())?;
                let scale = 1.0 + energy.abs();
                worst = worst.max((value - energy).abs() / scale);
                for (g, v) in grad.iter().zip(&y) {
                    worst = worst.max((g - v).abs() / (1.0 + v.abs()));
                }
            }
            if candidates.len() == 2 {
                let gap = (candidates[0].value(&x, xi.as_slice())? - candidates[1].value(&x, xi.as_slice())?).abs();
                closed_gap = Some(closed_gap.unwrap_or(0.0_f64).max(gap));
            }
        }
        let mut res = CheckResult::measured(worst, LEGENDRE_TOL);
        if let Some(gap) = closed_gap {
            res.details.insert("closed_form_gap".into(), json!(gap));
        }
        Ok(res)
    };
    inner().unwrap_or_else(|e| CheckResult::error(e.to_string()))
}
