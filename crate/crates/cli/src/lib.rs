//! Scenario runner behind the `diralg` command.
//!
//! A scenario names a built-in system, optionally replaces its constraint, picks a formalism
//! and an integration grid, and lists structure checks. Running it writes a trajectory CSV and
//! a JSON report.

pub mod checks;
pub mod format;
pub mod scenario;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use diralg_core::systems::{self, Formalism, System};
use diralg_core::{
    admissibility_report, induce, induce_affine, integrate, AffineConstraint, DiracAlgebroid, Error,
    ImplicitProblem, LinearConstraint, Mechanics, Trajectory,
};
use diralg_core::solver::max_drift;
use serde::Serialize;
use serde_json::{json, Value};

use checks::{run_check, CheckResult, Status};
use scenario::{ConstraintSpec, Scenario};

/// Failure classes, each with its process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Numerical failure other than degeneracy (non-convergence, I/O).
    Runtime,
    /// Singular rate Jacobian or non-invertible Legendre map.
    Degenerate,
    /// A requested structure check failed.
    StructureCheck,
    UnknownSystem,
    Malformed,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Runtime => 1,
            FailureKind::Degenerate => 2,
            FailureKind::StructureCheck => 3,
            FailureKind::UnknownSystem => 4,
            FailureKind::Malformed => 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        Failure {
            kind,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn classify(e: &Error) -> FailureKind {
    match e {
        Error::Degenerate { .. } | Error::Hyperregularity { .. } => FailureKind::Degenerate,
        Error::Step { source, .. } => classify(source),
        Error::Contract(_) | Error::Constraint(_) => FailureKind::Malformed,
        _ => FailureKind::Runtime,
    }
}

fn core_failure(e: Error) -> Failure {
    Failure::new(classify(&e), e.to_string())
}

/// A scenario resolved against the system catalog.
pub struct Prepared {
    pub scenario: Scenario,
    pub system: System,
    pub problem: ImplicitProblem,
    pub initial: Vec<f64>,
}

impl Prepared {
    /// Base point of the initial state.
    pub fn base_point(&self) -> &[f64] {
        &self.initial[..self.system.structure.base_dim()]
    }

    /// Catalog defaults overlaid with the scenario parameters.
    fn system_params(&self) -> BTreeMap<String, f64> {
        let info = systems::catalog().into_iter().find(|s| s.name == self.scenario.system);
        let mut params: BTreeMap<String, f64> = info
            .map(|i| i.params.iter().map(|(k, v)| (k.to_string(), *v)).collect())
            .unwrap_or_default();
        params.extend(self.scenario.params.iter().map(|(k, v)| (k.clone(), *v)));
        params
    }
}

fn apply_constraint(sys: &mut System, spec: &ConstraintSpec) -> Result<(), Failure> {
    let base = match &sys.algebroid {
        Some(a) if sys.constraint.is_some() => DiracAlgebroid::pi_graph(a.clone()),
        _ => sys.structure.clone(),
    };
    let malformed = |e: Error| Failure::new(FailureKind::Malformed, format!("constraint: {e}"));
    let (structure, linear) = match spec {
        ConstraintSpec::None => (base, None),
        ConstraintSpec::Linear { base: b, fiber } => {
            let v = LinearConstraint::adapted(b.clone(), fiber.clone());
            (induce(&base, v.clone()).map_err(malformed)?, Some(v))
        }
        ConstraintSpec::Affine {
            base: b,
            distinguished,
            fiber,
        } => {
            let a = AffineConstraint::adapted(b.clone(), *distinguished, fiber.clone());
            (induce_affine(&base, a).map_err(malformed)?, None)
        }
    };
    sys.structure = structure;
    sys.constraint = linear;
    Ok(())
}

/// Builds the system, applies the constraint and assembles the implicit problem.
pub fn prepare(sc: &Scenario) -> Result<Prepared, Failure> {
    let info = systems::catalog().into_iter().find(|s| s.name == sc.system).ok_or_else(|| {
        Failure::new(
            FailureKind::UnknownSystem,
            format!("unknown system {:?}; run `diralg list-systems` for the catalog", sc.system),
        )
    })?;
    if !info.formalisms.contains(&sc.formalism) {
        return Err(Failure::new(
            FailureKind::Malformed,
            format!("system {} does not support the {:?} formalism", sc.system, sc.formalism),
        ));
    }
    let mut system = systems::build(&sc.system, &sc.params)
        .map_err(|e| Failure::new(FailureKind::Malformed, e.to_string()))?;
    if let Some(spec) = &sc.constraint {
        apply_constraint(&mut system, spec)?;
    }
    let problem = match sc.formalism {
        Formalism::Lagrangian => system.lagrangian_problem(),
        Formalism::Hamiltonian => system.hamiltonian_problem(sc.numeric_legendre),
        Formalism::Pmp => system.pmp_problem(),
    }
    .map_err(core_failure)?;
    let initial = match (&sc.initial, sc.formalism) {
        (Some(v), _) => v.clone(),
        (None, Formalism::Hamiltonian) => system.legendre_state(&system.default_state).map_err(core_failure)?,
        (None, _) => system.default_state.clone(),
    };
    if initial.len() != problem.dim() {
        return Err(Failure::new(
            FailureKind::Malformed,
            format!(
                "initial state has {} entries, the {:?} state of {} has {} ({})",
                initial.len(),
                sc.formalism,
                sc.system,
                problem.dim(),
                problem.labels().join(", ")
            ),
        ));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Failure::new(FailureKind::Malformed, "initial state must be finite"));
    }
    Ok(Prepared {
        scenario: sc.clone(),
        system,
        problem,
        initial,
    })
}

/// Runs the requested checks in a fixed order.
pub fn run_checks(p: &Prepared) -> BTreeMap<String, CheckResult> {
    let mut list = p.scenario.checks.clone();
    list.sort();
    list.dedup();
    list.into_iter()
        .map(|c| (c.name().to_string(), run_check(c, &p.system, p.base_point())))
        .collect()
}

fn any_failed(checks: &BTreeMap<String, CheckResult>) -> bool {
    checks.values().any(|c| c.status == Status::Fail)
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonStats {
    pub steps: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub mean_iterations: f64,
    pub max_residual_norm: f64,
    pub max_algebraic_norm: f64,
}

fn newton_stats(traj: &Trajectory) -> NewtonStats {
    let total: usize = traj.newton_iterations.iter().sum();
    let max = |v: &[f64]| v.iter().fold(0.0_f64, |a, b| a.max(*b));
    NewtonStats {
        steps: traj.len().saturating_sub(1),
        total_iterations: total,
        max_iterations: traj.newton_iterations.iter().copied().max().unwrap_or(0),
        mean_iterations: total as f64 / traj.newton_iterations.len().max(1) as f64,
        max_residual_norm: max(&traj.residual_norms),
        max_algebraic_norm: max(&traj.algebraic_norms),
    }
}

/// Result of one run; the artifacts are already on disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
    pub report: Value,
    pub checks_failed: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.checks_failed {
            FailureKind::StructureCheck.exit_code()
        } else {
            0
        }
    }
}

fn admissibility(p: &Prepared, traj: &Trajectory) -> Value {
    let h;
    let mech = match p.scenario.formalism {
        Formalism::Lagrangian => match &p.system.lagrangian {
            Some(l) => Mechanics::Lagrangian(l),
            None => return Value::Null,
        },
        Formalism::Hamiltonian => match p.system.hamiltonian_def(p.scenario.numeric_legendre) {
            Ok(def) => {
                h = def;
                Mechanics::Hamiltonian(&h)
            }
            Err(e) => return json!({ "error": e.to_string() }),
        },
        Formalism::Pmp => return Value::Null,
    };
    match admissibility_report(&p.system.structure, mech, traj) {
        Ok(r) => json!({ "max_velocity": r.max_velocity, "max_residual": r.max_residual }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn monitor_summary(traj: &Trajectory) -> Value {
    let mut out = serde_json::Map::new();
    for (name, values) in traj.monitor_names.iter().zip(&traj.monitors) {
        let max_abs = values.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        out.insert(
            name.clone(),
            json!({ "max_abs": max_abs, "drift": max_drift(values), "final": values.last() }),
        );
    }
    Value::Object(out)
}

fn resolve(dir: &Path, file: &str) -> PathBuf {
    let f = Path::new(file);
    if f.is_absolute() {
        f.to_path_buf()
    } else {
        dir.join(f)
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::new(FailureKind::Runtime, format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| Failure::new(FailureKind::Runtime, format!("cannot write {}: {e}", path.display())))
}

/// Runs a scenario and writes its CSV and report under `out_dir` (or the scenario's own dir).
///
/// Integration failures still write a report (with an `error` entry) before returning.
pub fn run(sc: &Scenario, out_dir: Option<&Path>) -> Result<RunOutcome, Failure> {
    let p = prepare(sc)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&sc.output.dir));
    let csv_path = resolve(&dir, &sc.output.csv);
    let report_path = resolve(&dir, &sc.output.report);
    let checks = run_checks(&p);
    let checks_failed = any_failed(&checks);
    let t = &sc.time;
    let mut report = json!({
        "system": sc.system,
        "formalism": sc.formalism,
        "params": p.system_params(),
        "checks": checks,
    });
    let traj = match integrate(&p.problem, &p.initial, t.t0, t.t1, t.dt, t.method) {
        Ok(traj) => traj,
        Err(e) => {
            let failure = core_failure(e);
            report["error"] = json!({ "kind": format!("{:?}", failure.kind), "message": failure.message });
            report["newton"] = Value::Null;
            report["admissibility"] = Value::Null;
            report["energy_drift"] = Value::Null;
            write(&report_path, &pretty(&report))?;
            return Err(failure);
        }
    };
    let energy = traj.monitor("energy").or_else(|| traj.monitor("hamiltonian")).map(max_drift);
    report["newton"] = json!(newton_stats(&traj));
    report["admissibility"] = admissibility(&p, &traj);
    report["energy_drift"] = json!(energy);
    report["monitors"] = monitor_summary(&traj);
    report["final_state"] = json!(traj.last_state());
    write(&csv_path, &format::trajectory_csv(&traj, &p.system.angles))?;
    write(&report_path, &pretty(&report))?;
    Ok(RunOutcome {
        csv_path,
        report_path,
        report,
        checks_failed,
    })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Runs only the structure checks; the report holds the `checks` object.
pub fn check(sc: &Scenario) -> Result<(Value, bool), Failure> {
    let p = prepare(sc)?;
    let checks = run_checks(&p);
    let failed = any_failed(&checks);
    Ok((json!({ "system": sc.system, "checks": checks }), failed))
}

/// `PARAM=a:b:n`: `n` evenly spaced values from `a` to `b` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("sweep {s:?} is not of the form PARAM=a:b:n");
        let (param, range) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        if param.is_empty() || parts.len() != 3 {
            return Err(bad());
        }
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if n == 0 || !a.is_finite() || !b.is_finite() {
            return Err(bad());
        }
        let values = (0..n)
            .map(|i| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect();
        Ok(Sweep {
            param: param.to_string(),
            values,
        })
    }
}

/// One sweep member: its parameter value, output directory and outcome.
#[derive(Debug)]
pub struct SweepMember {
    pub value: f64,
    pub dir: PathBuf,
    pub outcome: Result<RunOutcome, Failure>,
}

/// Runs one scenario per sweep value on scoped worker threads; member `i` writes to
/// `out_dir/sweep_i`.
pub fn run_sweep(sc: &Scenario, sweep: &Sweep, out_dir: Option<&Path>) -> Vec<SweepMember> {
    let root = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&sc.output.dir));
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).max(1);
    let jobs: Vec<(usize, f64)> = sweep.values.iter().copied().enumerate().collect();
    let mut members: Vec<SweepMember> = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(workers) {
        let done: Vec<SweepMember> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, value)| {
                    let mut member_sc = sc.clone();
                    member_sc.params.insert(sweep.param.clone(), value);
                    let dir = root.join(format!("sweep_{i:03}"));
                    s.spawn(move || {
                        let outcome = run(&member_sc, Some(&dir));
                        SweepMember { value, dir, outcome }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        members.extend(done);
    }
    members
}

/// Exit code of a sweep: the first non-zero member code, in sweep order.
pub fn sweep_exit_code(members: &[SweepMember]) -> i32 {
    members
        .iter()
        .map(|m| match &m.outcome {
            Ok(o) => o.exit_code(),
            Err(f) => f.exit_code(),
        })
        .find(|&c| c != 0)
        .unwrap_or(0)
}

/// Catalog lines: name, description, formalisms, parameters with defaults and state labels.
pub fn catalog_text() -> String {
    let mut out = String::new();
    for s in systems::catalog() {
        let formalisms: Vec<String> = s
            .formalisms
            .iter()
            .map(|f| format!("{f:?}").to_lowercase())
            .collect();
        let params: Vec<String> = s.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&format!("{} — {}\n", s.name, s.description));
        out.push_str(&format!("    formalisms: {}\n", formalisms.join(", ")));
        out.push_str(&format!(
            "    params: {}\n",
            if params.is_empty() { "(none)".to_string() } else { params.join(", ") }
        ));
        out.push_str(&format!("    state: {}\n", s.state.join(", ")));
    }
    out
}

/// Machine-readable catalog together with the scenario schema.
pub fn catalog_json() -> Value {
    json!({
        "systems": systems::catalog(),
        "scenario_schema": scenario::json_schema(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        let kinds = [
            (FailureKind::Runtime, 1),
            (FailureKind::Degenerate, 2),
            (FailureKind::StructureCheck, 3),
            (FailureKind::UnknownSystem, 4),
            (FailureKind::Malformed, 5),
        ];
        for (k, c) in kinds {
            assert_eq!(k.exit_code(), c);
        }
        let step = Error::Step {
            step: 3,
            t: 0.3,
            source: Box::new(Error::Degenerate {
                t: 0.3,
                state: vec![],
                singular_values: vec![],
            }),
        };
        assert_eq!(classify(&step), FailureKind::Degenerate);
        let outcome = RunOutcome {
            csv_path: PathBuf::new(),
            report_path: PathBuf::new(),
            report: Value::Null,
            checks_failed: true,
        };
        assert_eq!(outcome.exit_code(), 3);
    }

    #[test]
    fn sweep_spec() {
        let s: Sweep = "k=1:2:3".parse().unwrap();
        assert_eq!(s.param, "k");
        assert_eq!(s.values, vec![1.0, 1.5, 2.0]);
        let one: Sweep = "R=0.5:9:1".parse().unwrap();
        assert_eq!(one.values, vec![0.5]);
        for bad in ["k=1:2", "=1:2:3", "k1:2:3", "k=a:2:3", "k=1:2:0"] {
            assert!(bad.parse::<Sweep>().is_err(), "{bad}");
        }
    }

    #[test]
    fn scenario_defaults_fill_in() {
        let sc = Scenario::parse(
            r#"{"schema":"diralg.scenario/1","system":"lqr_pmp","formalism":"pmp","time":{"t0":0,"t1":1,"dt":0.5}}"#,
        )
        .unwrap();
        assert_eq!(sc.output.csv, "trajectory.csv");
        assert_eq!(sc.time.method, diralg_core::Method::Rk4);
        let p = prepare(&sc).unwrap();
        assert_eq!(p.initial.len(), 3);
        assert!(run_checks(&p).is_empty());
    }
}
