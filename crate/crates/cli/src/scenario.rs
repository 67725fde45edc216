//! Scenario documents.

use std::collections::BTreeMap;
use std::path::Path;

use diralg_core::systems::Formalism;
use diralg_core::Method;
use serde::{Deserialize, Serialize};

use crate::{Failure, FailureKind};

/// Value of the top-level `schema` field this version reads and writes.
pub const SCHEMA: &str = "diralg.scenario/1";

/// One run of a built-in system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub system: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Replaces the system's own constraint when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
    pub formalism: Formalism,
    /// Hamiltonian runs: use the numeric Legendre transform instead of the closed form.
    #[serde(default, skip_serializing_if = "is_false")]
    pub numeric_legendre: bool,
    /// Initial state in the coordinates of the formalism: `(x, y)`, `(x, ξ)` or `(x, u, ξ)`.
    /// The system default is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    pub time: TimeSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    #[serde(default = "default_method")]
    pub method: Method,
}

fn default_method() -> Method {
    Method::Rk4
}

/// Adapted constraint selectors (0-based indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// Drop the system's built-in constraint.
    None,
    /// `x^A` rows in `base`, `y^I = 0` for `I` in `fiber`.
    Linear {
        #[serde(default)]
        base: Vec<usize>,
        fiber: Vec<usize>,
    },
    /// As `Linear`, with `y^distinguished = 1`.
    Affine {
        #[serde(default)]
        base: Vec<usize>,
        distinguished: usize,
        fiber: Vec<usize>,
    },
}

/// Structure checks that can be requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Isotropy,
    Jacobi,
    Integrability,
    CoreAnnihilator,
    LegendreEquivalence,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Isotropy => "isotropy",
            Check::Jacobi => "jacobi",
            Check::Integrability => "integrability",
            Check::CoreAnnihilator => "core_annihilator",
            Check::LegendreEquivalence => "legendre_equivalence",
        }
    }
}

/// Artifact locations. Relative file names resolve against `dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_report")]
    pub report: String,
}

fn default_dir() -> String {
    ".".into()
}

fn default_csv() -> String {
    "trajectory.csv".into()
}

fn default_report() -> String {
    "report.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_dir(),
            csv: default_csv(),
            report: default_report(),
        }
    }
}

impl Scenario {
    /// Parses a scenario document and checks the field-level invariants.
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let sc: Scenario = serde_json::from_str(text)
            .map_err(|e| Failure::new(FailureKind::Malformed, format!("invalid scenario: {e}")))?;
        if sc.schema != SCHEMA {
            return Err(Failure::new(
                FailureKind::Malformed,
                format!("unsupported schema {:?}, expected {SCHEMA:?}", sc.schema),
            ));
        }
        let t = &sc.time;
        if !(t.dt > 0.0) || !t.dt.is_finite() {
            return Err(Failure::new(FailureKind::Malformed, format!("time.dt must be positive, got {}", t.dt)));
        }
        if !(t.t1 > t.t0) || !t.t0.is_finite() || !t.t1.is_finite() {
            return Err(Failure::new(
                FailureKind::Malformed,
                format!("time interval [{}, {}] is empty", t.t0, t.t1),
            ));
        }
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(FailureKind::Malformed, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// JSON schema of a scenario document.
pub fn json_schema() -> serde_json::Value {
    let index_list = serde_json::json!({"type": "array", "items": {"type": "integer", "minimum": 0}});
    serde_json::json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "Scenario",
        "type": "object",
        "additionalProperties": false,
        "required": ["schema", "system", "formalism", "time"],
        "properties": {
            "schema": {"const": SCHEMA},
            "system": {"type": "string", "enum": diralg_core::systems::catalog().iter().map(|s| s.name).collect::<Vec<_>>()},
            "params": {"type": "object", "additionalProperties": {"type": "number"}},
            "constraint": {
                "oneOf": [
                    {"type": "object", "additionalProperties": false, "required": ["kind"],
                     "properties": {"kind": {"const": "none"}}},
                    {"type": "object", "additionalProperties": false, "required": ["kind", "fiber"],
                     "properties": {"kind": {"const": "linear"}, "base": index_list, "fiber": index_list}},
                    {"type": "object", "additionalProperties": false, "required": ["kind", "distinguished", "fiber"],
                     "properties": {"kind": {"const": "affine"}, "base": index_list,
                                    "distinguished": {"type": "integer", "minimum": 0}, "fiber": index_list}}
                ]
            },
            "formalism": {"enum": ["lagrangian", "hamiltonian", "pmp"]},
            "numeric_legendre": {"type": "boolean", "default": false},
            "initial": {"type": "array", "items": {"type": "number"}},
            "time": {
                "type": "object", "additionalProperties": false, "required": ["t0", "t1", "dt"],
                "properties": {
                    "t0": {"type": "number"},
                    "t1": {"type": "number"},
                    "dt": {"type": "number", "exclusiveMinimum": 0},
                    "method": {"enum": ["rk4", "implicit-midpoint"], "default": "rk4"}
                }
            },
            "checks": {"type": "array", "items": {"enum": ["isotropy", "jacobi", "integrability", "core_annihilator", "legendre_equivalence"]}},
            "output": {
                "type": "object", "additionalProperties": false,
                "properties": {
                    "dir": {"type": "string", "default": "."},
                    "csv": {"type": "string", "default": "trajectory.csv"},
                    "report": {"type": "string", "default": "report.json"}
                }
            }
        }
    })
}
