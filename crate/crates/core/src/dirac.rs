//! Linear (and affine) almost Dirac structures on the dual bundle `E*`, i.e. Dirac algebroids.
//!
//! Every representation is reduced pointwise to a [`LocalForm`]: velocity rows `η̂` acting on
//! `(ẋ, y)`, anchor-relation coordinates `η`, dual rows `ζ` acting on `(p, ξ̇)` and a coupling
//! `c` antisymmetric in its first two slots. A point lies in the structure iff
//!
//! ```text
//! η̂(x)(ẋ, y) = w(x),    Fᵀ ( ζ(x)(p, ξ̇) + c(x)[η(x)(ẋ, y), ξ] ) = 0
//! ```
//!
//! where the row frame `F` is the identity except for induced structures, and `(x, ξ)` satisfies
//! the phase equations. Directions are ordered `(ẋ, ξ̇, p, y)` throughout.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{Chart, MatrixField, SkewAlgebroid, VectorField};
use crate::constraints::{self, InducingConstraint};
use crate::error::{check_finite, Error, Result};
use crate::numeric::{self, Probes};

/// Pointwise tolerance for phase-bundle membership.
pub const PHASE_TOL: f64 = 1e-9;
/// Tolerance for the core/annihilator subspace comparison.
pub const CORE_ANGLE_TOL: f64 = 1e-8;
/// Isotropy tolerance used when validating user-supplied local forms.
pub const ISOTROPY_TOL: f64 = 1e-10;

/// A point `(x, ξ, ẋ, ξ̇, p, y)` of the Pontryagin bundle `TE* ⊕ T*E*`.
#[derive(Debug, Clone, PartialEq)]
pub struct PontryaginPoint {
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
    pub xdot: DVector<f64>,
    pub xidot: DVector<f64>,
    pub p: DVector<f64>,
    pub y: DVector<f64>,
}

impl PontryaginPoint {
    pub fn new(
        x: &[f64],
        xi: &[f64],
        xdot: &[f64],
        xidot: &[f64],
        p: &[f64],
        y: &[f64],
    ) -> Result<Self> {
        if x.len() != xdot.len() || x.len() != p.len() {
            return Err(Error::Contract("x, xdot and p must share the base dimension".into()));
        }
        if xi.len() != xidot.len() || xi.len() != y.len() {
            return Err(Error::Contract("xi, xidot and y must share the fiber dimension".into()));
        }
        let point = Self {
            x: DVector::from_column_slice(x),
            xi: DVector::from_column_slice(xi),
            xdot: DVector::from_column_slice(xdot),
            xidot: DVector::from_column_slice(xidot),
            p: DVector::from_column_slice(p),
            y: DVector::from_column_slice(y),
        };
        for (name, block) in [
            ("x", &point.x),
            ("xi", &point.xi),
            ("xdot", &point.xdot),
            ("xidot", &point.xidot),
            ("p", &point.p),
            ("y", &point.y),
        ] {
            check_finite(name, block.as_slice())?;
        }
        Ok(point)
    }

    /// Builds the point over `(x, ξ)` with fiber part given as a direction `(ẋ, ξ̇, p, y)`.
    pub fn from_direction(x: &[f64], xi: &[f64], direction: &DVector<f64>) -> Self {
        let (n, m) = (x.len(), xi.len());
        let d = direction.as_slice();
        Self {
            x: DVector::from_column_slice(x),
            xi: DVector::from_column_slice(xi),
            xdot: DVector::from_column_slice(&d[..n]),
            xidot: DVector::from_column_slice(&d[n..n + m]),
            p: DVector::from_column_slice(&d[n + m..2 * n + m]),
            y: DVector::from_column_slice(&d[2 * n + m..]),
        }
    }

    /// `(ẋ, ξ̇, p, y)` stacked.
    pub fn direction(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(2 * (self.x.len() + self.xi.len()));
        v.extend_from_slice(self.xdot.as_slice());
        v.extend_from_slice(self.xidot.as_slice());
        v.extend_from_slice(self.p.as_slice());
        v.extend_from_slice(self.y.as_slice());
        DVector::from_vec(v)
    }

    /// `Q = p·ẋ + y·ξ̇`.
    pub fn quadratic(&self) -> f64 {
        self.p.dot(&self.xdot) + self.y.dot(&self.xidot)
    }
}

/// The symmetric pairing `½(p₁·ẋ₂ + y₁·ξ̇₂ + p₂·ẋ₁ + y₂·ξ̇₁)` of two points over one base point.
pub fn pairing(p1: &PontryaginPoint, p2: &PontryaginPoint) -> Result<f64> {
    if p1.x.len() != p2.x.len() || p1.xi.len() != p2.xi.len() {
        return Err(Error::Contract("pairing of points from different charts".into()));
    }
    let dx = (&p1.x - &p2.x).amax();
    let dxi = (&p1.xi - &p2.xi).amax();
    if dx > 1e-12 || dxi > 1e-12 {
        return Err(Error::Contract(format!(
            "pairing requires a common base point (|Δx| = {dx:e}, |Δξ| = {dxi:e})"
        )));
    }
    Ok(0.5 * (p1.p.dot(&p2.xdot) + p1.y.dot(&p2.xidot) + p2.p.dot(&p1.xdot) + p2.y.dot(&p1.xidot)))
}

/// Pairing of two directions `(ẋ, ξ̇, p, y)` in a chart with base dimension `n`.
pub fn direction_pairing(n: usize, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let m = a.len() / 2 - n;
    let split = |v: &DVector<f64>| {
        let s = v.as_slice();
        (
            DVector::from_column_slice(&s[..n]),
            DVector::from_column_slice(&s[n..n + m]),
            DVector::from_column_slice(&s[n + m..2 * n + m]),
            DVector::from_column_slice(&s[2 * n + m..]),
        )
    };
    let (xd1, xid1, p1, y1) = split(a);
    let (xd2, xid2, p2, y2) = split(b);
    0.5 * (p1.dot(&xd2) + y1.dot(&xid2) + p2.dot(&xd1) + y2.dot(&xid1))
}

/// An element `(x, ẋ, y)` of `TM ⊕_M E`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPair {
    pub x: DVector<f64>,
    pub xdot: DVector<f64>,
    pub y: DVector<f64>,
}

impl VelocityPair {
    pub fn new(x: &[f64], xdot: &[f64], y: &[f64]) -> Self {
        Self {
            x: DVector::from_column_slice(x),
            xdot: DVector::from_column_slice(xdot),
            y: DVector::from_column_slice(y),
        }
    }
}

/// A rank-3 coefficient array `c[i][k][j]`: coefficient of `η^k ξ_j` in row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    rows: usize,
    cols: usize,
    m: usize,
    data: Vec<f64>,
}

impl Coupling {
    pub fn zeros(rows: usize, cols: usize, m: usize) -> Self {
        Self {
            rows,
            cols,
            m,
            data: vec![0.0; rows * cols * m],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.m)
    }

    #[inline]
    fn idx(&self, i: usize, k: usize, j: usize) -> usize {
        (i * self.cols + k) * self.m + j
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, j: usize) -> f64 {
        self.data[self.idx(i, k, j)]
    }

    pub fn set(&mut self, i: usize, k: usize, j: usize, v: f64) {
        let idx = self.idx(i, k, j);
        self.data[idx] = v;
    }

    /// Sets entry `(i, k, j)` to `v` and `(k, i, j)` to `−v`.
    pub fn set_antisymmetric(&mut self, i: usize, k: usize, j: usize, v: f64) {
        self.set(i, k, j, v);
        self.set(k, i, j, -v);
    }

    /// Contraction with `ξ` in the last slot: the `rows × cols` matrix `Σ_j c[i][k][j] ξ_j`.
    pub fn contract_xi(&self, xi: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, k| {
            (0..self.m).map(|j| self.get(i, k, j) * xi[j]).sum()
        })
    }

    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for k in 0..self.cols {
                for j in 0..self.m {
                    worst = worst.max((self.get(i, k, j) + self.get(k, i, j)).abs());
                }
            }
        }
        worst
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub type CouplingField = Arc<dyn Fn(&[f64]) -> Coupling + Send + Sync>;

/// Pointwise data of a Dirac algebroid at one base point `x`.
#[derive(Debug, Clone)]
pub struct LocalForm {
    pub n: usize,
    pub m: usize,
    /// `η̂`: rows acting on `(ẋ, y)`.
    pub velocity: DMatrix<f64>,
    /// Right-hand side `w` of the velocity rows (zero for linear structures).
    pub velocity_offset: DVector<f64>,
    /// `η`: `r × (n+m)` acting on `(ẋ, y)`.
    pub eta: DMatrix<f64>,
    /// `ζ`: `r × (n+m)` acting on `(p, ξ̇)`.
    pub zeta: DMatrix<f64>,
    /// `c[i][k][j]` with shape `r × r × m`.
    pub coupling: Coupling,
    /// Row frame `F` (`r × s`); the dynamic rows are `Fᵀ(ζ + c[η, ξ])`.
    pub frame: DMatrix<f64>,
    /// Base coordinates constrained to vanish on the support.
    pub base_zero: Vec<usize>,
    /// Phase equations `a + B ξ = 0`.
    pub phase_offset: DVector<f64>,
    pub phase_matrix: DMatrix<f64>,
}

impl LocalForm {
    pub fn total_dim(&self) -> usize {
        self.n + self.m
    }

    pub fn is_affine(&self) -> bool {
        self.velocity_offset.iter().any(|&v| v != 0.0)
    }

    /// `(ẋ, y)` stacked.
    fn velocity_vector(xdot: &[f64], y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(xdot.len() + y.len(), xdot.iter().chain(y).copied())
    }

    pub fn velocity_residual(&self, xdot: &[f64], y: &[f64]) -> DVector<f64> {
        &self.velocity * Self::velocity_vector(xdot, y) - &self.velocity_offset
    }

    /// Frame-projected dual rows `Fᵀζ` acting on `(p, ξ̇)`.
    pub fn core_rows(&self) -> DMatrix<f64> {
        self.frame.transpose() * &self.zeta
    }

    /// Full residual: velocity rows followed by the dynamic rows.
    pub fn residual(&self, xi: &[f64], xdot: &[f64], xidot: &[f64], p: &[f64], y: &[f64]) -> DVector<f64> {
        let vel = Self::velocity_vector(xdot, y);
        let dual = DVector::from_iterator(p.len() + xidot.len(), p.iter().chain(xidot).copied());
        let eta = &self.eta * &vel;
        let coupled = self.coupling.contract_xi(xi) * eta;
        let dynamic = self.frame.transpose() * (&self.zeta * dual + coupled);
        let v = &self.velocity * vel - &self.velocity_offset;
        let mut out = DVector::zeros(v.len() + dynamic.len());
        out.rows_mut(0, v.len()).copy_from(&v);
        out.rows_mut(v.len(), dynamic.len()).copy_from(&dynamic);
        out
    }

    /// Linear part of the residual in the direction `(ẋ, ξ̇, p, y)` at fiber point `ξ`.
    pub fn linear_matrix(&self, xi: &[f64]) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let total = n + m;
        let q = self.velocity.nrows();
        let s = self.frame.ncols();
        let mut out = DMatrix::zeros(q + s, 2 * total);
        // velocity rows: ẋ columns and y columns
        out.view_mut((0, 0), (q, n)).copy_from(&self.velocity.columns(0, n));
        out.view_mut((0, n + m + n), (q, m))
            .copy_from(&self.velocity.columns(n, m));
        let ft = self.frame.transpose();
        let g = &ft * self.coupling.contract_xi(xi) * &self.eta;
        let z = &ft * &self.zeta;
        out.view_mut((q, 0), (s, n)).copy_from(&g.columns(0, n));
        out.view_mut((q, 2 * n + m), (s, m)).copy_from(&g.columns(n, m));
        // dual rows: p columns then ξ̇ columns
        out.view_mut((q, n + m), (s, n)).copy_from(&z.columns(0, n));
        out.view_mut((q, n), (s, m)).copy_from(&z.columns(n, m));
        out
    }

    pub fn phase_residual(&self, x: &[f64], xi: &[f64]) -> DVector<f64> {
        let k = self.base_zero.len() + self.phase_offset.len();
        let mut out = DVector::zeros(k);
        for (r, &a) in self.base_zero.iter().enumerate() {
            out[r] = x[a];
        }
        if !self.phase_offset.is_empty() {
            let ph = &self.phase_offset + &self.phase_matrix * DVector::from_column_slice(xi);
            out.rows_mut(self.base_zero.len(), ph.len()).copy_from(&ph);
        }
        out
    }

    /// Checks shapes and the square row count.
    pub(crate) fn check_shapes(&self) -> Result<()> {
        let total = self.n + self.m;
        let r = self.eta.nrows();
        let bad = |what: &str| Err(Error::Contract(format!("local form: {what}")));
        if self.velocity.ncols() != total || self.eta.ncols() != total || self.zeta.ncols() != total {
            return bad("row maps must act on n+m coordinates");
        }
        if self.zeta.nrows() != r || self.frame.nrows() != r {
            return bad("eta, zeta and frame must share the row count r");
        }
        if self.coupling.shape() != (r, r, self.m) {
            return bad("coupling must have shape r × r × m");
        }
        if self.velocity_offset.len() != self.velocity.nrows() {
            return bad("velocity offset length must match the velocity rows");
        }
        if self.phase_matrix.nrows() != self.phase_offset.len()
            || (self.phase_matrix.nrows() > 0 && self.phase_matrix.ncols() != self.m)
        {
            return bad("phase equations must be k × m with k offsets");
        }
        if self.velocity.nrows() + self.frame.ncols() != total {
            return Err(Error::Structure {
                message: "residual is not square: velocity rows + dynamic rows ≠ n+m".into(),
                rank: self.velocity.nrows() + self.frame.ncols(),
                expected: total,
            });
        }
        Ok(())
    }
}

/// The presymplectic-type data of an ω-graph: `ρ^i_a(x)` (`m × n`) and `c^k_ab(x)`.
#[derive(Clone)]
pub struct OmegaForm {
    /// `x ↦ ρ^i_a(x)`, an `m × n` matrix.
    pub rho: MatrixField,
    /// `x ↦ c^k_ab(x)` stored as a coupling with `get(a, b, k)`, antisymmetric in `a, b`.
    pub form: CouplingField,
}

/// Local data of a general Dirac algebroid.
#[derive(Clone)]
pub struct GeneralLocal {
    /// `η`: `r × (n+m)` on `(ẋ, y)`.
    pub eta: MatrixField,
    /// `η̂`: `(n+m−r) × (n+m)` on `(ẋ, y)`.
    pub eta_hat: MatrixField,
    /// `ζ`: `r × (n+m)` on `(p, ξ̇)`.
    pub zeta: MatrixField,
    /// `ζ̂`: `(n+m−r) × (n+m)` on `(p, ξ̇)`, the complementary dual coordinates.
    pub zeta_hat: MatrixField,
    /// `c[i][k][j]`, `r × r × m`, antisymmetric in `i, k`.
    pub coupling: CouplingField,
    pub base_zero: Vec<usize>,
    pub phase_offset: Option<VectorField>,
    pub phase_matrix: Option<MatrixField>,
}

impl GeneralLocal {
    pub fn new<A, B, C, D, K>(eta: A, eta_hat: B, zeta: C, zeta_hat: D, coupling: K) -> Self
    where
        A: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        C: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        K: Fn(&[f64]) -> Coupling + Send + Sync + 'static,
    {
        Self {
            eta: Arc::new(eta),
            eta_hat: Arc::new(eta_hat),
            zeta: Arc::new(zeta),
            zeta_hat: Arc::new(zeta_hat),
            coupling: Arc::new(coupling),
            base_zero: Vec::new(),
            phase_offset: None,
            phase_matrix: None,
        }
    }

    /// Restricts the support to `x^a = 0` for the given base indices.
    pub fn with_base_zero(mut self, indices: Vec<usize>) -> Self {
        self.base_zero = indices;
        self
    }

    /// Restricts the phase bundle to `a(x) + B(x) ξ = 0`.
    pub fn with_phase<A, B>(mut self, offset: A, matrix: B) -> Self
    where
        A: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        B: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.phase_offset = Some(Arc::new(offset));
        self.phase_matrix = Some(Arc::new(matrix));
        self
    }
}

/// The concrete representation behind a [`DiracAlgebroid`].
#[derive(Clone)]
pub enum Representation {
    PiGraph(SkewAlgebroid),
    OmegaGraph(OmegaForm),
    Canonical,
    GeneralLocal(GeneralLocal),
    Induced {
        base: Box<DiracAlgebroid>,
        constraint: InducingConstraint,
    },
    TimeExtended {
        base: Box<DiracAlgebroid>,
    },
}

impl Representation {
    pub fn kind(&self) -> &'static str {
        match self {
            Representation::PiGraph(_) => "pi-graph",
            Representation::OmegaGraph(_) => "omega-graph",
            Representation::Canonical => "canonical",
            Representation::GeneralLocal(_) => "general-local",
            Representation::Induced { .. } => "induced",
            Representation::TimeExtended { .. } => "time-extended",
        }
    }
}

/// Result of [`DiracAlgebroid::phase_membership`].
#[derive(Debug, Clone)]
pub struct PhaseMembership {
    pub member: bool,
    pub residual: DVector<f64>,
}

/// A Dirac algebroid on `E`, i.e. a linear (or affine) almost Dirac structure on `E*`.
#[derive(Clone)]
pub struct DiracAlgebroid {
    chart: Chart,
    repr: Representation,
}

impl fmt::Debug for DiracAlgebroid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiracAlgebroid")
            .field("chart", &self.chart)
            .field("representation", &self.repr.kind())
            .finish()
    }
}

fn validation_probes(n: usize, m: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut probes = Probes::new(0xd12a_c0de);
    (0..8).map(|_| (probes.point(n, 1.0), probes.point(m, 1.0))).collect()
}

impl DiracAlgebroid {
    /// The graph of the linear bivector of a skew algebroid.
    pub fn pi_graph(algebroid: SkewAlgebroid) -> Self {
        Self {
            chart: algebroid.chart().clone(),
            repr: Representation::PiGraph(algebroid),
        }
    }

    /// The graph of a linear 2-form with data `ρ^i_a(x)` (`m × n`) and `c^k_ab(x)`.
    pub fn omega_graph<R, C>(chart: Chart, rho: R, form: C) -> Result<Self>
    where
        R: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        C: Fn(&[f64]) -> Coupling + Send + Sync + 'static,
    {
        let d = Self {
            chart,
            repr: Representation::OmegaGraph(OmegaForm {
                rho: Arc::new(rho),
                form: Arc::new(form),
            }),
        };
        d.validate()?;
        Ok(d)
    }

    /// The canonical structure `D_M` on `E = TM` (`n = m`).
    pub fn canonical(n: usize) -> Result<Self> {
        let labels_base: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
        let labels_fiber: Vec<String> = (1..=n).map(|a| format!("v{a}")).collect();
        let base: Vec<&str> = labels_base.iter().map(String::as_str).collect();
        let fiber: Vec<&str> = labels_fiber.iter().map(String::as_str).collect();
        Ok(Self {
            chart: Chart::new(n, n)?.with_labels(&base, &fiber)?,
            repr: Representation::Canonical,
        })
    }

    /// A structure given directly in local form; validated for shape, antisymmetry and
    /// maximal isotropy on fixed probe points.
    pub fn general_local(chart: Chart, local: GeneralLocal) -> Result<Self> {
        let d = Self {
            chart,
            repr: Representation::GeneralLocal(local),
        };
        d.validate()?;
        Ok(d)
    }

    pub(crate) fn from_parts(chart: Chart, repr: Representation) -> Self {
        Self { chart, repr }
    }

    /// The time extension `D × {ẋ⁰ = 1}` on `E × ℝ → M × ℝ`, with `x⁰` the first base coordinate.
    pub fn time_extended(&self) -> Self {
        Self {
            chart: self.chart.time_extended(),
            repr: Representation::TimeExtended {
                base: Box::new(self.clone()),
            },
        }
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn base_dim(&self) -> usize {
        self.chart.base_dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.chart.fiber_dim()
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    /// Whether the structure is affine rather than linear (time extensions, affine inductions).
    pub fn is_affine(&self) -> bool {
        match &self.repr {
            Representation::TimeExtended { .. } => true,
            Representation::Induced { base, constraint } => {
                base.is_affine() || matches!(constraint, InducingConstraint::Affine(_))
            }
            _ => false,
        }
    }

    /// The underlying skew algebroid when this is a Π-graph or the canonical structure.
    pub fn as_pi_graph(&self) -> Option<SkewAlgebroid> {
        match &self.repr {
            Representation::PiGraph(a) => Some(a.clone()),
            Representation::Canonical => SkewAlgebroid::canonical(self.base_dim()).ok(),
            _ => None,
        }
    }

    /// Evaluates the pointwise local form at `x`.
    pub fn local_form(&self, x: &[f64]) -> Result<LocalForm> {
        self.chart.check_base(x)?;
        check_finite("base point", x)?;
        let (n, m) = (self.base_dim(), self.fiber_dim());
        let total = n + m;
        let empty_phase = || (DVector::zeros(0), DMatrix::zeros(0, m));
        let form = match &self.repr {
            Representation::PiGraph(alg) => {
                let rho = alg.eval_anchor(x)?;
                let c = alg.eval_structure(x)?;
                let mut velocity = DMatrix::zeros(n, total);
                velocity.view_mut((0, 0), (n, n)).fill_with_identity();
                velocity.view_mut((0, n), (n, m)).copy_from(&(-&rho));
                let mut eta = DMatrix::zeros(m, total);
                eta.view_mut((0, n), (m, m)).fill_with_identity();
                let mut zeta = DMatrix::zeros(m, total);
                zeta.view_mut((0, 0), (m, n)).copy_from(&rho.transpose());
                zeta.view_mut((0, n), (m, m)).fill_with_identity();
                let mut coupling = Coupling::zeros(m, m, m);
                for i in 0..m {
                    for k in 0..m {
                        for j in 0..m {
                            coupling.set(i, k, j, c.get(j, i, k));
                        }
                    }
                }
                let (phase_offset, phase_matrix) = empty_phase();
                LocalForm {
                    n,
                    m,
                    velocity,
                    velocity_offset: DVector::zeros(n),
                    eta,
                    zeta,
                    coupling,
                    frame: DMatrix::identity(m, m),
                    base_zero: Vec::new(),
                    phase_offset,
                    phase_matrix,
                }
            }
            Representation::OmegaGraph(omega) => {
                let rho = (omega.rho)(x);
                check_finite("omega anchor", rho.as_slice())?;
                if rho.shape() != (m, n) {
                    return Err(Error::Contract(format!(
                        "omega-graph rho has shape {:?}, expected ({m}, {n})",
                        rho.shape()
                    )));
                }
                let c = (omega.form)(x);
                check_finite("omega form", c.as_slice())?;
                if c.shape() != (n, n, m) {
                    return Err(Error::Contract("omega-graph form must be n × n × m".into()));
                }
                let mut velocity = DMatrix::zeros(m, total);
                velocity.view_mut((0, 0), (m, n)).copy_from(&(-&rho));
                velocity.view_mut((0, n), (m, m)).fill_with_identity();
                let mut eta = DMatrix::zeros(n, total);
                eta.view_mut((0, 0), (n, n)).fill_with_identity();
                let mut zeta = DMatrix::zeros(n, total);
                zeta.view_mut((0, 0), (n, n)).fill_with_identity();
                zeta.view_mut((0, n), (n, m)).copy_from(&rho.transpose());
                let mut coupling = Coupling::zeros(n, n, m);
                for a in 0..n {
                    for b in 0..n {
                        for k in 0..m {
                            coupling.set(a, b, k, -0.5 * (c.get(a, b, k) - c.get(b, a, k)));
                        }
                    }
                }
                let (phase_offset, phase_matrix) = empty_phase();
                LocalForm {
                    n,
                    m,
                    velocity,
                    velocity_offset: DVector::zeros(m),
                    eta,
                    zeta,
                    coupling,
                    frame: DMatrix::identity(n, n),
                    base_zero: Vec::new(),
                    phase_offset,
                    phase_matrix,
                }
            }
            Representation::Canonical => {
                let mut velocity = DMatrix::zeros(n, total);
                velocity.view_mut((0, 0), (n, n)).fill_with_identity();
                velocity.view_mut((0, n), (n, n)).copy_from(&(-DMatrix::identity(n, n)));
                let mut eta = DMatrix::zeros(n, total);
                eta.view_mut((0, n), (n, n)).fill_with_identity();
                let mut zeta = DMatrix::zeros(n, total);
                zeta.view_mut((0, 0), (n, n)).fill_with_identity();
                zeta.view_mut((0, n), (n, n)).fill_with_identity();
                let (phase_offset, phase_matrix) = empty_phase();
                LocalForm {
                    n,
                    m,
                    velocity,
                    velocity_offset: DVector::zeros(n),
                    eta,
                    zeta,
                    coupling: Coupling::zeros(n, n, m),
                    frame: DMatrix::identity(n, n),
                    base_zero: Vec::new(),
                    phase_offset,
                    phase_matrix,
                }
            }
            Representation::GeneralLocal(gl) => {
                let eta = (gl.eta)(x);
                let velocity = (gl.eta_hat)(x);
                let zeta = (gl.zeta)(x);
                let coupling = (gl.coupling)(x);
                for (what, v) in [
                    ("eta", eta.as_slice()),
                    ("eta_hat", velocity.as_slice()),
                    ("zeta", zeta.as_slice()),
                    ("coupling", coupling.as_slice()),
                ] {
                    check_finite(what, v)?;
                }
                let (phase_offset, phase_matrix) = match (&gl.phase_offset, &gl.phase_matrix) {
                    (Some(a), Some(b)) => (a(x), b(x)),
                    _ => empty_phase(),
                };
                let r = eta.nrows();
                let q = velocity.nrows();
                LocalForm {
                    n,
                    m,
                    velocity,
                    velocity_offset: DVector::zeros(q),
                    eta,
                    zeta,
                    coupling,
                    frame: DMatrix::identity(r, r),
                    base_zero: gl.base_zero.clone(),
                    phase_offset,
                    phase_matrix,
                }
            }
            Representation::Induced { base, constraint } => {
                let base_form = base.local_form(x)?;
                constraints::induced_local_form(base, &base_form, constraint, x)?
            }
            Representation::TimeExtended { base } => {
                let inner = base.local_form(&x[1..])?;
                time_extend_form(&inner)
            }
        };
        form.check_shapes()?;
        Ok(form)
    }

    fn check_point(&self, p: &PontryaginPoint) -> Result<()> {
        let (n, m) = (self.base_dim(), self.fiber_dim());
        if p.x.len() != n || p.xi.len() != m || p.xdot.len() != n || p.p.len() != n
            || p.xidot.len() != m || p.y.len() != m
        {
            return Err(Error::Contract(format!(
                "Pontryagin point dimensions do not match chart (n = {n}, m = {m})"
            )));
        }
        Ok(())
    }

    /// Defining-constraint values at `P`; `P` lies in the structure iff this vanishes and
    /// `(x, ξ)` is in the phase bundle.
    pub fn residual(&self, p: &PontryaginPoint) -> Result<DVector<f64>> {
        self.check_point(p)?;
        let form = self.local_form(p.x.as_slice())?;
        Ok(form.residual(
            p.xi.as_slice(),
            p.xdot.as_slice(),
            p.xidot.as_slice(),
            p.p.as_slice(),
            p.y.as_slice(),
        ))
    }

    /// Orthonormal basis (columns, ordered `(ẋ, ξ̇, p, y)`) of the fiber of the structure's
    /// model subspace over `(x, ξ)`.
    pub fn basis_matrix_at(&self, x: &[f64], xi: &[f64]) -> Result<DMatrix<f64>> {
        let form = self.local_form(x)?;
        if xi.len() != self.fiber_dim() {
            return Err(Error::Contract("xi has the wrong dimension".into()));
        }
        let lin = form.linear_matrix(xi);
        let kernel = numeric::null_space(&lin);
        let expected = form.total_dim();
        if kernel.ncols() != expected {
            return Err(Error::Structure {
                message: format!("subspace at x = {x:?} is not of maximal dimension"),
                rank: numeric::rank(&lin),
                expected,
            });
        }
        Ok(kernel)
    }

    /// [`Self::basis_matrix_at`] as a list of directions attached to `(x, ξ)`.
    pub fn basis_at(&self, x: &[f64], xi: &[f64]) -> Result<Vec<PontryaginPoint>> {
        let basis = self.basis_matrix_at(x, xi)?;
        Ok(basis
            .column_iter()
            .map(|c| PontryaginPoint::from_direction(x, xi, &c.into_owned()))
            .collect())
    }

    /// `η̂(x)(ẋ, y) − w(x)`; zero iff the pair lies in the velocity bundle.
    pub fn velocity_residual(&self, v: &VelocityPair) -> Result<DVector<f64>> {
        if v.xdot.len() != self.base_dim() || v.y.len() != self.fiber_dim() {
            return Err(Error::Contract("velocity pair has the wrong dimensions".into()));
        }
        let form = self.local_form(v.x.as_slice())?;
        Ok(form.velocity_residual(v.xdot.as_slice(), v.y.as_slice()))
    }

    /// Orthonormal basis of the (model) velocity bundle at `x`, as columns on `(ẋ, y)`.
    pub fn velocity_basis(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let form = self.local_form(x)?;
        Ok(numeric::null_space(&form.velocity))
    }

    /// Basis (columns on `(p, ξ̇)`) of the core at `x`, checked against the annihilator of
    /// the velocity bundle.
    pub fn core_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let form = self.local_form(x)?;
        let core = numeric::null_space(&form.core_rows());
        let vel = numeric::null_space(&form.velocity);
        let annihilator = numeric::null_space(&vel.transpose());
        let angle = numeric::max_principal_angle(&core, &annihilator);
        if angle > CORE_ANGLE_TOL {
            return Err(Error::Structure {
                message: format!(
                    "core differs from the annihilator of the velocity bundle (angle {angle:e})"
                ),
                rank: core.ncols(),
                expected: annihilator.ncols(),
            });
        }
        Ok(core)
    }

    /// Whether `(x, ξ)` lies in the phase bundle, with the residual values.
    pub fn phase_membership(&self, x: &[f64], xi: &[f64]) -> Result<PhaseMembership> {
        let form = self.local_form(x)?;
        let residual = form.phase_residual(x, xi);
        let member = residual.iter().all(|v| v.abs() <= PHASE_TOL);
        Ok(PhaseMembership { member, residual })
    }

    /// Largest absolute pairing among basis directions at `(x, ξ)`.
    pub fn max_isotropy_defect(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        let basis = self.basis_matrix_at(x, xi)?;
        let n = self.base_dim();
        let mut worst = 0.0_f64;
        for i in 0..basis.ncols() {
            for j in i..basis.ncols() {
                let v = direction_pairing(n, &basis.column(i).into_owned(), &basis.column(j).into_owned());
                worst = worst.max(v.abs());
            }
        }
        Ok(worst)
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = (self.base_dim(), self.fiber_dim());
        for (x, xi) in validation_probes(n, m) {
            let form = self.local_form(&x)?;
            if form.coupling.max_asymmetry() > 1e-12 {
                return Err(Error::Structure {
                    message: "coupling is not antisymmetric in its first two slots".into(),
                    rank: 0,
                    expected: 0,
                });
            }
            if let Representation::GeneralLocal(gl) = &self.repr {
                let coords = numeric::vstack(n + m, &[&(gl.zeta)(&x), &(gl.zeta_hat)(&x)]);
                if coords.nrows() != n + m || numeric::rank(&coords) != n + m {
                    return Err(Error::Structure {
                        message: "(zeta, zeta_hat) is not a coordinate system on (p, xidot)".into(),
                        rank: numeric::rank(&coords),
                        expected: n + m,
                    });
                }
            }
            let defect = self.max_isotropy_defect(&x, &xi)?;
            if defect > ISOTROPY_TOL {
                return Err(Error::Structure {
                    message: format!("subspace is not isotropic (max pairing {defect:e})"),
                    rank: n + m,
                    expected: n + m,
                });
            }
        }
        Ok(())
    }
}

/// Local form of `D × {ẋ⁰ = 1, p₀ free}` from the local form of `D`.
fn time_extend_form(inner: &LocalForm) -> LocalForm {
    let (n, m) = (inner.n, inner.m);
    let total = n + m + 1;
    let pad = |mat: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(mat.nrows(), total);
        out.view_mut((0, 1), (mat.nrows(), n + m)).copy_from(mat);
        out
    };
    let q = inner.velocity.nrows();
    let mut velocity = DMatrix::zeros(q + 1, total);
    velocity[(0, 0)] = 1.0;
    velocity.view_mut((1, 1), (q, n + m)).copy_from(&inner.velocity);
    let mut velocity_offset = DVector::zeros(q + 1);
    velocity_offset[0] = 1.0;
    velocity_offset.rows_mut(1, q).copy_from(&inner.velocity_offset);
    LocalForm {
        n: n + 1,
        m,
        velocity,
        velocity_offset,
        eta: pad(&inner.eta),
        zeta: pad(&inner.zeta),
        coupling: inner.coupling.clone(),
        frame: inner.frame.clone(),
        base_zero: inner.base_zero.iter().map(|a| a + 1).collect(),
        phase_offset: inner.phase_offset.clone(),
        phase_matrix: inner.phase_matrix.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::StructureTensor;
    use proptest::prelude::*;

    fn disc() -> DiracAlgebroid {
        DiracAlgebroid::pi_graph(SkewAlgebroid::rolling_disc(1.3).unwrap())
    }

    fn omega_identity(n: usize) -> DiracAlgebroid {
        DiracAlgebroid::omega_graph(
            Chart::new(n, n).unwrap(),
            move |_| DMatrix::identity(n, n),
            move |_| Coupling::zeros(n, n, n),
        )
        .unwrap()
    }

    fn pi_identity(n: usize) -> DiracAlgebroid {
        DiracAlgebroid::pi_graph(
            SkewAlgebroid::new(
                Chart::new(n, n).unwrap(),
                move |_| DMatrix::identity(n, n),
                move |_| StructureTensor::zeros(n),
            )
            .unwrap(),
        )
    }

    /// A Π-graph with non-constant anchor and structure functions, n = 2, m = 3.
    fn wavy() -> DiracAlgebroid {
        let alg = SkewAlgebroid::new(
            Chart::new(2, 3).unwrap(),
            |x| DMatrix::from_row_slice(2, 3, &[1.0, x[1], 0.0, 0.0, x[0].cos(), 1.0]),
            |x| {
                let mut c = StructureTensor::zeros(3);
                c.set_antisymmetric(0, 1, 2, x[0] * x[1]);
                c.set_antisymmetric(2, 0, 1, x[1].sin());
                c
            },
        )
        .unwrap();
        DiracAlgebroid::pi_graph(alg)
    }

    /// Exposes the canonical structure as a general local form with ζ̂ = p.
    fn canonical_general(n: usize) -> DiracAlgebroid {
        let t = 2 * n;
        DiracAlgebroid::general_local(
            Chart::new(n, n).unwrap(),
            GeneralLocal::new(
                move |_| {
                    let mut e = DMatrix::zeros(n, t);
                    e.view_mut((0, n), (n, n)).fill_with_identity();
                    e
                },
                move |_| {
                    let mut e = DMatrix::zeros(n, t);
                    e.view_mut((0, 0), (n, n)).fill_with_identity();
                    e.view_mut((0, n), (n, n)).copy_from(&-DMatrix::identity(n, n));
                    e
                },
                move |_| {
                    let mut z = DMatrix::zeros(n, t);
                    z.view_mut((0, 0), (n, n)).fill_with_identity();
                    z.view_mut((0, n), (n, n)).fill_with_identity();
                    z
                },
                move |_| {
                    let mut z = DMatrix::zeros(n, t);
                    z.view_mut((0, 0), (n, n)).fill_with_identity();
                    z
                },
                move |_| Coupling::zeros(n, n, n),
            ),
        )
        .unwrap()
    }

    fn structures() -> Vec<DiracAlgebroid> {
        vec![
            disc(),
            wavy(),
            DiracAlgebroid::canonical(2).unwrap(),
            omega_identity(2),
            canonical_general(2),
            DiracAlgebroid::pi_graph(SkewAlgebroid::so3().unwrap()),
            disc().time_extended(),
        ]
    }

    #[test]
    fn pairing_examples() {
        let p = PontryaginPoint::new(&[0.0], &[0.0], &[1.0], &[4.0], &[2.0], &[3.0]).unwrap();
        assert_eq!(pairing(&p, &p).unwrap(), 14.0);
        assert_eq!(p.quadratic(), 14.0);
        let zero = PontryaginPoint::new(&[0.0], &[0.0], &[7.0], &[-2.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(pairing(&zero, &zero).unwrap(), 0.0);
        let other = PontryaginPoint::new(&[1.0], &[0.0], &[1.0], &[4.0], &[2.0], &[3.0]).unwrap();
        assert!(matches!(pairing(&p, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn canonical_residual_example() {
        let d = DiracAlgebroid::canonical(1).unwrap();
        let p = PontryaginPoint::new(&[0.3], &[-1.0], &[2.0], &[-5.0], &[5.0], &[2.0]).unwrap();
        assert_eq!(d.residual(&p).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_section_is_in_every_structure() {
        for d in structures() {
            if d.is_affine() {
                continue;
            }
            let (n, m) = (d.base_dim(), d.fiber_dim());
            let x = vec![0.4; n];
            let xi = vec![-0.2; m];
            let p = PontryaginPoint::new(&x, &xi, &vec![0.0; n], &vec![0.0; m], &vec![0.0; n], &vec![0.0; m])
                .unwrap();
            assert_eq!(d.residual(&p).unwrap().amax(), 0.0);
        }
    }

    #[test]
    fn pi_graph_residual_formula() {
        let d = wavy();
        let alg = d.as_pi_graph().unwrap();
        let mut probes = Probes::new(3);
        for _ in 0..10 {
            let x = probes.point(2, 1.0);
            let xi = probes.point(3, 1.0);
            let (xd, xid, p, y) = (probes.point(2, 1.0), probes.point(3, 1.0), probes.point(2, 1.0), probes.point(3, 1.0));
            let pt = PontryaginPoint::new(&x, &xi, &xd, &xid, &p, &y).unwrap();
            let r = d.residual(&pt).unwrap();
            let rho = alg.eval_anchor(&x).unwrap();
            let c = alg.eval_structure(&x).unwrap();
            for b in 0..2 {
                let v = xd[b] - (0..3).map(|k| rho[(b, k)] * y[k]).sum::<f64>();
                assert!((r[b] - v).abs() < 1e-14);
            }
            for j in 0..3 {
                let mut v = xid[j];
                for i in 0..3 {
                    for k in 0..3 {
                        v -= c.get(k, i, j) * y[i] * xi[k];
                    }
                }
                v += (0..2).map(|a| rho[(a, j)] * p[a]).sum::<f64>();
                assert!((r[2 + j] - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn omega_graph_residual_formula() {
        let rho = |x: &[f64]| DMatrix::from_row_slice(1, 2, &[x[0], 1.0]);
        let d = DiracAlgebroid::omega_graph(Chart::new(2, 1).unwrap(), rho, |x| {
            let mut c = Coupling::zeros(2, 2, 1);
            c.set_antisymmetric(0, 1, 0, 1.0 + x[1]);
            c
        })
        .unwrap();
        let (x, xi) = ([0.5, -0.7], [2.0]);
        let (xd, xid, p, y) = ([0.3, 1.1], [0.9], [-0.4, 0.2], [1.7]);
        let pt = PontryaginPoint::new(&x, &xi, &xd, &xid, &p, &y).unwrap();
        let r = d.residual(&pt).unwrap();
        let c01 = 1.0 + x[1];
        assert!((r[0] - (y[0] - x[0] * xd[0] - xd[1])).abs() < 1e-14);
        // p_a − c^k_ab ξ_k ẋ^b + ρ^i_a ξ̇_i
        assert!((r[1] - (p[0] - c01 * xi[0] * xd[1] + x[0] * xid[0])).abs() < 1e-14);
        assert!((r[2] - (p[1] + c01 * xi[0] * xd[0] + xid[0])).abs() < 1e-14);
    }

    #[test]
    fn basis_dimensions() {
        let d = DiracAlgebroid::canonical(1).unwrap();
        assert_eq!(d.basis_at(&[0.0], &[0.0]).unwrap().len(), 2);
        assert_eq!(disc().basis_at(&[0.7], &[1.0, 2.0, 3.0, 4.0]).unwrap().len(), 5);
    }

    #[test]
    fn representations_of_canonical_agree() {
        let reps = [pi_identity(2), omega_identity(2), canonical_general(2)];
        let canonical = DiracAlgebroid::canonical(2).unwrap();
        let mut probes = Probes::new(17);
        for _ in 0..20 {
            let x = probes.point(2, 2.0);
            let xi = probes.point(2, 2.0);
            let b0 = canonical.basis_matrix_at(&x, &xi).unwrap();
            for d in &reps {
                let b = d.basis_matrix_at(&x, &xi).unwrap();
                assert!(numeric::max_principal_angle(&b0, &b) <= 1e-10);
            }
        }
    }

    #[test]
    fn velocity_residual_examples() {
        let d = disc();
        let ok = VelocityPair::new(&[0.2], &[3.0], &[3.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.velocity_residual(&ok).unwrap().as_slice(), &[0.0]);
        let bad = VelocityPair::new(&[0.2], &[1.0], &[0.0; 4]);
        assert_eq!(d.velocity_residual(&bad).unwrap().as_slice(), &[1.0]);
        let c = DiracAlgebroid::canonical(2).unwrap();
        let v = VelocityPair::new(&[1.0, 2.0], &[0.5, -0.5], &[0.5, -0.5]);
        assert_eq!(c.velocity_residual(&v).unwrap().amax(), 0.0);
    }

    #[test]
    fn core_of_pi_graph_is_graph_of_minus_anchor_transpose() {
        let d = wavy();
        let x = [0.3, -0.8];
        let core = d.core_at(&x).unwrap();
        assert_eq!(core.ncols(), 2);
        let rho = d.as_pi_graph().unwrap().eval_anchor(&x).unwrap();
        for col in core.column_iter() {
            let p = col.rows(0, 2).into_owned();
            let xid = col.rows(2, 3).into_owned();
            assert!((xid + rho.transpose() * p).amax() < 1e-12);
        }
    }

    #[test]
    fn canonical_core_is_minus_identity_graph() {
        let d = DiracAlgebroid::canonical(1).unwrap();
        let core = d.core_at(&[0.0]).unwrap();
        assert_eq!(core.ncols(), 1);
        assert!((core[(0, 0)] + core[(1, 0)]).abs() < 1e-14);
    }

    #[test]
    fn phase_membership_examples() {
        assert!(disc().phase_membership(&[1.0], &[1.0, 2.0, 3.0, 4.0]).unwrap().member);
        let d = DiracAlgebroid::general_local(
            Chart::new(2, 1).unwrap(),
            GeneralLocal::new(
                |_| DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
                |_| DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
                |_| DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
                |_| DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
                |_| Coupling::zeros(1, 1, 1),
            )
            .with_base_zero(vec![1]),
        )
        .unwrap();
        assert!(d.phase_membership(&[1.0, 0.0], &[3.0]).unwrap().member);
        let off = d.phase_membership(&[1.0, 0.5], &[3.0]).unwrap();
        assert!(!off.member);
        assert_eq!(off.residual.as_slice(), &[0.5]);
    }

    #[test]
    fn non_isotropic_local_form_rejected() {
        let res = DiracAlgebroid::general_local(
            Chart::new(1, 1).unwrap(),
            GeneralLocal::new(
                |_| DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
                |_| DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
                |_| DMatrix::from_row_slice(1, 2, &[2.0, 1.0]),
                |_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                |_| Coupling::zeros(1, 1, 1),
            ),
        );
        assert!(matches!(res, Err(Error::Structure { .. })));
    }

    #[test]
    fn isotropy_on_probes() {
        let mut probes = Probes::new(99);
        for d in structures() {
            let (n, m) = (d.base_dim(), d.fiber_dim());
            for _ in 0..50 {
                let x = probes.point(n, 3.0);
                let xi = probes.point(m, 3.0);
                let basis = d.basis_matrix_at(&x, &xi).unwrap();
                assert_eq!(basis.ncols(), n + m);
                assert!(d.max_isotropy_defect(&x, &xi).unwrap() <= 1e-10);
            }
        }
    }

    #[test]
    fn core_equals_annihilator_on_probes() {
        let mut probes = Probes::new(5);
        for d in structures() {
            for _ in 0..50 {
                let x = probes.point(d.base_dim(), 3.0);
                d.core_at(&x).unwrap();
            }
        }
    }

    #[test]
    fn time_extension_adds_unit_time_row() {
        let d = wavy();
        let e = d.time_extended();
        assert_eq!((e.base_dim(), e.fiber_dim()), (3, 3));
        let x = [0.0, 0.3, -0.2];
        let inner = d.local_form(&x[1..]).unwrap();
        let outer = e.local_form(&x).unwrap();
        assert_eq!(outer.velocity[(0, 0)], 1.0);
        assert_eq!(outer.velocity_offset[0], 1.0);
        assert_eq!(outer.velocity.view((1, 1), (2, 5)).into_owned(), inner.velocity);
        assert_eq!(outer.zeta.view((0, 1), (3, 5)).into_owned(), inner.zeta);
        assert_eq!(outer.coupling, inner.coupling);
        assert!(e.is_affine());
    }

    fn point_in(d: &DiracAlgebroid, x: &[f64], xi: &[f64], coeffs: &[f64]) -> PontryaginPoint {
        let basis = d.basis_matrix_at(x, xi).unwrap();
        let dir = &basis * DVector::from_column_slice(coeffs);
        PontryaginPoint::from_direction(x, xi, &dir)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn q_vanishes_on_members(
            which in 0usize..6,
            seed in any::<u64>(),
        ) {
            let d = &structures()[which];
            let (n, m) = (d.base_dim(), d.fiber_dim());
            let mut probes = Probes::new(seed);
            let x = probes.point(n, 2.0);
            let xi = probes.point(m, 2.0);
            let pt = point_in(d, &x, &xi, &probes.point(n + m, 1.0));
            prop_assert!(d.residual(&pt).unwrap().amax() <= 1e-10);
            prop_assert!(pt.quadratic().abs() <= 1e-10);
        }

        #[test]
        fn homotheties_preserve_membership(
            which in 0usize..6,
            seed in any::<u64>(),
        ) {
            let d = &structures()[which];
            let (n, m) = (d.base_dim(), d.fiber_dim());
            let mut probes = Probes::new(seed);
            let x = probes.point(n, 2.0);
            let xi = probes.point(m, 2.0);
            let pt = point_in(d, &x, &xi, &probes.point(n + m, 1.0));
            for s in [0.0, 0.5, 2.0, -1.0] {
                let mut h1 = pt.clone();
                h1.xdot *= s;
                h1.xidot *= s;
                h1.p *= s;
                h1.y *= s;
                prop_assert!(d.residual(&h1).unwrap().amax() <= 1e-10);
                let mut h2 = pt.clone();
                h2.xi *= s;
                h2.xidot *= s;
                h2.p *= s;
                prop_assert!(d.residual(&h2).unwrap().amax() <= 1e-10);
            }
        }
    }
}
