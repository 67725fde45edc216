//! Skew and Lie algebroids in a single chart, given by an anchor matrix field `ρ(x)` and
//! structure functions `c^k_ij(x)`.
//!
//! The bracket of sections is
//!
//! ```text
//! [X,Y]^k = ρ^a_i X^i ∂_a Y^k − ρ^a_j Y^j ∂_a X^k + c^k_ij X^i Y^j
//! ```
//!
//! which is the coordinate form of `ι([X,Y]) = {ι(X), ι(Y)}_Π` for the linear bivector
//! `Π = ½ c^k_ij ξ_k ∂_ξi ∧ ∂_ξj + ρ^b_i ∂_ξi ∧ ∂_x^b` on the dual bundle.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, Error, Result};
use crate::numeric::{self, Probes};

/// Entries of user-supplied structure functions may deviate from antisymmetry by at most this.
pub const ANTISYMMETRY_TOL: f64 = 1e-12;

/// Coordinates of one chart: `n` base coordinates `x^a` and `m` fiber coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    base_dim: usize,
    fiber_dim: usize,
    base_labels: Vec<String>,
    fiber_labels: Vec<String>,
}

impl Chart {
    pub fn new(base_dim: usize, fiber_dim: usize) -> Result<Self> {
        if fiber_dim == 0 {
            return Err(Error::Contract("fiber dimension must be at least 1".into()));
        }
        Ok(Self {
            base_dim,
            fiber_dim,
            base_labels: (1..=base_dim).map(|a| format!("x{a}")).collect(),
            fiber_labels: (1..=fiber_dim).map(|i| format!("y{i}")).collect(),
        })
    }

    pub fn with_labels(mut self, base: &[&str], fiber: &[&str]) -> Result<Self> {
        if base.len() != self.base_dim || fiber.len() != self.fiber_dim {
            return Err(Error::Contract(format!(
                "label counts ({}, {}) do not match chart ({}, {})",
                base.len(),
                fiber.len(),
                self.base_dim,
                self.fiber_dim
            )));
        }
        self.base_labels = base.iter().map(|s| s.to_string()).collect();
        self.fiber_labels = fiber.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn base_labels(&self) -> &[String] {
        &self.base_labels
    }

    pub fn fiber_labels(&self) -> &[String] {
        &self.fiber_labels
    }

    /// Chart with one extra base coordinate `t` in front.
    pub fn time_extended(&self) -> Self {
        let mut base_labels = vec!["t".to_string()];
        base_labels.extend(self.base_labels.iter().cloned());
        Self {
            base_dim: self.base_dim + 1,
            fiber_dim: self.fiber_dim,
            base_labels,
            fiber_labels: self.fiber_labels.clone(),
        }
    }

    pub(crate) fn check_base(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.base_dim {
            return Err(Error::Contract(format!(
                "base point has {} coordinates, chart expects {}",
                x.len(),
                self.base_dim
            )));
        }
        Ok(())
    }
}

/// Structure functions `c^k_ij` at one point, stored as `m × m × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTensor {
    m: usize,
    data: Vec<f64>,
}

impl StructureTensor {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; m * m * m],
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.m + i) * self.m + j
    }

    /// `c^k_ij`.
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(k, i, j)]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        let idx = self.idx(k, i, j);
        self.data[idx] = value;
    }

    /// Sets `c^k_ij = value` and `c^k_ji = −value`.
    pub fn set_antisymmetric(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.set(k, i, j, value);
        self.set(k, j, i, -value);
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for k in 0..self.m {
            for i in 0..self.m {
                for j in 0..self.m {
                    worst = worst.max((self.get(k, i, j) + self.get(k, j, i)).abs());
                }
            }
        }
        worst
    }

    /// Replaces `c` by `½(c_ij − c_ji)`, which is exactly antisymmetric.
    pub fn antisymmetrized(&self) -> Self {
        let mut out = Self::zeros(self.m);
        for k in 0..self.m {
            for i in 0..self.m {
                for j in 0..self.m {
                    let v = 0.5 * (self.get(k, i, j) - self.get(k, j, i));
                    out.set(k, i, j, v);
                }
            }
        }
        out
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn negated(&self) -> Self {
        Self {
            m: self.m,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }
}

pub type MatrixField = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
pub type TensorField = Arc<dyn Fn(&[f64]) -> StructureTensor + Send + Sync>;

/// A section `x ↦ X(x) ∈ ℝ^m` of the algebroid bundle, with an optional analytic Jacobian.
#[derive(Clone)]
pub struct SectionField {
    base_dim: usize,
    fiber_dim: usize,
    value: VectorField,
    jacobian: Option<MatrixField>,
    step: fn(f64) -> f64,
}

impl fmt::Debug for SectionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SectionField")
            .field("base_dim", &self.base_dim)
            .field("fiber_dim", &self.fiber_dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl SectionField {
    pub fn new<F>(base_dim: usize, fiber_dim: usize, value: F) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            base_dim,
            fiber_dim,
            value: Arc::new(value),
            jacobian: None,
            step: numeric::fd_step,
        }
    }

    /// Attaches `∂X^k/∂x^a` as an `m × n` matrix field.
    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn constant(base_dim: usize, components: DVector<f64>) -> Self {
        let m = components.len();
        Self::new(base_dim, m, move |_| components.clone())
            .with_jacobian(move |_| DMatrix::zeros(m, base_dim))
    }

    /// The `i`-th local basis section `e_i`.
    pub fn basis(base_dim: usize, fiber_dim: usize, i: usize) -> Self {
        let mut v = DVector::zeros(fiber_dim);
        v[i] = 1.0;
        Self::constant(base_dim, v)
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let v = (self.value)(x);
        check_finite("section value", v.as_slice())?;
        Ok(v)
    }

    /// `∂X^k/∂x^a` (`m × n`), analytic when supplied, central differences otherwise.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let j = match &self.jacobian {
            Some(j) => j(x),
            None => self.fd_jacobian(x),
        };
        check_finite("section Jacobian", j.as_slice())?;
        Ok(j)
    }

    fn fd_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        numeric::jacobian_with(|p| (self.value)(p), x, self.fiber_dim, self.step)
    }

    /// Largest relative mismatch between the analytic Jacobian and central differences.
    ///
    /// Fails when it exceeds `1e-6`; sections without an analytic Jacobian report zero.
    pub fn validate_jacobian(&self, probes: &[Vec<f64>]) -> Result<f64> {
        let Some(analytic) = &self.jacobian else {
            return Ok(0.0);
        };
        let mut worst = 0.0_f64;
        for x in probes {
            let a = analytic(x);
            let fd = self.fd_jacobian(x);
            let scale = 1.0 + a.amax();
            worst = worst.max((a - fd).amax() / scale);
        }
        if worst > 1e-6 {
            return Err(Error::Contract(format!(
                "analytic section Jacobian disagrees with finite differences (relative {worst:e})"
            )));
        }
        Ok(worst)
    }
}

/// A skew algebroid structure on `E → M` in one chart.
#[derive(Clone)]
pub struct SkewAlgebroid {
    chart: Chart,
    anchor: MatrixField,
    structure: TensorField,
}

impl fmt::Debug for SkewAlgebroid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SkewAlgebroid")
            .field("chart", &self.chart)
            .finish_non_exhaustive()
    }
}

fn construction_probes(n: usize) -> Vec<Vec<f64>> {
    let mut probes = Probes::new(0x5eed_a1b0);
    let count = if n == 0 { 1 } else { 8 };
    (0..count).map(|_| probes.point(n, 1.0)).collect()
}

impl SkewAlgebroid {
    /// Builds an algebroid from an anchor (`n × m`) and structure functions.
    ///
    /// Shapes and antisymmetry (to [`ANTISYMMETRY_TOL`]) are checked on a fixed set of
    /// probe points; evaluation always antisymmetrizes.
    pub fn new<A, C>(chart: Chart, anchor: A, structure: C) -> Result<Self>
    where
        A: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        C: Fn(&[f64]) -> StructureTensor + Send + Sync + 'static,
    {
        let alg = Self {
            chart,
            anchor: Arc::new(anchor),
            structure: Arc::new(structure),
        };
        let (n, m) = (alg.chart.base_dim(), alg.chart.fiber_dim());
        for x in construction_probes(n) {
            let rho = (alg.anchor)(&x);
            if rho.shape() != (n, m) {
                return Err(Error::Contract(format!(
                    "anchor has shape {:?}, expected ({n}, {m})",
                    rho.shape()
                )));
            }
            let c = (alg.structure)(&x);
            if c.dim() != m {
                return Err(Error::Contract(format!(
                    "structure tensor has fiber dimension {}, expected {m}",
                    c.dim()
                )));
            }
            let asym = c.max_asymmetry();
            if asym > ANTISYMMETRY_TOL {
                return Err(Error::Structure {
                    message: format!(
                        "structure functions are not antisymmetric at x = {x:?} (deviation {asym:e})"
                    ),
                    rank: 0,
                    expected: 0,
                });
            }
        }
        Ok(alg)
    }

    /// Builds from a general linear bivector `½ c ξ ∂ξ∧∂ξ + ρ ∂ξ∧∂x + σ ∂x∧∂ξ`-type data,
    /// accepting it only when it is skew, i.e. `σ = ρ` on the probe points.
    pub fn from_linear_bivector<A, S, C>(
        chart: Chart,
        anchor: A,
        sigma: S,
        structure: C,
    ) -> Result<Self>
    where
        A: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        S: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        C: Fn(&[f64]) -> StructureTensor + Send + Sync + 'static,
    {
        for x in construction_probes(chart.base_dim()) {
            let diff = (anchor(&x) - sigma(&x)).amax();
            if diff > ANTISYMMETRY_TOL {
                return Err(Error::Contract(format!(
                    "non-skew linear bivector: sigma differs from the anchor by {diff:e} at x = {x:?}"
                )));
            }
        }
        Self::new(chart, anchor, structure)
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

    /// `ρ(x)` as an `n × m` matrix.
    pub fn eval_anchor(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.chart.check_base(x)?;
        check_finite("base point", x)?;
        let rho = (self.anchor)(x);
        check_finite("anchor", rho.as_slice())?;
        Ok(rho)
    }

    /// `c(x)`, exactly antisymmetric in the lower indices.
    pub fn eval_structure(&self, x: &[f64]) -> Result<StructureTensor> {
        self.chart.check_base(x)?;
        check_finite("base point", x)?;
        let c = (self.structure)(x);
        check_finite("structure functions", c.as_slice())?;
        Ok(c.antisymmetrized())
    }

    /// Algebroid bracket `[X, Y]` evaluated at `x`.
    pub fn bracket(&self, x_sec: &SectionField, y_sec: &SectionField, x: &[f64]) -> Result<DVector<f64>> {
        let m = self.fiber_dim();
        let rho = self.eval_anchor(x)?;
        let c = self.eval_structure(x)?;
        let xv = x_sec.eval(x)?;
        let yv = y_sec.eval(x)?;
        let dx = x_sec.jacobian(x)?;
        let dy = y_sec.jacobian(x)?;
        // ρ(X) and ρ(Y) as base vectors.
        let rho_x = &rho * &xv;
        let rho_y = &rho * &yv;
        let mut out = &dy * &rho_x - &dx * &rho_y;
        for k in 0..m {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    acc += c.get(k, i, j) * xv[i] * yv[j];
                }
            }
            out[k] += acc;
        }
        check_finite("bracket", out.as_slice())?;
        Ok(out)
    }

    /// The bracket `[X, Y]` as a new section field; its Jacobian uses nested differences.
    pub fn bracket_field(&self, x_sec: &SectionField, y_sec: &SectionField) -> SectionField {
        let alg = self.clone();
        let (a, b) = (x_sec.clone(), y_sec.clone());
        let m = self.fiber_dim();
        let mut field = SectionField::new(self.base_dim(), m, move |x| {
            alg.bracket(&a, &b, x)
                .unwrap_or_else(|_| DVector::from_element(m, f64::NAN))
        });
        field.step = numeric::fd_step_second;
        field
    }

    /// `[X,[Y,Z]] + [Y,[Z,X]] + [Z,[X,Y]]` at `x`.
    pub fn jacobiator(
        &self,
        x_sec: &SectionField,
        y_sec: &SectionField,
        z_sec: &SectionField,
        x: &[f64],
    ) -> Result<DVector<f64>> {
        let yz = self.bracket_field(y_sec, z_sec);
        let zx = self.bracket_field(z_sec, x_sec);
        let xy = self.bracket_field(x_sec, y_sec);
        Ok(self.bracket(x_sec, &yz, x)? + self.bracket(y_sec, &zx, x)? + self.bracket(z_sec, &xy, x)?)
    }

    /// Largest jacobiator norm over all basis triples at `x`.
    pub fn max_basis_jacobiator(&self, x: &[f64]) -> Result<f64> {
        let (n, m) = (self.base_dim(), self.fiber_dim());
        let basis: Vec<SectionField> = (0..m).map(|i| SectionField::basis(n, m, i)).collect();
        let mut worst = 0.0_f64;
        for i in 0..m {
            for j in (i + 1)..m {
                for k in (j + 1)..m {
                    let v = self.jacobiator(&basis[i], &basis[j], &basis[k], x)?;
                    worst = worst.max(v.norm());
                }
            }
        }
        Ok(worst)
    }

    /// Matrix of the linear bivector `Π` at `(x, ξ)` in block order `(x, ξ)`.
    ///
    /// `Π(dξ_i, dξ_j) = c^k_ij ξ_k` and `Π(dξ_i, dx^b) = ρ^b_i`.
    pub fn eval_linear_bivector(&self, x: &[f64], xi: &[f64]) -> Result<DMatrix<f64>> {
        let (n, m) = (self.base_dim(), self.fiber_dim());
        if xi.len() != m {
            return Err(Error::Contract(format!("xi has {} entries, expected {m}", xi.len())));
        }
        let rho = self.eval_anchor(x)?;
        let c = self.eval_structure(x)?;
        let mut pi = DMatrix::zeros(n + m, n + m);
        for i in 0..m {
            for b in 0..n {
                pi[(n + i, b)] = rho[(b, i)];
                pi[(b, n + i)] = -rho[(b, i)];
            }
            for j in 0..m {
                pi[(n + i, n + j)] = (0..m).map(|k| c.get(k, i, j) * xi[k]).sum();
            }
        }
        Ok(pi)
    }

    /// `{f, g}_Π` at `(x, ξ)` for scalar functions of `(x, ξ)` via finite-difference differentials.
    pub fn poisson_bracket<F, G>(&self, f: F, g: G, x: &[f64], xi: &[f64]) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64,
        G: Fn(&[f64]) -> f64,
    {
        let pi = self.eval_linear_bivector(x, xi)?;
        let mut z = x.to_vec();
        z.extend_from_slice(xi);
        let df = numeric::gradient(&f, &z);
        let dg = numeric::gradient(&g, &z);
        Ok(df.dot(&(&pi * dg)))
    }

    /// The same algebroid with the bracket sign reversed (`c ↦ −c`).
    pub fn with_opposite_bracket(&self) -> Self {
        let structure = self.structure.clone();
        Self {
            chart: self.chart.clone(),
            anchor: self.anchor.clone(),
            structure: Arc::new(move |x| structure(x).negated()),
        }
    }

    /// The tangent bundle `TM` of an `n`-dimensional base: identity anchor, commuting basis.
    pub fn canonical(n: usize) -> Result<Self> {
        Self::new(
            Chart::new(n, n)?,
            move |_| DMatrix::identity(n, n),
            move |_| StructureTensor::zeros(n),
        )
    }

    /// Reduced algebroid of the vertical rolling disc over the circle of headings `φ`.
    ///
    /// Basis `e₁ = ∂_φ`, `e₂ = f_θ + R cos φ f_x¹ + R sin φ f_x²`, `e₃ = f_x¹`, `e₄ = f_x²`;
    /// the only non-zero bracket is `[e₁, e₂] = R cos φ e₄ − R sin φ e₃`.
    pub fn rolling_disc(radius: f64) -> Result<Self> {
        let chart = Chart::new(1, 4)?.with_labels(&["phi"], &["y1", "y2", "y3", "y4"])?;
        Self::new(
            chart,
            |_| DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]),
            move |x| {
                let phi = x[0];
                let mut c = StructureTensor::zeros(4);
                c.set_antisymmetric(3, 0, 1, radius * phi.cos());
                c.set_antisymmetric(2, 0, 1, -radius * phi.sin());
                c
            },
        )
    }

    /// The Lie algebra `so(3)` as an algebroid over a point: `[e_i, e_j] = ε_ijk e_k`.
    pub fn so3() -> Result<Self> {
        let chart = Chart::new(0, 3)?.with_labels(&[], &["w1", "w2", "w3"])?;
        Self::new(chart, |_| DMatrix::zeros(0, 3), |_| levi_civita_structure())
    }
}

/// `c^k_ij = ε_ijk`.
pub fn levi_civita_structure() -> StructureTensor {
    let mut c = StructureTensor::zeros(3);
    for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        c.set_antisymmetric(k, i, j, 1.0);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
        // Sign of the permutation (i, j, k) of (0, 1, 2), zero on repeats.
        if i == j || j == k || i == k {
            return 0.0;
        }
        let mut p = [i, j, k];
        let mut sign = 1.0;
        for a in 0..3 {
            for b in 0..2 - a {
                if p[b] > p[b + 1] {
                    p.swap(b, b + 1);
                    sign = -sign;
                }
            }
        }
        sign
    }

    fn cross(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }

    #[test]
    fn chart_requires_fiber() {
        assert!(Chart::new(2, 0).is_err());
        assert!(Chart::new(0, 1).is_ok());
    }

    #[test]
    fn rolling_disc_anchor_is_projection() {
        let a = SkewAlgebroid::rolling_disc(0.7).unwrap();
        for phi in [0.0, 1.3, -2.0] {
            let rho = a.eval_anchor(&[phi]).unwrap();
            assert_eq!(rho, DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]));
        }
    }

    #[test]
    fn canonical_anchor_is_identity_and_abelian() {
        let a = SkewAlgebroid::canonical(3).unwrap();
        let x = [0.3, -1.0, 2.0];
        assert_eq!(a.eval_anchor(&x).unwrap(), DMatrix::identity(3, 3));
        assert!(a.eval_structure(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn so3_anchor_is_empty() {
        let a = SkewAlgebroid::so3().unwrap();
        assert_eq!(a.eval_anchor(&[]).unwrap().shape(), (0, 3));
    }

    #[test]
    fn rolling_disc_structure_functions() {
        let r = 1.7;
        let a = SkewAlgebroid::rolling_disc(r).unwrap();
        let phi = 0.9;
        let c = a.eval_structure(&[phi]).unwrap();
        for k in 0..4 {
            for i in 0..4 {
                for j in 0..4 {
                    let expected = match (k, i, j) {
                        (3, 0, 1) => r * phi.cos(),
                        (3, 1, 0) => -r * phi.cos(),
                        (2, 0, 1) => -r * phi.sin(),
                        (2, 1, 0) => r * phi.sin(),
                        _ => 0.0,
                    };
                    assert_eq!(c.get(k, i, j), expected, "c^{k}_{i}{j}");
                }
            }
        }
    }

    #[test]
    fn so3_structure_reproduces_cross_product_table() {
        let a = SkewAlgebroid::so3().unwrap();
        let c = a.eval_structure(&[]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut ei = DVector::zeros(3);
                ei[i] = 1.0;
                let mut ej = DVector::zeros(3);
                ej[j] = 1.0;
                let table = cross(&ei, &ej);
                for k in 0..3 {
                    assert_eq!(c.get(k, i, j), levi_civita(i, j, k));
                    assert_eq!(c.get(k, i, j), table[k]);
                }
            }
        }
    }

    #[test]
    fn asymmetric_structure_rejected() {
        let chart = Chart::new(0, 2).unwrap();
        let res = SkewAlgebroid::new(
            chart,
            |_| DMatrix::zeros(0, 2),
            |_| {
                let mut c = StructureTensor::zeros(2);
                c.set(0, 0, 1, 1.0);
                c
            },
        );
        assert!(matches!(res, Err(Error::Structure { .. })));
    }

    #[test]
    fn non_skew_sigma_rejected() {
        let chart = Chart::new(1, 1).unwrap();
        let res = SkewAlgebroid::from_linear_bivector(
            chart.clone(),
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| DMatrix::from_element(1, 1, 2.0),
            |_| StructureTensor::zeros(1),
        );
        assert!(res.is_err());
        let ok = SkewAlgebroid::from_linear_bivector(
            chart,
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| StructureTensor::zeros(1),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn non_finite_anchor_reports_index() {
        let chart = Chart::new(1, 2).unwrap();
        let a = SkewAlgebroid::new(
            chart,
            |x| {
                if x[0] > 5.0 {
                    DMatrix::from_row_slice(1, 2, &[0.0, f64::NAN])
                } else {
                    DMatrix::zeros(1, 2)
                }
            },
            |_| StructureTensor::zeros(2),
        )
        .unwrap();
        match a.eval_anchor(&[6.0]) {
            Err(Error::Evaluation { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rolling_disc_basis_bracket() {
        let r = 2.5;
        let a = SkewAlgebroid::rolling_disc(r).unwrap();
        let e1 = SectionField::basis(1, 4, 0);
        let e2 = SectionField::basis(1, 4, 1);
        let b = a.bracket(&e1, &e2, &[0.0]).unwrap();
        assert_eq!(b.as_slice(), &[0.0, 0.0, 0.0, r]);
    }

    #[test]
    fn so3_basis_bracket() {
        let a = SkewAlgebroid::so3().unwrap();
        let e1 = SectionField::basis(0, 3, 0);
        let e2 = SectionField::basis(0, 3, 1);
        assert_eq!(a.bracket(&e1, &e2, &[]).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn self_bracket_vanishes() {
        let a = SkewAlgebroid::rolling_disc(1.0).unwrap();
        let s = SectionField::new(1, 4, |x| {
            DVector::from_vec(vec![x[0].sin(), 1.0 + x[0], x[0].cos(), 0.5])
        });
        let b = a.bracket(&s, &s, &[0.4]).unwrap();
        assert!(b.norm() < 1e-12);
    }

    #[test]
    fn jacobiator_vanishes_for_builtin_lie_algebroids() {
        let mut probes = Probes::new(11);
        let disc = SkewAlgebroid::rolling_disc(1.3).unwrap();
        for _ in 0..100 {
            let phi = probes.scalar(-PI, PI);
            assert!(disc.max_basis_jacobiator(&[phi]).unwrap() <= 1e-6);
        }
        let so3 = SkewAlgebroid::so3().unwrap();
        assert!(so3.max_basis_jacobiator(&[]).unwrap() <= 1e-12);
        let can = SkewAlgebroid::canonical(3).unwrap();
        let x = probes.point(3, 1.0);
        assert_eq!(can.max_basis_jacobiator(&x).unwrap(), 0.0);
    }

    #[test]
    fn jacobiator_detects_non_lie_bracket() {
        // [e1, e2] = x e0 with ρ(e0) = ∂_x gives [e0, [e1, e2]] = e0.
        let chart = Chart::new(1, 3).unwrap();
        let a = SkewAlgebroid::new(
            chart,
            |_| DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            |x| {
                let mut c = StructureTensor::zeros(3);
                c.set_antisymmetric(0, 1, 2, x[0]);
                c
            },
        )
        .unwrap();
        assert!(a.max_basis_jacobiator(&[0.5]).unwrap() > 1e-3);
    }

    #[test]
    fn rolling_disc_linear_bivector_slot() {
        let r = 1.4;
        let a = SkewAlgebroid::rolling_disc(r).unwrap();
        let pi = a.eval_linear_bivector(&[0.0], &[0.0, 0.0, 0.0, 1.0]).unwrap();
        // Block order (phi, xi1..xi4): Π(ξ₁, ξ₂) sits at (1, 2).
        assert!((pi[(1, 2)] - r).abs() < 1e-15);
        assert!((pi[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((&pi + pi.transpose()).amax() == 0.0);
    }

    #[test]
    fn canonical_bivector_has_identity_blocks() {
        let a = SkewAlgebroid::canonical(2).unwrap();
        let pi = a.eval_linear_bivector(&[0.1, 0.2], &[3.0, -1.0]).unwrap();
        let mut expected = DMatrix::zeros(4, 4);
        for i in 0..2 {
            expected[(2 + i, i)] = 1.0;
            expected[(i, 2 + i)] = -1.0;
        }
        assert_eq!(pi, expected);
    }

    #[test]
    fn zero_data_gives_zero_bivector() {
        let chart = Chart::new(2, 2).unwrap();
        let a = SkewAlgebroid::new(chart, |_| DMatrix::zeros(2, 2), |_| StructureTensor::zeros(2)).unwrap();
        assert_eq!(a.eval_linear_bivector(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), DMatrix::zeros(4, 4));
    }

    #[test]
    fn section_jacobian_validation() {
        let good = SectionField::new(1, 2, |x| DVector::from_vec(vec![x[0].sin(), x[0] * x[0]]))
            .with_jacobian(|x| DMatrix::from_column_slice(2, 1, &[x[0].cos(), 2.0 * x[0]]));
        assert!(good.validate_jacobian(&[vec![0.3], vec![-1.2]]).unwrap() < 1e-6);
        let bad = SectionField::new(1, 2, |x| DVector::from_vec(vec![x[0].sin(), x[0] * x[0]]))
            .with_jacobian(|x| DMatrix::from_column_slice(2, 1, &[x[0].cos(), 3.0 * x[0]]));
        assert!(bad.validate_jacobian(&[vec![0.3]]).is_err());
    }
}
