//! Dirac algebroids induced by linear and affine constraints on the velocity bundle.
//!
//! For a subbundle `V ⊂ Vel_D` over `S = {x^A = 0}` the induced structure is
//! `D^V = Ṽ + V⁰`: points of `D` whose `(ẋ, y)` lies in `V`, plus the annihilator of `V` in the
//! core slots. Locally this appends the constraint rows to the velocity rows and keeps only the
//! combinations of dynamic rows whose `(p, ξ̇)` part pairs to zero with `V⁰`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::algebroid::{MatrixField, VectorField};
use crate::dirac::{DiracAlgebroid, LocalForm, Representation};
use crate::error::{check_finite, Error, Result};
use crate::numeric::{self, Probes};

/// Threshold for the integrability conditions.
pub const INTEGRABILITY_TOL: f64 = 1e-9;
/// Number of probe points of `S` used for constraint and integrability checks.
pub const CONSTRAINT_PROBES: usize = 20;
/// Jacobiator bound below which a base algebroid is treated as Lie.
pub const LIE_TOL: f64 = 1e-6;

const CONTAINMENT_TOL: f64 = 1e-9;

/// A linear subbundle `V` of the velocity bundle.
#[derive(Clone)]
pub enum LinearConstraint {
    /// Adapted coordinates: `S = {x^A = 0}` and `V = Vel_D ∩ {y^I = 0}` (0-based indices).
    Adapted { base: Vec<usize>, fiber: Vec<usize> },
    /// `V = ker W(x)` on `(ẋ, y)`; the kernel must lie in `Vel_D`.
    General { w: MatrixField },
}

impl LinearConstraint {
    pub fn adapted(base: Vec<usize>, fiber: Vec<usize>) -> Self {
        Self::Adapted { base, fiber }
    }

    pub fn general<W>(w: W) -> Self
    where
        W: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::General { w: Arc::new(w) }
    }

    /// The trivial constraint `V = Vel_D`.
    pub fn none() -> Self {
        Self::Adapted {
            base: Vec::new(),
            fiber: Vec::new(),
        }
    }
}

/// An affine subbundle `A` of the velocity bundle with model `V`.
#[derive(Clone)]
pub enum AffineConstraint {
    /// `x^A = 0`, `y^d = 1`, `y^I = 0` with `d` the distinguished fiber index.
    Adapted {
        base: Vec<usize>,
        distinguished: usize,
        fiber: Vec<usize>,
    },
    /// `W(x)(ẋ, y) = w(x)`; `ker W` is the model and must lie in `Vel_D`.
    General { w: MatrixField, rhs: VectorField },
}

impl AffineConstraint {
    pub fn adapted(base: Vec<usize>, distinguished: usize, fiber: Vec<usize>) -> Self {
        Self::Adapted {
            base,
            distinguished,
            fiber,
        }
    }

    pub fn general<W, R>(w: W, rhs: R) -> Self
    where
        W: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        R: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::General {
            w: Arc::new(w),
            rhs: Arc::new(rhs),
        }
    }
}

#[derive(Clone)]
pub enum InducingConstraint {
    Linear(LinearConstraint),
    Affine(AffineConstraint),
}

impl InducingConstraint {
    fn base_selector(&self) -> &[usize] {
        match self {
            InducingConstraint::Linear(LinearConstraint::Adapted { base, .. })
            | InducingConstraint::Affine(AffineConstraint::Adapted { base, .. }) => base,
            _ => &[],
        }
    }

    /// Fiber indices removed from the dynamic rows in adapted form (`I`, plus `d` when affine).
    fn adapted_removed(&self) -> Option<Vec<usize>> {
        match self {
            InducingConstraint::Linear(LinearConstraint::Adapted { fiber, .. }) => Some(fiber.clone()),
            InducingConstraint::Affine(AffineConstraint::Adapted {
                distinguished,
                fiber,
                ..
            }) => {
                let mut v = vec![*distinguished];
                v.extend(fiber);
                Some(v)
            }
            _ => None,
        }
    }
}

fn check_indices(what: &str, indices: &[usize], bound: usize) -> Result<()> {
    let mut seen = vec![false; bound];
    for &i in indices {
        if i >= bound {
            return Err(Error::Contract(format!("{what} index {i} out of range (< {bound})")));
        }
        if seen[i] {
            return Err(Error::Contract(format!("{what} index {i} repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

fn selector_rows(n: usize, m: usize, fiber: &[usize]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(fiber.len(), n + m);
    for (r, &i) in fiber.iter().enumerate() {
        w[(r, n + i)] = 1.0;
    }
    w
}

/// Constraint rows `W`, right-hand side `w`, and whether `ker W` alone is meant to be `V`.
fn constraint_rows(
    constraint: &InducingConstraint,
    n: usize,
    m: usize,
    x: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>, bool)> {
    check_indices("base selector", constraint.base_selector(), n)?;
    let total = n + m;
    let check_general = |w: &DMatrix<f64>| -> Result<()> {
        check_finite("constraint matrix", w.as_slice())?;
        if w.ncols() != total {
            return Err(Error::Contract(format!(
                "constraint matrix has {} columns, expected n+m = {total}",
                w.ncols()
            )));
        }
        Ok(())
    };
    match constraint {
        InducingConstraint::Linear(LinearConstraint::Adapted { fiber, .. }) => {
            check_indices("fiber selector", fiber, m)?;
            Ok((selector_rows(n, m, fiber), DVector::zeros(fiber.len()), false))
        }
        InducingConstraint::Linear(LinearConstraint::General { w }) => {
            let w = w(x);
            check_general(&w)?;
            let k = w.nrows();
            Ok((w, DVector::zeros(k), true))
        }
        InducingConstraint::Affine(AffineConstraint::Adapted {
            distinguished,
            fiber,
            ..
        }) => {
            let mut all = vec![*distinguished];
            all.extend(fiber);
            check_indices("fiber selector", &all, m)?;
            let mut rhs = DVector::zeros(all.len());
            rhs[0] = 1.0;
            Ok((selector_rows(n, m, &all), rhs, false))
        }
        InducingConstraint::Affine(AffineConstraint::General { w, rhs }) => {
            let w = w(x);
            check_general(&w)?;
            let rhs = rhs(x);
            check_finite("constraint right-hand side", rhs.as_slice())?;
            if rhs.len() != w.nrows() {
                return Err(Error::Contract("constraint right-hand side length mismatch".into()));
            }
            Ok((w, rhs, true))
        }
    }
}

/// Pointwise local form of the structure induced on `base` by `constraint`.
pub(crate) fn induced_local_form(
    base: &DiracAlgebroid,
    base_form: &LocalForm,
    constraint: &InducingConstraint,
    x: &[f64],
) -> Result<LocalForm> {
    let (n, m) = (base_form.n, base_form.m);
    let total = n + m;
    let (w, rhs, kernel_is_v) = constraint_rows(constraint, n, m, x)?;

    if kernel_is_v {
        let ker_w = numeric::null_space(&w);
        let leak = (&base_form.velocity * &ker_w).amax();
        let scale = 1.0 + base_form.velocity.amax();
        if leak > CONTAINMENT_TOL * scale {
            return Err(Error::Constraint(format!(
                "constraint subbundle is not contained in the velocity bundle at x = {x:?} (defect {leak:e})"
            )));
        }
    }

    let stacked = numeric::vstack(total, &[&base_form.velocity, &w]);
    let mut offset = DVector::zeros(stacked.nrows());
    offset.rows_mut(0, base_form.velocity_offset.len()).copy_from(&base_form.velocity_offset);
    offset.rows_mut(base_form.velocity_offset.len(), rhs.len()).copy_from(&rhs);

    // Selector rows on a graph of the anchor are always independent and solvable.
    if let (true, Some(removed)) = (
        matches!(base.representation(), Representation::PiGraph(_) | Representation::Canonical),
        constraint.adapted_removed(),
    ) {
        let s = base_form.frame.ncols();
        let kept: Vec<usize> = (0..s).filter(|k| !removed.contains(k)).collect();
        let g = DMatrix::from_fn(s, kept.len(), |r, c| if r == kept[c] { 1.0 } else { 0.0 });
        return Ok(assemble(base_form, constraint, stacked, offset, g));
    }

    let v_basis = numeric::null_space(&stacked);
    let particular = numeric::min_norm_solve(&stacked, &offset);
    let miss = (&stacked * &particular - &offset).amax();
    if miss > CONTAINMENT_TOL * (1.0 + offset.amax()) {
        return Err(Error::Constraint(format!(
            "affine constraint is not solvable inside the velocity bundle at x = {x:?} (residual {miss:e})"
        )));
    }

    let rank = total - v_basis.ncols();
    let (velocity, velocity_offset) = if rank < stacked.nrows() {
        let svd = numeric::Svd::new(&stacked);
        let rows = svd.v.columns(0, rank).transpose();
        let off = DVector::from_fn(rank, |r, _| svd.u.column(r).dot(&offset) / svd.s[r]);
        (rows, off)
    } else {
        (stacked, offset)
    };

    // Combinations of dynamic rows whose (p, ξ̇) part lies in V.
    let z = base_form.core_rows();
    let zt = z.transpose();
    let mut cols = Vec::with_capacity(v_basis.ncols());
    for v in v_basis.column_iter() {
        let v = v.into_owned();
        let g = numeric::min_norm_solve(&zt, &v);
        let miss = (&zt * &g - &v).amax();
        if miss > 1e-8 {
            return Err(Error::Constraint(format!(
                "constraint subbundle is not contained in the velocity bundle at x = {x:?} (defect {miss:e})"
            )));
        }
        cols.push(g);
    }
    let g = numeric::columns_to_matrix(z.nrows(), &cols);
    Ok(assemble(base_form, constraint, velocity, velocity_offset, g))
}

fn assemble(
    base_form: &LocalForm,
    constraint: &InducingConstraint,
    velocity: DMatrix<f64>,
    velocity_offset: DVector<f64>,
    g: DMatrix<f64>,
) -> LocalForm {
    let mut base_zero = base_form.base_zero.clone();
    for &a in constraint.base_selector() {
        if !base_zero.contains(&a) {
            base_zero.push(a);
        }
    }

    LocalForm {
        n: base_form.n,
        m: base_form.m,
        velocity,
        velocity_offset,
        eta: base_form.eta.clone(),
        zeta: base_form.zeta.clone(),
        coupling: base_form.coupling.clone(),
        frame: &base_form.frame * g,
        base_zero,
        phase_offset: base_form.phase_offset.clone(),
        phase_matrix: base_form.phase_matrix.clone(),
    }
}

/// Probe points of the support `S` of `d`: random coordinates with the support's zero set applied.
pub(crate) fn support_probes(d: &DiracAlgebroid, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = d.base_dim();
    let mut probes = Probes::new(seed);
    let first = probes.point(n, std::f64::consts::PI);
    let zero = d.local_form(&first)?.base_zero;
    let mut out = Vec::with_capacity(count);
    let mut x = first;
    for k in 0..count.max(1) {
        if k > 0 {
            x = probes.point(n, std::f64::consts::PI);
        }
        for &a in &zero {
            x[a] = 0.0;
        }
        out.push(x.clone());
        if n == 0 {
            break;
        }
    }
    Ok(out)
}

fn validate_induced(d: &DiracAlgebroid) -> Result<()> {
    let m = d.fiber_dim();
    let mut fibers = Probes::new(0xc0_7157);
    let mut rank = None;
    for x in support_probes(d, CONSTRAINT_PROBES, 0x5_u64 << 20)? {
        let form = d.local_form(&x)?;
        let q = form.velocity.nrows();
        match rank {
            None => rank = Some(q),
            Some(r) if r != q => {
                return Err(Error::Structure {
                    message: format!("constraint rank is not constant on the support (x = {x:?})"),
                    rank: q,
                    expected: r,
                })
            }
            _ => {}
        }
        let xi = fibers.point(m, 1.0);
        d.basis_matrix_at(&x, &xi)?;
    }
    Ok(())
}

/// The Dirac algebroid `D^V = Ṽ + V⁰` induced by a linear constraint.
pub fn induce(d: &DiracAlgebroid, v: LinearConstraint) -> Result<DiracAlgebroid> {
    let induced = DiracAlgebroid::from_parts(
        d.chart().clone(),
        Representation::Induced {
            base: Box::new(d.clone()),
            constraint: InducingConstraint::Linear(v),
        },
    );
    validate_induced(&induced)?;
    Ok(induced)
}

/// The affine Dirac algebroid `D^A = Ã + V⁰` induced by an affine constraint.
pub fn induce_affine(d: &DiracAlgebroid, a: AffineConstraint) -> Result<DiracAlgebroid> {
    let induced = DiracAlgebroid::from_parts(
        d.chart().clone(),
        Representation::Induced {
            base: Box::new(d.clone()),
            constraint: InducingConstraint::Affine(a),
        },
    );
    validate_induced(&induced)?;
    Ok(induced)
}

/// Direct construction of the fiber of `Ṽ + V⁰` at `(x, ξ)` from the subspace of `D`.
///
/// Returns an orthonormal basis (columns ordered `(ẋ, ξ̇, p, y)`).
pub fn pointwise_induce(
    d: &DiracAlgebroid,
    v: &LinearConstraint,
    x: &[f64],
    xi: &[f64],
) -> Result<DMatrix<f64>> {
    let (n, m) = (d.base_dim(), d.fiber_dim());
    let total = n + m;
    let form = d.local_form(x)?;
    let constraint = InducingConstraint::Linear(v.clone());
    for &a in constraint.base_selector() {
        if a < n && x[a].abs() > 1e-12 {
            return Err(Error::Contract(format!(
                "x = {x:?} is not on the constraint support (x^{a} ≠ 0)"
            )));
        }
    }
    let (w, _, kernel_is_v) = constraint_rows(&constraint, n, m, x)?;
    let basis = d.basis_matrix_at(x, xi)?;

    // (ẋ, y) part of a direction.
    let mut to_velocity = DMatrix::zeros(total, 2 * total);
    for a in 0..n {
        to_velocity[(a, a)] = 1.0;
    }
    for i in 0..m {
        to_velocity[(n + i, 2 * n + m + i)] = 1.0;
    }
    let v_basis = if kernel_is_v {
        numeric::null_space(&w)
    } else {
        numeric::null_space(&numeric::vstack(total, &[&form.velocity, &w]))
    };
    let restricted = if kernel_is_v {
        // Directions whose velocity part lies in V: kill the component orthogonal to V.
        let complement = numeric::null_space(&v_basis.transpose()).transpose();
        &complement * &to_velocity * &basis
    } else {
        &w * &to_velocity * &basis
    };
    let tilde = &basis * numeric::null_space(&restricted);

    // V⁰ in the (p, ξ̇) slots.
    let annihilator = numeric::null_space(&v_basis.transpose());
    let mut core = DMatrix::zeros(2 * total, annihilator.ncols());
    for c in 0..annihilator.ncols() {
        for a in 0..n {
            core[(n + m + a, c)] = annihilator[(a, c)];
        }
        for i in 0..m {
            core[(n + i, c)] = annihilator[(n + i, c)];
        }
    }

    let mut cols: Vec<DVector<f64>> = tilde.column_iter().map(|c| c.into_owned()).collect();
    cols.extend(core.column_iter().map(|c| c.into_owned()));
    let span = numeric::orthonormal_span(&numeric::columns_to_matrix(2 * total, &cols));
    if span.ncols() != total {
        return Err(Error::Structure {
            message: format!("pointwise induction at x = {x:?} does not give a maximal subspace"),
            rank: span.ncols(),
            expected: total,
        });
    }
    Ok(span)
}

/// One violating entry of an integrability condition.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityWitness {
    /// `1` for the anchor condition, `2` for the bracket condition.
    pub condition: u8,
    /// `ρ^B_ι`: `(B, ι, ι)`; `c^I_ικ`: `(I, ι, κ)`. 0-based.
    pub indices: (usize, usize, usize),
    /// Largest absolute value over the probes.
    pub value: f64,
    /// Probe point where it was attained.
    pub x: Vec<f64>,
}

/// Verdict of the coordinate integrability conditions of `D^V` over a Π-graph.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    /// `ρ^B_ι(x^α, 0) = 0` for `B ∈ A`, `ι ∉ I`.
    pub cond1: bool,
    /// `c^I_ικ(x^α, 0) = 0` for `I` constrained, `ι, κ ∉ I`.
    pub cond2: bool,
    pub max_cond1: f64,
    pub max_cond2: f64,
    pub witnesses: Vec<IntegrabilityWitness>,
    pub probes: usize,
}

impl IntegrabilityReport {
    /// Both conditions hold: `V` is a Lie subalgebroid and `D^V` is Dirac.
    pub fn dirac_lie(&self) -> bool {
        self.cond1 && self.cond2
    }
}

/// Evaluates the integrability conditions of a linearly constrained Π-graph.
///
/// Only induced structures over Π-graph (or canonical) bases with adapted linear constraints
/// are accepted, and the base must be a Lie algebroid.
pub fn check_integrability(d: &DiracAlgebroid) -> Result<IntegrabilityReport> {
    let Representation::Induced { base, constraint } = d.representation() else {
        return Err(Error::Contract("integrability check needs an induced structure".into()));
    };
    let InducingConstraint::Linear(LinearConstraint::Adapted {
        base: selector,
        fiber,
    }) = constraint
    else {
        return Err(Error::Contract(
            "integrability check needs an adapted linear constraint".into(),
        ));
    };
    let Some(alg) = base.as_pi_graph() else {
        return Err(Error::Contract(format!(
            "integrability check is only defined over Π-graph bases, got {}",
            base.representation().kind()
        )));
    };
    let (n, m) = (alg.base_dim(), alg.fiber_dim());
    check_indices("base selector", selector, n)?;
    check_indices("fiber selector", fiber, m)?;

    let mut probes = Probes::new(0x1e_9ab1);
    let points: Vec<Vec<f64>> = (0..if n == 0 { 1 } else { CONSTRAINT_PROBES })
        .map(|_| {
            let mut x = probes.point(n, std::f64::consts::PI);
            for &a in selector {
                x[a] = 0.0;
            }
            x
        })
        .collect();

    for x in points.iter().take(5) {
        let j = alg.max_basis_jacobiator(x)?;
        if j > LIE_TOL {
            return Err(Error::Contract(format!(
                "base algebroid is not Lie at x = {x:?} (jacobiator {j:e})"
            )));
        }
    }

    let free: Vec<usize> = (0..m).filter(|i| !fiber.contains(i)).collect();
    let mut worst: BTreeMap<(u8, usize, usize, usize), (f64, Vec<f64>)> = BTreeMap::new();
    let mut record = |key: (u8, usize, usize, usize), value: f64, x: &[f64]| {
        let entry = worst.entry(key).or_insert((0.0, x.to_vec()));
        if value > entry.0 {
            *entry = (value, x.to_vec());
        }
    };
    let (mut max1, mut max2) = (0.0_f64, 0.0_f64);
    for x in &points {
        let rho = alg.eval_anchor(x)?;
        let c = alg.eval_structure(x)?;
        for &b in selector {
            for &iota in &free {
                let v = rho[(b, iota)].abs();
                max1 = max1.max(v);
                if v > INTEGRABILITY_TOL {
                    record((1, b, iota, iota), v, x);
                }
            }
        }
        for &k in fiber {
            for &iota in &free {
                for &kappa in &free {
                    if kappa <= iota {
                        continue;
                    }
                    let v = c.get(k, iota, kappa).abs();
                    max2 = max2.max(v);
                    if v > INTEGRABILITY_TOL {
                        record((2, k, iota, kappa), v, x);
                    }
                }
            }
        }
    }
    let witnesses = worst
        .into_iter()
        .map(|((condition, a, b, c), (value, x))| IntegrabilityWitness {
            condition,
            indices: (a, b, c),
            value,
            x,
        })
        .collect();
    Ok(IntegrabilityReport {
        cond1: max1 <= INTEGRABILITY_TOL,
        cond2: max2 <= INTEGRABILITY_TOL,
        max_cond1: max1,
        max_cond2: max2,
        witnesses,
        probes: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::{Chart, SkewAlgebroid, StructureTensor};
    use crate::dirac::{Coupling, GeneralLocal, PontryaginPoint};

    const R: f64 = 1.3;

    fn disc() -> DiracAlgebroid {
        DiracAlgebroid::pi_graph(SkewAlgebroid::rolling_disc(R).unwrap())
    }

    fn disc_v() -> DiracAlgebroid {
        induce(&disc(), LinearConstraint::adapted(vec![], vec![2, 3])).unwrap()
    }

    fn random_pi_graph(seed: u64) -> DiracAlgebroid {
        let mut probes = Probes::new(seed);
        let a: Vec<f64> = probes.point(6, 1.0);
        let b: Vec<f64> = probes.point(9, 1.0);
        let alg = SkewAlgebroid::new(
            Chart::new(2, 3).unwrap(),
            move |x| {
                DMatrix::from_fn(2, 3, |r, c| a[3 * r + c] * (1.0 + 0.3 * x[(r + c) % 2].sin()))
            },
            move |x| {
                let mut c = StructureTensor::zeros(3);
                for k in 0..3 {
                    c.set_antisymmetric(k, 0, 1, b[k] * x[0].cos());
                    c.set_antisymmetric(k, 0, 2, b[3 + k] + x[1]);
                    c.set_antisymmetric(k, 1, 2, b[6 + k] * x[0] * x[1]);
                }
                c
            },
        )
        .unwrap();
        DiracAlgebroid::pi_graph(alg)
    }

    #[test]
    fn rolling_disc_induced_equations() {
        let d = disc_v();
        let mut probes = Probes::new(4);
        for _ in 0..20 {
            let phi = probes.scalar(-3.0, 3.0);
            let xi = probes.point(4, 2.0);
            let y = probes.point(4, 2.0);
            let p = probes.point(1, 2.0);
            let xid = probes.point(4, 2.0);
            let xd = probes.point(1, 2.0);
            let pt = PontryaginPoint::new(&[phi], &xi, &xd, &xid, &p, &y).unwrap();
            let r = d.residual(&pt).unwrap();
            let (s, c) = phi.sin_cos();
            let expected = [
                xd[0] - y[0],
                y[2],
                y[3],
                xid[0] - (R * y[1] * xi[2] * s - R * y[1] * xi[3] * c - p[0]),
                xid[1] - (-R * y[0] * xi[2] * s + R * y[0] * xi[3] * c),
            ];
            for (a, b) in r.iter().zip(expected) {
                assert!((a - b).abs() < 1e-13, "{r} vs {expected:?}");
            }
            assert!(d.phase_membership(&[phi], &xi).unwrap().member);
        }
    }

    #[test]
    fn rolling_disc_induced_core_has_dimension_three() {
        let core = disc_v().core_at(&[0.4]).unwrap();
        assert_eq!(core.ncols(), 3);
        let vel = disc_v().velocity_basis(&[0.4]).unwrap();
        assert_eq!(vel.ncols(), 2);
    }

    #[test]
    fn full_velocity_bundle_changes_nothing() {
        for d in [disc(), random_pi_graph(1), DiracAlgebroid::canonical(2).unwrap()] {
            let dv = induce(&d, LinearConstraint::none()).unwrap();
            let mut probes = Probes::new(8);
            for _ in 0..10 {
                let x = probes.point(d.base_dim(), 2.0);
                let xi = probes.point(d.fiber_dim(), 2.0);
                let a = d.basis_matrix_at(&x, &xi).unwrap();
                let b = dv.basis_matrix_at(&x, &xi).unwrap();
                assert!(numeric::max_principal_angle(&a, &b) <= 1e-10);
                let c = pointwise_induce(&d, &LinearConstraint::none(), &x, &xi).unwrap();
                assert!(numeric::max_principal_angle(&a, &c) <= 1e-10);
            }
        }
    }

    fn assert_oracle(d: &DiracAlgebroid, v: LinearConstraint, count: usize, seed: u64) {
        let dv = induce(d, v.clone()).unwrap();
        let mut probes = Probes::new(seed);
        let (n, m) = (d.base_dim(), d.fiber_dim());
        for _ in 0..count {
            let mut x = probes.point(n, 3.0);
            if let LinearConstraint::Adapted { base, .. } = &v {
                for &a in base {
                    x[a] = 0.0;
                }
            }
            let xi = probes.point(m, 3.0);
            let closed = dv.basis_matrix_at(&x, &xi).unwrap();
            let oracle = pointwise_induce(d, &v, &x, &xi).unwrap();
            let angle = numeric::max_principal_angle(&closed, &oracle);
            assert!(angle <= 1e-8, "angle {angle:e} at {x:?}");
            assert!(dv.max_isotropy_defect(&x, &xi).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn oracle_agrees_with_closed_form() {
        assert_oracle(&disc(), LinearConstraint::adapted(vec![], vec![2, 3]), 30, 1);
        assert_oracle(&DiracAlgebroid::canonical(2).unwrap(), LinearConstraint::adapted(vec![], vec![1]), 30, 2);
        assert_oracle(&random_pi_graph(7), LinearConstraint::adapted(vec![1], vec![0]), 30, 3);
    }

    #[test]
    fn general_constraint_matches_adapted() {
        let general = LinearConstraint::general(|x: &[f64]| {
            // y³ = 0, y⁴ = 0, expressed together with the anchor row.
            let mut w = DMatrix::zeros(3, 5);
            w[(0, 0)] = 1.0;
            w[(0, 1)] = -1.0;
            w[(1, 3)] = 1.0 + x[0].cos().powi(2);
            w[(1, 4)] = 0.5;
            w[(2, 4)] = 2.0;
            w
        });
        let dg = induce(&disc(), general.clone()).unwrap();
        let da = disc_v();
        let mut probes = Probes::new(12);
        for _ in 0..20 {
            let x = probes.point(1, 3.0);
            let xi = probes.point(4, 3.0);
            let a = da.basis_matrix_at(&x, &xi).unwrap();
            let b = dg.basis_matrix_at(&x, &xi).unwrap();
            assert!(numeric::max_principal_angle(&a, &b) <= 1e-9);
            let c = pointwise_induce(&disc(), &general, &x, &xi).unwrap();
            assert!(numeric::max_principal_angle(&a, &c) <= 1e-9);
        }
    }

    #[test]
    fn constraint_outside_velocity_bundle_rejected() {
        // ker W contains (φ̇ = 1, y = 0), which violates φ̇ = y¹.
        let bad = LinearConstraint::general(|_: &[f64]| {
            let mut w = DMatrix::zeros(3, 5);
            w[(0, 1)] = 1.0;
            w[(1, 3)] = 1.0;
            w[(2, 4)] = 1.0;
            w
        });
        assert!(matches!(induce(&disc(), bad), Err(Error::Constraint(_))));
        let out_of_range = LinearConstraint::adapted(vec![], vec![4]);
        assert!(matches!(induce(&disc(), out_of_range), Err(Error::Contract(_))));
    }

    #[test]
    fn canonical_zero_constraint_pointwise() {
        let d = DiracAlgebroid::canonical(1).unwrap();
        let v = LinearConstraint::adapted(vec![], vec![0]);
        let b = pointwise_induce(&d, &v, &[0.2], &[1.0]).unwrap();
        assert_eq!(b.ncols(), 2);
        // Ṽ ∩ is the zero direction, so the subspace is the whole (p, ξ̇) plane.
        let mut expected = DMatrix::zeros(4, 2);
        expected[(1, 0)] = 1.0;
        expected[(2, 1)] = 1.0;
        assert!(numeric::max_principal_angle(&b, &expected) < 1e-12);
        let dv = induce(&d, v).unwrap();
        assert!(numeric::max_principal_angle(&dv.basis_matrix_at(&[0.2], &[1.0]).unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn induction_is_idempotent() {
        let v = LinearConstraint::adapted(vec![], vec![2, 3]);
        let once = disc_v();
        let twice = induce(&once, v).unwrap();
        let mut probes = Probes::new(21);
        for _ in 0..10 {
            let x = probes.point(1, 3.0);
            let xi = probes.point(4, 3.0);
            let a = once.basis_matrix_at(&x, &xi).unwrap();
            let b = twice.basis_matrix_at(&x, &xi).unwrap();
            assert!(numeric::max_principal_angle(&a, &b) <= 1e-9);
        }
    }

    #[test]
    fn induced_structure_projects_onto_v() {
        let d = disc_v();
        let mut probes = Probes::new(2);
        for _ in 0..10 {
            let x = probes.point(1, 3.0);
            let xi = probes.point(4, 3.0);
            let basis = d.basis_matrix_at(&x, &xi).unwrap();
            let mut velocity_span = Vec::new();
            for col in basis.column_iter() {
                // (ẋ, y) part lies in V = {φ̇ = y¹, y³ = y⁴ = 0}.
                let (xd, y) = (col[0], col.rows(6, 4).into_owned());
                assert!((xd - y[0]).abs() < 1e-12 && y[2].abs() < 1e-12 && y[3].abs() < 1e-12);
                velocity_span.push(DVector::from_vec(vec![xd, y[0], y[1], y[2], y[3]]));
            }
            assert_eq!(numeric::rank(&numeric::columns_to_matrix(5, &velocity_span)), 2);
        }
    }

    #[test]
    fn affine_with_trivial_offset_matches_linear() {
        let w = |_: &[f64]| {
            let mut w = DMatrix::zeros(3, 5);
            w[(0, 0)] = 1.0;
            w[(0, 1)] = -1.0;
            w[(1, 3)] = 1.0;
            w[(2, 4)] = 1.0;
            w
        };
        let affine = induce_affine(&disc(), AffineConstraint::general(w, |_| DVector::zeros(3))).unwrap();
        let linear = disc_v();
        let mut probes = Probes::new(31);
        for _ in 0..10 {
            let x = probes.point(1, 3.0);
            let xi = probes.point(4, 3.0);
            let a = affine.basis_matrix_at(&x, &xi).unwrap();
            let b = linear.basis_matrix_at(&x, &xi).unwrap();
            assert!(numeric::max_principal_angle(&a, &b) <= 1e-10);
        }
        assert!(!affine.local_form(&[0.1]).unwrap().is_affine());
    }

    #[test]
    fn adapted_affine_constraint_enforces_unit_component() {
        let d = induce_affine(&disc(), AffineConstraint::adapted(vec![], 3, vec![2])).unwrap();
        assert!(d.is_affine());
        let form = d.local_form(&[0.3]).unwrap();
        let y = [0.5, -1.0, 0.0, 1.0];
        assert!(form.velocity_residual(&[0.5], &y).amax() < 1e-15);
        let y_bad = [0.5, -1.0, 0.0, 0.0];
        assert!((form.velocity_residual(&[0.5], &y_bad).amax() - 1.0).abs() < 1e-15);
        assert_eq!(form.frame.ncols(), 2);
    }

    #[test]
    fn inconsistent_affine_constraint_rejected() {
        // y¹ = 1 and φ̇ − y¹ = 1 cannot both hold with φ̇ = y¹.
        let w = |_: &[f64]| DMatrix::from_row_slice(1, 5, &[1.0, -1.0, 0.0, 0.0, 0.0]);
        let res = induce_affine(&disc(), AffineConstraint::general(w, |_| DVector::from_element(1, 1.0)));
        assert!(matches!(res, Err(Error::Constraint(_))));
    }

    /// `D × {p₀ = 0}` on the bundle with one extra base coordinate, as a general local form.
    fn time_free_extension(d: &DiracAlgebroid) -> DiracAlgebroid {
        let (n, m) = (d.base_dim(), d.fiber_dim());
        let total = n + m + 1;
        let (d1, d2, d3, d4, d5) = (d.clone(), d.clone(), d.clone(), d.clone(), d.clone());
        let pad = move |mat: DMatrix<f64>, extra: Option<usize>| {
            let rows = mat.nrows() + usize::from(extra.is_some());
            let mut out = DMatrix::zeros(rows, total);
            out.view_mut((0, 1), (mat.nrows(), n + m)).copy_from(&mat);
            if let Some(col) = extra {
                out[(rows - 1, col)] = 1.0;
            }
            out
        };
        DiracAlgebroid::general_local(
            d.chart().time_extended(),
            GeneralLocal::new(
                move |x| pad(d1.local_form(&x[1..]).unwrap().eta, Some(0)),
                move |x| pad(d2.local_form(&x[1..]).unwrap().velocity, None),
                move |x| pad(d3.local_form(&x[1..]).unwrap().zeta, Some(0)),
                move |x| {
                    let z = d4.local_form(&x[1..]).unwrap().zeta;
                    let comp = numeric::null_space(&z).transpose();
                    pad(comp, None)
                },
                move |x| {
                    let c = d5.local_form(&x[1..]).unwrap().coupling;
                    let (r, _, m) = c.shape();
                    let mut out = Coupling::zeros(r + 1, r + 1, m);
                    for i in 0..r {
                        for k in 0..r {
                            for j in 0..m {
                                out.set(i, k, j, c.get(i, k, j));
                            }
                        }
                    }
                    out
                },
            ),
        )
        .unwrap()
    }

    #[test]
    fn time_extension_equals_affine_induction() {
        for d in [disc(), random_pi_graph(5)] {
            let (n, m) = (d.base_dim(), d.fiber_dim());
            let ext = time_free_extension(&d);
            let dd = d.clone();
            let constraint = AffineConstraint::general(
                move |x: &[f64]| {
                    let vel = dd.local_form(&x[1..]).unwrap().velocity;
                    let mut w = DMatrix::zeros(vel.nrows() + 1, n + m + 1);
                    w[(0, 0)] = 1.0;
                    w.view_mut((1, 1), (vel.nrows(), n + m)).copy_from(&vel);
                    w
                },
                move |_| {
                    let mut r = DVector::zeros(n + 1);
                    r[0] = 1.0;
                    r
                },
            );
            let induced = induce_affine(&ext, constraint).unwrap();
            let direct = d.time_extended();
            let mut probes = Probes::new(77);
            for _ in 0..10 {
                let x = probes.point(n + 1, 2.0);
                let xi = probes.point(m, 2.0);
                let a = induced.basis_matrix_at(&x, &xi).unwrap();
                let b = direct.basis_matrix_at(&x, &xi).unwrap();
                assert!(numeric::max_principal_angle(&a, &b) <= 1e-9);
                // Same affine offsets: a particular point of one lies in the other.
                let fi = induced.local_form(&x).unwrap();
                let fd = direct.local_form(&x).unwrap();
                let sol = numeric::min_norm_solve(&fi.velocity, &fi.velocity_offset);
                let (xd, y) = (sol.rows(0, n + 1).into_owned(), sol.rows(n + 1, m).into_owned());
                assert!(fd.velocity_residual(xd.as_slice(), y.as_slice()).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn rolling_disc_is_not_dirac_lie() {
        let report = check_integrability(&disc_v()).unwrap();
        assert!(report.cond1);
        assert!(!report.cond2);
        assert!(!report.dirac_lie());
        let w = report
            .witnesses
            .iter()
            .find(|w| w.condition == 2 && w.indices == (2, 0, 1))
            .expect("c³₁₂ witness");
        assert!(w.x[0].sin().abs() > 1e-3);
        assert!((w.value - R * w.x[0].sin().abs()).abs() < 1e-12);
        let again = check_integrability(&disc_v()).unwrap();
        assert_eq!(again.max_cond2, report.max_cond2);
    }

    #[test]
    fn flat_canonical_constraint_is_dirac_lie() {
        let d = DiracAlgebroid::canonical(3).unwrap();
        let dv = induce(&d, LinearConstraint::adapted(vec![], vec![2])).unwrap();
        let report = check_integrability(&dv).unwrap();
        assert!(report.cond1 && report.cond2 && report.witnesses.is_empty());
        let dv = induce(&disc(), LinearConstraint::none()).unwrap();
        assert!(check_integrability(&dv).unwrap().dirac_lie());
    }

    #[test]
    fn anchor_condition_detects_transversal_sections() {
        // S = {x² = 0} but e₂ moves along x²: ρ²₂ ≠ 0.
        let d = DiracAlgebroid::canonical(2).unwrap();
        let dv = induce(&d, LinearConstraint::adapted(vec![1], vec![0])).unwrap();
        let report = check_integrability(&dv).unwrap();
        assert!(!report.cond1);
        assert_eq!(report.max_cond1, 1.0);
    }

    #[test]
    fn integrability_rejects_other_inputs() {
        assert!(check_integrability(&disc()).is_err());
        let aff = induce_affine(&disc(), AffineConstraint::adapted(vec![], 3, vec![2])).unwrap();
        assert!(check_integrability(&aff).is_err());
    }
}
