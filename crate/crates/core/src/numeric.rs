//! Finite differences and the small dense linear-algebra kit used throughout:
//! numeric rank, null spaces, orthonormal spans, principal angles and seeded probes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative singular-value threshold for all rank decisions.
pub const RANK_RTOL: f64 = 1e-9;

/// Central-difference step for a coordinate of magnitude `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-6_f64.max(1e-6 * v.abs())
}

/// Step used for the outer level of nested (second-order) differences.
pub fn fd_step_second(v: f64) -> f64 {
    1e-4 * v.abs().max(1.0)
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F>(f: F, x: &[f64]) -> DVector<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|a| {
            let h = fd_step(x[a]);
            probe[a] = x[a] + h;
            let fp = f(&probe);
            probe[a] = x[a] - h;
            let fm = f(&probe);
            probe[a] = x[a];
            (fp - fm) / (2.0 * h)
        }),
    )
}

/// Central-difference Jacobian (`rows × x.len()`) of a vector function, with a custom step rule.
pub fn jacobian_with<F, S>(f: F, x: &[f64], rows: usize, step: S) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
    S: Fn(f64) -> f64,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut probe = x.to_vec();
    for a in 0..x.len() {
        let h = step(x[a]);
        probe[a] = x[a] + h;
        let fp = f(&probe);
        probe[a] = x[a] - h;
        let fm = f(&probe);
        probe[a] = x[a];
        jac.set_column(a, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Central-difference Jacobian with the standard step.
pub fn jacobian<F>(f: F, x: &[f64], rows: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    jacobian_with(f, x, rows, fd_step)
}

/// Central-difference block `∂²f/∂z_r∂z_c` for `r ∈ rows`, `c ∈ cols`, from values of `f` alone.
pub fn second_partials<F>(f: F, z: &[f64], rows: &[usize], cols: &[usize]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    let mut probe = z.to_vec();
    let mut eval = |i: usize, hi: f64, j: usize, hj: f64| {
        probe.copy_from_slice(z);
        probe[i] += hi;
        probe[j] += hj;
        f(&probe)
    };
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            let (hi, hj) = (fd_step_second(z[i]), fd_step_second(z[j]));
            let v = eval(i, hi, j, hj) - eval(i, hi, j, -hj) - eval(i, -hi, j, hj) + eval(i, -hi, j, -hj);
            out[(r, c)] = v / (4.0 * hi * hj);
        }
    }
    out
}

/// Thin singular value decomposition `a = Σ s_j u_j v_jᵀ`, singular values largest first.
///
/// `u` has one column per singular value (zero columns where `s_j = 0`); `v` is the full
/// square right factor, so columns past the numeric rank span the kernel.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 80;

impl Svd {
    /// One-sided Jacobi SVD. nalgebra's bidiagonal QR returns wrong factors on some
    /// inputs with clustered singular values, which this routine does not.
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let mut w = a.clone();
        let mut v = DMatrix::<f64>::identity(n, n);
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let alpha = w.column(p).norm_squared();
                    let beta = w.column(q).norm_squared();
                    let gamma = w.column(p).dot(&w.column(q));
                    if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let sn = c * t;
                    for i in 0..m {
                        let (x, y) = (w[(i, p)], w[(i, q)]);
                        w[(i, p)] = c * x - sn * y;
                        w[(i, q)] = sn * x + c * y;
                    }
                    for i in 0..n {
                        let (x, y) = (v[(i, p)], v[(i, q)]);
                        v[(i, p)] = c * x - sn * y;
                        v[(i, q)] = sn * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
        let k = m.min(n);
        let s: Vec<f64> = order[..k].iter().map(|&j| norms[j]).collect();
        let u = DMatrix::from_fn(m, k, |i, c| {
            let j = order[c];
            if norms[j] > 0.0 {
                w[(i, j)] / norms[j]
            } else {
                0.0
            }
        });
        let v = DMatrix::from_fn(n, n, |i, c| v[(i, order[c])]);
        Svd { u, s, v }
    }

    /// Number of singular values above the relative threshold [`RANK_RTOL`].
    pub fn rank(&self) -> usize {
        let tol = rank_threshold(&self.s);
        self.s.iter().filter(|&&v| v > tol && v > 0.0).count()
    }
}

/// Singular values of `a`, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    Svd::new(a).s
}

fn rank_threshold(svals: &[f64]) -> f64 {
    let smax = svals.first().copied().unwrap_or(0.0);
    RANK_RTOL * smax
}

/// Numeric rank with the relative threshold [`RANK_RTOL`].
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    Svd::new(a).rank()
}

/// Orthonormal basis (as columns) of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    let svd = Svd::new(a);
    let r = svd.rank();
    svd.v.columns(r, cols - r).into_owned()
}

/// Orthonormal basis (as columns) of the column span of `a`.
pub fn orthonormal_span(a: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = a.nrows();
    if a.ncols() == 0 || rows == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = Svd::new(a);
    let r = svd.rank();
    svd.u.columns(0, r).into_owned()
}

/// Stacks column vectors into a matrix with `rows` rows (zero columns allowed).
pub fn columns_to_matrix(rows: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

/// Stacks matrices vertically; all must have `cols` columns.
pub fn vstack(cols: usize, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Largest principal angle (radians) between the column spans of two matrices.
///
/// Subspaces of different dimension are reported as `π/2`. The angle is computed from
/// sines (`‖(I − Q₁Q₁ᵀ)Q₂‖₂`), which stays accurate for nearly coincident subspaces.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormal_span(a);
    let qb = orthonormal_span(b);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if qa.ncols() == 0 {
        return 0.0;
    }
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let s = singular_values(&residual);
    s.first().copied().unwrap_or(0.0).min(1.0).asin()
}

/// Minimum-norm least-squares solution of `a x = b` via the pseudo-inverse.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = Svd::new(a);
    let mut x = DVector::zeros(a.ncols());
    for j in 0..svd.rank() {
        let coef = svd.u.column(j).dot(b) / svd.s[j];
        x.axpy(coef, &svd.v.column(j), 1.0);
    }
    x
}

/// Deterministic probe sampler (ChaCha8, fixed seed).
#[derive(Debug, Clone)]
pub struct Probes {
    rng: ChaCha8Rng,
}

impl Probes {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform sample in `[-radius, radius]^dim`.
    pub fn point(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        (0..dim)
            .map(|_| self.rng.gen_range(-radius..=radius))
            .collect()
    }

    pub fn scalar(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..=hi)
    }
}
