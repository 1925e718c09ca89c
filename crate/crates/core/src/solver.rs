//! Penalized weighted least squares for fixed regularization parameters.
//!
//! Minimizes `S0(z) + l1 * S1(z) + l2 * S2(z)` through the normal equations
//! `(B0' W0 B0 + l1 B1'B1 + l2 B2'B2) z = B0' W0 x0`. The system is
//! Jacobi-equilibrated, Cholesky-factored, refined once, and inverted for
//! the covariance `sigma^2 * N^-1`.
//!
//! Summation order: every cross-product is accumulated sequentially in row
//! order of the `LinearSystem`, so results are bitwise reproducible for a
//! fixed system.

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::design::{build_z2u, build_z2v, LinearMap, LinearSystem, SparseRow};
use crate::grid::{unflatten_surface, ZLayout};

/// Scaled condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("system has no observation rows")]
    EmptySystem,
    #[error("regularization parameters must be finite and non-negative, got ({0}, {1})")]
    InvalidLambda(f64, f64),
    #[error(
        "normal matrix is singular (condition estimate {condition:e}); \
         parameters without information: {unidentified:?}"
    )]
    SingularSystem { condition: f64, unidentified: Vec<usize> },
}

/// Weighted cross-products of a system, reusable across regularization parameters.
#[derive(Debug, Clone)]
pub struct PreparedSystem<'a> {
    system: &'a LinearSystem,
    data_normal: DMatrix<f64>,
    data_rhs: DVector<f64>,
    penalty_v_normal: DMatrix<f64>,
    penalty_u_normal: DMatrix<f64>,
    z2v: LinearMap,
    z2u: LinearMap,
}

fn accumulate(normal: &mut DMatrix<f64>, row: &SparseRow, w: f64) {
    for &(p, cp) in &row.entries {
        for &(q, cq) in &row.entries {
            normal[(p, q)] += w * cp * cq;
        }
    }
}

impl<'a> PreparedSystem<'a> {
    pub fn new(system: &'a LinearSystem) -> Self {
        let n = system.layout.dim();
        let mut data_normal = DMatrix::zeros(n, n);
        let mut data_rhs = DVector::zeros(n);
        for (row, &w) in system.data_rows.iter().zip(&system.weights) {
            accumulate(&mut data_normal, row, w);
            for &(p, c) in &row.entries {
                data_rhs[p] += w * c * row.rhs;
            }
        }
        let mut penalty_v_normal = DMatrix::zeros(n, n);
        for row in &system.penalty_v_rows {
            accumulate(&mut penalty_v_normal, row, 1.0);
        }
        let mut penalty_u_normal = DMatrix::zeros(n, n);
        for row in &system.penalty_u_rows {
            accumulate(&mut penalty_u_normal, row, 1.0);
        }
        Self {
            system,
            data_normal,
            data_rhs,
            penalty_v_normal,
            penalty_u_normal,
            z2v: build_z2v(&system.layout),
            z2u: build_z2u(&system.layout),
        }
    }

    pub fn system(&self) -> &LinearSystem {
        self.system
    }

    pub fn normal_matrix(&self, lambda1: f64, lambda2: f64) -> DMatrix<f64> {
        &self.data_normal + &self.penalty_v_normal * lambda1 + &self.penalty_u_normal * lambda2
    }

    pub fn solve(&self, lambda1: f64, lambda2: f64) -> Result<FitResult, SolveError> {
        let sys = self.system;
        if sys.is_empty() {
            return Err(SolveError::EmptySystem);
        }
        if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(SolveError::InvalidLambda(lambda1, lambda2));
        }
        let normal = self.normal_matrix(lambda1, lambda2);
        let factor = factorize(&normal)?;
        let mut z_hat = factor.solve(&self.data_rhs);
        let residual = &self.data_rhs - &normal * &z_hat;
        z_hat += factor.solve(&residual);

        let mut normal_inverse = factor.inverse();
        symmetrize(&mut normal_inverse);

        let s0 = sys
            .data_rows
            .iter()
            .zip(&sys.weights)
            .map(|(r, &w)| w * (r.dot(&z_hat) - r.rhs).powi(2))
            .sum::<f64>()
            + sys.css_total;
        let s1 = sys.penalty_v_rows.iter().map(|r| r.dot(&z_hat).powi(2)).sum();
        let s2 = sys.penalty_u_rows.iter().map(|r| r.dot(&z_hat).powi(2)).sum();

        let dim = sys.layout.dim();
        let dof = sys.n_obs.checked_sub(dim).filter(|&d| d > 0);
        let sigma2_hat = dof.map(|d| s0 / d as f64);
        let cov_z = &normal_inverse * sigma2_hat.unwrap_or(1.0);

        let (vr, vc) = sys.layout.v_shape();
        let (ur, uc) = sys.layout.u_shape();
        let v_hat = unflatten_surface(&self.z2v.apply(&z_hat), vr, vc);
        let u_hat = unflatten_surface(&self.z2u.apply(&z_hat), ur, uc);
        let cov_v = self.z2v.congruence(&cov_z);
        let cov_u = self.z2u.congruence(&cov_z);

        Ok(FitResult {
            layout: sys.layout,
            lambda1,
            lambda2,
            z_hat,
            cov_z,
            normal_inverse,
            condition: factor.condition,
            sigma2_hat,
            dof,
            n_obs: sys.n_obs,
            s0,
            s1,
            s2,
            v_hat,
            u_hat,
            cov_v,
            cov_u,
        })
    }
}

/// Solves the system once; see [`PreparedSystem`] to reuse cross-products.
pub fn solve(system: &LinearSystem, lambda1: f64, lambda2: f64) -> Result<FitResult, SolveError> {
    PreparedSystem::new(system).solve(lambda1, lambda2)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for p in 0..n {
        for q in 0..p {
            let v = 0.5 * (m[(p, q)] + m[(q, p)]);
            m[(p, q)] = v;
            m[(q, p)] = v;
        }
    }
}

struct Factor {
    scale: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    scaled_inverse: DMatrix<f64>,
    condition: f64,
}

impl Factor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let scaled = rhs.component_div(&self.scale);
        self.chol.solve(&scaled).component_div(&self.scale)
    }

    fn inverse(&self) -> DMatrix<f64> {
        let n = self.scale.len();
        DMatrix::from_fn(n, n, |p, q| self.scaled_inverse[(p, q)] / (self.scale[p] * self.scale[q]))
    }
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Equilibrates with `D^-1/2 N D^-1/2`, factors, and checks the 1-norm condition number.
fn factorize(normal: &DMatrix<f64>) -> Result<Factor, SolveError> {
    let n = normal.nrows();
    let diag = normal.diagonal();
    let unidentified: Vec<usize> = (0..n).filter(|&k| diag[k] <= 0.0).collect();
    if !unidentified.is_empty() {
        return Err(SolveError::SingularSystem { condition: f64::INFINITY, unidentified });
    }
    let scale = diag.map(f64::sqrt);
    let scaled = DMatrix::from_fn(n, n, |p, q| normal[(p, q)] / (scale[p] * scale[q]));
    let chol = Cholesky::new(scaled.clone())
        .ok_or(SolveError::SingularSystem { condition: f64::INFINITY, unidentified: vec![] })?;
    let scaled_inverse = chol.inverse();
    let condition = norm1(&scaled) * norm1(&scaled_inverse);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(SolveError::SingularSystem { condition, unidentified: vec![] });
    }
    Ok(Factor { scale, chol, scaled_inverse, condition })
}

/// Point estimate, covariance, and derived surfaces for one `(l1, l2)`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub layout: ZLayout,
    pub lambda1: f64,
    pub lambda2: f64,
    pub z_hat: DVector<f64>,
    /// `sigma2_hat * N^-1`; in units of `sigma^2` when `sigma2_hat` is unavailable.
    pub cov_z: DMatrix<f64>,
    /// Unscaled `N^-1`.
    pub normal_inverse: DMatrix<f64>,
    /// 1-norm condition number of the equilibrated normal matrix.
    pub condition: f64,
    /// `None` when there are no more measurements than parameters.
    pub sigma2_hat: Option<f64>,
    pub dof: Option<usize>,
    pub n_obs: usize,
    /// Residual sum of squares of the measurements, including within-cell CSS.
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    /// Levels over `V`, `(I+2) x (J+2)`.
    pub v_hat: DMatrix<f64>,
    /// Trends over `U`, `(I+1) x (J+1)`.
    pub u_hat: DMatrix<f64>,
    pub cov_v: DMatrix<f64>,
    pub cov_u: DMatrix<f64>,
}

impl FitResult {
    /// Attained objective `S0 + l1 S1 + l2 S2`.
    pub fn objective(&self) -> f64 {
        self.s0 + self.lambda1 * self.s1 + self.lambda2 * self.s2
    }
}

/// Standard errors and 95% interval half-widths of one surface.
#[derive(Debug, Clone)]
pub struct SurfaceSummary {
    pub estimate: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    /// `t(0.975, dof) * stderr`; `None` without residual degrees of freedom.
    pub half_width: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub levels: SurfaceSummary,
    pub trends: SurfaceSummary,
}

/// Two-sided 95% quantile of Student's t.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof").inverse_cdf(0.975)
}

fn summarize(estimate: &DMatrix<f64>, cov: &DMatrix<f64>, tq: Option<f64>) -> SurfaceSummary {
    let (nr, nc) = estimate.shape();
    let stderr = DMatrix::from_fn(nr, nc, |i, j| cov[(i * nc + j, i * nc + j)].max(0.0).sqrt());
    let half_width = tq.map(|q| &stderr * q);
    SurfaceSummary { estimate: estimate.clone(), stderr, half_width }
}

pub fn reconstruct(fit: &FitResult) -> Reconstruction {
    let tq = fit.sigma2_hat.and(fit.dof).map(t_quantile_975);
    Reconstruction { levels: summarize(&fit.v_hat, &fit.cov_v, tq), trends: summarize(&fit.u_hat, &fit.cov_u, tq) }
}

/// Outcome of the four-point sufficient condition for a unique penalized solution.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessCheck {
    pub unique: bool,
    /// Indices into the input of four points with no three collinear.
    pub witness: Option<[usize; 4]>,
    pub diagnostic: String,
}

const COLLINEAR_TOL: f64 = 1e-9;

fn collinear(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> bool {
    let (ux, uy) = (q.0 - p.0, q.1 - p.1);
    let (wx, wy) = (r.0 - p.0, r.1 - p.1);
    let cross = ux * wy - uy * wx;
    cross.abs() <= COLLINEAR_TOL * ux.hypot(uy) * wx.hypot(wy)
}

/// Looks for four `(y, a)` points with no three on a common line.
///
/// Such a subset exists exactly when the distinct points are not all on one
/// line apart from at most one. If three non-collinear points exist, any
/// covering line must pass through two of them, so only three candidate
/// lines need checking.
pub fn check_uniqueness(points: &[(f64, f64)]) -> UniquenessCheck {
    let mut distinct: Vec<usize> = Vec::new();
    for (k, p) in points.iter().enumerate() {
        if !distinct.iter().any(|&d| points[d] == *p) {
            distinct.push(k);
        }
    }
    let fail = |msg: String| UniquenessCheck { unique: false, witness: None, diagnostic: msg };
    if distinct.len() < 4 {
        return fail(format!("only {} distinct points, need 4", distinct.len()));
    }
    let pt = |k: usize| points[k];
    let (p0, p1) = (distinct[0], distinct[1]);
    let Some(&p2) = distinct[2..].iter().find(|&&k| !collinear(pt(p0), pt(p1), pt(k))) else {
        return fail("all points lie on one line".into());
    };
    for (a, b) in [(p0, p1), (p0, p2), (p1, p2)] {
        let off: Vec<usize> = distinct.iter().copied().filter(|&k| !collinear(pt(a), pt(b), pt(k))).collect();
        if off.len() <= 1 {
            return fail(format!(
                "all points but {} lie on the line through points {a} and {b}",
                off.len()
            ));
        }
    }
    UniquenessCheck {
        unique: true,
        witness: find_witness(points, &distinct, [p0, p1, p2]),
        diagnostic: "found four points with no three collinear".into(),
    }
}

/// Builds four points in general position given a non-degenerate triangle.
///
/// Either some point avoids all three sides, or the remaining points sit on
/// the sides; then two points on one side and two on another, none at the
/// shared vertex, work.
fn find_witness(points: &[(f64, f64)], distinct: &[usize], tri: [usize; 3]) -> Option<[usize; 4]> {
    let pt = |k: usize| points[k];
    let general = |s: [usize; 4]| {
        [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)].iter().all(|&(x, y, z)| !collinear(pt(s[x]), pt(s[y]), pt(s[z])))
    };
    // sides[s] joins tri[s] and tri[(s + 1) % 3]
    let on_side = |s: usize, k: usize| collinear(pt(tri[s]), pt(tri[(s + 1) % 3]), pt(k));
    let rest = || distinct.iter().copied().filter(|k| !tri.contains(k));
    if let Some(q) = rest().find(|&k| (0..3).all(|s| !on_side(s, k))) {
        return Some([tri[0], tri[1], tri[2], q]).filter(|&w| general(w));
    }
    let first_on = |s: usize| rest().find(|&k| on_side(s, k));
    let found: Vec<(usize, usize)> = (0..3).filter_map(|s| first_on(s).map(|k| (s, k))).collect();
    let &[(sx, a), (sy, b), ..] = found.as_slice() else { return None };
    // The two sides share one vertex; take the other vertex of each.
    let ends = |s: usize| [tri[s], tri[(s + 1) % 3]];
    let shared = ends(sx).into_iter().find(|v| ends(sy).contains(v))?;
    let vx = ends(sx).into_iter().find(|&v| v != shared)?;
    let vy = ends(sy).into_iter().find(|&v| v != shared)?;
    Some([a, vx, b, vy]).filter(|&w| general(w))
}
