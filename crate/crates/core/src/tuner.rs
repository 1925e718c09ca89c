//! Choice of `(l1, l2)` from correlation-based smoothness targets.
//!
//! For neighbouring surface estimates the indicator `1 - r^2` is the share of
//! variance of one that the other does not predict. Larger penalties raise
//! neighbour correlations, so each summary statistic falls as its own
//! parameter grows. The search bisects `log10(l1)` against the level
//! statistic and `log10(l2)` against the trend statistic, alternating until
//! both sit within `delta` of their targets on the log scale.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::design::LinearSystem;
use crate::grid::ZLayout;
use crate::solver::{FitResult, PreparedSystem, SolveError};

pub const LOG10_LAMBDA_MIN: f64 = -8.0;
pub const LOG10_LAMBDA_MAX: f64 = 10.0;
pub const MAX_SOLVES: usize = 200;
pub const MAX_SWEEPS: usize = 10;
/// Bisection stops once the bracket is narrower than this in `log10` units.
const MIN_BRACKET: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid smoothness targets: {0}")]
    InvalidTargets(String),
    #[error("selected point ({i}, {j}) outside a {nrows} x {ncols} indicator block")]
    IndexOutOfRange { i: usize, j: usize, nrows: usize, ncols: usize },
    #[error("empty indicator vector")]
    EmptyIndicators,
    #[error("{surface} target {target} unreachable: statistic spans [{low}, {high}] over the bracket")]
    TargetUnreachable { surface: &'static str, target: f64, low: f64, high: f64 },
    #[error("no convergence after {solves} solves")]
    NoConvergence { solves: usize, best: Box<(FitResult, SmoothnessReport)> },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FstatKind {
    SelectedPoint,
    Mean,
    Median,
    Min,
}

impl FstatKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "selected-point" => Some(Self::SelectedPoint),
            "mean" => Some(Self::Mean),
            "median" => Some(Self::Median),
            "min" => Some(Self::Min),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessTargets {
    pub f_smv: f64,
    pub f_smu: f64,
    /// Accuracy on the log scale; `f64::INFINITY` disables tuning.
    pub delta: f64,
    pub kind: FstatKind,
    /// 0-based `(i, j)` in the along-age indicator block of the levels.
    pub point_v: (usize, usize),
    /// 0-based `(i, j)` in the along-age indicator block of the trends.
    pub point_u: (usize, usize),
}

impl SmoothnessTargets {
    /// Targets 0.2 / 0.2 with accuracy 0.05 and the default selected points.
    pub fn standard(layout: &ZLayout) -> Self {
        let (point_v, point_u) = default_points(layout);
        Self { f_smv: 0.2, f_smu: 0.2, delta: 0.05, kind: FstatKind::SelectedPoint, point_v, point_u }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        for (name, f) in [("f_smv", self.f_smv), ("f_smu", self.f_smu)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(TuneError::InvalidTargets(format!("{name} = {f} must lie in (0, 1)")));
            }
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(TuneError::InvalidTargets(format!("delta = {} must be positive", self.delta)));
        }
        Ok(())
    }
}

/// Default selected points.
///
/// Levels: the first indicator, `(0, 0)`, i.e. 1-based `(1, 1)`. Trends:
/// `(nrow(U) / 2, ncol(U) / 2)` with integer division, e.g. `(5, 20)` for
/// an 11 x 40 trend grid.
pub fn default_points(layout: &ZLayout) -> ((usize, usize), (usize, usize)) {
    let (nr, nc) = layout.u_shape();
    ((0, 0), (nr / 2, nc / 2))
}

/// Local smoothness indicators of one surface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessVector {
    /// Along-age block (`nrows x (ncols-1)`) then along-year block (`(nrows-1) x ncols`), each row-major.
    pub values: Vec<f64>,
    pub nrows: usize,
    pub ncols: usize,
    /// Positions in `values` where a variance was zero and the indicator was set to 1.
    pub zero_variance: Vec<usize>,
}

impl SmoothnessVector {
    pub fn age_block(&self) -> &[f64] {
        &self.values[..self.nrows * (self.ncols - 1)]
    }

    pub fn year_block(&self) -> &[f64] {
        &self.values[self.nrows * (self.ncols - 1)..]
    }
}

/// `1 - r^2` for every along-age and along-year neighbour pair of a surface.
///
/// `cov` is the covariance of the row-major flattened `nrows x ncols` surface.
pub fn smoothness_vector(cov: &DMatrix<f64>, nrows: usize, ncols: usize) -> SmoothnessVector {
    assert_eq!(cov.nrows(), nrows * ncols);
    let mut values = Vec::with_capacity(nrows * (ncols - 1) + (nrows - 1) * ncols);
    let mut zero_variance = Vec::new();
    let mut pair = |p: usize, q: usize| {
        let (vp, vq) = (cov[(p, p)], cov[(q, q)]);
        if vp <= 0.0 || vq <= 0.0 {
            zero_variance.push(values.len());
            values.push(1.0);
        } else {
            let r2 = cov[(p, q)] * cov[(p, q)] / (vp * vq);
            values.push((1.0 - r2).clamp(0.0, 1.0));
        }
    };
    for i in 0..nrows {
        for j in 0..ncols - 1 {
            pair(i * ncols + j, i * ncols + j + 1);
        }
    }
    for i in 0..nrows - 1 {
        for j in 0..ncols {
            pair(i * ncols + j, (i + 1) * ncols + j);
        }
    }
    SmoothnessVector { values, nrows, ncols, zero_variance }
}

/// Summary statistic of an indicator vector.
///
/// For `SelectedPoint`, `point` is a 0-based `(i, j)` in the along-age block.
pub fn fstat(f: &SmoothnessVector, kind: FstatKind, point: (usize, usize)) -> Result<f64, TuneError> {
    if f.values.is_empty() {
        return Err(TuneError::EmptyIndicators);
    }
    Ok(match kind {
        FstatKind::SelectedPoint => {
            let (i, j) = point;
            let block_cols = f.ncols - 1;
            if i >= f.nrows || j >= block_cols {
                return Err(TuneError::IndexOutOfRange { i, j, nrows: f.nrows, ncols: block_cols });
            }
            f.values[i * block_cols + j]
        }
        _ => summary(&f.values, kind),
    })
}

fn summary(values: &[f64], kind: FstatKind) -> f64 {
    match kind {
        FstatKind::Mean => values.iter().sum::<f64>() / values.len() as f64,
        FstatKind::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        FstatKind::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        }
        FstatKind::SelectedPoint => unreachable!(),
    }
}

/// Statistics of an indicator vector given as a plain slice; used by tests
/// and callers holding raw indicator values.
pub fn fstat_values(values: &[f64], kind: FstatKind) -> Result<f64, TuneError> {
    if values.is_empty() {
        return Err(TuneError::EmptyIndicators);
    }
    match kind {
        FstatKind::SelectedPoint => Err(TuneError::InvalidTargets("selected point needs a grid".into())),
        _ => Ok(summary(values, kind)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessReport {
    pub f_v: SmoothnessVector,
    pub f_u: SmoothnessVector,
    pub stat_v: f64,
    pub stat_u: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Number of solves performed.
    pub iterations: usize,
    pub converged: bool,
}

impl SmoothnessReport {
    /// `max(|log stat_v - log f_smv|, |log stat_u - log f_smu|)`.
    pub fn log_error(&self, targets: &SmoothnessTargets) -> f64 {
        (self.stat_v.ln() - targets.f_smv.ln()).abs().max((self.stat_u.ln() - targets.f_smu.ln()).abs())
    }
}

/// Indicators and statistics of a finished fit.
pub fn evaluate(fit: &FitResult, targets: &SmoothnessTargets) -> Result<SmoothnessReport, TuneError> {
    let (vr, vc) = fit.layout.v_shape();
    let (ur, uc) = fit.layout.u_shape();
    let f_v = smoothness_vector(&fit.cov_v, vr, vc);
    let f_u = smoothness_vector(&fit.cov_u, ur, uc);
    let stat_v = fstat(&f_v, targets.kind, targets.point_v)?;
    let stat_u = fstat(&f_u, targets.kind, targets.point_u)?;
    Ok(SmoothnessReport {
        f_v,
        f_u,
        stat_v,
        stat_u,
        lambda1: fit.lambda1,
        lambda2: fit.lambda2,
        iterations: 1,
        converged: false,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    Levels,
    Trends,
}

struct Search<'a, 'b> {
    prepared: &'b PreparedSystem<'a>,
    targets: SmoothnessTargets,
    solves: usize,
    best: Option<(f64, FitResult, SmoothnessReport)>,
}

/// A probe either yields statistics or a singular system. Singularity at
/// small parameters means the data leave directions free, which is read as
/// "rougher than any target"; at large parameters as "smoother than any".
enum Probe {
    Stats(f64, f64),
    Singular,
}

impl Search<'_, '_> {
    fn probe(&mut self, x1: f64, x2: f64) -> Result<Probe, TuneError> {
        if self.solves >= MAX_SOLVES {
            return Err(self.no_convergence());
        }
        self.solves += 1;
        let fit = match self.prepared.solve(10f64.powf(x1), 10f64.powf(x2)) {
            Ok(fit) => fit,
            Err(SolveError::SingularSystem { .. }) => return Ok(Probe::Singular),
            Err(e) => return Err(e.into()),
        };
        let report = evaluate(&fit, &self.targets)?;
        let err = report.log_error(&self.targets);
        let stats = (report.stat_v, report.stat_u);
        if self.best.as_ref().is_none_or(|b| err < b.0) {
            self.best = Some((err, fit, report));
        }
        Ok(Probe::Stats(stats.0, stats.1))
    }

    fn no_convergence(&mut self) -> TuneError {
        match self.best.take() {
            Some((_, fit, mut report)) => {
                report.iterations = self.solves;
                TuneError::NoConvergence { solves: self.solves, best: Box::new((fit, report)) }
            }
            None => TuneError::Solve(SolveError::SingularSystem { condition: f64::INFINITY, unidentified: vec![] }),
        }
    }

    /// Signed log distance of the axis statistic from its target; positive when too rough.
    fn gap(&self, axis: Axis, probe: &Probe, at_low_end: bool) -> f64 {
        match probe {
            Probe::Stats(sv, su) => match axis {
                Axis::Levels => sv.ln() - self.targets.f_smv.ln(),
                Axis::Trends => su.ln() - self.targets.f_smu.ln(),
            },
            Probe::Singular if at_low_end => f64::INFINITY,
            Probe::Singular => f64::NEG_INFINITY,
        }
    }

    fn point(axis: Axis, x: f64, other: f64) -> (f64, f64) {
        match axis {
            Axis::Levels => (x, other),
            Axis::Trends => (other, x),
        }
    }

    fn check_bracket(&mut self, axis: Axis, other: f64) -> Result<(), TuneError> {
        let (a1, a2) = Self::point(axis, LOG10_LAMBDA_MIN, other);
        let lo = self.probe(a1, a2)?;
        let (b1, b2) = Self::point(axis, LOG10_LAMBDA_MAX, other);
        let hi = self.probe(b1, b2)?;
        let (g_lo, g_hi) = (self.gap(axis, &lo, true), self.gap(axis, &hi, false));
        if g_lo < -self.targets.delta || g_hi > self.targets.delta {
            return Err(self.unreachable(axis, g_hi, g_lo));
        }
        Ok(())
    }

    fn unreachable(&self, axis: Axis, g_smooth: f64, g_rough: f64) -> TuneError {
        let (surface, target) = match axis {
            Axis::Levels => ("level", self.targets.f_smv),
            Axis::Trends => ("trend", self.targets.f_smu),
        };
        let stat = |g: f64| target * g.exp();
        TuneError::TargetUnreachable { surface, target, low: stat(g_smooth), high: stat(g_rough) }
    }

    /// Bisects one coordinate until its own statistic is within `tol` of target.
    fn bisect(&mut self, axis: Axis, other: f64, tol: f64) -> Result<f64, TuneError> {
        let (mut lo, mut hi) = (LOG10_LAMBDA_MIN, LOG10_LAMBDA_MAX);
        while hi - lo > MIN_BRACKET {
            let x = 0.5 * (lo + hi);
            let (p1, p2) = Self::point(axis, x, other);
            let probe = self.probe(p1, p2)?;
            // A singular probe inside the bracket is attributed to whichever side it is nearer.
            let g = self.gap(axis, &probe, x < 0.5 * (LOG10_LAMBDA_MIN + LOG10_LAMBDA_MAX));
            if g.abs() <= tol {
                return Ok(x);
            }
            if g > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
        }
        // The statistic jumps over the target, typically at the edge of the solvable range.
        Err(self.no_convergence())
    }
}

/// Searches `(l1, l2)` until both smoothness statistics meet their targets.
pub fn tune(system: &LinearSystem, targets: &SmoothnessTargets) -> Result<(FitResult, SmoothnessReport), TuneError> {
    targets.validate()?;
    let prepared = PreparedSystem::new(system);
    tune_prepared(&prepared, targets)
}

pub fn tune_prepared(
    prepared: &PreparedSystem<'_>,
    targets: &SmoothnessTargets,
) -> Result<(FitResult, SmoothnessReport), TuneError> {
    targets.validate()?;
    let mid = 0.5 * (LOG10_LAMBDA_MIN + LOG10_LAMBDA_MAX);
    let mut search = Search { prepared, targets: *targets, solves: 0, best: None };

    if targets.delta.is_infinite() {
        let fit = prepared.solve(10f64.powf(mid), 10f64.powf(mid))?;
        let mut report = evaluate(&fit, targets)?;
        report.converged = true;
        return Ok((fit, report));
    }

    let (mut x1, mut x2) = (mid, mid);
    search.check_bracket(Axis::Levels, x2)?;
    search.check_bracket(Axis::Trends, x1)?;
    let inner_tol = 0.5 * targets.delta;
    for _ in 0..MAX_SWEEPS {
        x1 = search.bisect(Axis::Levels, x2, inner_tol)?;
        x2 = search.bisect(Axis::Trends, x1, inner_tol)?;
        // The last probe was at (x1, x2); re-solve to get the fit itself.
        if search.solves >= MAX_SOLVES {
            break;
        }
        search.solves += 1;
        let fit = prepared.solve(10f64.powf(x1), 10f64.powf(x2))?;
        let mut report = evaluate(&fit, targets)?;
        report.iterations = search.solves;
        if report.log_error(targets) <= targets.delta {
            report.converged = true;
            return Ok((fit, report));
        }
        if search.best.as_ref().is_none_or(|b| report.log_error(targets) < b.0) {
            search.best = Some((report.log_error(targets), fit, report));
        }
    }
    Err(search.no_convergence())
}
