//! Cluster means of the trend surface and F tests between adjacent clusters.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::design::{build_u2uc, ClusterPartition, DesignError};
use crate::grid::flatten_surface;
use crate::solver::FitResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("invalid degrees of freedom ({d1}, {d2})")]
    InvalidDof { d1: u64, d2: u64 },
    #[error("F value must be non-negative, got {0}")]
    NegativeStatistic(f64),
    #[error("need at least two clusters to compare, got {0}")]
    TooFewClusters(usize),
}

/// Cumulative distribution function of Fisher's F with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: u64, d2: u64) -> Result<f64, InferenceError> {
    if d1 == 0 || d2 == 0 {
        return Err(InferenceError::InvalidDof { d1, d2 });
    }
    if x.is_nan() || x < 0.0 {
        return Err(InferenceError::NegativeStatistic(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let dist = FisherSnedecor::new(d1 as f64, d2 as f64).map_err(|_| InferenceError::InvalidDof { d1, d2 })?;
    Ok(dist.cdf(x))
}

/// Upper tail `1 - F_cdf(f, 1, dof)` of a single-contrast F statistic.
pub fn p_value(f: f64, dof: u64) -> Result<f64, InferenceError> {
    Ok(1.0 - f_cdf(f, 1, dof)?)
}

/// Mean trends over rectangular clusters of the trend surface.
#[derive(Debug, Clone)]
pub struct ClusterGrid {
    pub partition: ClusterPartition,
    /// `year_bands x age_bands`, in units of the state variable per year.
    pub means: DMatrix<f64>,
    /// Covariance of the row-major flattened means.
    pub cov: DMatrix<f64>,
    pub dof: Option<usize>,
}

impl ClusterGrid {
    pub fn stderr(&self, year_band: usize, age_band: usize) -> f64 {
        let k = self.partition.flat(year_band, age_band);
        self.cov[(k, k)].max(0.0).sqrt()
    }
}

pub fn cluster_means(fit: &FitResult, delta_a: usize, delta_y: usize) -> Result<ClusterGrid, InferenceError> {
    let partition = ClusterPartition::new(&fit.layout, delta_a, delta_y)?;
    let map = build_u2uc(&fit.layout, delta_a, delta_y)?;
    let u: DVector<f64> = flatten_surface(&fit.u_hat);
    let flat = map.apply(&u);
    let means = DMatrix::from_row_slice(partition.year_bands, partition.age_bands, flat.as_slice());
    let cov = map.congruence(&fit.cov_u);
    Ok(ClusterGrid { partition, means, cov, dof: fit.dof })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Next older age band, same years.
    AgeAdjacent,
    /// Next calendar band, same ages.
    YearAdjacent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonStatus {
    Tested,
    /// Variance of the difference is not positive.
    DegenerateVariance,
    /// No residual degrees of freedom, so no tail probability.
    NoDof,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonResult {
    /// `(year band, age band)`.
    pub cluster_a: (usize, usize),
    pub cluster_b: (usize, usize),
    pub direction: Direction,
    pub diff: f64,
    /// `c_aa - 2 c_ab + c_bb`.
    pub variance: f64,
    pub f_value: Option<f64>,
    pub p_value: Option<f64>,
    pub status: ComparisonStatus,
}

/// F statistic of `H0: m_a = m_b` from the means and their covariance.
pub fn contrast(means: &[f64], cov: &DMatrix<f64>, a: usize, b: usize) -> (f64, f64, Option<f64>) {
    let diff = means[a] - means[b];
    let variance = cov[(a, a)] - 2.0 * cov[(a, b)] + cov[(b, b)];
    let tol = 1e-12 * (cov[(a, a)].abs() + cov[(b, b)].abs());
    let f = (variance > tol).then(|| diff * diff / variance);
    (diff, variance, f)
}

/// Tests every cluster against its older-age and next-period neighbours.
///
/// Output order: clusters row-major, age neighbour before year neighbour.
pub fn compare_adjacent(grid: &ClusterGrid) -> Result<Vec<ComparisonResult>, InferenceError> {
    let part = grid.partition;
    if part.len() < 2 {
        return Err(InferenceError::TooFewClusters(part.len()));
    }
    let means: Vec<f64> = grid.means.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    let mut out = Vec::new();
    for yb in 0..part.year_bands {
        for ab in 0..part.age_bands {
            let neighbours = [
                (ab + 1 < part.age_bands).then_some(((yb, ab + 1), Direction::AgeAdjacent)),
                (yb + 1 < part.year_bands).then_some(((yb + 1, ab), Direction::YearAdjacent)),
            ];
            for ((nyb, nab), direction) in neighbours.into_iter().flatten() {
                let (a, b) = (part.flat(yb, ab), part.flat(nyb, nab));
                let (diff, variance, f) = contrast(&means, &grid.cov, a, b);
                let (status, p) = match (f, grid.dof) {
                    (None, _) => (ComparisonStatus::DegenerateVariance, None),
                    (Some(_), None) => (ComparisonStatus::NoDof, None),
                    (Some(f), Some(d)) => (ComparisonStatus::Tested, Some(p_value(f, d as u64)?)),
                };
                out.push(ComparisonResult {
                    cluster_a: (yb, ab),
                    cluster_b: (nyb, nab),
                    direction,
                    diff,
                    variance,
                    f_value: f,
                    p_value: p,
                    status,
                });
            }
        }
    }
    Ok(out)
}
