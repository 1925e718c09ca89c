//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use drm::ingest::{aggregate, Measurement};
use drm::{Frame, LinearSystem, SamplingPlan, TrueModel, ZLayout};
use nalgebra::{DMatrix, DVector};

/// Years 1982-1992 (with room for within-year fractions in 1992), ages 25-64: `I = 10`, `J = 39`.
pub fn reference_frame() -> Frame {
    Frame::new(1982.0, 1992.5, 25.0, 64.0).unwrap()
}

/// A slowly varying population with a mild age bend in the trends.
pub fn smooth_model(frame: Frame, noise_sd: f64) -> TrueModel {
    TrueModel::from_fn(
        frame,
        |i, j| 24.0 + 0.1 * i as f64 + 0.05 * j as f64,
        |i, j| 0.15 - 0.002 * j as f64 + 0.003 * i as f64 + 0.01 * (0.3 * j as f64).sin(),
        noise_sd,
    )
    .unwrap()
}

/// Three survey waves five years apart, every age, three examination fractions, ten subjects each.
pub fn wave_plan(frame: &Frame) -> SamplingPlan {
    SamplingPlan::survey_waves(frame, &[0, 5, 10], &[0.05, 0.15, 0.25], 10)
}

pub fn aggregated_system(frame: &Frame, data: &[Measurement]) -> LinearSystem {
    LinearSystem::from_cells(frame, &aggregate(data, frame).unwrap()).unwrap()
}

/// Level surface from `z` by stepping along cohort diagonals.
///
/// Written against the parameter ordering directly: entry levels
/// `v(I+1,0), ..., v(0,0), v(0,1), ..., v(0,J+1)`, then trends row-major.
pub fn levels_by_recursion(z: &DVector<f64>, ni: usize, nj: usize) -> DMatrix<f64> {
    let n_v0 = ni + nj + 3;
    let u = |i: usize, j: usize| z[n_v0 + i * (nj + 1) + j];
    let mut v = DMatrix::zeros(ni + 2, nj + 2);
    for i in 0..ni + 2 {
        v[(i, 0)] = z[ni + 1 - i];
    }
    for j in 1..nj + 2 {
        v[(0, j)] = z[ni + 1 + j];
    }
    for i in 1..ni + 2 {
        for j in 1..nj + 2 {
            v[(i, j)] = v[(i - 1, j - 1)] + u(i - 1, j - 1);
        }
    }
    v
}

pub fn trends_of(z: &DVector<f64>, ni: usize, nj: usize) -> DMatrix<f64> {
    let n_v0 = ni + nj + 3;
    DMatrix::from_fn(ni + 1, nj + 1, |i, j| z[n_v0 + i * (nj + 1) + j])
}

/// Sum of squared second differences along both axes of a surface, with the
/// year direction centred on rows `1..=year_last`.
pub fn second_difference_energy(s: &DMatrix<f64>, year_last: usize) -> f64 {
    let (nr, nc) = s.shape();
    let mut total = 0.0;
    for i in 0..nr {
        for j in 1..nc - 1 {
            total += (s[(i, j - 1)] - 2.0 * s[(i, j)] + s[(i, j + 1)]).powi(2);
        }
    }
    for j in 0..nc {
        for i in 1..=year_last {
            total += (s[(i - 1, j)] - 2.0 * s[(i, j)] + s[(i + 1, j)]).powi(2);
        }
    }
    total
}

/// Level penalty evaluated directly on the surface.
pub fn s1_direct(v: &DMatrix<f64>, layout: &ZLayout) -> f64 {
    second_difference_energy(v, layout.extent_i())
}

/// Trend penalty evaluated directly on the surface.
pub fn s2_direct(u: &DMatrix<f64>, layout: &ZLayout) -> f64 {
    second_difference_energy(u, layout.extent_i().saturating_sub(1))
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}
