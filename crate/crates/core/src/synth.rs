//! Forward simulation of the cohort model for test data.
//!
//! A [`TrueModel`] fixes the entry levels on the lower-left boundary and the
//! trend field; levels elsewhere follow by accumulating trends along each
//! cohort diagonal. Measurements add homoscedastic Gaussian noise.
//!
//! Random numbers: ChaCha20 keyed with the seed as 8 little-endian bytes
//! followed by 24 zero bytes. Each draw takes two 64-bit outputs `w1, w2`,
//! maps them to `u = (w >> 11) * 2^-53`, and returns
//! `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` (Box-Muller, cosine branch only).

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{cohort_path, CellIndex, Frame, ZLayout};
use crate::ingest::Measurement;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("sampling plan leaves the frame: {0}")]
    PlanOutOfFrame(String),
    #[error("model dimensions do not match the frame: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub frame: Frame,
    /// Entry levels in parameter-vector order (left boundary top-down, then bottom row).
    pub v0: DVector<f64>,
    /// Trends over `U`, `(I+1) x (J+1)`.
    pub u: DMatrix<f64>,
    pub noise_sd: f64,
}

impl TrueModel {
    pub fn new(frame: Frame, v0: DVector<f64>, u: DMatrix<f64>, noise_sd: f64) -> Result<Self, SynthError> {
        let layout = frame.layout();
        if v0.len() != layout.n_v0() {
            return Err(SynthError::DimensionMismatch(format!("v0 has {} values, need {}", v0.len(), layout.n_v0())));
        }
        if u.shape() != layout.u_shape() {
            return Err(SynthError::DimensionMismatch(format!("u is {:?}, need {:?}", u.shape(), layout.u_shape())));
        }
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(SynthError::DimensionMismatch(format!("noise_sd {noise_sd} must be finite and >= 0")));
        }
        Ok(Self { frame, v0, u, noise_sd })
    }

    /// Builds a model from functions of relative lattice coordinates.
    pub fn from_fn(
        frame: Frame,
        v0: impl Fn(usize, usize) -> f64,
        u: impl Fn(usize, usize) -> f64,
        noise_sd: f64,
    ) -> Result<Self, SynthError> {
        let layout = frame.layout();
        let v0v = DVector::from_fn(layout.n_v0(), |k, _| {
            let p = layout.v0_point(k);
            v0(p.i, p.j)
        });
        let (nr, nc) = layout.u_shape();
        Self::new(frame, v0v, DMatrix::from_fn(nr, nc, u), noise_sd)
    }

    pub fn layout(&self) -> ZLayout {
        self.frame.layout()
    }

    /// The parameter vector this model corresponds to.
    pub fn z(&self) -> DVector<f64> {
        let layout = self.layout();
        let mut z = DVector::zeros(layout.dim());
        z.rows_mut(0, layout.n_v0()).copy_from(&self.v0);
        for c in layout.u_cells() {
            z[layout.z_index_u(c)] = self.u[(c.i, c.j)];
        }
        z
    }

    /// Expected value at year fraction `t` within `cell`.
    pub fn true_level(&self, cell: CellIndex, t: f64) -> f64 {
        let layout = self.layout();
        let (boundary, path) = cohort_path(cell);
        let entry = self.v0[layout.z_index_v0(boundary).expect("boundary point")];
        entry + path.iter().map(|c| self.u[(c.i, c.j)]).sum::<f64>() + t * self.u[(cell.i, cell.j)]
    }

    /// Level surface over `V`.
    pub fn level_surface(&self) -> DMatrix<f64> {
        let layout = self.layout();
        let (nr, nc) = layout.v_shape();
        let mut v = DMatrix::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                v[(i, j)] = if i == 0 || j == 0 {
                    self.v0[layout.z_index_v0(crate::grid::BoundaryPoint { i, j }).unwrap()]
                } else {
                    v[(i - 1, j - 1)] + self.u[(i - 1, j - 1)]
                };
            }
        }
        v
    }
}

/// Where and how often to sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub cell: (usize, usize),
    /// Year fractions in `[0, 1)` at which subjects are examined.
    pub fractions: Vec<f64>,
    /// Subjects per fraction.
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub entries: Vec<PlanEntry>,
}

impl SamplingPlan {
    /// Every cell of the lattice, at each of `fractions`.
    pub fn full_coverage(frame: &Frame, fractions: &[f64], repeats: usize) -> Self {
        let rows: Vec<usize> = (0..=frame.extent_i()).collect();
        Self::survey_waves(frame, &rows, fractions, repeats)
    }

    /// All ages in the given relative survey years.
    pub fn survey_waves(frame: &Frame, rows: &[usize], fractions: &[f64], repeats: usize) -> Self {
        let entries = rows
            .iter()
            .flat_map(|&i| {
                (0..=frame.extent_j()).map(move |j| PlanEntry { cell: (i, j), fractions: fractions.to_vec(), repeats })
            })
            .collect();
        Self { entries }
    }
}

/// Gaussian source with the documented, implementation-independent algorithm.
pub struct NoiseSource {
    rng: ChaCha20Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self { rng: ChaCha20Rng::from_seed(key) }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Draws measurements following `plan`; integer ages, years `i + t`.
pub fn generate(model: &TrueModel, plan: &SamplingPlan, seed: u64) -> Result<Vec<Measurement>, SynthError> {
    let frame = &model.frame;
    let mut noise = NoiseSource::new(seed);
    let mut out = Vec::new();
    for entry in &plan.entries {
        let cell = CellIndex::new(entry.cell.0, entry.cell.1);
        if cell.i > frame.extent_i() || cell.j > frame.extent_j() {
            return Err(SynthError::PlanOutOfFrame(format!("cell {:?} outside the lattice", entry.cell)));
        }
        for &t in &entry.fractions {
            let y = frame.year_of(cell.i) as f64 + t;
            let a = frame.age_of(cell.j) as f64;
            // The design recomputes t from the stored year, so use that value.
            let t_eff = match frame.locate_with_fraction(y, a) {
                Ok((c, t_eff)) if c == cell && (0.0..1.0).contains(&t) => t_eff,
                _ => {
                    return Err(SynthError::PlanOutOfFrame(format!(
                        "fraction {t} in cell {:?} gives (year {y}, age {a}) outside that cell or the frame",
                        entry.cell
                    )))
                }
            };
            let level = model.true_level(cell, t_eff);
            for _ in 0..entry.repeats {
                let x = if model.noise_sd > 0.0 { level + model.noise_sd * noise.standard_normal() } else { level };
                out.push(Measurement { x, y, a });
            }
        }
    }
    Ok(out)
}
