//! Index algebra for the (year, age) plane.
//!
//! The plane is tiled by half-open parallelograms slanted along the cohort
//! diagonal. Cell `P(i, j)` holds the points with `y` in `[i, i + 1)` and
//! `a` in `(j - 1 + (y - i), j + (y - i)]`, so a subject followed through
//! time stays in the same cell until the next integer year and then moves to
//! `P(i + 1, j + 1)`.
//!
//! All public indices are relative to the frame's lower-left cell. Trend
//! values `u` live on `U = [0, I] x [0, J]`, levels `v` on
//! `V = [0, I + 1] x [0, J + 1]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("point (year {y}, age {a}) lies outside the observational frame")]
    OutOfFrame { y: f64, a: f64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("point ({i}, {j}) is not on the lower-left boundary of the level domain")]
    NotOnBoundary { i: usize, j: usize },
}

/// Cell of the trend domain `U`, relative to the frame origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

impl CellIndex {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Point on the lower-left boundary of the level domain `V` (`i == 0` or `j == 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BoundaryPoint {
    pub i: usize,
    pub j: usize,
}

/// The observational rectangle `[y_min, y_max] x [a_min, a_max]` and its lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    y_min: f64,
    y_max: f64,
    a_min: f64,
    a_max: f64,
    i_min: i64,
    j_min: i64,
    i_max: i64,
    j_max: i64,
}

/// Absolute lattice cell containing `(y, a)` and the within-cell year fraction.
fn absolute_cell(y: f64, a: f64) -> (i64, i64, f64) {
    let i = y.floor();
    let t = y - i;
    let j = (a - t).ceil();
    (i as i64, j as i64, t)
}

impl Frame {
    pub fn new(y_min: f64, y_max: f64, a_min: f64, a_max: f64) -> Result<Self, GridError> {
        if ![y_min, y_max, a_min, a_max].iter().all(|v| v.is_finite()) {
            return Err(GridError::InvalidFrame("bounds must be finite".into()));
        }
        if y_min >= y_max || a_min >= a_max {
            return Err(GridError::InvalidFrame(format!(
                "need y_min < y_max and a_min < a_max, got years [{y_min}, {y_max}], ages [{a_min}, {a_max}]"
            )));
        }
        let (i_min, j_min, _) = absolute_cell(y_min, a_min);
        let (i_max, j_max, _) = absolute_cell(y_max, a_max);
        if i_max - i_min < 1 || j_max - j_min < 1 {
            return Err(GridError::InvalidFrame(format!(
                "frame spans {} year cells and {} age cells, need at least 2 of each",
                i_max - i_min + 1,
                j_max - j_min + 1
            )));
        }
        Ok(Self { y_min, y_max, a_min, a_max, i_min, j_min, i_max, j_max })
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn a_min(&self) -> f64 {
        self.a_min
    }
    pub fn a_max(&self) -> f64 {
        self.a_max
    }
    pub fn i_min(&self) -> i64 {
        self.i_min
    }
    pub fn j_min(&self) -> i64 {
        self.j_min
    }
    pub fn i_max(&self) -> i64 {
        self.i_max
    }
    pub fn j_max(&self) -> i64 {
        self.j_max
    }

    /// Relative year extent `I`.
    pub fn extent_i(&self) -> usize {
        (self.i_max - self.i_min) as usize
    }

    /// Relative age extent `J`.
    pub fn extent_j(&self) -> usize {
        (self.j_max - self.j_min) as usize
    }

    pub fn layout(&self) -> ZLayout {
        ZLayout::new(self.extent_i(), self.extent_j())
    }

    pub fn contains(&self, y: f64, a: f64) -> bool {
        y >= self.y_min && y <= self.y_max && a >= self.a_min && a <= self.a_max
    }

    pub fn locate(&self, y: f64, a: f64) -> Result<CellIndex, GridError> {
        self.locate_with_fraction(y, a).map(|(cell, _)| cell)
    }

    /// Cell of `(y, a)` together with `t = y - floor(y)`.
    ///
    /// The top edge `y == y_max` falls in row `I` because `floor(y_max)` is
    /// `i_max` by construction. Points of the rectangle whose cell lies
    /// outside the lattice (possible only for non-integer age bounds) are
    /// reported as out of frame.
    pub fn locate_with_fraction(&self, y: f64, a: f64) -> Result<(CellIndex, f64), GridError> {
        if !self.contains(y, a) {
            return Err(GridError::OutOfFrame { y, a });
        }
        let (i, j, t) = absolute_cell(y, a);
        let (ri, rj) = (i - self.i_min, j - self.j_min);
        if ri < 0 || rj < 0 || ri > self.i_max - self.i_min || rj > self.j_max - self.j_min {
            return Err(GridError::OutOfFrame { y, a });
        }
        Ok((CellIndex::new(ri as usize, rj as usize), t))
    }

    /// Absolute calendar year of relative row `i`.
    pub fn year_of(&self, i: usize) -> i64 {
        self.i_min + i as i64
    }

    /// Absolute age of relative column `j`.
    pub fn age_of(&self, j: usize) -> i64 {
        self.j_min + j as i64
    }
}

/// Steps back along the cohort diagonal to the lower-left boundary of `V`.
///
/// Returns the boundary point `(i - d, j - d)` with `d = min(i, j)` and the
/// trend cells `(i - m, j - m)` for `m = 1..=d`, nearest first.
pub fn cohort_path(cell: CellIndex) -> (BoundaryPoint, Vec<CellIndex>) {
    let d = cell.i.min(cell.j);
    let boundary = BoundaryPoint { i: cell.i - d, j: cell.j - d };
    let interior = (1..=d).map(|m| CellIndex::new(cell.i - m, cell.j - m)).collect();
    (boundary, interior)
}

/// Shape of the parameter vector `z = (v0 | u)`.
///
/// `v0` runs down the left boundary `v(I+1, 0) .. v(0, 0)` and then along the
/// bottom row `v(0, 1) .. v(0, J+1)`; `u` is stored row-major over `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZLayout {
    ni: usize,
    nj: usize,
}

impl ZLayout {
    pub fn new(extent_i: usize, extent_j: usize) -> Self {
        Self { ni: extent_i, nj: extent_j }
    }

    pub fn extent_i(&self) -> usize {
        self.ni
    }
    pub fn extent_j(&self) -> usize {
        self.nj
    }

    pub fn n_v0(&self) -> usize {
        self.ni + self.nj + 3
    }

    pub fn n_u(&self) -> usize {
        (self.ni + 1) * (self.nj + 1)
    }

    pub fn dim(&self) -> usize {
        self.n_v0() + self.n_u()
    }

    /// Rows and columns of the trend surface.
    pub fn u_shape(&self) -> (usize, usize) {
        (self.ni + 1, self.nj + 1)
    }

    /// Rows and columns of the level surface.
    pub fn v_shape(&self) -> (usize, usize) {
        (self.ni + 2, self.nj + 2)
    }

    pub fn z_index_v0(&self, p: BoundaryPoint) -> Result<usize, GridError> {
        let err = GridError::NotOnBoundary { i: p.i, j: p.j };
        match (p.i, p.j) {
            (i, 0) if i <= self.ni + 1 => Ok(self.ni + 1 - i),
            (0, j) if j <= self.nj + 1 => Ok(self.ni + 1 + j),
            _ => Err(err),
        }
    }

    pub fn z_index_u(&self, cell: CellIndex) -> usize {
        debug_assert!(cell.i <= self.ni && cell.j <= self.nj);
        self.n_v0() + cell.i * (self.nj + 1) + cell.j
    }

    /// Boundary point stored at v0 position `k`.
    pub fn v0_point(&self, k: usize) -> BoundaryPoint {
        assert!(k < self.n_v0(), "v0 position {k} out of range");
        if k <= self.ni + 1 {
            BoundaryPoint { i: self.ni + 1 - k, j: 0 }
        } else {
            BoundaryPoint { i: 0, j: k - self.ni - 1 }
        }
    }

    /// Row-major position of `(i, j)` in the flattened level surface.
    pub fn v_flat(&self, i: usize, j: usize) -> usize {
        row_major_index(i, j, self.nj + 2)
    }

    /// Row-major position of a cell in the flattened trend surface.
    pub fn u_flat(&self, cell: CellIndex) -> usize {
        row_major_index(cell.i, cell.j, self.nj + 1)
    }

    pub fn u_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        let nj = self.nj;
        (0..=self.ni).flat_map(move |i| (0..=nj).map(move |j| CellIndex::new(i, j)))
    }
}

/// 0-based row-major position; the 1-based form is `(i-1)*ncol + j`.
pub fn row_major_index(i: usize, j: usize, ncol: usize) -> usize {
    i * ncol + j
}

/// Concatenates matrix rows into one vector.
pub fn flatten_surface(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// Inverse of [`flatten_surface`].
pub fn unflatten_surface(v: &DVector<f64>, nrows: usize, ncols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), nrows * ncols);
    DMatrix::from_row_slice(nrows, ncols, v.as_slice())
}
