//! Assembly of the regression system over `z = (v0 | u)`.
//!
//! Observation rows express one measurement (or one aggregated cell) as a
//! linear function of `z`; penalty rows are second differences of the level
//! surface (rewritten onto `z` through the cohort-path sums) and of the
//! trend surface. Penalty rows carry no weight here; the regularization
//! parameters are applied by the solver.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{cohort_path, CellIndex, Frame, GridError, ZLayout};
use crate::ingest::{AggregatedCell, Measurement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("frame too small for the level penalty: I = {i}, J = {j}")]
    FrameTooSmall { i: usize, j: usize },
    #[error("invalid cluster size: {0}")]
    InvalidClusterSize(String),
}

/// Sparse linear form over `z` with a right-hand side.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    /// `(z index, coefficient)` with strictly increasing indices.
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    /// Builds a row from unsorted terms, summing repeated indices and dropping zeros.
    pub fn from_terms(mut terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        terms.sort_by_key(|t| t.0);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (k, c) in terms {
            match entries.last_mut() {
                Some(last) if last.0 == k => last.1 += c,
                _ => entries.push((k, c)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        Self { entries, rhs }
    }

    pub fn dot(&self, z: &DVector<f64>) -> f64 {
        self.entries.iter().map(|&(k, c)| c * z[k]).sum()
    }

    pub fn coefficient(&self, k: usize) -> f64 {
        self.entries.binary_search_by_key(&k, |e| e.0).map(|p| self.entries[p].1).unwrap_or(0.0)
    }
}

/// Row-sparse linear map, used for the reconstruction and aggregation maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl LinearMap {
    pub fn new(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|e| e.0 < ncols));
        Self { ncols, rows }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.iter().map(|&(k, c)| c * x[k]).sum()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(k, c) in row {
                m[(r, k)] += c;
            }
        }
        m
    }

    /// `A * S * A^T` for a dense symmetric `S`, exploiting row sparsity of `A`.
    pub fn congruence(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(s.nrows(), self.ncols);
        let n = self.rows.len();
        // sa[:, r] = S * a_r
        let mut sa = DMatrix::zeros(self.ncols, n);
        for (r, row) in self.rows.iter().enumerate() {
            let mut col = sa.column_mut(r);
            for &(k, c) in row {
                col.axpy(c, &s.column(k), 1.0);
            }
        }
        let mut out = DMatrix::zeros(n, n);
        for p in 0..n {
            for q in 0..=p {
                let v: f64 = self.rows[p].iter().map(|&(k, c)| c * sa[(k, q)]).sum();
                out[(p, q)] = v;
                out[(q, p)] = v;
            }
        }
        out
    }
}

/// How the data rows were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Raw,
    Aggregated,
}

/// Observation and penalty rows for one dataset.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub layout: ZLayout,
    pub mode: DataMode,
    pub data_rows: Vec<SparseRow>,
    /// 1 per raw row, the cell count per aggregated row.
    pub weights: Vec<f64>,
    pub penalty_v_rows: Vec<SparseRow>,
    pub penalty_u_rows: Vec<SparseRow>,
    /// Sum of within-cell corrected sums of squares; 0 in raw mode.
    pub css_total: f64,
    /// Number of underlying measurements.
    pub n_obs: usize,
}

impl LinearSystem {
    pub fn from_measurements(frame: &Frame, measurements: &[Measurement]) -> Result<Self, DesignError> {
        let layout = frame.layout();
        let data_rows = build_b0_raw(&layout, frame, measurements)?;
        let weights = vec![1.0; data_rows.len()];
        Ok(Self {
            layout,
            mode: DataMode::Raw,
            weights,
            penalty_v_rows: build_penalty_v(&layout)?,
            penalty_u_rows: build_penalty_u(&layout),
            css_total: 0.0,
            n_obs: data_rows.len(),
            data_rows,
        })
    }

    pub fn from_cells(frame: &Frame, cells: &[AggregatedCell]) -> Result<Self, DesignError> {
        let layout = frame.layout();
        let (data_rows, weights, css_total) = build_b0_aggregated(&layout, frame, cells)?;
        Ok(Self {
            layout,
            mode: DataMode::Aggregated,
            data_rows,
            weights,
            penalty_v_rows: build_penalty_v(&layout)?,
            penalty_u_rows: build_penalty_u(&layout),
            css_total,
            n_obs: cells.iter().map(|c| c.n).sum(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.data_rows.is_empty()
    }
}

/// Observation row for a point in `cell` at year fraction `t`.
///
/// Unit coefficient on the cohort's boundary level, unit coefficients on the
/// trend cells the cohort passed through, and `t` on the current cell's trend.
pub fn observation_row_at(layout: &ZLayout, cell: CellIndex, t: f64) -> SparseRow {
    let (boundary, path) = cohort_path(cell);
    let mut terms = Vec::with_capacity(path.len() + 2);
    terms.push((layout.z_index_v0(boundary).expect("cohort path ends on the boundary"), 1.0));
    terms.extend(path.iter().map(|&c| (layout.z_index_u(c), 1.0)));
    debug_assert!(path.iter().all(|&c| c != cell));
    terms.push((layout.z_index_u(cell), t));
    SparseRow::from_terms(terms, 0.0)
}

pub fn observation_row(layout: &ZLayout, frame: &Frame, y: f64, a: f64) -> Result<SparseRow, DesignError> {
    let (cell, t) = frame.locate_with_fraction(y, a)?;
    Ok(observation_row_at(layout, cell, t))
}

pub fn build_b0_raw(
    layout: &ZLayout,
    frame: &Frame,
    measurements: &[Measurement],
) -> Result<Vec<SparseRow>, DesignError> {
    measurements
        .iter()
        .map(|m| {
            let mut row = observation_row(layout, frame, m.y, m.a)?;
            row.rhs = m.x;
            Ok(row)
        })
        .collect()
}

/// Rows at each cell's mean year, with the cell counts as weights and the pooled CSS.
pub fn build_b0_aggregated(
    layout: &ZLayout,
    frame: &Frame,
    cells: &[AggregatedCell],
) -> Result<(Vec<SparseRow>, Vec<f64>, f64), DesignError> {
    let mut rows = Vec::with_capacity(cells.len());
    let mut weights = Vec::with_capacity(cells.len());
    let mut css_total = 0.0;
    for c in cells {
        if c.cell.i > layout.extent_i() || c.cell.j > layout.extent_j() || c.n == 0 {
            return Err(GridError::OutOfFrame { y: c.y_bar, a: frame.age_of(c.cell.j) as f64 }.into());
        }
        let t = c.y_bar - frame.year_of(c.cell.i) as f64;
        if !(0.0..=1.0).contains(&t) {
            return Err(GridError::OutOfFrame { y: c.y_bar, a: frame.age_of(c.cell.j) as f64 }.into());
        }
        let mut row = observation_row_at(layout, c.cell, t);
        row.rhs = c.x_bar;
        rows.push(row);
        weights.push(c.n as f64);
        css_total += c.css;
    }
    Ok((rows, weights, css_total))
}

/// Map from `z` to the row-major level surface over `V`.
pub fn build_z2v(layout: &ZLayout) -> LinearMap {
    let (nr, nc) = layout.v_shape();
    let mut rows = Vec::with_capacity(nr * nc);
    for i in 0..nr {
        for j in 0..nc {
            rows.push(level_terms(layout, i, j));
        }
    }
    LinearMap::new(layout.dim(), rows)
}

/// `v(i, j)` as a sparse form over `z`: boundary level plus the cohort-path trends.
fn level_terms(layout: &ZLayout, i: usize, j: usize) -> Vec<(usize, f64)> {
    let d = i.min(j);
    let boundary = crate::grid::BoundaryPoint { i: i - d, j: j - d };
    let mut terms = vec![(layout.z_index_v0(boundary).expect("boundary point"), 1.0)];
    terms.extend((1..=d).map(|m| (layout.z_index_u(CellIndex::new(i - m, j - m)), 1.0)));
    terms
}

/// Map from `z` to the row-major trend surface over `U`.
pub fn build_z2u(layout: &ZLayout) -> LinearMap {
    let rows = layout.u_cells().map(|c| vec![(layout.z_index_u(c), 1.0)]).collect();
    LinearMap::new(layout.dim(), rows)
}

/// Second differences of the level surface, along age for every row of `V`
/// then along year for every column, each rewritten onto `z`.
///
/// The year direction is centered at `i = 1..=I`, so the top row `I + 1`
/// only enters as a neighbour.
pub fn build_penalty_v(layout: &ZLayout) -> Result<Vec<SparseRow>, DesignError> {
    let (ni, nj) = (layout.extent_i(), layout.extent_j());
    if ni < 1 || nj < 1 {
        return Err(DesignError::FrameTooSmall { i: ni, j: nj });
    }
    let stencil = |pts: [(usize, usize); 3]| {
        let mut terms = Vec::new();
        for (&(i, j), w) in pts.iter().zip([1.0, -2.0, 1.0]) {
            terms.extend(level_terms(layout, i, j).into_iter().map(|(k, c)| (k, w * c)));
        }
        SparseRow::from_terms(terms, 0.0)
    };
    let mut rows = Vec::with_capacity((ni + 2) * nj + (nj + 2) * ni);
    for i in 0..=ni + 1 {
        for j in 1..=nj {
            rows.push(stencil([(i, j - 1), (i, j), (i, j + 1)]));
        }
    }
    for j in 0..=nj + 1 {
        for i in 1..=ni {
            rows.push(stencil([(i - 1, j), (i, j), (i + 1, j)]));
        }
    }
    Ok(rows)
}

/// Second differences of the trend surface over `U`; empty when `I = J = 1`.
pub fn build_penalty_u(layout: &ZLayout) -> Vec<SparseRow> {
    let (ni, nj) = (layout.extent_i(), layout.extent_j());
    let u = |i, j| layout.z_index_u(CellIndex::new(i, j));
    let mut rows = Vec::new();
    for i in 0..=ni {
        for j in 1..nj {
            rows.push(SparseRow::from_terms(vec![(u(i, j - 1), 1.0), (u(i, j), -2.0), (u(i, j + 1), 1.0)], 0.0));
        }
    }
    for j in 0..=nj {
        for i in 1..ni {
            rows.push(SparseRow::from_terms(vec![(u(i - 1, j), 1.0), (u(i, j), -2.0), (u(i + 1, j), 1.0)], 0.0));
        }
    }
    rows
}

/// Rectangular partition of `U` into clusters of `delta_y` years by `delta_a` ages.
///
/// Clusters are anchored at `(0, 0)`; the last band in each direction holds
/// whatever remains. Clusters are numbered row-major over
/// `(year band, age band)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterPartition {
    pub delta_a: usize,
    pub delta_y: usize,
    pub year_bands: usize,
    pub age_bands: usize,
    extent_i: usize,
    extent_j: usize,
}

impl ClusterPartition {
    pub fn new(layout: &ZLayout, delta_a: usize, delta_y: usize) -> Result<Self, DesignError> {
        let (nr, nc) = layout.u_shape();
        if delta_y < 1 || delta_y > nr {
            return Err(DesignError::InvalidClusterSize(format!("year size {delta_y} outside [1, {nr}]")));
        }
        if delta_a < 1 || delta_a > nc {
            return Err(DesignError::InvalidClusterSize(format!("age size {delta_a} outside [1, {nc}]")));
        }
        Ok(Self {
            delta_a,
            delta_y,
            year_bands: nr.div_ceil(delta_y),
            age_bands: nc.div_ceil(delta_a),
            extent_i: layout.extent_i(),
            extent_j: layout.extent_j(),
        })
    }

    pub fn len(&self) -> usize {
        self.year_bands * self.age_bands
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, year_band: usize, age_band: usize) -> usize {
        year_band * self.age_bands + age_band
    }

    /// Inclusive relative year range of a band.
    pub fn year_range(&self, band: usize) -> (usize, usize) {
        let lo = band * self.delta_y;
        (lo, (lo + self.delta_y - 1).min(self.extent_i))
    }

    /// Inclusive relative age range of a band.
    pub fn age_range(&self, band: usize) -> (usize, usize) {
        let lo = band * self.delta_a;
        (lo, (lo + self.delta_a - 1).min(self.extent_j))
    }

    pub fn cell_count(&self, year_band: usize, age_band: usize) -> usize {
        let (i0, i1) = self.year_range(year_band);
        let (j0, j1) = self.age_range(age_band);
        (i1 - i0 + 1) * (j1 - j0 + 1)
    }
}

/// Map from the row-major trend surface to cluster means.
pub fn build_u2uc(layout: &ZLayout, delta_a: usize, delta_y: usize) -> Result<LinearMap, DesignError> {
    let part = ClusterPartition::new(layout, delta_a, delta_y)?;
    let mut rows = Vec::with_capacity(part.len());
    for yb in 0..part.year_bands {
        for ab in 0..part.age_bands {
            let (i0, i1) = part.year_range(yb);
            let (j0, j1) = part.age_range(ab);
            let w = 1.0 / part.cell_count(yb, ab) as f64;
            let mut row = Vec::new();
            for i in i0..=i1 {
                for j in j0..=j1 {
                    row.push((layout.u_flat(CellIndex::new(i, j)), w));
                }
            }
            rows.push(row);
        }
    }
    Ok(LinearMap::new(layout.n_u(), rows))
}
