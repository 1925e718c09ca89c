//! Dynamic regression estimation of cohort trends and mean levels.
//!
//! Repeated cross-sectional surveys observe a state variable (for example
//! body mass index) at scattered (calendar year, age) points. Each birth
//! cohort moves along a diagonal of that plane; its mean level changes at a
//! rate, the cohort trend, set by the environment it passes through. This
//! crate estimates entry levels and the trend field on a unit lattice by
//! penalized weighted least squares, picks the penalty weights from
//! smoothness targets, and tests differences between adjacent clusters of
//! trends.
//!
//! Module map:
//!
//! - [`grid`]: lattice cells, cohort paths, parameter ordering.
//! - [`ingest`]: CSV loading, derived variables, per-cell aggregation.
//! - [`design`]: observation and penalty rows, reconstruction maps.
//! - [`solver`]: the penalized fit with covariances.
//! - [`tuner`]: penalty selection from smoothness targets.
//! - [`inference`]: cluster means and adjacent-cluster F tests.
//! - [`synth`]: forward simulation for tests and demos.
//! - [`pipeline`]: configuration and the `analyze` / `simulate` / `aggregate` runs.

pub mod design;
pub mod grid;
pub mod inference;
pub mod ingest;
pub mod pipeline;
pub mod solver;
pub mod synth;
pub mod tuner;

pub use design::{DataMode, LinearSystem};
pub use grid::{CellIndex, Frame, ZLayout};
pub use ingest::{AggregatedCell, Measurement};
pub use solver::{solve, FitResult, PreparedSystem};
pub use synth::{SamplingPlan, TrueModel};
pub use tuner::{tune, SmoothnessTargets};
