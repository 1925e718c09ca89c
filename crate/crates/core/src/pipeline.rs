//! End-to-end runs behind the command line: configuration, analysis,
//! simulation, and aggregation, each writing plain CSV/JSON artifacts.
//!
//! Configuration is a flat `key = value` file (blank lines and lines starting
//! with `#` or `;` are ignored, `[section]` headers are skipped) overlaid by
//! command-line flags with the same names. Every CSV number is written with
//! 12 significant digits; integers are written as integers.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DataMode, DesignError, LinearSystem};
use crate::grid::Frame;
use crate::inference::{cluster_means, compare_adjacent, ComparisonStatus, InferenceError};
use crate::ingest::{aggregate, load_measurements, AggregatedCell, IngestError, Measurement, Schema, ValidationReport};
use crate::solver::{reconstruct, FitResult, PreparedSystem, SolveError, SurfaceSummary};
use crate::synth::{generate, PlanEntry, SamplingPlan, SynthError, TrueModel};
use crate::tuner::{default_points, evaluate, tune_prepared, FstatKind, SmoothnessReport, SmoothnessTargets, TuneError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("model specification does not fit the frame: {0}")]
    SpecMismatch(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no observations inside the frame")]
    NoObservations,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

impl PipelineError {
    /// Stable machine-readable error name.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::SpecMismatch(_) => "spec-mismatch",
            Self::Io { .. } => "io",
            Self::NoObservations | Self::Solve(SolveError::EmptySystem) => "no-observations",
            Self::Ingest(IngestError::Grid(_)) => "config",
            Self::Ingest(_) => "malformed-input",
            Self::Design(DesignError::Grid(_)) => "out-of-frame",
            Self::Design(_) => "config",
            Self::Solve(SolveError::InvalidLambda(..)) => "config",
            Self::Solve(SolveError::SingularSystem { .. }) => "singular-system",
            Self::Tune(TuneError::Solve(SolveError::SingularSystem { .. })) => "singular-system",
            Self::Tune(TuneError::Solve(SolveError::EmptySystem)) => "no-observations",
            Self::Tune(TuneError::NoConvergence { .. }) => "no-convergence",
            Self::Tune(TuneError::TargetUnreachable { .. }) => "target-unreachable",
            Self::Tune(_) => "config",
            Self::Inference(_) => "inference",
        }
    }

    /// 2 for configuration, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" | "spec-mismatch" => 2,
            "io" | "no-observations" | "malformed-input" | "out-of-frame" => 3,
            _ => 4,
        }
    }
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Recognized configuration keys. Flags use the same names with `-` for `_`.
pub const CONFIG_KEYS: &[&str] = &[
    "y_min",
    "y_max",
    "a_min",
    "a_max",
    "mode",
    "input",
    "schema",
    "f_smv",
    "f_smu",
    "delta",
    "fstat",
    "point_v",
    "point_u",
    "delta_a",
    "delta_y",
    "lambda1",
    "lambda2",
    "min_cell_count",
    "out",
    "seed",
];

/// Raw key/value settings before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut settings = Settings::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| config_err(format!("config line {}: expected key = value", n + 1)))?;
            settings.set(key.trim(), value.trim())?;
        }
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key; later values replace earlier ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let key = key.replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(config_err(format!("unknown configuration key '{key}'")));
        }
        self.0.insert(key, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, PipelineError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| config_err(format!("{key}: cannot parse '{v}'"))))
            .transpose()
    }

    fn point(&self, key: &str) -> Result<Option<(usize, usize)>, PipelineError> {
        self.get(key)
            .map(|v| {
                let parts: Vec<_> = v.split(',').map(|p| p.trim().parse::<usize>()).collect();
                match parts.as_slice() {
                    [Ok(i), Ok(j)] => Ok((*i, *j)),
                    _ => Err(config_err(format!("{key}: expected 'i,j' with 0-based integers, got '{v}'"))),
                }
            })
            .transpose()
    }
}

/// Validated settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub frame: Frame,
    pub mode: DataMode,
    pub input: Option<PathBuf>,
    pub schema: Schema,
    pub targets: SmoothnessTargets,
    pub delta_a: usize,
    pub delta_y: usize,
    /// Both set, or neither; when set the tuner is skipped.
    pub lambdas: Option<(f64, f64)>,
    /// Cells with at least this many cases go to `observed_means.csv`.
    pub min_cell_count: Option<usize>,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults follow the reference analysis: years 1982-1992, ages 25-64,
    /// aggregated mode, targets 0.2 / 0.2 with accuracy 0.05, 5 x 5 clusters.
    pub fn from_settings(s: &Settings) -> Result<Self, PipelineError> {
        let y_min = s.parsed("y_min")?.unwrap_or(1982.0);
        let y_max = s.parsed("y_max")?.unwrap_or(1992.0);
        let a_min = s.parsed("a_min")?.unwrap_or(25.0);
        let a_max = s.parsed("a_max")?.unwrap_or(64.0);
        let frame = Frame::new(y_min, y_max, a_min, a_max).map_err(|e| config_err(e.to_string()))?;
        let layout = frame.layout();

        let mode = match s.get("mode").unwrap_or("aggregated") {
            "raw" => DataMode::Raw,
            "aggregated" => DataMode::Aggregated,
            other => return Err(config_err(format!("mode: expected 'raw' or 'aggregated', got '{other}'"))),
        };
        let schema = Schema::parse(s.get("schema").unwrap_or("direct")).map_err(|e| config_err(e.to_string()))?;

        let (dv, du) = default_points(&layout);
        let kind_name = s.get("fstat").unwrap_or("selected-point");
        let kind = FstatKind::parse(kind_name).ok_or_else(|| {
            config_err(format!("fstat: expected selected-point, mean, median or min, got '{kind_name}'"))
        })?;
        let delta = match s.get("delta") {
            Some("inf") | Some("none") => f64::INFINITY,
            _ => s.parsed("delta")?.unwrap_or(0.05),
        };
        let targets = SmoothnessTargets {
            f_smv: s.parsed("f_smv")?.unwrap_or(0.2),
            f_smu: s.parsed("f_smu")?.unwrap_or(0.2),
            delta,
            kind,
            point_v: s.point("point_v")?.unwrap_or(dv),
            point_u: s.point("point_u")?.unwrap_or(du),
        };
        targets.validate().map_err(|e| config_err(e.to_string()))?;
        let (vr, vc) = layout.v_shape();
        let (ur, uc) = layout.u_shape();
        for (name, (i, j), (nr, nc)) in [("point_v", targets.point_v, (vr, vc - 1)), ("point_u", targets.point_u, (ur, uc - 1))]
        {
            if i >= nr || j >= nc {
                return Err(config_err(format!("{name} ({i}, {j}) outside the {nr} x {nc} along-age indicator grid")));
            }
        }

        let delta_a = s.parsed("delta_a")?.unwrap_or(5);
        let delta_y = s.parsed("delta_y")?.unwrap_or(5);
        let partition =
            crate::design::ClusterPartition::new(&layout, delta_a, delta_y).map_err(|e| config_err(e.to_string()))?;
        if partition.len() < 2 {
            return Err(config_err(format!("cluster sizes {delta_a} x {delta_y} leave a single cluster")));
        }

        let lambdas = match (s.parsed::<f64>("lambda1")?, s.parsed::<f64>("lambda2")?) {
            (Some(l1), Some(l2)) if l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite() => Some((l1, l2)),
            (Some(l1), Some(l2)) => return Err(config_err(format!("lambdas must be finite and >= 0, got ({l1}, {l2})"))),
            (None, None) => None,
            _ => return Err(config_err("lambda1 and lambda2 must be given together")),
        };

        Ok(Self {
            frame,
            mode,
            input: s.get("input").map(PathBuf::from),
            schema,
            targets,
            delta_a,
            delta_y,
            lambdas,
            min_cell_count: s.parsed("min_cell_count")?,
            out: PathBuf::from(s.get("out").unwrap_or("out")),
            seed: s.parsed("seed")?.unwrap_or(1),
        })
    }
}

/// Number with 12 significant digits; fixed notation for moderate magnitudes.
pub fn fmt_sig12(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-5..12).contains(&exp) {
        format!("{:.*}", (11 - exp) as usize, x)
    } else {
        sci
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig12).unwrap_or_default()
}

fn create_out_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

fn read_input(cfg: &RunConfig) -> Result<(Vec<Measurement>, ValidationReport), PipelineError> {
    let path = cfg.input.as_ref().ok_or_else(|| config_err("no input file given"))?;
    let text = fs::read(path).map_err(|e| io_err(path, e))?;
    if text.iter().all(u8::is_ascii_whitespace) {
        return Err(PipelineError::NoObservations);
    }
    let outcome = load_measurements(text.as_slice(), cfg.schema, &cfg.frame)?;
    if outcome.measurements.is_empty() {
        return Err(PipelineError::NoObservations);
    }
    Ok((outcome.measurements, outcome.report))
}

pub const SURFACE_HEADER: [&str; 6] = ["year", "age", "estimate", "stderr", "ci_lo", "ci_hi"];

fn surface_rows(frame: &Frame, s: &SurfaceSummary) -> Vec<Vec<String>> {
    let (nr, nc) = s.estimate.shape();
    let mut rows = Vec::with_capacity(nr * nc);
    for i in 0..nr {
        for j in 0..nc {
            let est = s.estimate[(i, j)];
            let hw = s.half_width.as_ref().map(|h| h[(i, j)]);
            rows.push(vec![
                frame.year_of(i).to_string(),
                frame.age_of(j).to_string(),
                fmt_sig12(est),
                fmt_sig12(s.stderr[(i, j)]),
                fmt_opt(hw.map(|h| est - h)),
                fmt_opt(hw.map(|h| est + h)),
            ]);
        }
    }
    rows
}

/// Whether the tuner ran, and how it ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TunerStatus {
    Converged,
    NotConverged,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub years: (f64, f64),
    pub ages: (f64, f64),
    pub extent_i: usize,
    pub extent_j: usize,
    pub mode: &'static str,
    pub n_obs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma2_hat: Option<f64>,
    pub dof: Option<usize>,
    pub condition: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub stat_v: f64,
    pub stat_u: f64,
    pub f_smv: f64,
    pub f_smu: f64,
    pub delta: Option<f64>,
    pub fstat: FstatKind,
    pub point_v: (usize, usize),
    pub point_u: (usize, usize),
    pub iterations: usize,
    pub converged: bool,
    pub tuner: TunerStatus,
    pub delta_a: usize,
    pub delta_y: usize,
    pub validation: ValidationReport,
}

/// Everything an analysis produced, besides the files.
#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub fit: FitResult,
    pub report: SmoothnessReport,
    pub summary: RunSummary,
    pub artifacts: Vec<PathBuf>,
}

/// Fits the input, writes all artifacts, and returns the fit.
///
/// When the tuner does not converge the best fit found is still written, with
/// `converged = false`, and the error is returned afterwards.
pub fn run_analyze(cfg: &RunConfig) -> Result<AnalyzeOutcome, PipelineError> {
    let (measurements, validation) = read_input(cfg)?;
    let frame = &cfg.frame;
    let cells = aggregate(&measurements, frame)?;
    let system = match cfg.mode {
        DataMode::Raw => LinearSystem::from_measurements(frame, &measurements)?,
        DataMode::Aggregated => LinearSystem::from_cells(frame, &cells)?,
    };
    let prepared = PreparedSystem::new(&system);

    let (fit, report, tuner, deferred) = match cfg.lambdas {
        Some((l1, l2)) => {
            let fit = prepared.solve(l1, l2)?;
            let mut report = evaluate(&fit, &cfg.targets)?;
            report.iterations = 1;
            (fit, report, TunerStatus::Skipped, None)
        }
        None => match tune_prepared(&prepared, &cfg.targets) {
            Ok((fit, report)) => (fit, report, TunerStatus::Converged, None),
            Err(TuneError::NoConvergence { solves, best }) => {
                let (fit, report) = (*best).clone();
                (fit, report, TunerStatus::NotConverged, Some(TuneError::NoConvergence { solves, best }))
            }
            Err(e) => return Err(e.into()),
        },
    };

    let recon = reconstruct(&fit);
    let clusters = cluster_means(&fit, cfg.delta_a, cfg.delta_y)?;
    let comparisons = compare_adjacent(&clusters)?;

    create_out_dir(&cfg.out)?;
    let mut artifacts = Vec::new();
    let mut path = |name: &str| {
        let p = cfg.out.join(name);
        artifacts.push(p.clone());
        p
    };

    write_csv(&path("levels.csv"), &SURFACE_HEADER, surface_rows(frame, &recon.levels))?;
    write_csv(&path("ctrends.csv"), &SURFACE_HEADER, surface_rows(frame, &recon.trends))?;

    let part = clusters.partition;
    let mut rows = Vec::new();
    for yb in 0..part.year_bands {
        for ab in 0..part.age_bands {
            let (i0, i1) = part.year_range(yb);
            let (j0, j1) = part.age_range(ab);
            rows.push(vec![
                yb.to_string(),
                ab.to_string(),
                frame.year_of(i0).to_string(),
                frame.year_of(i1).to_string(),
                frame.age_of(j0).to_string(),
                frame.age_of(j1).to_string(),
                part.cell_count(yb, ab).to_string(),
                fmt_sig12(clusters.means[(yb, ab)]),
                fmt_sig12(clusters.stderr(yb, ab)),
            ]);
        }
    }
    write_csv(
        &path("clusters.csv"),
        &["year_band", "age_band", "year_from", "year_to", "age_from", "age_to", "cells", "estimate", "stderr"],
        rows,
    )?;

    let rows = comparisons.iter().map(|c| {
        let status = match c.status {
            ComparisonStatus::Tested => "tested",
            ComparisonStatus::DegenerateVariance => "degenerate-variance",
            ComparisonStatus::NoDof => "no-dof",
        };
        let direction = match c.direction {
            crate::inference::Direction::AgeAdjacent => "age",
            crate::inference::Direction::YearAdjacent => "year",
        };
        vec![
            c.cluster_a.0.to_string(),
            c.cluster_a.1.to_string(),
            c.cluster_b.0.to_string(),
            c.cluster_b.1.to_string(),
            direction.to_string(),
            fmt_sig12(c.diff),
            fmt_sig12(c.variance),
            fmt_opt(c.f_value),
            fmt_opt(c.p_value),
            status.to_string(),
        ]
    });
    write_csv(
        &path("comparisons.csv"),
        &["a_year_band", "a_age_band", "b_year_band", "b_age_band", "direction", "diff", "variance", "f_value", "p_value", "status"],
        rows,
    )?;

    if let Some(min) = cfg.min_cell_count {
        write_csv(&path("observed_means.csv"), &CELL_HEADER, cell_rows(frame, cells.iter().filter(|c| c.n >= min)))?;
    }

    let summary = RunSummary {
        years: (frame.y_min(), frame.y_max()),
        ages: (frame.a_min(), frame.a_max()),
        extent_i: frame.extent_i(),
        extent_j: frame.extent_j(),
        mode: match cfg.mode {
            DataMode::Raw => "raw",
            DataMode::Aggregated => "aggregated",
        },
        n_obs: fit.n_obs,
        lambda1: fit.lambda1,
        lambda2: fit.lambda2,
        sigma2_hat: fit.sigma2_hat,
        dof: fit.dof,
        condition: fit.condition,
        s0: fit.s0,
        s1: fit.s1,
        s2: fit.s2,
        stat_v: report.stat_v,
        stat_u: report.stat_u,
        f_smv: cfg.targets.f_smv,
        f_smu: cfg.targets.f_smu,
        delta: cfg.targets.delta.is_finite().then_some(cfg.targets.delta),
        fstat: cfg.targets.kind,
        point_v: cfg.targets.point_v,
        point_u: cfg.targets.point_u,
        iterations: report.iterations,
        converged: tuner == TunerStatus::Converged,
        tuner,
        delta_a: cfg.delta_a,
        delta_y: cfg.delta_y,
        validation,
    };
    write_json(&path("run.json"), &summary)?;

    if let Some(e) = deferred {
        return Err(e.into());
    }
    Ok(AnalyzeOutcome { fit, report, summary, artifacts })
}

pub const CELL_HEADER: [&str; 8] = ["year", "age", "i", "j", "n", "x_bar", "y_bar", "css"];

fn cell_rows<'a>(frame: &'a Frame, cells: impl Iterator<Item = &'a AggregatedCell> + 'a) -> impl Iterator<Item = Vec<String>> + 'a {
    cells.map(|c| {
        vec![
            frame.year_of(c.cell.i).to_string(),
            frame.age_of(c.cell.j).to_string(),
            c.cell.i.to_string(),
            c.cell.j.to_string(),
            c.n.to_string(),
            fmt_sig12(c.x_bar),
            fmt_sig12(c.y_bar),
            fmt_sig12(c.css),
        ]
    })
}

/// Loads and aggregates the input, writing `cells.csv` and `validation.json`.
pub fn run_aggregate(cfg: &RunConfig) -> Result<Vec<AggregatedCell>, PipelineError> {
    let (measurements, validation) = read_input(cfg)?;
    let cells = aggregate(&measurements, &cfg.frame)?;
    create_out_dir(&cfg.out)?;
    write_csv(&cfg.out.join("cells.csv"), &CELL_HEADER, cell_rows(&cfg.frame, cells.iter()))?;
    write_json(&cfg.out.join("validation.json"), &validation)?;
    Ok(cells)
}

/// A constant, or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field<T> {
    Constant(f64),
    Values(T),
}

/// Adds `delta` to the trends of relative rows `years` and columns `ages`, both inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendStep {
    pub years: (usize, usize),
    pub ages: (usize, usize),
    pub delta: f64,
}

/// JSON description of a synthetic population and survey design.
///
/// `v0` is a constant or the entry levels in parameter order (left boundary
/// from the top down, then the bottom row); `u` is a constant or
/// `I+1` rows of `J+1` trends. `waves` lists relative survey years (all rows
/// when omitted); each age in each wave is examined at every fraction,
/// `repeats` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub v0: Field<Vec<f64>>,
    pub u: Field<Vec<Vec<f64>>>,
    #[serde(default)]
    pub steps: Vec<TrendStep>,
    #[serde(default)]
    pub waves: Option<Vec<usize>>,
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub noise_sd: f64,
}

impl ModelSpec {
    pub fn build(&self, frame: &Frame) -> Result<(TrueModel, SamplingPlan), PipelineError> {
        let layout = frame.layout();
        let (nr, nc) = layout.u_shape();
        let mismatch = PipelineError::SpecMismatch;
        let v0 = match &self.v0 {
            Field::Constant(c) => DVector::from_element(layout.n_v0(), *c),
            Field::Values(v) if v.len() == layout.n_v0() => DVector::from_column_slice(v),
            Field::Values(v) => return Err(mismatch(format!("v0 has {} values, the frame needs {}", v.len(), layout.n_v0()))),
        };
        let mut u = match &self.u {
            Field::Constant(c) => DMatrix::from_element(nr, nc, *c),
            Field::Values(rows) => {
                if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
                    return Err(mismatch(format!("u must be {nr} rows of {nc} values")));
                }
                DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
            }
        };
        for s in &self.steps {
            if s.years.0 > s.years.1 || s.years.1 >= nr || s.ages.0 > s.ages.1 || s.ages.1 >= nc {
                return Err(mismatch(format!("step {:?} x {:?} outside the {nr} x {nc} trend grid", s.years, s.ages)));
            }
            for i in s.years.0..=s.years.1 {
                for j in s.ages.0..=s.ages.1 {
                    u[(i, j)] += s.delta;
                }
            }
        }
        let model = TrueModel::new(*frame, v0, u, self.noise_sd).map_err(|e| mismatch(e.to_string()))?;
        if self.fractions.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(mismatch(format!("fractions {:?} must lie in [0, 1)", self.fractions)));
        }
        let waves: Vec<usize> = self.waves.clone().unwrap_or_else(|| (0..nr).collect());
        if let Some(w) = waves.iter().find(|&&w| w >= nr) {
            return Err(mismatch(format!("wave {w} outside rows 0..{}", nr - 1)));
        }
        let plan = SamplingPlan::survey_waves(frame, &waves, &self.fractions, self.repeats);
        Ok((model, plan))
    }
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub seed: u64,
    pub years: (f64, f64),
    pub ages: (f64, f64),
    pub noise_sd: f64,
    /// Parameter vector: entry levels followed by the row-major trends.
    pub z: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
    pub trends: Vec<Vec<f64>>,
    pub plan: Vec<PlanEntry>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Simulates a dataset from `spec`, writing `data.csv` (columns `x, year, age`) and `truth.json`.
pub fn run_simulate(cfg: &RunConfig, spec_path: &Path) -> Result<Vec<Measurement>, PipelineError> {
    let text = fs::read_to_string(spec_path).map_err(|e| io_err(spec_path, e))?;
    let spec: ModelSpec =
        serde_json::from_str(&text).map_err(|e| PipelineError::SpecMismatch(format!("{}: {e}", spec_path.display())))?;
    let (model, plan) = spec.build(&cfg.frame)?;
    let data = generate(&model, &plan, cfg.seed).map_err(|e: SynthError| PipelineError::SpecMismatch(e.to_string()))?;

    create_out_dir(&cfg.out)?;
    let rows = data.iter().map(|m| vec![fmt_sig12(m.x), fmt_sig12(m.y), fmt_sig12(m.a)]);
    write_csv(&cfg.out.join("data.csv"), &["x", "year", "age"], rows)?;
    let truth = Truth {
        seed: cfg.seed,
        years: (cfg.frame.y_min(), cfg.frame.y_max()),
        ages: (cfg.frame.a_min(), cfg.frame.a_max()),
        noise_sd: model.noise_sd,
        z: model.z().iter().copied().collect(),
        levels: rows_of(&model.level_surface()),
        trends: rows_of(&model.u),
        plan: plan.entries,
    };
    write_json(&cfg.out.join("truth.json"), &truth)?;
    Ok(data)
}
