//! Survey records: derivation, CSV loading with validation, and per-cell aggregation.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{CellIndex, Frame, GridError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("weight and height must be positive, got weight {weight}, height {height}")]
    NonPositiveInput { weight: f64, height: f64 },
    #[error("examination date {exam_date} does not follow birth year {birth_year}")]
    InvalidDates { birth_year: i64, exam_date: f64 },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("unknown schema: {0}")]
    UnknownSchema(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One survey record: state value `x` observed in year `y` at age `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measurement {
    pub x: f64,
    pub y: f64,
    pub a: f64,
}

/// Summary of the measurements falling in one lattice cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregatedCell {
    pub cell: CellIndex,
    pub x_bar: f64,
    pub y_bar: f64,
    pub n: usize,
    /// Corrected sum of squares of `x` around `x_bar`.
    pub css: f64,
}

/// Body mass index in kg/m^2.
pub fn derive_bmi(weight_kg: f64, height_m: f64) -> Result<f64, IngestError> {
    if !(weight_kg > 0.0 && height_m > 0.0) {
        return Err(IngestError::NonPositiveInput { weight: weight_kg, height: height_m });
    }
    Ok(weight_kg / (height_m * height_m))
}

/// Age in full years (examination year minus birth year) and the decimal examination year.
pub fn derive_age_year(birth_year: i64, exam_date: f64) -> Result<(i64, f64), IngestError> {
    if !exam_date.is_finite() || exam_date <= birth_year as f64 {
        return Err(IngestError::InvalidDates { birth_year, exam_date });
    }
    Ok((exam_date.floor() as i64 - birth_year, exam_date))
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// Columns `x`, `year`, `age`.
    Direct,
    /// Columns `weight`, `height`, `birth_year`, `exam_date`; `x` is BMI.
    Derived,
}

impl Schema {
    pub fn parse(name: &str) -> Result<Self, IngestError> {
        match name {
            "direct" => Ok(Schema::Direct),
            "derived" => Ok(Schema::Derived),
            other => Err(IngestError::UnknownSchema(format!(
                "'{other}' (expected 'direct' or 'derived')"
            ))),
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            Schema::Direct => &["x", "year", "age"],
            Schema::Derived => &["weight", "height", "birth_year", "exam_date"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Unparsable,
    NonFinite,
    InvalidDerivation,
    OutOfFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    /// 1-based line number in the file, header is line 1.
    pub line: u64,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub measurements: Vec<Measurement>,
    pub report: ValidationReport,
}

/// Reads measurements from CSV text, keeping in-frame rows and reporting the rest.
///
/// Bad rows never abort the load; only an unreadable file or a header
/// lacking the schema's columns is an error.
pub fn load_measurements<R: Read>(
    source: R,
    schema: Schema,
    frame: &Frame,
) -> Result<LoadOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers().map_err(|e| IngestError::MalformedFile(e.to_string()))?.clone();
    let positions: Vec<usize> = schema
        .columns()
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| {
                IngestError::UnknownSchema(format!(
                    "header {:?} lacks column '{name}' required by the {schema:?} schema",
                    headers.iter().collect::<Vec<_>>()
                ))
            })
        })
        .collect::<Result<_, _>>()?;

    let mut measurements = Vec::new();
    let mut report = ValidationReport::default();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedFile(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut reject = |reason, detail: String| report.rejected.push(RejectedRow { line, reason, detail });

        let mut values = Vec::with_capacity(positions.len());
        let mut bad = None;
        for (&p, name) in positions.iter().zip(schema.columns()) {
            let field = record.get(p).unwrap_or("");
            match field.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    bad = Some(format!("column '{name}': cannot parse '{field}'"));
                    break;
                }
            }
        }
        if let Some(detail) = bad {
            reject(RejectReason::Unparsable, detail);
            continue;
        }
        if values.iter().any(|v| !v.is_finite()) {
            reject(RejectReason::NonFinite, format!("non-finite value in {values:?}"));
            continue;
        }
        let m = match schema {
            Schema::Direct => Measurement { x: values[0], y: values[1], a: values[2] },
            Schema::Derived => {
                let birth = values[2];
                if birth.fract() != 0.0 {
                    reject(RejectReason::Unparsable, format!("birth_year {birth} is not an integer"));
                    continue;
                }
                match derive_bmi(values[0], values[1])
                    .and_then(|x| derive_age_year(birth as i64, values[3]).map(|(a, y)| (x, a, y)))
                {
                    Ok((x, a, y)) => Measurement { x, y, a: a as f64 },
                    Err(e) => {
                        reject(RejectReason::InvalidDerivation, e.to_string());
                        continue;
                    }
                }
            }
        };
        if let Err(e) = frame.locate(m.y, m.a) {
            reject(RejectReason::OutOfFrame, e.to_string());
            continue;
        }
        measurements.push(m);
    }
    report.accepted = measurements.len();
    Ok(LoadOutcome { measurements, report })
}

/// Groups measurements by lattice cell.
///
/// Members of each cell are sorted before summation so the result does not
/// depend on input order, bit for bit. Cells come out ordered by `(i, j)`.
pub fn aggregate(measurements: &[Measurement], frame: &Frame) -> Result<Vec<AggregatedCell>, IngestError> {
    let mut cells: BTreeMap<CellIndex, Vec<(f64, f64)>> = BTreeMap::new();
    for m in measurements {
        let cell = frame.locate(m.y, m.a)?;
        cells.entry(cell).or_default().push((m.x, m.y));
    }
    Ok(cells
        .into_iter()
        .map(|(cell, mut members)| {
            members.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
            let n = members.len();
            let x_bar = members.iter().map(|p| p.0).sum::<f64>() / n as f64;
            let y_bar = members.iter().map(|p| p.1).sum::<f64>() / n as f64;
            let css = members.iter().map(|p| (p.0 - x_bar).powi(2)).sum();
            AggregatedCell { cell, x_bar, y_bar, n, css }
        })
        .collect())
}
