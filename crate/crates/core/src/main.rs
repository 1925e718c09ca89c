use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drm::pipeline::{run_aggregate, run_analyze, run_simulate, PipelineError, RunConfig, Settings};

#[derive(Parser)]
#[command(name = "drm", version, about = "Cohort trends and mean levels from repeated cross-sectional surveys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit, tune, and write levels, trends, clusters, comparisons and run.json.
    Analyze(Common),
    /// Draw a synthetic dataset from a JSON model specification.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Model specification (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Load and aggregate the input into per-cell summaries.
    Aggregate(Common),
}

/// Every flag overrides the key of the same name in `--config`.
#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First survey year (default 1982).
    #[arg(long)]
    y_min: Option<String>,
    /// Last survey year; fractional values admit later exams in the top row (default 1992).
    #[arg(long)]
    y_max: Option<String>,
    /// Youngest age (default 25).
    #[arg(long)]
    a_min: Option<String>,
    /// Oldest age (default 64).
    #[arg(long)]
    a_max: Option<String>,
    /// raw | aggregated
    #[arg(long)]
    mode: Option<String>,
    /// Measurement CSV.
    #[arg(long)]
    input: Option<String>,
    /// direct (x, year, age) | derived (weight, height, birth_year, exam_date)
    #[arg(long)]
    schema: Option<String>,
    /// Target 1 - r^2 of the level surface (default 0.2).
    #[arg(long)]
    f_smv: Option<String>,
    /// Target 1 - r^2 of the trend surface (default 0.2).
    #[arg(long)]
    f_smu: Option<String>,
    /// Log-scale accuracy; `inf` skips the search.
    #[arg(long)]
    delta: Option<String>,
    /// selected-point | mean | median | min
    #[arg(long)]
    fstat: Option<String>,
    /// 0-based `i,j` of the level indicator.
    #[arg(long)]
    point_v: Option<String>,
    /// 0-based `i,j` of the trend indicator.
    #[arg(long)]
    point_u: Option<String>,
    /// Cluster width in ages (default 5).
    #[arg(long)]
    delta_a: Option<String>,
    /// Cluster height in years (default 5).
    #[arg(long)]
    delta_y: Option<String>,
    /// Fixed level smoothing; requires --lambda2 and skips the tuner.
    #[arg(long)]
    lambda1: Option<String>,
    /// Fixed trend smoothing; requires --lambda1.
    #[arg(long)]
    lambda2: Option<String>,
    /// Write observed_means.csv with cells of at least this many cases.
    #[arg(long)]
    min_cell_count: Option<String>,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<String>,
    /// Simulation seed (default 1).
    #[arg(long)]
    seed: Option<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let flags = [
            ("y_min", &self.y_min),
            ("y_max", &self.y_max),
            ("a_min", &self.a_min),
            ("a_max", &self.a_max),
            ("mode", &self.mode),
            ("input", &self.input),
            ("schema", &self.schema),
            ("f_smv", &self.f_smv),
            ("f_smu", &self.f_smu),
            ("delta", &self.delta),
            ("fstat", &self.fstat),
            ("point_v", &self.point_v),
            ("point_u", &self.point_u),
            ("delta_a", &self.delta_a),
            ("delta_y", &self.delta_y),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("min_cell_count", &self.min_cell_count),
            ("out", &self.out),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v)?;
            }
        }
        RunConfig::from_settings(&s)
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Analyze(c) => {
            let out = run_analyze(&c.config()?)?;
            eprintln!(
                "tuner {:?}: l1 = {:e}, l2 = {:e}, {} artifacts",
                out.summary.tuner,
                out.fit.lambda1,
                out.fit.lambda2,
                out.artifacts.len()
            );
        }
        Command::Simulate { common, spec } => {
            let data = run_simulate(&common.config()?, &spec)?;
            eprintln!("{} measurements", data.len());
        }
        Command::Aggregate(c) => {
            let cells = run_aggregate(&c.config()?)?;
            eprintln!("{} cells", cells.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.category(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
