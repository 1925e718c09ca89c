//! The `analyze` pipeline driven from code: settings in, CSV and JSON artifacts out.
//!
//! `cargo run --release --example run_pipeline`

use drm::pipeline::{run_analyze, RunConfig, Settings};
use drm::{synth, Frame, SamplingPlan, TrueModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("drm-run-pipeline");
    std::fs::create_dir_all(&dir)?;

    let frame = Frame::new(1982.0, 1992.5, 25.0, 64.0)?;
    let model = TrueModel::from_fn(frame, |_, j| 23.0 + 0.08 * j as f64, |_, _| 0.1, 3.5)?;
    let plan = SamplingPlan::survey_waves(&frame, &[0, 5, 10], &[0.05, 0.15, 0.25], 10);
    let mut csv = String::from("x,year,age\n");
    for m in synth::generate(&model, &plan, 4)? {
        csv += &format!("{},{},{}\n", m.x, m.y, m.a);
    }
    let input = dir.join("data.csv");
    std::fs::write(&input, csv)?;

    let mut settings = Settings::parse("y_max = 1992.5\ndelta_a = 10\ndelta_y = 5\nmin_cell_count = 10\n")?;
    settings.set("input", input.to_str().unwrap())?;
    settings.set("out", dir.join("out").to_str().unwrap())?;
    let outcome = run_analyze(&RunConfig::from_settings(&settings)?)?;
    println!("lambda1 {:.3e}, lambda2 {:.3e}", outcome.fit.lambda1, outcome.fit.lambda2);
    for path in &outcome.artifacts {
        println!("wrote {}", path.display());
    }
    Ok(())
}
