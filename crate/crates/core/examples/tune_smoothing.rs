//! Choose both smoothing parameters from the data's own smoothness targets.
//!
//! `cargo run --release --example tune_smoothing`

use drm::ingest::aggregate;
use drm::tuner::{evaluate, FstatKind};
use drm::{solve, synth, tune, Frame, LinearSystem, SamplingPlan, SmoothnessTargets, TrueModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = Frame::new(1982.0, 1992.5, 25.0, 64.0)?;
    let model = TrueModel::from_fn(frame, |_, _| 24.0, |i, j| 0.1 + 0.01 * ((i + j) as f64 / 8.0).sin(), 3.5)?;
    let plan = SamplingPlan::survey_waves(&frame, &[0, 5, 10], &[0.05, 0.15, 0.25], 10);
    let data = synth::generate(&model, &plan, 3)?;
    let sys = LinearSystem::from_cells(&frame, &aggregate(&data, &frame)?)?;

    // How the indicators respond to a hand-picked grid.
    let targets = SmoothnessTargets::standard(&frame.layout());
    for l in [1e-2, 1.0, 1e2, 1e4] {
        let r = evaluate(&solve(&sys, l, l)?, &targets)?;
        println!("lambda {l:>8.0e}: stat_v {:.3}, stat_u {:.3}", r.stat_v, r.stat_u);
    }

    let (fit, report) = tune(&sys, &targets)?;
    println!(
        "tuned in {} solves: lambda1 {:.3e}, lambda2 {:.3e}, stat_v {:.4}, stat_u {:.4}",
        report.iterations, fit.lambda1, fit.lambda2, report.stat_v, report.stat_u
    );

    // Median of all indicators instead of one selected point.
    let median = SmoothnessTargets { kind: FstatKind::Median, ..targets };
    match tune(&sys, &median) {
        Ok((fit, r)) => println!("median targets: lambda1 {:.3e}, lambda2 {:.3e} after {} solves", fit.lambda1, fit.lambda2, r.iterations),
        Err(e) => println!("median targets: {e}"),
    }
    Ok(())
}
