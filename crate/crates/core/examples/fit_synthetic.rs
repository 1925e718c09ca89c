//! Fit a known population and compare the estimated surfaces with the truth.
//!
//! `cargo run --release --example fit_synthetic`

use drm::ingest::aggregate;
use drm::solver::reconstruct;
use drm::{solve, synth, Frame, LinearSystem, SamplingPlan, TrueModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Years 1982-1992, ages 25-64.
    let frame = Frame::new(1982.0, 1992.5, 25.0, 64.0)?;
    let model = TrueModel::from_fn(
        frame,
        |i, j| 24.0 + 0.1 * i as f64 + 0.05 * j as f64,
        |i, j| 0.15 - 0.002 * j as f64 + 0.003 * i as f64,
        3.5,
    )?;
    let plan = SamplingPlan::survey_waves(&frame, &[0, 5, 10], &[0.05, 0.15, 0.25], 10);
    let data = synth::generate(&model, &plan, 7)?;
    println!("{} measurements in {} x {} trend cells", data.len(), frame.extent_i() + 1, frame.extent_j() + 1);

    let cells = aggregate(&data, &frame)?;
    let fit = solve(&LinearSystem::from_cells(&frame, &cells)?, 12.0, 7500.0)?;
    println!("sigma2 {:.3} on {} dof, condition {:.2e}", fit.sigma2_hat.unwrap(), fit.dof.unwrap(), fit.condition);

    let recon = reconstruct(&fit);
    let truth = model.level_surface();
    for (i, j) in [(0, 0), (5, 20), (11, 40)] {
        println!(
            "level ({}, {}): estimate {:.3} +- {:.3}, true {:.3}",
            frame.year_of(i),
            frame.age_of(j),
            recon.levels.estimate[(i, j)],
            recon.levels.half_width.as_ref().unwrap()[(i, j)],
            truth[(i, j)]
        );
    }
    let (i, j) = (5, 20);
    println!(
        "trend ({}, {}): estimate {:.4} +- {:.4}, true {:.4}",
        frame.year_of(i),
        frame.age_of(j),
        recon.trends.estimate[(i, j)],
        recon.trends.half_width.as_ref().unwrap()[(i, j)],
        model.u[(i, j)]
    );
    Ok(())
}
