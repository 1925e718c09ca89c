//! Localize a change in cohort trends by F tests between neighbouring clusters.
//!
//! `cargo run --release --example cluster_comparisons`

use drm::inference::{cluster_means, compare_adjacent, ComparisonStatus};
use drm::ingest::aggregate;
use drm::{synth, tune, Frame, LinearSystem, SamplingPlan, SmoothnessTargets, TrueModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = Frame::new(1982.0, 1992.5, 25.0, 64.0)?;
    // Trends drop by one unit per year from 1987 to 1991 among those aged 35-39.
    let stepped = |i: usize, j: usize| if (5..=9).contains(&i) && (10..=14).contains(&j) { -0.9 } else { 0.1 };
    let model = TrueModel::from_fn(frame, |_, _| 24.0, stepped, 3.5)?;
    let plan = SamplingPlan::survey_waves(&frame, &[0, 5, 10], &[0.05, 0.15, 0.25], 10);
    let data = synth::generate(&model, &plan, 8)?;
    let sys = LinearSystem::from_cells(&frame, &aggregate(&data, &frame)?)?;
    let (fit, _) = tune(&sys, &SmoothnessTargets::standard(&frame.layout()))?;

    let grid = cluster_means(&fit, 5, 5)?;
    let part = &grid.partition;
    println!("{} x {} clusters of 5 years by 5 ages", part.year_bands, part.age_bands);
    for yb in 0..part.year_bands {
        let row: Vec<String> = (0..part.age_bands).map(|ab| format!("{:>7.3}", grid.means[(yb, ab)])).collect();
        println!("years {:?}: {}", part.year_range(yb), row.join(" "));
    }

    let mut results = compare_adjacent(&grid)?;
    results.retain(|r| r.status == ComparisonStatus::Tested);
    results.sort_by(|a, b| a.p_value.partial_cmp(&b.p_value).unwrap());
    for r in results.iter().take(5) {
        println!(
            "{:?} vs {:?} ({:?}): diff {:+.3}, F {:.2}, p {:.2e}",
            r.cluster_a,
            r.cluster_b,
            r.direction,
            r.diff,
            r.f_value.unwrap(),
            r.p_value.unwrap()
        );
    }
    Ok(())
}
