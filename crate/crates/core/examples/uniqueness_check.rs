//! When do a handful of observations determine the penalized fit?
//!
//! `cargo run --release --example uniqueness_check`

use drm::ingest::Measurement;
use drm::solver::check_uniqueness;
use drm::{solve, Frame, LinearSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = Frame::new(0.0, 5.0, 0.0, 5.0)?;
    let configs: [(&str, [(f64, f64); 4]); 3] = [
        ("spread out", [(0.5, 0.5), (4.2, 1.0), (1.3, 4.4), (3.6, 3.1)]),
        ("three on a line", [(0.5, 0.5), (1.5, 1.5), (2.5, 2.5), (3.6, 0.4)]),
        ("three in one cell", [(1.1, 1.5), (1.4, 1.7), (1.8, 2.0), (3.6, 0.4)]),
    ];
    for (name, pts) in configs {
        let check = check_uniqueness(&pts);
        let data: Vec<Measurement> = pts.iter().map(|&(y, a)| Measurement { x: 20.0 + y, y, a }).collect();
        let outcome = match solve(&LinearSystem::from_measurements(&frame, &data)?, 1.0, 1.0) {
            Ok(fit) => format!("condition {:.2e}", fit.condition),
            Err(e) => e.to_string(),
        };
        println!("{name}: four-point condition {}, {}; {outcome}", check.unique, check.diagnostic);
    }
    Ok(())
}
