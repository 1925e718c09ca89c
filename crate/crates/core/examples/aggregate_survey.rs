//! Load survey rows from CSV, derive BMI and reduce them to per-cell summaries.
//!
//! `cargo run --release --example aggregate_survey`

use drm::ingest::{aggregate, load_measurements, Schema};
use drm::Frame;

const SURVEY: &str = "\
weight,height,birth_year,exam_date
81.0,1.78,1950,1982.31
64.5,1.62,1950,1982.80
92.3,1.80,1949,1983.12
70.1,1.70,1949,1983.55
58.0,1.58,1951,1982.42
77.7,1.75,1951,1982.47
,1.75,1951,1982.47
80.0,0.0,1950,1982.50
75.0,1.72,1900,1982.50
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = Frame::new(1982.0, 1984.0, 30.0, 34.0)?;
    let loaded = load_measurements(SURVEY.as_bytes(), Schema::Derived, &frame)?;
    println!("accepted {}, rejected {}", loaded.report.accepted, loaded.report.rejected.len());
    for r in &loaded.report.rejected {
        println!("  {r:?}");
    }
    for c in aggregate(&loaded.measurements, &frame)? {
        println!(
            "cell ({}, {}): n {}, mean BMI {:.2}, mean year {:.2}, css {:.3}",
            c.cell.i, c.cell.j, c.n, c.x_bar, c.y_bar, c.css
        );
    }
    Ok(())
}
