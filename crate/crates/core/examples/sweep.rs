//! A small probability sweep through the harness, written to CSV and JSON.
//!
//!     cargo run --release --example sweep -- [out.csv]

use std::path::PathBuf;

use rram_noise::harness::{self, Grid, SweepConfig};

fn main() -> rram_noise::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("sweep.csv"), PathBuf::from);
    let cfg = SweepConfig {
        model: PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/desk_cnn/desk_cnn.json"),
        data: Some("synthetic:500".into()),
        grid: Grid::LogSpaced {
            min: 1e-7,
            max: 1e-1,
            per_decade: 2,
        },
        repetitions: 3,
        output: out,
        ..SweepConfig::default()
    };
    let outcome = harness::run_sweep(&cfg)?;
    let summary = outcome.write(&cfg.output)?;
    for pt in &outcome.summaries[0].curve.points {
        println!(
            "p {:.2e}  accuracy {:.4} +- {:.4}",
            pt.p, pt.accuracy_mean, pt.accuracy_std
        );
    }
    let s = &outcome.summaries[0];
    println!("mu {:?}, sigma {:?}, p99 {:?}", s.mu, s.sigma, s.p99);
    println!("wrote {} and {}", cfg.output.display(), summary.display());
    Ok(())
}
