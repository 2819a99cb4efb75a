//! Writes a synthetic CIFAR-10-format dataset.
//!
//!     cargo run --example synthetic_dataset -- <dir> [train] [test] [calib]

use std::path::PathBuf;

use rram_noise::nn::cifar::RECORD_BYTES;
use rram_noise::synth::{self, SynthConfig};

fn main() -> rram_noise::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(
        args.first()
            .map(String::as_str)
            .unwrap_or("synthetic-cifar"),
    );
    let count =
        |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (train, test, calib) = (count(1, 20_000), count(2, 2_000), count(3, 500));

    synth::write_dataset(&dir, &SynthConfig::default(), train, test, calib)?;
    for name in ["data_batch_1.bin", "test_batch.bin", "calib_batch.bin"] {
        if let Ok(meta) = std::fs::metadata(dir.join(name)) {
            println!("{name}: {} records", meta.len() as usize / RECORD_BYTES);
        }
    }
    Ok(())
}
