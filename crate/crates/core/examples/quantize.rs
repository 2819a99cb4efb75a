//! Post-training int8 quantization of the reference CNN.
//!
//!     cargo run --release --example quantize

use std::path::PathBuf;

use rram_noise::nn::{self, Classifier};
use rram_noise::quant::{QuantParams, QuantizedNetwork};
use rram_noise::rng::RngStream;
use rram_noise::synth;

fn main() -> rram_noise::Result<()> {
    let q = QuantParams::int8(-1.0, 1.0)?;
    println!(
        "range [-1, 1]: scale {:.6}, zero point {}",
        q.scale, q.zero_point
    );
    for r in [-1.0, -0.5, 0.0, 0.3, 1.0, 2.0] {
        let v = q.quantize(r);
        println!("  {r:>5} -> {v:>4} -> {:.5}", q.dequantize(v));
    }

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/desk_cnn/desk_cnn.json");
    let net = nn::load_model(&path)?;
    let calib = synth::calibration_set(&net.normalization, 500)?;
    let qnet = QuantizedNetwork::quantize(&net, &calib, 100)?;
    for (i, p) in qnet.calibration().activations.iter().enumerate() {
        if let Some(p) = p {
            println!(
                "layer {i:>2}: [{:.3}, {:.3}] scale {:.5} zero {}",
                p.alpha, p.beta, p.scale, p.zero_point
            );
        }
    }
    let test = synth::test_set(&net.normalization, 1000)?;
    let rng = RngStream::new(0);
    println!(
        "accuracy float32 {:.4}, int8 {:.4}",
        net.evaluate(&test, None, &rng, 100)?,
        qnet.evaluate(&test, None, &rng, 100)?
    );
    Ok(())
}
