//! Evaluates the reference CNN under activation bit-flip noise at a few
//! probabilities and element types.
//!
//!     cargo run --release --example noisy_inference -- [data_dir]

use std::path::PathBuf;
use std::time::Instant;

use rram_noise::bitnoise::NoiseSpec;
use rram_noise::nn::{self, Classifier};
use rram_noise::quant::QuantizedNetwork;
use rram_noise::rng::RngStream;
use rram_noise::tensor::ElementType;

fn main() -> rram_noise::Result<()> {
    let manifest =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/desk_cnn/desk_cnn.json");
    let net = nn::load_model(&manifest)?;
    let data = match std::env::args().nth(1) {
        Some(dir) => nn::load_cifar10(dir.as_ref(), &net.normalization)?,
        None => rram_noise::synth::test_set(&net.normalization, 2000)?,
    };
    let calib = rram_noise::synth::calibration_set(&net.normalization, 500)?;
    let quantized = QuantizedNetwork::quantize(&net, &calib, 100)?;

    let mut models: Vec<(String, Box<dyn Classifier>)> = Vec::new();
    for dtype in [
        ElementType::Float16,
        ElementType::Bfloat16,
        ElementType::Float32,
        ElementType::Float64,
    ] {
        models.push((dtype.to_string(), Box::new(net.with_dtype(dtype)?)));
    }
    models.push(("int8".into(), Box::new(quantized)));

    let rng = RngStream::new(1);
    for (name, model) in &models {
        let t = Instant::now();
        let clean = model.evaluate(&data, None, &rng, 100)?;
        print!("{name:>8}  clean {clean:.4}");
        for p in [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1] {
            let spec = NoiseSpec::symmetric(p);
            print!(
                "  {p:.0e}:{:.3}",
                model.evaluate(&data, Some(&spec), &rng, 100)?
            );
        }
        println!("  ({:.1}s)", t.elapsed().as_secs_f64());
    }
    Ok(())
}
