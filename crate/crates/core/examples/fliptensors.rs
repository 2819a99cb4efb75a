//! Samples fliptensors for a tensor write and applies the noise operator.
//!
//!     cargo run --example fliptensors -- [p] [start_bit]

use rram_noise::bitnoise::{
    apply_bitflip_noise, hamming_distance, inject, sample_fliptensors, NoiseSpec,
};
use rram_noise::rng::RngStream;
use rram_noise::tensor::{ElementType, Tensor};

fn main() -> rram_noise::Result<()> {
    let mut args = std::env::args().skip(1);
    let p: f64 = args.next().map_or(1e-2, |s| s.parse().expect("p"));
    let start_bit: u32 = args.next().map_or(0, |s| s.parse().expect("start bit"));

    let n = 100_000;
    let values: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = Tensor::from_f64s(vec![n], ElementType::Float32, &values)?;
    let spec = NoiseSpec::symmetric(p).with_start_bit(start_bit);
    let stream = RngStream::new(42);

    let flips = sample_fliptensors(n, ElementType::Float32, &spec, &stream)?;
    let y = apply_bitflip_noise(&x, &flips)?;
    // `inject` draws the same flips without materialising them.
    assert!(y.bit_identical(&inject(&x, &spec, &stream)?));

    let mask = spec.mask_for(ElementType::Float32)?;
    let maskable = n as f64 * mask.noisy_bits() as f64;
    let flipped = hamming_distance(&x.bit_view(), &y.bit_view());
    println!(
        "p = {p:e}, start bit {start_bit}: {flipped} of {maskable} maskable bits flipped ({:.3e})",
        flipped as f64 / maskable
    );

    let yv = y.to_f64_vec();
    let non_finite = yv.iter().filter(|v| !v.is_finite()).count();
    let worst = values
        .iter()
        .zip(&yv)
        .filter(|(_, b)| b.is_finite())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("{non_finite} elements became inf/NaN; largest finite change {worst:e}");
    Ok(())
}
