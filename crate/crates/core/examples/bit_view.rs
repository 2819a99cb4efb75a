//! Bit patterns of a few values in every storage type, and what flipping
//! single bits does to them.
//!
//!     cargo run --example bit_view

use rram_noise::bitnoise::{apply_bitflip_noise, make_startbit_mask, FlipTensorPair};
use rram_noise::tensor::{BitWords, ElementType, Tensor};

fn main() -> rram_noise::Result<()> {
    let values = [1.0, -0.15625, 65504.0, 3.0e-5];
    for dtype in ElementType::ALL {
        let t = Tensor::from_f64s(vec![values.len()], dtype, &values)?;
        let width = dtype.bit_width() as usize;
        println!("{dtype}:");
        for (v, w) in t.to_f64_vec().iter().zip(t.bit_view().iter()) {
            println!("  {:>12}  {:0width$b}", format!("{v}"), w);
        }
    }

    // 1.0f32 is 0x3F800000; setting the top exponent bit gives 0x7F800000 = inf.
    let one = Tensor::from_f64s(vec![1], ElementType::Float32, &[1.0])?;
    let mask = make_startbit_mask(ElementType::Float32, 1)?;
    let top_exponent = 1u64 << 30;
    assert!(mask.word & top_exponent != 0);
    let flips = FlipTensorPair {
        f_set: BitWords::from_u64s(32, [top_exponent]),
        f_clear: BitWords::zeros(32, 1),
    };
    let y = apply_bitflip_noise(&one, &flips)?;
    println!("1.0 with bit 30 set: {}", y.to_f64_vec()[0]);
    println!(
        "noisy bits from start bit 1: {} ({} in the exponent)",
        mask.noisy_bits(),
        mask.noisy_exponent_bits()
    );
    Ok(())
}
