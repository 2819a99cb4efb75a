//! Flip probability of a resistive cell from its LRS/HRS lognormal spreads.
//!
//!     cargo run --example device_threshold -- [lrs_median hrs_median sigma]

use rram_noise::device::{DeviceModel, ResistanceDistribution};

fn main() -> rram_noise::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("number"))
        .collect();
    let (lrs, hrs, sigma) = match args[..] {
        [l, h, s] => (l, h, s),
        _ => (1e4, 1e6, 10f64.ln() / 2.0),
    };
    let m = DeviceModel::new(
        ResistanceDistribution::from_median(lrs, sigma)?,
        ResistanceDistribution::from_median(hrs, sigma)?,
    )?;
    println!("LRS median {lrs:e} ohm, HRS median {hrs:e} ohm, sigma {sigma:.4}");
    println!(
        "threshold {:.6e} ohm, flip probability {:.6e}",
        m.r_thresh, m.p_bf
    );

    println!("\nHRS median vs flip probability (LRS fixed):");
    for decades in [0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
        let h = ResistanceDistribution::from_median(lrs * 10f64.powf(decades), sigma)?;
        let m = DeviceModel::new(ResistanceDistribution::from_median(lrs, sigma)?, h)?;
        println!("  {:>9.3e} ohm  p_bf {:.3e}", h.median(), m.p_bf);
    }
    Ok(())
}
