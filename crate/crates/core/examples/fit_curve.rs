//! Fits the logistic resilience model to a synthetic noisy curve.
//!
//!     cargo run --example fit_curve

use rram_noise::analysis::{fit_logistic, logistic, noise_at_accuracy_fraction, AccuracyCurve};
use rram_noise::harness::Grid;
use rram_noise::rng::{standard_normal, RngStream};

fn main() -> rram_noise::Result<()> {
    let (mu, sigma, a_max, k) = (3e-5f64, 0.3, 0.92, 10);
    let (a_min, da) = (1.0 / k as f64, (a_max - 1.0 / k as f64) / 2.0);
    let mut rng = RngStream::new(1).generator();
    let mut samples = Vec::new();
    for p in Grid::default().points()? {
        let f = logistic(p.log10(), mu.log10(), sigma, a_min, da);
        for _ in 0..5 {
            samples.push((p, f + 0.01 * standard_normal(&mut rng)));
        }
    }
    let curve = AccuracyCurve::from_samples(&samples, k, a_max)?;
    let fit = fit_logistic(&curve)?;
    println!("true mu {mu:e}, sigma {sigma}");
    println!(
        "fitted mu {:.4e}, sigma {:.4} ({} iterations, converged {})",
        fit.mu, fit.sigma, fit.iterations, fit.converged
    );
    for f in [0.99, 0.9, 0.5] {
        println!(
            "accuracy {:.0}% of peak at p = {:.3e}",
            f * 100.0,
            noise_at_accuracy_fraction(&fit, f)?
        );
    }
    Ok(())
}
