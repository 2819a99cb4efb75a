//! Logistic resilience curves.
//!
//! Accuracy against flip probability is modelled as
//!
//! ```text
//! F(x) = 2 da / (1 + exp((x - m) / s)) + a_min,   x = log10(p)
//! ```
//!
//! with `a_min = 1/K` (uniform guessing) and `da = (a_max - a_min) / 2`
//! held fixed. Only the midpoint `m` and slope `s` are fitted, by damped
//! Gauss-Newton (Levenberg-Marquardt) on `(m, ln s)`. The midpoint noise
//! level is `mu = 10^m`, where `F` is halfway between `a_max` and `a_min`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How far the noiseless accuracy may sit below the best observed mean.
pub const A_MAX_TOLERANCE: f64 = 0.02;

const PARAM_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub repetitions: usize,
}

impl CurvePoint {
    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.accuracy_std / (self.repetitions as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub points: Vec<CurvePoint>,
    pub num_classes: usize,
    pub a_max: f64,
}

impl AccuracyCurve {
    pub fn new(points: Vec<CurvePoint>, num_classes: usize, a_max: f64) -> Result<AccuracyCurve> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need K >= 2, got {num_classes}"
            )));
        }
        if !(0.0..=1.0).contains(&a_max) {
            return Err(Error::InvalidArgument(format!(
                "a_max = {a_max} is not an accuracy"
            )));
        }
        for w in points.windows(2) {
            if w[1].p <= w[0].p {
                return Err(Error::InvalidArgument(format!(
                    "probabilities must increase strictly ({} then {})",
                    w[0].p, w[1].p
                )));
            }
        }
        for pt in &points {
            if !(pt.p > 0.0 && pt.p <= 1.0) || pt.repetitions == 0 {
                return Err(Error::InvalidArgument(format!(
                    "invalid curve point {pt:?}"
                )));
            }
        }
        let best = points
            .iter()
            .map(|p| p.accuracy_mean)
            .fold(f64::NEG_INFINITY, f64::max);
        if a_max < best - A_MAX_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "a_max = {a_max} is below the best observed accuracy {best}"
            )));
        }
        Ok(AccuracyCurve {
            points,
            num_classes,
            a_max,
        })
    }

    /// Groups `(p, accuracy)` samples by probability. The standard deviation
    /// is the sample (n - 1) estimate, 0 for a single repetition.
    pub fn from_samples(
        samples: &[(f64, f64)],
        num_classes: usize,
        a_max: f64,
    ) -> Result<AccuracyCurve> {
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points = Vec::new();
        for group in sorted.chunk_by(|a, b| a.0 == b.0) {
            let n = group.len() as f64;
            let mean = group.iter().map(|s| s.1).sum::<f64>() / n;
            let var = if group.len() > 1 {
                group.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            points.push(CurvePoint {
                p: group[0].0,
                accuracy_mean: mean,
                accuracy_std: var.sqrt(),
                repetitions: group.len(),
            });
        }
        AccuracyCurve::new(points, num_classes, a_max)
    }

    pub fn a_min(&self) -> f64 {
        1.0 / self.num_classes as f64
    }

    pub fn delta_a(&self) -> f64 {
        (self.a_max - self.a_min()) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Midpoint noise level (a probability).
    pub mu: f64,
    /// Slope in decades of probability.
    pub sigma: f64,
    pub delta_a: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Why the fit is not usable, when `converged` is false.
    pub diagnostic: Option<String>,
}

/// `1 / (1 + e^z)` without overflow.
fn falling(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// The logistic model at `x = log10(p)`.
pub fn logistic(x: f64, mu_log10: f64, sigma: f64, a_min: f64, delta_a: f64) -> f64 {
    2.0 * delta_a * falling((x - mu_log10) / sigma) + a_min
}

impl LogisticFit {
    pub fn mu_log10(&self) -> f64 {
        self.mu.log10()
    }

    /// Fitted accuracy at probability `p`.
    pub fn accuracy_at(&self, p: f64) -> f64 {
        logistic(
            p.log10(),
            self.mu_log10(),
            self.sigma,
            self.a_min,
            self.delta_a,
        )
    }
}

fn rss(xs: &[f64], ys: &[f64], m: f64, s: f64, a_min: f64, da: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| (logistic(x, m, s, a_min, da) - y).powi(2))
        .sum()
}

fn unconverged(
    curve: &AccuracyCurve,
    mu: f64,
    sigma: f64,
    rss: f64,
    iterations: usize,
    why: String,
) -> LogisticFit {
    LogisticFit {
        mu,
        sigma,
        delta_a: curve.delta_a(),
        a_min: curve.a_min(),
        a_max: curve.a_max,
        rss,
        converged: false,
        iterations,
        diagnostic: Some(why),
    }
}

/// Least-squares fit of the logistic model to the curve's mean accuracies.
pub fn fit_logistic(curve: &AccuracyCurve) -> Result<LogisticFit> {
    let pts = &curve.points;
    if pts.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 points to fit, got {}",
            pts.len()
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.p.log10()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.accuracy_mean).collect();
    let (x_lo, x_hi) = (xs[0], xs[xs.len() - 1]);
    if x_hi - x_lo < 1.0 {
        return Err(Error::InvalidArgument(
            "the probed probabilities must span at least one decade".into(),
        ));
    }
    let (a_min, da) = (curve.a_min(), curve.delta_a());
    let y_lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if da <= 0.0 {
        return Ok(unconverged(
            curve,
            f64::NAN,
            f64::NAN,
            f64::NAN,
            0,
            format!("peak accuracy {} is not above chance {a_min}", curve.a_max),
        ));
    }
    // The data must bracket the midpoint level a_min + da.
    if y_lo >= a_min + da {
        return Ok(unconverged(
            curve,
            f64::NAN,
            f64::NAN,
            f64::NAN,
            0,
            format!(
            "accuracy never drops below the midpoint {:.4} in the probed range (lowest {y_lo:.4})",
            a_min + da
        ),
        ));
    }
    if y_hi <= a_min + da {
        return Ok(unconverged(
            curve,
            f64::NAN,
            f64::NAN,
            f64::NAN,
            0,
            format!(
            "accuracy never rises above the midpoint {:.4} in the probed range (highest {y_hi:.4})",
            a_min + da
        ),
        ));
    }

    // Coarse start: best (m, s) over a grid.
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=80 {
        let m = x_lo + (x_hi - x_lo) * i as f64 / 80.0;
        for s in [0.03, 0.06, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0] {
            let r = rss(&xs, &ys, m, s, a_min, da);
            if r < best.0 {
                best = (r, m, s);
            }
        }
    }
    let (mut cur_rss, mut m, mut t) = (best.0, best.1, best.2.ln());
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut settled = false;
    let mut stalled = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let s = t.exp();
        // Normal equations of the residuals F - y in (m, t = ln s).
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let z = (x - m) / s;
            let g = falling(z);
            let f = 2.0 * da * g + a_min;
            let slope = 2.0 * da * g * (1.0 - g);
            let (jm, jt) = (slope / s, slope * z);
            let r = f - y;
            a11 += jm * jm;
            a12 += jm * jt;
            a22 += jt * jt;
            g1 += jm * r;
            g2 += jt * r;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let (b11, b22) = (a11 * (1.0 + lambda) + 1e-300, a22 * (1.0 + lambda) + 1e-300);
            let det = b11 * b22 - a12 * a12;
            let dm = -(b22 * g1 - a12 * g2) / det;
            let dt = -(b11 * g2 - a12 * g1) / det;
            let new_s = (t + dt).exp();
            let new_rss = if new_s > 0.0 && new_s.is_finite() {
                rss(&xs, &ys, m + dm, new_s, a_min, da)
            } else {
                f64::NAN
            };
            if new_rss.is_finite() && new_rss <= cur_rss {
                m += dm;
                t += dt;
                let step = dm.abs().max(dt.abs());
                // A flat valley (transition sharper than the grid) creeps forever.
                stalled = if cur_rss - new_rss <= 1e-12 * cur_rss {
                    stalled + 1
                } else {
                    0
                };
                cur_rss = new_rss;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step < PARAM_TOLERANCE || stalled >= 10 {
                    settled = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a minimum.
            settled = true;
        }
        if settled {
            break;
        }
    }
    let mu = 10f64.powf(m);
    let sigma = t.exp();
    if !settled {
        return Ok(unconverged(
            curve,
            mu,
            sigma,
            cur_rss,
            iterations,
            format!("no convergence after {MAX_ITERATIONS} iterations"),
        ));
    }
    if m < x_lo || m > x_hi {
        return Ok(unconverged(
            curve,
            mu,
            sigma,
            cur_rss,
            iterations,
            format!(
                "midpoint {mu:.3e} lies outside the probed range [{:.3e}, {:.3e}]",
                pts[0].p,
                pts[pts.len() - 1].p
            ),
        ));
    }
    Ok(LogisticFit {
        mu,
        sigma,
        delta_a: da,
        a_min,
        a_max: curve.a_max,
        rss: cur_rss,
        converged: true,
        iterations,
        diagnostic: None,
    })
}

fn require_converged(fit: &LogisticFit) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::NotConverged(
            fit.diagnostic
                .clone()
                .unwrap_or_else(|| "fit did not converge".into()),
        ))
    }
}

/// The midpoint noise level of a converged fit.
pub fn midpoint_noise(fit: &LogisticFit) -> Result<f64> {
    require_converged(fit)?;
    Ok(fit.mu)
}

/// Probability at which the fitted accuracy equals `fraction * a_max`.
pub fn noise_at_accuracy_fraction(fit: &LogisticFit, fraction: f64) -> Result<f64> {
    require_converged(fit)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let target = fraction * fit.a_max;
    if target <= fit.a_min {
        return Err(Error::InvalidArgument(format!(
            "target accuracy {target} is not above the chance level {}",
            fit.a_min
        )));
    }
    let x = fit.mu_log10() + fit.sigma * (2.0 * fit.delta_a / (target - fit.a_min) - 1.0).ln();
    Ok(10f64.powf(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(mu: f64, sigma: f64, a_max: f64, k: usize, per_decade: usize) -> AccuracyCurve {
        let a_min = 1.0 / k as f64;
        let da = (a_max - a_min) / 2.0;
        let n = 7 * per_decade;
        let points = (0..=n)
            .map(|i| {
                let x = -8.0 + i as f64 / per_decade as f64;
                CurvePoint {
                    p: 10f64.powf(x),
                    accuracy_mean: logistic(x, mu.log10(), sigma, a_min, da),
                    accuracy_std: 0.0,
                    repetitions: 1,
                }
            })
            .collect();
        AccuracyCurve::new(points, k, a_max).unwrap()
    }

    #[test]
    fn exact_recovery() {
        let fit = fit_logistic(&synthetic(1.25e-6, 0.4, 0.9, 10, 4)).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.mu / 1.25e-6 - 1.0).abs() < 1e-6);
        assert!((fit.sigma - 0.4).abs() < 1e-6);
        assert!(fit.rss < 1e-10);
    }

    #[test]
    fn flat_curve_not_converged() {
        let pts = (0..8)
            .map(|i| CurvePoint {
                p: 10f64.powi(-8 + i),
                accuracy_mean: 0.9,
                accuracy_std: 0.0,
                repetitions: 1,
            })
            .collect();
        let fit = fit_logistic(&AccuracyCurve::new(pts, 10, 0.9).unwrap()).unwrap();
        assert!(!fit.converged);
        assert!(fit.diagnostic.is_some());
        assert!(midpoint_noise(&fit).is_err());
    }

    #[test]
    fn midpoint_is_half_height() {
        let fit = fit_logistic(&synthetic(3e-5, 0.3, 0.85, 10, 3)).unwrap();
        let half = (fit.a_max + fit.a_min) / 2.0;
        assert!((fit.accuracy_at(midpoint_noise(&fit).unwrap()) - half).abs() < 1e-12);
        let p = noise_at_accuracy_fraction(&fit, half / fit.a_max).unwrap();
        assert!((p / fit.mu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fraction_bounds() {
        let fit = fit_logistic(&synthetic(3e-5, 0.3, 0.85, 10, 3)).unwrap();
        assert!(noise_at_accuracy_fraction(&fit, 0.1).is_err());
        assert!(noise_at_accuracy_fraction(&fit, 0.0).is_err());
        assert_eq!(noise_at_accuracy_fraction(&fit, 1.0).unwrap(), 0.0);
        let p99 = noise_at_accuracy_fraction(&fit, 0.99).unwrap();
        let p90 = noise_at_accuracy_fraction(&fit, 0.90).unwrap();
        assert!(p99 < p90 && p90 < fit.mu);
    }

    #[test]
    fn curve_validation() {
        let pt = |p| CurvePoint {
            p,
            accuracy_mean: 0.5,
            accuracy_std: 0.0,
            repetitions: 1,
        };
        assert!(AccuracyCurve::new(vec![pt(1e-3), pt(1e-4)], 10, 0.9).is_err());
        assert!(AccuracyCurve::new(vec![pt(1e-3)], 1, 0.9).is_err());
        assert!(AccuracyCurve::new(vec![pt(1e-3)], 10, 0.3).is_err());
        let curve =
            AccuracyCurve::from_samples(&[(1e-3, 0.5), (1e-4, 0.7), (1e-3, 0.7)], 10, 0.9).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points[1].repetitions, 2);
        assert!((curve.points[1].accuracy_mean - 0.6).abs() < 1e-15);
        assert!((curve.points[1].accuracy_std - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn step_between_grid_points_settles() {
        let s = [
            (1e-6, 0.98),
            (1e-5, 0.98),
            (1e-4, 0.98),
            (1e-3, 0.96),
            (1e-2, 0.6),
            (1e-1, 0.06),
        ];
        let fit = fit_logistic(&AccuracyCurve::from_samples(&s, 10, 0.98).unwrap()).unwrap();
        assert!(fit.converged, "{:?}", fit.diagnostic);
        assert!(fit.mu > 1e-3 && fit.mu < 1e-1);
        assert!((fit.accuracy_at(1e-2) - 0.6).abs() < 1e-3);
    }
}
