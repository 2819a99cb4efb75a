//! Cycle-to-cycle write variability of a resistive memory cell.
//!
//! Written resistances of the low- and high-resistive states follow lognormal
//! distributions. The read threshold is placed where both misread
//! probabilities are equal,
//!
//! ```text
//! 1 - CDF_LRS(R_thresh) = CDF_HRS(R_thresh) = p_bf
//! ```
//!
//! and that common value is the bit-flip probability of one write.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal CDF via `erfc`, accurate in relative terms deep into both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Lognormal resistance distribution in ohms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceDistribution {
    /// Natural log of the median resistance.
    pub log_median: f64,
    /// Lognormal shape parameter.
    pub log_sigma: f64,
}

impl ResistanceDistribution {
    pub fn new(log_median: f64, log_sigma: f64) -> Result<Self> {
        let d = ResistanceDistribution {
            log_median,
            log_sigma,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn from_median(median_ohms: f64, log_sigma: f64) -> Result<Self> {
        if !(median_ohms > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "median resistance must be positive, got {median_ohms}"
            )));
        }
        Self::new(median_ohms.ln(), log_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.log_median.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "log median {} is not finite",
                self.log_median
            )));
        }
        if !(self.log_sigma > 0.0 && self.log_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "log sigma must be positive, got {}",
                self.log_sigma
            )));
        }
        Ok(())
    }

    pub fn median(&self) -> f64 {
        self.log_median.exp()
    }

    /// CDF at `ln r`, for callers already working in log space.
    fn cdf_ln(&self, ln_r: f64) -> f64 {
        normal_cdf((ln_r - self.log_median) / self.log_sigma)
    }

    /// Survival function `1 - CDF` at `ln r`, computed without cancellation.
    fn sf_ln(&self, ln_r: f64) -> f64 {
        normal_cdf((self.log_median - ln_r) / self.log_sigma)
    }
}

pub fn lognormal_cdf(r: f64, d: &ResistanceDistribution) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "resistance must be positive, got {r}"
        )));
    }
    d.validate()?;
    if r.is_infinite() {
        return Ok(1.0);
    }
    Ok(d.cdf_ln(r.ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub lrs: ResistanceDistribution,
    pub hrs: ResistanceDistribution,
    /// Equal-error read threshold in ohms.
    pub r_thresh: f64,
    /// Bit-flip probability of one write.
    pub p_bf: f64,
    /// Median-to-median distance between HRS and LRS, in ohms.
    pub resistance_window: f64,
}

impl DeviceModel {
    pub fn new(lrs: ResistanceDistribution, hrs: ResistanceDistribution) -> Result<Self> {
        let (r_thresh, p_bf) = solve_threshold(&lrs, &hrs)?;
        Ok(DeviceModel {
            lrs,
            hrs,
            r_thresh,
            p_bf,
            resistance_window: hrs.median() - lrs.median(),
        })
    }
}

/// Finds the equal-error threshold resistance and the resulting flip probability.
///
/// Bisects `g(y) = CDF_HRS(e^y) - (1 - CDF_LRS(e^y))` on `y = ln R`, which is
/// strictly increasing, starting from `[m_L - 10 s_L, m_H + 10 s_H]`.
pub fn solve_threshold(
    lrs: &ResistanceDistribution,
    hrs: &ResistanceDistribution,
) -> Result<(f64, f64)> {
    lrs.validate()?;
    hrs.validate()?;
    if !(hrs.log_median > lrs.log_median) {
        return Err(Error::InvalidArgument(format!(
            "HRS median ({:e} ohm) must exceed LRS median ({:e} ohm)",
            hrs.median(),
            lrs.median()
        )));
    }
    let g = |y: f64| hrs.cdf_ln(y) - lrs.sf_ln(y);

    let mut lo = lrs.log_median - 10.0 * lrs.log_sigma;
    let mut hi = hrs.log_median + 10.0 * hrs.log_sigma;
    let mut expansions = 0;
    while !(g(lo) <= 0.0 && g(hi) >= 0.0) {
        if expansions == 8 {
            return Err(Error::Solver(format!(
                "no sign change of the threshold equation in [{:e}, {:e}] ohm \
                 (lrs: median {:e}, sigma {}; hrs: median {:e}, sigma {})",
                lo.exp(),
                hi.exp(),
                lrs.median(),
                lrs.log_sigma,
                hrs.median(),
                hrs.log_sigma
            )));
        }
        let width = hi - lo;
        lo -= width;
        hi += width;
        expansions += 1;
    }

    // Halve until the bracket stops shrinking in floating point.
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = if g(hi).abs() < g(lo).abs() { hi } else { lo };
    let residual = g(y);
    if residual.abs() > 1e-12 {
        return Err(Error::Solver(format!(
            "threshold residual {residual:e} above 1e-12 at {:e} ohm",
            y.exp()
        )));
    }
    Ok((y.exp(), hrs.cdf_ln(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from a 50-digit evaluation of the normal CDF.
    const PHI_1: f64 = 0.841_344_746_068_542_9;
    const PHI_M2: f64 = 0.022_750_131_948_179_21;
    const PHI_M6: f64 = 9.865_876_450_376_982e-10;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(1.0) - PHI_1).abs() < 1e-15);
        assert!((normal_cdf(-2.0) / PHI_M2 - 1.0).abs() < 1e-14);
        assert!((normal_cdf(-6.0) / PHI_M6 - 1.0).abs() < 1e-14);
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn lognormal_cdf_examples() {
        let d = ResistanceDistribution::new(1e5f64.ln(), 1.0).unwrap();
        assert!((lognormal_cdf(1e5, &d).unwrap() - 0.5).abs() < 1e-15);
        assert!((lognormal_cdf(std::f64::consts::E * 1e5, &d).unwrap() - PHI_1).abs() < 1e-14);
        assert!(lognormal_cdf(1e-300, &d).unwrap() < 1e-100);
        assert_eq!(lognormal_cdf(f64::INFINITY, &d).unwrap(), 1.0);
        assert!(lognormal_cdf(0.0, &d).is_err());
        assert!(lognormal_cdf(-1.0, &d).is_err());
    }

    #[test]
    fn equal_shapes_threshold() {
        let s = 10f64.ln() / 2.0;
        let lrs = ResistanceDistribution::new(1e4f64.ln(), s).unwrap();
        let hrs = ResistanceDistribution::new(1e6f64.ln(), s).unwrap();
        let (r, p) = solve_threshold(&lrs, &hrs).unwrap();
        assert!((r / 1e5 - 1.0).abs() < 1e-10);
        assert!((p - PHI_M2).abs() < 1e-12);
        let dev = DeviceModel::new(lrs, hrs).unwrap();
        assert!((dev.resistance_window - (1e6 - 1e4)).abs() < 1e-6);
    }

    #[test]
    fn near_identical_distributions_approach_half() {
        let lrs = ResistanceDistribution::new(10.0, 0.5).unwrap();
        let mut last = 0.0;
        for eps in [1e-1, 1e-2, 1e-4, 1e-8] {
            let hrs = ResistanceDistribution::new(10.0 + eps, 0.5).unwrap();
            let (_, p) = solve_threshold(&lrs, &hrs).unwrap();
            assert!(p > last && p < 0.5);
            last = p;
        }
        assert!((0.5 - last) < 1e-7);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ResistanceDistribution::new(1.0, 0.0).is_err());
        assert!(ResistanceDistribution::new(f64::NAN, 1.0).is_err());
        assert!(ResistanceDistribution::from_median(-5.0, 1.0).is_err());
        let a = ResistanceDistribution::new(12.0, 1.0).unwrap();
        let b = ResistanceDistribution::new(10.0, 1.0).unwrap();
        assert!(solve_threshold(&a, &b).is_err());
        assert!(solve_threshold(&a, &a).is_err());
    }

    #[test]
    fn widely_separated_tail() {
        let lrs = ResistanceDistribution::from_median(1e3, 0.1).unwrap();
        let hrs = ResistanceDistribution::from_median(1e6, 0.1).unwrap();
        let (r, p) = solve_threshold(&lrs, &hrs).unwrap();
        assert!(p < 1e-12 && p > 0.0);
        assert!((r / (1e3f64 * 1e6).sqrt() - 1.0).abs() < 1e-12);
    }
}
