//! Experiment configuration files.
//!
//! ```json
//! {
//!   "model": "fixtures/desk_cnn/desk_cnn.json",
//!   "data": "synthetic",
//!   "dtype": "float32",
//!   "grid": {"min": 1e-8, "max": 1e-1, "per_decade": 8},
//!   "repetitions": 5,
//!   "start_bits": [0],
//!   "targets": ["activations"],
//!   "seed": 0,
//!   "output": "results.csv"
//! }
//! ```
//!
//! `grid` may also be an explicit array of probabilities. `data` is a
//! directory of CIFAR-10 binary batches, or `synthetic` / `synthetic:<n>`
//! for the built-in generated test split. Missing keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitnoise::{make_startbit_mask, Targets};
use crate::device::ResistanceDistribution;
use crate::error::{Error, Result};
use crate::tensor::ElementType;

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "RRAM_NOISE_DATA";

/// Default number of synthetic test images.
pub const SYNTHETIC_TEST_SIZE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Explicit(Vec<f64>),
    LogSpaced { min: f64, max: f64, per_decade: u32 },
}

impl Default for Grid {
    fn default() -> Self {
        Grid::LogSpaced {
            min: 1e-8,
            max: 1e-1,
            per_decade: 8,
        }
    }
}

impl Grid {
    /// The probabilities, strictly increasing.
    ///
    /// A log-spaced grid holds `10^(log10(min) + i / per_decade)` up to
    /// `max`, with `max` itself appended when it is not on that lattice.
    pub fn points(&self) -> Result<Vec<f64>> {
        let points = match self {
            Grid::Explicit(v) => v.clone(),
            &Grid::LogSpaced {
                min,
                max,
                per_decade,
            } => {
                if !(min > 0.0 && min < max && max < 1.0) || per_decade == 0 {
                    return Err(Error::Config(format!(
                        "log grid needs 0 < min < max < 1 and per_decade > 0, got {min}..{max} x {per_decade}"
                    )));
                }
                let (lo, hi) = (min.log10(), max.log10());
                let steps = (hi - lo) * per_decade as f64;
                let whole = (steps + 1e-9).floor() as usize;
                let mut v: Vec<f64> = (0..=whole)
                    .map(|i| 10f64.powf(lo + i as f64 / per_decade as f64))
                    .collect();
                if (steps - whole as f64).abs() < 1e-9 {
                    *v.last_mut().expect("non-empty") = max;
                } else {
                    v.push(max);
                }
                v[0] = min;
                v
            }
        };
        if points.is_empty() {
            return Err(Error::Config("probability grid is empty".into()));
        }
        for w in points.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(format!(
                    "grid must increase strictly ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if points.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config(
                "grid probabilities must lie in (0, 1)".into(),
            ));
        }
        Ok(points)
    }
}

/// Lognormal LRS/HRS parameters for the device pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub lrs: ResistanceDistribution,
    pub hrs: ResistanceDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub model: PathBuf,
    /// Dataset directory or `synthetic[:n]`; falls back to `$RRAM_NOISE_DATA`.
    pub data: Option<String>,
    /// Evaluate on the first `n` test images only.
    pub max_samples: Option<usize>,
    pub dtype: ElementType,
    pub grid: Grid,
    pub repetitions: usize,
    pub start_bits: Vec<u32>,
    pub targets: Targets,
    pub seed: u64,
    pub batch_size: usize,
    /// Images used for int8 calibration when the manifest carries none.
    pub calibration_samples: usize,
    pub output: PathBuf,
    pub device: Option<DeviceParams>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model: PathBuf::from("model.json"),
            data: None,
            max_samples: None,
            dtype: ElementType::Float32,
            grid: Grid::default(),
            repetitions: 5,
            start_bits: vec![0],
            targets: Targets::activations(),
            seed: 0,
            batch_size: 100,
            calibration_samples: 500,
            output: PathBuf::from("results.csv"),
            device: None,
        }
    }
}

/// Where test images come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Cifar(PathBuf),
    Synthetic(usize),
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<SweepConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.points()?;
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.start_bits.is_empty() {
            return Err(Error::Config("start_bits is empty".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("targets is empty".into()));
        }
        if self.dtype == ElementType::Uint8 {
            return Err(Error::Config(
                "uint8 inference is not supported; use int8".into(),
            ));
        }
        for &b in &self.start_bits {
            make_startbit_mask(self.dtype, b).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(d) = &self.device {
            d.lrs
                .validate()
                .map_err(|e| Error::Config(format!("lrs: {e}")))?;
            d.hrs
                .validate()
                .map_err(|e| Error::Config(format!("hrs: {e}")))?;
        }
        self.data_source()?;
        Ok(())
    }

    /// The configured dataset, falling back to `$RRAM_NOISE_DATA`.
    pub fn data_source(&self) -> Result<DataSource> {
        let raw = match &self.data {
            Some(d) => d.clone(),
            None => std::env::var(DATA_DIR_ENV)
                .map_err(|_| Error::Config(format!("no dataset: set `data` or ${DATA_DIR_ENV}")))?,
        };
        parse_data_source(&raw)
    }
}

pub fn parse_data_source(raw: &str) -> Result<DataSource> {
    match raw.strip_prefix("synthetic") {
        Some("") => Ok(DataSource::Synthetic(SYNTHETIC_TEST_SIZE)),
        Some(rest) => rest
            .strip_prefix(':')
            .and_then(|n| n.parse().ok())
            .filter(|&n: &usize| n > 0)
            .map(DataSource::Synthetic)
            .ok_or_else(|| Error::Config(format!("bad synthetic dataset size in `{raw}`"))),
        None => Ok(DataSource::Cifar(PathBuf::from(raw))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_eight_per_decade() {
        let g = Grid::default().points().unwrap();
        assert_eq!(g.len(), 57);
        assert_eq!(g[0], 1e-8);
        assert_eq!(*g.last().unwrap(), 1e-1);
        assert!((g[8] / 1e-7 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn off_lattice_maximum_is_appended() {
        let g = Grid::LogSpaced {
            min: 1e-3,
            max: 0.5,
            per_decade: 1,
        }
        .points()
        .unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[3], 0.5);
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg: SweepConfig = serde_json::from_str(
            r#"{"model": "m.json", "data": "synthetic:100", "grid": [1e-4, 1e-3], "targets": ["activations", "weights"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.repetitions, 5);
        assert_eq!(cfg.grid.points().unwrap(), vec![1e-4, 1e-3]);
        assert_eq!(cfg.data_source().unwrap(), DataSource::Synthetic(100));
        cfg.validate().unwrap();
        assert!(serde_json::from_str::<SweepConfig>(r#"{"modle": "x"}"#).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = SweepConfig {
            data: Some("synthetic".into()),
            ..SweepConfig::default()
        };
        let bad = [
            SweepConfig {
                repetitions: 0,
                ..base.clone()
            },
            SweepConfig {
                grid: Grid::Explicit(vec![1e-3, 1e-4]),
                ..base.clone()
            },
            SweepConfig {
                grid: Grid::Explicit(vec![1.0]),
                ..base.clone()
            },
            SweepConfig {
                start_bits: vec![33],
                ..base.clone()
            },
            SweepConfig {
                data: Some("synthetic:x".into()),
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        base.validate().unwrap();
    }
}
