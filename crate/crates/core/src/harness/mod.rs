//! Experiment orchestration: probability sweeps, bitmask and dtype sweeps,
//! int8-vs-float comparisons and the device-to-probability pipeline.
//!
//! Every (probability, repetition) pair is evaluated with its own stream
//! derived from `(seed, start_bit, p, repetition)`, so results do not depend
//! on scheduling and rows come out in grid order.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, AccuracyCurve, LogisticFit};
use crate::bitnoise::{make_startbit_mask, NoiseSpec};
use crate::device::{self, DeviceModel};
use crate::error::{Error, Result};
use crate::nn::cifar::{self, read_batch_file};
use crate::nn::manifest::{load_manifest_and_network, Manifest};
use crate::nn::{Classifier, LabeledDataset, Network};
use crate::quant::{Calibration, QuantizedNetwork};
use crate::rng::RngStream;
use crate::synth;
use crate::tensor::ElementType;

pub use config::{DataSource, DeviceParams, Grid, SweepConfig, DATA_DIR_ENV};
pub use output::{read_csv, write_csv, write_summaries, SweepRow};

/// Fraction of peak accuracy used for the reported tolerable noise level.
pub const P99_FRACTION: f64 = 0.99;

/// Process exit code for an error: 1 configuration, 2 data or model
/// loading, 3 fit not converged.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Load { .. }
        | Error::Io { .. }
        | Error::ShapeMismatch { .. }
        | Error::DtypeMismatch { .. } => 2,
        Error::NotConverged(_) => 3,
        _ => 1,
    }
}

/// A loaded model with its evaluation and calibration data.
#[derive(Debug, Clone)]
pub struct Workload {
    pub manifest: Manifest,
    pub network: Network,
    pub data: LabeledDataset,
    calibration_data: Option<LabeledDataset>,
}

impl Workload {
    pub fn load(cfg: &SweepConfig) -> Result<Workload> {
        cfg.validate()?;
        let (manifest, network) = load_manifest_and_network(&cfg.model)?;
        let norm = &network.normalization;
        let (mut data, calibration_data) = match cfg.data_source()? {
            DataSource::Synthetic(n) => {
                let calib = synth::calibration_set(norm, cfg.calibration_samples.max(1))?;
                (synth::test_set(norm, n)?, Some(calib))
            }
            DataSource::Cifar(dir) => {
                let data = cifar::load_cifar10(&dir, norm)?;
                let calib = ["calib_batch.bin", "data_batch_1.bin"]
                    .iter()
                    .map(|f| dir.join(f))
                    .find(|p| p.exists())
                    .map(|p| read_batch_file(&p, norm))
                    .transpose()?
                    .map(|d| d.take(cfg.calibration_samples.max(1)));
                (data, calib)
            }
        };
        if let Some(n) = cfg.max_samples {
            data = data.take(n);
        }
        if data.num_classes != network.num_classes {
            return Err(Error::load(
                &cfg.model,
                format!(
                    "model has {} classes, dataset has {}",
                    network.num_classes, data.num_classes
                ),
            ));
        }
        Ok(Workload {
            manifest,
            network,
            data,
            calibration_data,
        })
    }

    pub fn from_parts(
        manifest: Manifest,
        network: Network,
        data: LabeledDataset,
        calibration: Option<LabeledDataset>,
    ) -> Workload {
        Workload {
            manifest,
            network,
            data,
            calibration_data: calibration,
        }
    }

    /// The int8 calibration: from the manifest if present, else min/max over
    /// the calibration images.
    pub fn int8_calibration(&self, batch_size: usize) -> Result<Calibration> {
        if let Some(cal) = &self.manifest.quant {
            return Ok(cal.clone());
        }
        let calib = self.calibration_data.as_ref().unwrap_or(&self.data);
        crate::quant::calibrate(&self.network, calib, batch_size)
    }

    /// The model evaluated for `dtype`: a float network or the int8 one.
    pub fn classifier(&self, dtype: ElementType, batch_size: usize) -> Result<Box<dyn Classifier>> {
        match dtype {
            ElementType::Int8 => Ok(Box::new(QuantizedNetwork::new(
                &self.network,
                self.int8_calibration(batch_size)?,
            )?)),
            d if d.is_float() => Ok(Box::new(self.network.with_dtype(d)?)),
            d => Err(Error::Config(format!("no inference path for {d}"))),
        }
    }
}

/// Fit results for one (dtype, start bit) curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub a_max: f64,
    pub a_min: f64,
    pub p99: Option<f64>,
    pub converged: bool,
    /// Noisy exponent bits written per inference of one sample.
    pub noisy_exponent_bits_total: u64,
    pub dtype: ElementType,
    pub start_bit: u32,
    /// Abscissa of the logistic fit.
    pub fit_space: String,
    pub diagnostic: Option<String>,
    pub curve: AccuracyCurve,
    pub config: SweepConfig,
}

impl CurveSummary {
    pub fn from_fit(
        fit: &LogisticFit,
        curve: AccuracyCurve,
        dtype: ElementType,
        start_bit: u32,
        noisy_exponent_bits_total: u64,
        config: SweepConfig,
    ) -> CurveSummary {
        let ok = |v: f64| (fit.converged && v.is_finite()).then_some(v);
        CurveSummary {
            mu: ok(fit.mu),
            sigma: ok(fit.sigma),
            a_max: fit.a_max,
            a_min: fit.a_min,
            p99: analysis::noise_at_accuracy_fraction(fit, P99_FRACTION).ok(),
            converged: fit.converged,
            noisy_exponent_bits_total,
            dtype,
            start_bit,
            fit_space: "log10(p)".into(),
            diagnostic: fit.diagnostic.clone(),
            curve,
            config,
        }
    }
}

/// Rows and per-curve summaries of one run.
#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<CurveSummary>,
}

impl SweepOutcome {
    pub fn extend(&mut self, other: SweepOutcome) {
        self.rows.extend(other.rows);
        self.summaries.extend(other.summaries);
    }

    /// Writes the CSV to `path` and the summaries to `<path>.summary.json`.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        write_csv(path, &self.rows)?;
        let summary = summary_path(path);
        write_summaries(&summary, &self.summaries)?;
        Ok(summary)
    }
}

/// `results.csv` -> `results.summary.json`.
pub fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("summary.json")
}

/// Stream for one (start bit, probability, repetition) evaluation.
pub fn point_stream(seed: u64, start_bit: u32, p: f64, repetition: usize) -> RngStream {
    RngStream::new(seed).derive_path(&[start_bit as u64, p.to_bits(), repetition as u64])
}

/// Accuracy at every (p, repetition) pair, in grid order.
pub fn evaluate_grid(
    model: &dyn Classifier,
    data: &LabeledDataset,
    cfg: &SweepConfig,
    dtype: ElementType,
    start_bit: u32,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    let pairs: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|&p| (0..cfg.repetitions).map(move |r| (p, r)))
        .collect();
    let targets = cfg.targets.to_string();
    pairs
        .par_iter()
        .map(|&(p, rep)| {
            let spec = NoiseSpec::symmetric(p)
                .with_start_bit(start_bit)
                .with_targets(cfg.targets.clone())
                .with_seed(cfg.seed);
            let t = Instant::now();
            let accuracy = model.evaluate(
                data,
                Some(&spec),
                &point_stream(cfg.seed, start_bit, p, rep),
                cfg.batch_size,
            )?;
            Ok(SweepRow {
                p,
                repetition: rep,
                accuracy,
                dtype: dtype.to_string(),
                start_bit,
                targets: targets.clone(),
                seed: cfg.seed,
                wall_time_ms: t.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

/// Noiseless accuracy.
pub fn baseline(model: &dyn Classifier, data: &LabeledDataset, cfg: &SweepConfig) -> Result<f64> {
    model.evaluate(data, None, &RngStream::new(cfg.seed), cfg.batch_size)
}

/// Fits the logistic model to rows of a single curve.
pub fn summarize(
    rows: &[SweepRow],
    num_classes: usize,
    a_max: f64,
    noisy_exponent_bits_total: u64,
    dtype: ElementType,
    start_bit: u32,
    cfg: &SweepConfig,
) -> Result<CurveSummary> {
    let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.p, r.accuracy)).collect();
    let curve = AccuracyCurve::from_samples(&samples, num_classes, a_max)?;
    let fit = if curve.points.len() >= 4
        && curve.points[curve.points.len() - 1].p.log10() - curve.points[0].p.log10() >= 1.0
    {
        analysis::fit_logistic(&curve)?
    } else {
        LogisticFit {
            mu: f64::NAN,
            sigma: f64::NAN,
            delta_a: curve.delta_a(),
            a_min: curve.a_min(),
            a_max,
            rss: f64::NAN,
            converged: false,
            iterations: 0,
            diagnostic: Some("too few probabilities to fit (need 4 spanning a decade)".into()),
        }
    };
    Ok(CurveSummary::from_fit(
        &fit,
        curve,
        dtype,
        start_bit,
        noisy_exponent_bits_total,
        cfg.clone(),
    ))
}

/// One curve per configured start bit for `dtype`.
pub fn sweep_curves(
    work: &Workload,
    cfg: &SweepConfig,
    dtype: ElementType,
) -> Result<SweepOutcome> {
    let model = work.classifier(dtype, cfg.batch_size)?;
    sweep_model(model.as_ref(), &work.data, cfg, dtype)
}

/// Like [`sweep_curves`] for an already built model.
pub fn sweep_model(
    model: &dyn Classifier,
    data: &LabeledDataset,
    cfg: &SweepConfig,
    dtype: ElementType,
) -> Result<SweepOutcome> {
    let grid = match &cfg.device {
        Some(d) => vec![DeviceModel::new(d.lrs, d.hrs)?.p_bf],
        None => cfg.grid.points()?,
    };
    let a_max = baseline(model, data, cfg)?;
    let mut out = SweepOutcome::default();
    for &start_bit in &cfg.start_bits {
        let mask =
            make_startbit_mask(dtype, start_bit).map_err(|e| Error::Config(e.to_string()))?;
        let rows = evaluate_grid(model, data, cfg, dtype, start_bit, &grid)?;
        let bits =
            model.activation_elements_per_sample() as u64 * mask.noisy_exponent_bits() as u64;
        let s = summarize(
            &rows,
            model.num_classes(),
            a_max,
            bits,
            dtype,
            start_bit,
            cfg,
        )?;
        out.rows.extend(rows);
        out.summaries.push(s);
    }
    Ok(out)
}

/// Sweep at the configured dtype and start bits.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    let work = Workload::load(cfg)?;
    sweep_curves(&work, cfg, cfg.dtype)
}

/// Default start bits for a bitmask sweep: every position from the sign bit
/// through the first mantissa bit.
pub fn default_bitmask_start_bits(dtype: ElementType) -> Vec<u32> {
    if dtype.is_float() {
        (0..=dtype.exponent_bits() + 1).collect()
    } else {
        (0..dtype.bit_width()).collect()
    }
}

pub fn run_bitmask_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    run_sweep(cfg)
}

/// One sweep per dtype over the same model and data.
pub fn run_dtype_sweep(cfg: &SweepConfig, dtypes: &[ElementType]) -> Result<SweepOutcome> {
    let work = Workload::load(cfg)?;
    let mut out = SweepOutcome::default();
    for &dtype in dtypes {
        let cfg = SweepConfig {
            dtype,
            ..cfg.clone()
        };
        cfg.validate()?;
        out.extend(sweep_curves(&work, &cfg, dtype)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantComparison {
    pub float: CurveSummary,
    pub int8: CurveSummary,
    /// `mu(int8) / mu(float)` when both fits converged.
    pub mu_improvement: Option<f64>,
    pub p99_improvement: Option<f64>,
}

impl QuantComparison {
    pub fn new(float: CurveSummary, int8: CurveSummary) -> QuantComparison {
        let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        QuantComparison {
            mu_improvement: ratio(int8.mu, float.mu),
            p99_improvement: ratio(int8.p99, float.p99),
            float,
            int8,
        }
    }
}

/// The configured float dtype against the int8-quantized model.
pub fn run_quant_compare(cfg: &SweepConfig) -> Result<(SweepOutcome, QuantComparison)> {
    if !cfg.dtype.is_float() {
        return Err(Error::Config(format!(
            "quant-compare needs a float reference dtype, got {}",
            cfg.dtype
        )));
    }
    let work = Workload::load(cfg)?;
    let cfg = SweepConfig {
        start_bits: vec![cfg.start_bits[0]],
        ..cfg.clone()
    };
    let float = sweep_curves(&work, &cfg, cfg.dtype)?;
    let int_cfg = SweepConfig {
        dtype: ElementType::Int8,
        ..cfg.clone()
    };
    int_cfg.validate()?;
    let int8 = sweep_curves(&work, &int_cfg, ElementType::Int8)?;
    let cmp = QuantComparison::new(float.summaries[0].clone(), int8.summaries[0].clone());
    let mut out = float;
    out.extend(int8);
    Ok((out, cmp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub device: DeviceParams,
    pub r_thresh: f64,
    pub p_bf: f64,
    pub resistance_window: f64,
    pub baseline_accuracy: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub repetitions: usize,
    pub dtype: ElementType,
    pub config: SweepConfig,
}

/// Solves the threshold for the configured device and evaluates the model
/// at `p_set = p_clear = p_bf`.
pub fn run_device_pipeline(cfg: &SweepConfig) -> Result<(Vec<SweepRow>, DeviceReport)> {
    let params = cfg
        .device
        .ok_or_else(|| Error::Config("the device pipeline needs `device` parameters".into()))?;
    let model = DeviceModel::new(params.lrs, params.hrs).map_err(|e| {
        Error::Solver(format!(
            "{e} (lrs = {:?}, hrs = {:?})",
            params.lrs, params.hrs
        ))
    })?;
    let work = Workload::load(cfg)?;
    let net = work.classifier(cfg.dtype, cfg.batch_size)?;
    let base = baseline(net.as_ref(), &work.data, cfg)?;
    let start_bit = cfg.start_bits[0];
    let rows = evaluate_grid(
        net.as_ref(),
        &work.data,
        cfg,
        cfg.dtype,
        start_bit,
        &[model.p_bf],
    )?;
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.accuracy).sum::<f64>() / n;
    let std = if rows.len() > 1 {
        (rows
            .iter()
            .map(|r| (r.accuracy - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0))
            .sqrt()
    } else {
        0.0
    };
    let report = DeviceReport {
        device: params,
        r_thresh: model.r_thresh,
        p_bf: model.p_bf,
        resistance_window: model.resistance_window,
        baseline_accuracy: base,
        accuracy_mean: mean,
        accuracy_std: std,
        repetitions: rows.len(),
        dtype: cfg.dtype,
        config: cfg.clone(),
    };
    Ok((rows, report))
}

/// Solves only the device threshold.
pub fn device_threshold(params: &DeviceParams) -> Result<(f64, f64)> {
    device::solve_threshold(&params.lrs, &params.hrs)
}

/// Re-fits the curves of an existing CSV.
///
/// `a_max` and `num_classes` come from the matching summary file when it
/// exists; explicit values override it. Without either, `a_max` is the mean
/// accuracy at the lowest probability of each curve.
pub fn refit_csv(
    path: &Path,
    num_classes: Option<usize>,
    a_max: Option<f64>,
) -> Result<Vec<CurveSummary>> {
    let rows = read_csv(path)?;
    if rows.is_empty() {
        return Err(Error::load(path, "no rows"));
    }
    let previous: Vec<CurveSummary> =
        output::read_summaries(&summary_path(path)).unwrap_or_default();
    let mut keys: Vec<(String, u32)> = rows
        .iter()
        .map(|r| (r.dtype.clone(), r.start_bit))
        .collect();
    keys.dedup();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (dtype_name, start_bit) in keys {
        let dtype: ElementType = dtype_name
            .parse()
            .map_err(|e: Error| Error::load(path, e.to_string()))?;
        let curve_rows: Vec<SweepRow> = rows
            .iter()
            .filter(|r| r.dtype == dtype_name && r.start_bit == start_bit)
            .cloned()
            .collect();
        let prev = previous
            .iter()
            .find(|s| s.dtype == dtype && s.start_bit == start_bit);
        let k = num_classes
            .or(prev.map(|s| s.curve.num_classes))
            .unwrap_or(cifar::NUM_CLASSES);
        let lowest = curve_rows.iter().map(|r| r.p).fold(f64::INFINITY, f64::min);
        let fallback = {
            let at: Vec<f64> = curve_rows
                .iter()
                .filter(|r| r.p == lowest)
                .map(|r| r.accuracy)
                .collect();
            at.iter().sum::<f64>() / at.len() as f64
        };
        let a = a_max.or(prev.map(|s| s.a_max)).unwrap_or(fallback);
        let cfg = prev.map(|s| s.config.clone()).unwrap_or_default();
        let bits = prev.map_or(0, |s| s.noisy_exponent_bits_total);
        out.push(summarize(&curve_rows, k, a, bits, dtype, start_bit, &cfg)?);
    }
    Ok(out)
}
