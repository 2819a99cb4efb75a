use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rram_noise::bitnoise::Targets;
use rram_noise::device::ResistanceDistribution;
use rram_noise::harness::{
    self, output, CurveSummary, DeviceParams, Grid, SweepConfig, SweepOutcome, DATA_DIR_ENV,
};
use rram_noise::tensor::ElementType;
use rram_noise::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rram-noise",
    version,
    about = "Bit-flip write-noise experiments on CNN inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accuracy against flip probability, with a logistic fit per curve.
    Sweep(SweepArgs),
    /// One sweep per mask start bit.
    BitmaskSweep(SweepArgs),
    /// One sweep per storage type.
    DtypeSweep {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Comma-separated storage types.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "float16,bfloat16,float32,float64"
        )]
        dtypes: Vec<ElementType>,
    },
    /// Float model against its int8-quantized counterpart.
    QuantCompare(SweepArgs),
    /// Device threshold and flip probability, then accuracy at that probability.
    Device(SweepArgs),
    /// Re-fit the curves of an existing result CSV.
    Fit {
        csv: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        a_max: Option<f64>,
        /// Where to write the summaries; defaults to `<csv>.summary.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct SweepArgs {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// CIFAR-10 binary directory, or `synthetic[:n]`.
    #[arg(long, env = DATA_DIR_ENV)]
    data: Option<String>,
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long)]
    dtype: Option<ElementType>,
    /// Explicit comma-separated probabilities.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["p_min", "p_max", "per_decade"])]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    per_decade: Option<u32>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    start_bits: Option<Vec<u32>>,
    /// Comma-separated subset of activations, weights, biases.
    #[arg(long)]
    targets: Option<Targets>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    calibration_samples: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Median LRS resistance in ohms.
    #[arg(long, requires_all = ["lrs_sigma", "hrs_median", "hrs_sigma"])]
    lrs_median: Option<f64>,
    #[arg(long)]
    lrs_sigma: Option<f64>,
    #[arg(long)]
    hrs_median: Option<f64>,
    #[arg(long)]
    hrs_sigma: Option<f64>,
}

impl SweepArgs {
    fn resolve(&self) -> Result<SweepConfig> {
        let mut cfg = match &self.config {
            Some(path) => SweepConfig::from_file(path)?,
            None => SweepConfig::default(),
        };
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        // The env-backed flag only fills a missing value.
        if let Some(v) = &self.data {
            if cfg.data.is_none() || std::env::var(DATA_DIR_ENV).ok().as_ref() != Some(v) {
                cfg.data = Some(v.clone());
            }
        }
        if self.max_samples.is_some() {
            cfg.max_samples = self.max_samples;
        }
        if let Some(v) = self.dtype {
            cfg.dtype = v;
        }
        if let Some(v) = &self.grid {
            cfg.grid = Grid::Explicit(v.clone());
        } else if self.p_min.is_some() || self.p_max.is_some() || self.per_decade.is_some() {
            let (min, max, per_decade) = match cfg.grid {
                Grid::LogSpaced {
                    min,
                    max,
                    per_decade,
                } => (min, max, per_decade),
                Grid::Explicit(_) => (1e-8, 1e-1, 8),
            };
            cfg.grid = Grid::LogSpaced {
                min: self.p_min.unwrap_or(min),
                max: self.p_max.unwrap_or(max),
                per_decade: self.per_decade.unwrap_or(per_decade),
            };
        }
        if let Some(v) = self.repetitions {
            cfg.repetitions = v;
        }
        if let Some(v) = &self.start_bits {
            cfg.start_bits = v.clone();
        }
        if let Some(v) = &self.targets {
            cfg.targets = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.calibration_samples {
            cfg.calibration_samples = v;
        }
        if let Some(v) = &self.output {
            cfg.output = v.clone();
        }
        if let (Some(lm), Some(ls), Some(hm), Some(hs)) = (
            self.lrs_median,
            self.lrs_sigma,
            self.hrs_median,
            self.hrs_sigma,
        ) {
            let dist = |m, s| {
                ResistanceDistribution::from_median(m, s).map_err(|e| Error::Config(e.to_string()))
            };
            cfg.device = Some(DeviceParams {
                lrs: dist(lm, ls)?,
                hrs: dist(hm, hs)?,
            });
        }
        Ok(cfg)
    }
}

fn print_summaries(summaries: &[CurveSummary]) {
    println!("dtype     start_bit  a_max   a_min   mu          sigma    p99         converged");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
    for s in summaries {
        println!(
            "{:<9} {:>9}  {:.4}  {:.4}  {:<10}  {:<7}  {:<10}  {}",
            s.dtype.name(),
            s.start_bit,
            s.a_max,
            s.a_min,
            opt(s.mu),
            s.sigma.map_or("-".to_string(), |v| format!("{v:.3}")),
            opt(s.p99),
            s.converged
        );
        if let Some(d) = &s.diagnostic {
            println!("          {d}");
        }
    }
}

fn finish(cfg: &SweepConfig, outcome: &SweepOutcome) -> Result<()> {
    let summary = outcome.write(&cfg.output)?;
    print_summaries(&outcome.summaries);
    eprintln!(
        "wrote {} rows to {} and {}",
        outcome.rows.len(),
        cfg.output.display(),
        summary.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            finish(&cfg, &harness::run_sweep(&cfg)?)?;
        }
        Command::BitmaskSweep(args) => {
            let mut cfg = args.resolve()?;
            if args.start_bits.is_none() && cfg.start_bits == [0] {
                cfg.start_bits = harness::default_bitmask_start_bits(cfg.dtype);
            }
            if args.grid.is_none() && args.p_max.is_none() && cfg.grid == Grid::default() {
                cfg.grid = Grid::LogSpaced {
                    min: 1e-8,
                    max: 0.5,
                    per_decade: 8,
                };
            }
            finish(&cfg, &harness::run_bitmask_sweep(&cfg)?)?;
        }
        Command::DtypeSweep { sweep, dtypes } => {
            let cfg = sweep.resolve()?;
            finish(&cfg, &harness::run_dtype_sweep(&cfg, &dtypes)?)?;
        }
        Command::QuantCompare(args) => {
            let cfg = args.resolve()?;
            let (outcome, cmp) = harness::run_quant_compare(&cfg)?;
            finish(&cfg, &outcome)?;
            let path = cfg.output.with_extension("comparison.json");
            output::write_json(&path, &cmp)?;
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}x"));
            println!(
                "int8 / {}: mu {}, p99 {}",
                cfg.dtype,
                opt(cmp.mu_improvement),
                opt(cmp.p99_improvement)
            );
        }
        Command::Device(args) => {
            let cfg = args.resolve()?;
            let params = cfg.device.ok_or_else(|| {
                Error::Config(
                    "device needs --lrs-median, --lrs-sigma, --hrs-median and --hrs-sigma".into(),
                )
            })?;
            let (r_thresh, p_bf) = harness::device_threshold(&params)
                .map_err(|e| Error::Solver(format!("{e} (device {params:?})")))?;
            println!("r_thresh {r_thresh:.6e} ohm");
            println!("p_bf     {p_bf:.6e}");
            if args.model.is_some() || args.config.is_some() {
                let (rows, report) = harness::run_device_pipeline(&cfg)?;
                output::write_csv(&cfg.output, &rows)?;
                output::write_json(&harness::summary_path(&cfg.output), &report)?;
                println!(
                    "accuracy {:.4} +- {:.4} over {} repetitions (noiseless {:.4})",
                    report.accuracy_mean,
                    report.accuracy_std,
                    report.repetitions,
                    report.baseline_accuracy
                );
            }
        }
        Command::Fit {
            csv,
            num_classes,
            a_max,
            output: out,
        } => {
            let summaries = harness::refit_csv(&csv, num_classes, a_max)?;
            let path = out.unwrap_or_else(|| csv.with_extension("refit.json"));
            output::write_summaries(&path, &summaries)?;
            print_summaries(&summaries);
            if let Some(s) = summaries.iter().find(|s| !s.converged) {
                let why = s.diagnostic.clone().unwrap_or_default();
                return Err(Error::NotConverged(format!(
                    "{} start_bit {}: {why}",
                    s.dtype, s.start_bit
                )));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
