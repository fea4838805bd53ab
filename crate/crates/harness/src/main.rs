use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dualfuel_core::calib::{
    calibrate, generate_dataset, validate, CalibOptions, Dataset, SamplingRanges,
};
use dualfuel_core::engine::{EngineGeometry, ModelCoefficients};
use dualfuel_core::plant::PlantConfig;
use dualfuel_harness::noise::{noise_scenario, run_noise_study};
use dualfuel_harness::runner::{run_scenario, write_records_csv};
use dualfuel_harness::scenario::{appendix_case, ControllerKind, Scenario};
use dualfuel_harness::sensitivity::{run_sensitivity, write_sensitivity_csv, SensitivitySpec};
use dualfuel_harness::{read_coeffs, write_coeffs};

#[derive(Parser)]
#[command(
    name = "dualfuel",
    version,
    about = "Dual-fuel CA50 model calibration and control simulation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for sampling, splitting and measurement noise
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Model coefficient file (flat JSON); defaults to the published set
    #[arg(long, global = true)]
    coeffs: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV; generated from the plant when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// Samples to generate when no dataset is given
    #[arg(long, default_value_t = 1054)]
    samples: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a plant dataset over the calibration ranges
    GenData {
        #[arg(long, default_value_t = 1054)]
        samples: usize,
    },
    /// Fit model coefficients to a dataset
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = CalibOptions::default().max_iters)]
        max_iters: usize,
        #[arg(long, default_value_t = CalibOptions::default().learn_rate)]
        learn_rate: f64,
        #[arg(long, default_value_t = CalibOptions::default().tol)]
        tol: f64,
    },
    /// Prediction error statistics of a coefficient set on a dataset
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run a scenario file
    Simulate { scenario: PathBuf },
    /// Prediction error response to biased inputs
    Sensitivity {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Adaptive loop with CA50 measurement noise
    NoiseStudy {
        /// Half-width of the uniform measurement noise, CAD
        #[arg(long, default_value_t = 0.5)]
        halfwidth: f64,
    },
    /// Write the six appendix cases as scenario files
    ExportCases,
}

fn load_coeffs(common: &Common) -> Result<ModelCoefficients<f64>> {
    match &common.coeffs {
        Some(p) => read_coeffs(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ModelCoefficients::baseline()),
    }
}

fn load_data(args: &DataArgs, seed: u64) -> Result<Dataset> {
    match &args.data {
        Some(p) => Dataset::read_csv(p, EngineGeometry::reference_engine())
            .with_context(|| format!("reading {}", p.display())),
        None => Ok(generate_dataset(
            &SamplingRanges::default(),
            args.samples,
            &PlantConfig::default(),
            seed,
        )?),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let c = &cli.common;
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;

    match &cli.command {
        Command::GenData { samples } => {
            let d = generate_dataset(
                &SamplingRanges::default(),
                *samples,
                &PlantConfig::default(),
                c.seed,
            )?;
            let path = c.out.join("dataset.csv");
            d.write_csv(&path)?;
            println!(
                "{} samples, {} misfires excluded -> {}",
                d.len(),
                d.misfires,
                path.display()
            );
        }
        Command::Calibrate {
            data,
            train_fraction,
            max_iters,
            learn_rate,
            tol,
        } => {
            let d = load_data(data, c.seed)?;
            let (train, holdout) = d.split(*train_fraction, c.seed);
            let opts = CalibOptions {
                max_iters: *max_iters,
                learn_rate: *learn_rate,
                tol: *tol,
                ..CalibOptions::default()
            };
            let cal = calibrate(&load_coeffs(c)?, &train, &opts)?;
            write_coeffs(c.out.join("coeffs.json"), &cal.coeffs)?;
            cal.report.write_csv(c.out.join("calib_report.csv"))?;
            fs::write(c.out.join("calib_summary.txt"), cal.report.summary())?;
            print!("{}", cal.report.summary());
            if !holdout.is_empty() {
                let v = validate(&cal.coeffs, &holdout)?;
                write_json(&c.out.join("holdout.json"), &v)?;
                println!(
                    "holdout ca50 error std/max: {:.4} / {:.4} CAD",
                    v.ca50_err_std, v.ca50_err_max
                );
            }
        }
        Command::Validate { data } => {
            let v = validate(&load_coeffs(c)?, &load_data(data, c.seed)?)?;
            write_json(&c.out.join("validation.json"), &v)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::Simulate { scenario } => {
            let text = fs::read_to_string(scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let mut sc = Scenario::from_json(&text)?;
            sc.plant.rng_seed = c.seed;
            if c.coeffs.is_some() {
                sc.coeffs = Some(load_coeffs(c)?);
            }
            let run = run_scenario(&sc)?;
            write_records_csv(
                BufWriter::new(File::create(c.out.join("records.csv"))?),
                &run.records,
            )?;
            write_json(&c.out.join("summary.json"), &run.summary)?;
            println!("{}", serde_json::to_string_pretty(&run.summary)?);
            if let Some(e) = run.aborted {
                bail!("run aborted after {} cycles: {e}", run.records.len());
            }
        }
        Command::Sensitivity { data } => {
            let rows = run_sensitivity(
                &SensitivitySpec::published(),
                &load_coeffs(c)?,
                &load_data(data, c.seed)?,
            )?;
            write_sensitivity_csv(
                BufWriter::new(File::create(c.out.join("sensitivity.csv"))?),
                &rows,
            )?;
            for r in &rows {
                println!(
                    "{:<14} std {:.4}  max {:.4}",
                    r.label(),
                    r.ca50_err_std,
                    r.ca50_err_max
                );
            }
        }
        Command::NoiseStudy { halfwidth } => {
            let coeffs = c.coeffs.as_ref().map(|_| load_coeffs(c)).transpose()?;
            let (stats, run) = run_noise_study(&noise_scenario(coeffs), *halfwidth, c.seed)?;
            write_records_csv(
                BufWriter::new(File::create(c.out.join("noise.csv"))?),
                &run.records,
            )?;
            write_json(&c.out.join("noise.json"), &stats)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::ExportCases => {
            let coeffs = c.coeffs.as_ref().map(|_| load_coeffs(c)).transpose()?;
            for n in 1..=6 {
                for (kind, tag) in [
                    (ControllerKind::Adaptive, "adaptive"),
                    (ControllerKind::Feedforward, "feedforward"),
                ] {
                    let mut sc = appendix_case(n, kind).expect("cases 1-6 exist");
                    sc.coeffs = coeffs;
                    let path = c.out.join(format!("case{n}_{tag}.json"));
                    fs::write(&path, sc.to_json()? + "\n")?;
                }
            }
            println!("wrote 12 scenarios to {}", c.out.display());
        }
    }
    Ok(())
}
