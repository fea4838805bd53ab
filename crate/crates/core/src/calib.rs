//! Dataset generation and batch gradient-descent calibration.
//!
//! The objective is the CA50 RMSE of the closed-form model over a dataset of
//! steady-state plant runs. Gradients are central differences of that same
//! objective, taken in coordinates normalized by the starting coefficient
//! magnitudes. Step lengths follow the Barzilai-Borwein rule and are halved
//! until the RMSE decreases, so the recorded RMSE trace never increases.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{predict_combustion, EngineGeometry, ModelCoefficients, OperatingPoint};
use crate::error::ModelError;
use crate::plant::{fire, PlantConfig};

/// Names of the calibrated coefficients, in parameter-vector order.
pub const PARAMETER_NAMES: [&str; 11] = [
    "c1", "c2", "c3", "c4", "c5", "c6", "c8", "c9", "c10", "c11", "k_c",
];

/// RMSE above which a calibration is declared divergent, CAD.
pub const DIVERGENCE_RMSE: f64 = 1.0e3;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: ModelError,
    },
    #[error("calibration diverged: RMSE {rmse} CAD after {} iterations", report.iterations)]
    Diverged { rmse: f64, report: Box<CalibReport> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = CalibError> = std::result::Result<T, E>;

pub fn to_parameters(c: &ModelCoefficients<f64>) -> [f64; 11] {
    [
        c.c1, c.c2, c.c3, c.c4, c.c5, c.c6, c.c8, c.c9, c.c10, c.c11, c.k_c,
    ]
}

/// Rebuilds coefficients from a parameter vector; the Wiebe shape comes from `template`.
pub fn from_parameters(p: &[f64; 11], template: &ModelCoefficients<f64>) -> ModelCoefficients<f64> {
    ModelCoefficients {
        c1: p[0],
        c2: p[1],
        c3: p[2],
        c4: p[3],
        c5: p[4],
        c6: p[5],
        c8: p[6],
        c9: p[7],
        c10: p[8],
        c11: p[9],
        k_c: p[10],
        ..*template
    }
}

/// Inclusive sampling bounds for each dataset dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub speed: (f64, f64),
    pub t_ivc: (f64, f64),
    pub p_ivc: (f64, f64),
    pub phi_di: (f64, f64),
    pub phi_ng: (f64, f64),
    pub egr: (f64, f64),
    pub soi: (f64, f64),
    pub x_r: (f64, f64),
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            speed: (1200.0, 1500.0),
            t_ivc: (372.56, 408.87),
            p_ivc: (2.85, 4.37),
            phi_di: (0.2, 0.5),
            phi_ng: (0.2, 0.7),
            egr: (0.0, 0.5),
            soi: (-20.0, -10.0),
            x_r: (0.02, 0.05),
        }
    }
}

impl SamplingRanges {
    fn bounds(&self) -> [(f64, f64); 8] {
        [
            self.speed,
            self.t_ivc,
            self.p_ivc,
            self.phi_di,
            self.phi_ng,
            self.egr,
            self.soi,
            self.x_r,
        ]
    }

    fn validate(&self) -> Result<()> {
        for (lo, hi) in self.bounds() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ModelError::invalid(
                    "sampling ranges",
                    format!("bad interval [{lo}, {hi}]"),
                )
                .into());
            }
        }
        if self.speed.0 <= 0.0 || self.p_ivc.0 <= 0.0 || self.t_ivc.0 <= 0.0 || self.phi_di.0 <= 0.0
        {
            return Err(ModelError::invalid("sampling ranges", "non-physical lower bound").into());
        }
        if self.egr.0 < 0.0 || self.egr.1 >= 1.0 || self.x_r.0 < 0.0 || self.x_r.1 >= 1.0 {
            return Err(
                ModelError::invalid("sampling ranges", "fractions must lie in [0, 1)").into(),
            );
        }
        Ok(())
    }
}

/// One steady-state reference run; also the dataset CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibSample {
    pub speed: f64,
    pub t_ivc: f64,
    pub p_ivc: f64,
    pub phi_di: f64,
    pub phi_ng: f64,
    pub egr: f64,
    pub x_r: f64,
    pub soi: f64,
    pub soc_ref: f64,
    pub ca50_ref: f64,
}

impl CalibSample {
    pub fn op(&self) -> OperatingPoint<f64> {
        OperatingPoint {
            speed: self.speed,
            phi_ng: self.phi_ng,
            phi_di: self.phi_di,
            egr: self.egr,
            x_r: self.x_r,
            p_ivc: self.p_ivc,
            t_ivc: self.t_ivc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geom: EngineGeometry<f64>,
    pub samples: Vec<CalibSample>,
    /// Draws excluded because the plant misfired.
    pub misfires: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, geom: EngineGeometry<f64>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let samples = r.deserialize().collect::<Result<Vec<CalibSample>, _>>()?;
        Ok(Self {
            geom,
            samples,
            misfires: 0,
        })
    }

    /// Shuffled split into `(train, holdout)` with `train_fraction` of the samples in train.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train =
            ((self.samples.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
        let pick = |ids: &[usize]| Dataset {
            geom: self.geom,
            samples: ids.iter().map(|&i| self.samples[i]).collect(),
            misfires: 0,
        };
        (pick(&idx[..n_train]), pick(&idx[n_train..]))
    }
}

/// Latin hypercube in the unit cube: each column hits every one of the `n` strata once.
fn latin_hypercube(n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        strata.shuffle(rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            point[d] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    points
}

fn draw_inputs(ranges: &SamplingRanges, n: usize, seed: u64) -> Vec<(OperatingPoint<f64>, f64)> {
    let bounds = ranges.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latin_hypercube(n, bounds.len(), &mut rng)
        .into_iter()
        .map(|u| {
            let v: Vec<f64> = u
                .iter()
                .zip(&bounds)
                .map(|(u, (lo, hi))| lo + u * (hi - lo))
                .collect();
            let op = OperatingPoint {
                speed: v[0],
                t_ivc: v[1],
                p_ivc: v[2],
                phi_di: v[3],
                phi_ng: v[4],
                egr: v[5],
                x_r: v[7],
            };
            (op, v[6])
        })
        .collect()
}

/// Plant reference runs over a Latin hypercube of `ranges`.
pub fn generate_dataset(
    ranges: &SamplingRanges,
    n_samples: usize,
    cfg: &PlantConfig<f64>,
    seed: u64,
) -> Result<Dataset> {
    ranges.validate()?;
    cfg.validate()?;
    if n_samples == 0 {
        return Err(CalibError::EmptyDataset);
    }
    let runs: Vec<_> = draw_inputs(ranges, n_samples, seed)
        .into_par_iter()
        .map(|(op, soi)| fire(&op, soi, cfg).map(|c| (op, soi, c)))
        .collect();
    let mut samples = Vec::with_capacity(n_samples);
    let mut misfires = 0;
    for run in runs {
        match run {
            Ok((op, soi, c)) => samples.push(sample_row(&op, soi, c.soc, c.ca50)),
            Err(ModelError::Misfire { .. }) => misfires += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Dataset {
        geom: cfg.geom,
        samples,
        misfires,
    })
}

/// Reference values from the closed-form model itself.
pub fn generate_model_dataset(
    ranges: &SamplingRanges,
    n_samples: usize,
    coeffs: &ModelCoefficients<f64>,
    geom: &EngineGeometry<f64>,
    seed: u64,
) -> Result<Dataset> {
    ranges.validate()?;
    let samples = draw_inputs(ranges, n_samples, seed)
        .into_iter()
        .enumerate()
        .map(|(index, (op, soi))| {
            predict_combustion(&op, soi, coeffs, geom)
                .map(|p| sample_row(&op, soi, p.soc, p.ca50))
                .map_err(|source| CalibError::Sample { index, source })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        geom: *geom,
        samples,
        misfires: 0,
    })
}

fn sample_row(op: &OperatingPoint<f64>, soi: f64, soc: f64, ca50: f64) -> CalibSample {
    CalibSample {
        speed: op.speed,
        t_ivc: op.t_ivc,
        p_ivc: op.p_ivc,
        phi_di: op.phi_di,
        phi_ng: op.phi_ng,
        egr: op.egr,
        x_r: op.x_r,
        soi,
        soc_ref: soc,
        ca50_ref: ca50,
    }
}

/// Per-sample `(soc_pred − soc_ref, ca50_pred − ca50_ref)`, in dataset order.
pub fn prediction_errors(
    coeffs: &ModelCoefficients<f64>,
    dataset: &Dataset,
) -> Result<Vec<(f64, f64)>> {
    dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            predict_combustion(&s.op(), s.soi, coeffs, &dataset.geom)
                .map(|p| (p.soc - s.soc_ref, p.ca50 - s.ca50_ref))
                .map_err(|source| CalibError::Sample { index, source })
        })
        .collect()
}

/// CA50 root-mean-square prediction error, CAD.
pub fn rmse(coeffs: &ModelCoefficients<f64>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(CalibError::EmptyDataset);
    }
    let errors = prediction_errors(coeffs, dataset)?;
    // sequential sum keeps the result independent of thread scheduling
    let sq: f64 = errors.iter().map(|(_, e)| e * e).sum();
    Ok((sq / errors.len() as f64).sqrt())
}

fn rmse_or_inf(coeffs: &ModelCoefficients<f64>, dataset: &Dataset) -> f64 {
    match rmse(coeffs, dataset) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

/// Central-difference RMSE gradient with per-coefficient step `rel_step·|c|`.
pub fn numeric_gradient(
    coeffs: &ModelCoefficients<f64>,
    dataset: &Dataset,
    rel_step: f64,
) -> Result<[f64; 11]> {
    let p = to_parameters(coeffs);
    let mut g = [0.0; 11];
    for i in 0..p.len() {
        let h = rel_step * p[i].abs().max(f64::MIN_POSITIVE);
        let mut up = p;
        let mut down = p;
        up[i] += h;
        down[i] -= h;
        let f_up = rmse(&from_parameters(&up, coeffs), dataset)?;
        let f_down = rmse(&from_parameters(&down, coeffs), dataset)?;
        g[i] = (f_up - f_down) / (2.0 * h);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibOptions {
    /// Length of the first step in normalized coordinates.
    pub learn_rate: f64,
    pub max_iters: usize,
    /// Stop once the RMSE improves by less than this over `window` iterations, CAD.
    pub tol: f64,
    pub window: usize,
    /// Relative step of the central-difference gradient.
    pub grad_rel_step: f64,
    /// Maximum halvings of a step before the descent is declared stalled.
    pub max_backtracks: usize,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self {
            learn_rate: 1.0e-3,
            max_iters: 2000,
            tol: 1.0e-6,
            window: 10,
            grad_rel_step: 1.0e-6,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIterations,
    Converged,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibReport {
    pub iterations: usize,
    pub final_rmse: f64,
    pub stop: StopReason,
    /// RMSE before the first step and after each accepted step.
    pub rmse_history: Vec<f64>,
    /// Parameter vectors matching `rmse_history`.
    pub coefficient_history: Vec<[f64; 11]>,
    pub soc_err_std: f64,
    pub soc_err_max: f64,
    pub ca50_err_std: f64,
    pub ca50_err_max: f64,
}

impl CalibReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iteration".to_string(), "rmse".to_string()];
        header.extend(PARAMETER_NAMES.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (i, (rmse, p)) in self
            .rmse_history
            .iter()
            .zip(&self.coefficient_history)
            .enumerate()
        {
            let mut row = vec![i.to_string(), rmse.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "iterations: {}", self.iterations);
        let _ = writeln!(s, "stop: {:?}", self.stop);
        let _ = writeln!(
            s,
            "initial rmse: {:.6} CAD",
            self.rmse_history.first().copied().unwrap_or(f64::NAN)
        );
        let _ = writeln!(s, "final rmse: {:.6} CAD", self.final_rmse);
        let _ = writeln!(
            s,
            "soc error std/max: {:.4} / {:.4} CAD",
            self.soc_err_std, self.soc_err_max
        );
        let _ = writeln!(
            s,
            "ca50 error std/max: {:.4} / {:.4} CAD",
            self.ca50_err_std, self.ca50_err_max
        );
        if let Some(p) = self.coefficient_history.last() {
            for (name, v) in PARAMETER_NAMES.iter().zip(p) {
                let _ = writeln!(s, "{name} = {v:.6e}");
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub coeffs: ModelCoefficients<f64>,
    pub report: CalibReport,
}

/// Batch gradient descent on the CA50 RMSE starting from `initial`.
pub fn calibrate(
    initial: &ModelCoefficients<f64>,
    dataset: &Dataset,
    options: &CalibOptions,
) -> Result<Calibration> {
    initial.validate()?;
    let p0 = to_parameters(initial);
    let scale: [f64; 11] = p0.map(|v| if v != 0.0 { v } else { 1.0 });
    let to_coeffs = |z: &[f64; 11]| {
        let mut p = [0.0; 11];
        for i in 0..11 {
            p[i] = z[i] * scale[i];
        }
        from_parameters(&p, initial)
    };
    let grad_z = |c: &ModelCoefficients<f64>| -> Result<[f64; 11]> {
        let g = numeric_gradient(c, dataset, options.grad_rel_step)?;
        let mut out = [0.0; 11];
        for i in 0..11 {
            out[i] = g[i] * scale[i];
        }
        Ok(out)
    };

    let mut z = [1.0; 11];
    let mut coeffs = *initial;
    let mut f = rmse(&coeffs, dataset)?;
    let mut rmse_history = vec![f];
    let mut coefficient_history = vec![p0];
    let finish =
        |coeffs: ModelCoefficients<f64>, iterations, stop, rmse_history, coefficient_history| {
            let report = build_report(
                &coeffs,
                dataset,
                iterations,
                stop,
                rmse_history,
                coefficient_history,
            )?;
            Ok::<_, CalibError>(Calibration { coeffs, report })
        };
    if !f.is_finite() || f > DIVERGENCE_RMSE {
        let report = build_report(
            &coeffs,
            dataset,
            0,
            StopReason::Stalled,
            rmse_history,
            coefficient_history,
        )
        .unwrap_or_else(|_| empty_report(f));
        return Err(CalibError::Diverged {
            rmse: f,
            report: Box::new(report),
        });
    }
    if options.max_iters == 0 {
        return finish(
            coeffs,
            0,
            StopReason::MaxIterations,
            rmse_history,
            coefficient_history,
        );
    }

    let mut g = grad_z(&coeffs)?;
    let gnorm = norm(&g);
    if gnorm == 0.0 {
        return finish(
            coeffs,
            0,
            StopReason::Converged,
            rmse_history,
            coefficient_history,
        );
    }
    let mut step = options.learn_rate / gnorm;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < options.max_iters {
        let mut accepted = None;
        for _ in 0..=options.max_backtracks {
            let mut trial = z;
            for i in 0..11 {
                trial[i] -= step * g[i];
            }
            let c = to_coeffs(&trial);
            let ft = if c.validate().is_ok() {
                rmse_or_inf(&c, dataset)
            } else {
                f64::INFINITY
            };
            if ft < f {
                accepted = Some((trial, c, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((z_new, c_new, f_new)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        let g_new = grad_z(&c_new)?;
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..11 {
            let s = z_new[i] - z[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        // Barzilai-Borwein; fall back to growing the last step on negative curvature
        step = if sy > 0.0 { ss / sy } else { step * 2.0 };

        z = z_new;
        coeffs = c_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        rmse_history.push(f);
        coefficient_history.push(to_parameters(&coeffs));

        let w = options.window.max(1);
        if rmse_history.len() > w {
            let earlier = rmse_history[rmse_history.len() - 1 - w];
            if earlier - f < options.tol {
                stop = StopReason::Converged;
                break;
            }
        }
    }
    finish(coeffs, iterations, stop, rmse_history, coefficient_history)
}

fn norm(v: &[f64; 11]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn empty_report(rmse: f64) -> CalibReport {
    CalibReport {
        iterations: 0,
        final_rmse: rmse,
        stop: StopReason::Stalled,
        rmse_history: vec![rmse],
        coefficient_history: Vec::new(),
        soc_err_std: f64::NAN,
        soc_err_max: f64::NAN,
        ca50_err_std: f64::NAN,
        ca50_err_max: f64::NAN,
    }
}

fn build_report(
    coeffs: &ModelCoefficients<f64>,
    dataset: &Dataset,
    iterations: usize,
    stop: StopReason,
    rmse_history: Vec<f64>,
    coefficient_history: Vec<[f64; 11]>,
) -> Result<CalibReport> {
    let v = validate(coeffs, dataset)?;
    Ok(CalibReport {
        iterations,
        final_rmse: *rmse_history
            .last()
            .expect("history starts with the initial RMSE"),
        stop,
        rmse_history,
        coefficient_history,
        soc_err_std: v.soc_err_std,
        soc_err_max: v.soc_err_max,
        ca50_err_std: v.ca50_err_std,
        ca50_err_max: v.ca50_err_max,
    })
}

/// Prediction error statistics over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationStats {
    pub n: usize,
    pub soc_err_mean: f64,
    pub soc_err_std: f64,
    pub soc_err_max: f64,
    pub ca50_err_mean: f64,
    pub ca50_err_std: f64,
    pub ca50_err_max: f64,
    /// Fraction of samples with |SOC error| ≤ 1 CAD.
    pub soc_within_1cad: f64,
    pub ca50_within_1cad: f64,
}

/// Population mean, standard deviation and maximum magnitude of `errors`.
pub fn error_stats(errors: impl IntoIterator<Item = f64>) -> (f64, f64, f64) {
    let errors: Vec<f64> = errors.into_iter().collect();
    if errors.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let max = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    (mean, var.sqrt(), max)
}

pub fn validate(coeffs: &ModelCoefficients<f64>, holdout: &Dataset) -> Result<ValidationStats> {
    let errors = prediction_errors(coeffs, holdout)?;
    let (soc_err_mean, soc_err_std, soc_err_max) = error_stats(errors.iter().map(|e| e.0));
    let (ca50_err_mean, ca50_err_std, ca50_err_max) = error_stats(errors.iter().map(|e| e.1));
    let frac = |f: &dyn Fn(&(f64, f64)) -> f64| {
        if errors.is_empty() {
            0.0
        } else {
            errors.iter().filter(|e| f(e).abs() <= 1.0).count() as f64 / errors.len() as f64
        }
    };
    Ok(ValidationStats {
        n: errors.len(),
        soc_err_mean,
        soc_err_std,
        soc_err_max,
        ca50_err_mean,
        ca50_err_std,
        ca50_err_max,
        soc_within_1cad: frac(&|e| e.0),
        ca50_within_1cad: frac(&|e| e.1),
    })
}
