//! Prediction-error response to biased model inputs, one quantity at a time.

use dualfuel_core::calib::{error_stats, CalibError, Dataset};
use dualfuel_core::engine::{predict_ca50, ModelCoefficients, OperatingPoint};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    PIvc,
    TIvc,
    Egr,
    PhiDi,
    PhiNg,
    XR,
}

impl Quantity {
    /// Equivalence ratios are perturbed relatively, everything else absolutely.
    pub fn is_relative(self) -> bool {
        matches!(self, Quantity::PhiDi | Quantity::PhiNg)
    }

    pub fn label(self) -> &'static str {
        match self {
            Quantity::PIvc => "p_ivc",
            Quantity::TIvc => "t_ivc",
            Quantity::Egr => "egr",
            Quantity::PhiDi => "phi_di",
            Quantity::PhiNg => "phi_ng",
            Quantity::XR => "x_r",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub quantity: Quantity,
    /// bar, K or fraction for absolute quantities; fraction of the value for relative ones.
    pub delta: f64,
}

impl Perturbation {
    pub fn apply(&self, op: &OperatingPoint<f64>) -> OperatingPoint<f64> {
        let mut p = *op;
        let d = self.delta;
        match self.quantity {
            Quantity::PIvc => p.p_ivc += d,
            Quantity::TIvc => p.t_ivc += d,
            Quantity::Egr => p.egr = (p.egr + d).max(0.0),
            Quantity::PhiDi => p.phi_di *= 1.0 + d,
            Quantity::PhiNg => p.phi_ng *= 1.0 + d,
            Quantity::XR => p.x_r = (p.x_r + d).max(0.0),
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub perturbations: Vec<Perturbation>,
}

impl SensitivitySpec {
    /// The published perturbation set, each delta with both signs.
    pub fn published() -> Self {
        let pairs = [
            (Quantity::PIvc, 0.05),
            (Quantity::TIvc, 5.0),
            (Quantity::Egr, 0.05),
            (Quantity::PhiDi, 0.10),
            (Quantity::PhiNg, 0.10),
            (Quantity::XR, 0.03),
        ];
        let perturbations = pairs
            .iter()
            .flat_map(|&(quantity, d)| {
                [
                    Perturbation { quantity, delta: d },
                    Perturbation {
                        quantity,
                        delta: -d,
                    },
                ]
            })
            .collect();
        Self { perturbations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    /// `None` for the unperturbed baseline.
    pub perturbation: Option<Perturbation>,
    pub ca50_err_std: f64,
    pub ca50_err_max: f64,
}

impl SensitivityRow {
    pub fn label(&self) -> String {
        match self.perturbation {
            None => "none".into(),
            Some(p) if p.quantity.is_relative() => {
                format!("{} {:+}%", p.quantity.label(), p.delta * 100.0)
            }
            Some(p) => format!("{} {:+}", p.quantity.label(), p.delta),
        }
    }
}

fn row(
    coeffs: &ModelCoefficients<f64>,
    dataset: &Dataset,
    p: Option<Perturbation>,
) -> Result<SensitivityRow, HarnessError> {
    let errors = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let op = p.map_or(s.op(), |p| p.apply(&s.op()));
            predict_ca50(&op, s.soi, coeffs, &dataset.geom)
                .map(|y| y - s.ca50_ref)
                .map_err(|source| CalibError::Sample { index, source })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let (_, ca50_err_std, ca50_err_max) = error_stats(errors);
    Ok(SensitivityRow {
        perturbation: p,
        ca50_err_std,
        ca50_err_max,
    })
}

/// Baseline row followed by one row per perturbation, in spec order.
pub fn run_sensitivity(
    spec: &SensitivitySpec,
    coeffs: &ModelCoefficients<f64>,
    dataset: &Dataset,
) -> Result<Vec<SensitivityRow>, HarnessError> {
    std::iter::once(None)
        .chain(spec.perturbations.iter().copied().map(Some))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|p| row(coeffs, dataset, p))
        .collect()
}

pub fn write_sensitivity_csv<W: std::io::Write>(
    out: W,
    rows: &[SensitivityRow],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "delta", "ca50_err_std", "ca50_err_max"])?;
    for r in rows {
        let (source, delta) = match r.perturbation {
            None => ("none".to_string(), String::new()),
            Some(p) => (p.quantity.label().to_string(), p.delta.to_string()),
        };
        w.write_record([
            source,
            delta,
            r.ca50_err_std.to_string(),
            r.ca50_err_max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualfuel_core::calib::{generate_model_dataset, validate, SamplingRanges};
    use dualfuel_core::engine::EngineGeometry;

    fn data() -> Dataset {
        let mut d = generate_model_dataset(
            &SamplingRanges::default(),
            80,
            &ModelCoefficients::baseline(),
            &EngineGeometry::reference_engine(),
            3,
        )
        .unwrap();
        for (i, s) in d.samples.iter_mut().enumerate() {
            s.ca50_ref += ((i * 37) % 11) as f64 / 20.0 - 0.25;
        }
        d
    }

    #[test]
    fn published_set_has_twelve_rows() {
        let spec = SensitivitySpec::published();
        assert_eq!(spec.perturbations.len(), 12);
        let rows = run_sensitivity(&spec, &ModelCoefficients::baseline(), &data()).unwrap();
        assert_eq!(rows.len(), 13);
        assert_eq!(rows[0].label(), "none");
        assert_eq!(rows[7].label(), "phi_di +10%");
    }

    #[test]
    fn baseline_row_equals_validation() {
        let c = ModelCoefficients::baseline();
        let d = data();
        let rows = run_sensitivity(
            &SensitivitySpec {
                perturbations: vec![],
            },
            &c,
            &d,
        )
        .unwrap();
        let v = validate(&c, &d).unwrap();
        assert_eq!(rows[0].ca50_err_std, v.ca50_err_std);
        assert_eq!(rows[0].ca50_err_max, v.ca50_err_max);
    }

    #[test]
    fn opposite_signs_differ() {
        let rows = run_sensitivity(
            &SensitivitySpec::published(),
            &ModelCoefficients::baseline(),
            &data(),
        )
        .unwrap();
        for pair in rows[1..].chunks(2) {
            assert_ne!(
                pair[0].ca50_err_max,
                pair[1].ca50_err_max,
                "{}",
                pair[0].label()
            );
        }
    }

    #[test]
    fn perturbations_stay_physical() {
        let op = OperatingPoint {
            speed: 1200.0,
            phi_ng: 0.4,
            phi_di: 0.4,
            egr: 0.02,
            x_r: 0.02,
            p_ivc: 3.0,
            t_ivc: 380.0,
        };
        let egr = Perturbation {
            quantity: Quantity::Egr,
            delta: -0.05,
        }
        .apply(&op);
        assert_eq!(egr.egr, 0.0);
        let xr = Perturbation {
            quantity: Quantity::XR,
            delta: -0.03,
        }
        .apply(&op);
        assert_eq!(xr.x_r, 0.0);
        let phi = Perturbation {
            quantity: Quantity::PhiDi,
            delta: 0.1,
        }
        .apply(&op);
        assert!((phi.phi_di - 0.44).abs() < 1e-12);
    }
}
