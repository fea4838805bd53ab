//! Adaptive loop under CA50 measurement noise.

use dualfuel_core::calib::error_stats;
use dualfuel_core::engine::ModelCoefficients;
use serde::{Deserialize, Serialize};

use crate::runner::{run_scenario, ScenarioRun};
use crate::scenario::{appendix_case, ControllerKind, Scenario, Schedule};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub halfwidth: f64,
    pub fired_cycles: usize,
    /// Statistics of the actual (not measured) CA50 tracking error, CAD.
    pub error_mean: f64,
    pub error_std: f64,
    pub error_max: f64,
}

/// First operating condition of the reference-step case held for the full run.
pub fn noise_scenario(coeffs: Option<ModelCoefficients<f64>>) -> Scenario {
    let mut sc = appendix_case(1, ControllerKind::Adaptive).expect("case 1 exists");
    sc.reference = Schedule::constant(sc.reference.value_at(0.0));
    sc.coeffs = coeffs;
    sc
}

pub fn run_noise_study(
    scenario: &Scenario,
    halfwidth: f64,
    seed: u64,
) -> Result<(NoiseStats, ScenarioRun), HarnessError> {
    if scenario.controller != ControllerKind::Adaptive {
        return Err(HarnessError::Scenario(
            "noise study needs the adaptive controller".into(),
        ));
    }
    let mut sc = scenario.clone();
    sc.plant.ca50_noise_halfwidth = halfwidth;
    sc.plant.rng_seed = seed;
    let run = run_scenario(&sc)?;
    if let Some(e) = &run.aborted {
        return Err(e.clone().into());
    }
    let errors: Vec<f64> = run
        .records
        .iter()
        .filter(|r| r.fired)
        .map(|r| r.error())
        .collect();
    let (error_mean, error_std, error_max) = error_stats(errors.iter().copied());
    let stats = NoiseStats {
        halfwidth,
        fired_cycles: errors.len(),
        error_mean,
        error_std,
        error_max,
    };
    Ok((stats, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::run_scenario;

    #[test]
    fn zero_noise_matches_clean_first_segment() {
        let sc = noise_scenario(None);
        let (_, noisy) = run_noise_study(&sc, 0.0, 9).unwrap();
        let mut case1 = appendix_case(1, ControllerKind::Adaptive).unwrap();
        case1.plant.ca50_noise_halfwidth = 0.0;
        let clean = run_scenario(&case1).unwrap();
        let first: Vec<_> = clean
            .records
            .iter()
            .filter(|r| r.time_s < 5.0 - 1e-9)
            .collect();
        assert_eq!(first.len(), 50);
        for (a, b) in first.iter().zip(&noisy.records) {
            assert_eq!(**a, *b);
        }
    }

    #[test]
    fn seeded_noise_repeats() {
        let sc = noise_scenario(None);
        let (a, _) = run_noise_study(&sc, 0.5, 4).unwrap();
        let (b, _) = run_noise_study(&sc, 0.5, 4).unwrap();
        let (c, _) = run_noise_study(&sc, 0.5, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.fired_cycles, 98);
    }

    #[test]
    fn feedforward_is_rejected() {
        let mut sc = noise_scenario(None);
        sc.controller = ControllerKind::Feedforward;
        assert!(run_noise_study(&sc, 0.5, 0).is_err());
    }
}
