//! Scenario runner, sensitivity and noise studies for the dual-fuel
//! combustion-phasing controllers.

use std::fs;
use std::path::Path;

use dualfuel_core::calib::CalibError;
use dualfuel_core::engine::ModelCoefficients;
use dualfuel_core::ModelError;
use thiserror::Error;

pub mod noise;
pub mod runner;
pub mod scenario;
pub mod sensitivity;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn read_coeffs(path: impl AsRef<Path>) -> Result<ModelCoefficients<f64>, HarnessError> {
    let c: ModelCoefficients<f64> = serde_json::from_str(&fs::read_to_string(path)?)?;
    c.validate()?;
    Ok(c)
}

pub fn write_coeffs(
    path: impl AsRef<Path>,
    coeffs: &ModelCoefficients<f64>,
) -> Result<(), HarnessError> {
    fs::write(path, serde_json::to_string_pretty(coeffs)? + "\n")?;
    Ok(())
}
