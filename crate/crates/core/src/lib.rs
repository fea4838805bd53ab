//! Combustion phasing toolkit for diesel / natural-gas dual-fuel compression
//! ignition engines.
//!
//! * [`engine`]: domain types and the closed-form SOC / burn duration / CA50
//!   model evaluated at the polytropic state at start of injection.
//! * [`plant`]: a crank-angle resolved knock-integral plant with Wiebe burn,
//!   actuator quantization, EGR transport lag and measurement noise.
//! * [`calib`]: synthetic dataset generation and batch gradient-descent
//!   calibration of the model coefficients.
//! * [`control`]: the adaptive feedback controller with its gradient-descent
//!   parameter observer, and the model-based feedforward law.
//!
//! The math in `engine`, `plant` and `control` is generic over [`Scalar`]
//! (`f32` or `f64`). Calibration and all file I/O work in `f64`; the aliases
//! below name the concrete types used there.

pub mod calib;
pub mod control;
pub mod engine;
pub mod error;
pub mod plant;
pub mod scalar;

pub use error::ModelError;
pub use scalar::Scalar;

pub type EngineGeometry64 = engine::EngineGeometry<f64>;
pub type OperatingPoint64 = engine::OperatingPoint<f64>;
pub type ModelCoefficients64 = engine::ModelCoefficients<f64>;
pub type PlantConfig64 = plant::PlantConfig<f64>;
pub type CycleRecord64 = plant::CycleRecord<f64>;
pub type ControllerState64 = control::ControllerState<f64>;

pub type EngineGeometry32 = engine::EngineGeometry<f32>;
pub type OperatingPoint32 = engine::OperatingPoint<f32>;
pub type ModelCoefficients32 = engine::ModelCoefficients<f32>;
pub type PlantConfig32 = plant::PlantConfig<f32>;
pub type ControllerState32 = control::ControllerState<f32>;
