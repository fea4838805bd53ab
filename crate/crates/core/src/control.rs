//! Combustion phasing controllers.
//!
//! The adaptive controller treats the model as `y = u + α·x₁ + β·x₂`, where
//! the states `x₁ = N·(φ_NG^c3 + φ_DI^c4)` and `x₂ = φ_NG^c9 + φ_DI^c10` are
//! computable every cycle and the parameters α, β (which carry the
//! unmeasured SOI state and dilution) are tracked by a normalized
//! gradient-descent observer. With the learning rate `1/(x₁² + x₂²)` the
//! observer is deadbeat against a constant-parameter plant.
//!
//! The feedforward controller inverts the closed-form CA50 model directly,
//! using the previous cycle's SOI volume and a fixed mean residual fraction.

use serde::{Deserialize, Serialize};

use crate::engine::{
    ca50_offset, ignition_delay, mixture_term, polytropic_state_at_soi, EngineGeometry,
    ModelCoefficients, OperatingPoint, MEAN_RESIDUAL_FRACTION,
};
use crate::error::{ModelError, Result};
use crate::plant::CycleRecord;
use crate::scalar::Scalar;

/// SOI used to seed the feedforward volume before any command was issued.
pub const FEEDFORWARD_SEED_SOI: f64 = -15.0;

/// Margin after IVC below which SOI commands are clamped, CAD.
pub const SOI_MIN_AFTER_IVC: f64 = 5.0;

/// Latest SOI the actuator accepts, deg aTDC.
pub const SOI_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState<T> {
    pub alpha_hat: T,
    pub beta_hat: T,
    /// Cylinder volume at the previous cycle's SOI, m³.
    pub last_v_soi: Option<T>,
    /// Last observed `y − y_d`, CAD.
    pub last_error: T,
}

impl<T: Scalar> Default for ControllerState<T> {
    fn default() -> Self {
        Self {
            alpha_hat: T::zero(),
            beta_hat: T::zero(),
            last_v_soi: None,
            last_error: T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveStates<T> {
    pub x1: T,
    pub x2: T,
}

pub fn compute_states<T: Scalar>(
    op: &OperatingPoint<T>,
    coeffs: &ModelCoefficients<T>,
) -> Result<AdaptiveStates<T>> {
    let x1 = op.speed * mixture_term(op.phi_ng, op.phi_di, coeffs.c3, coeffs.c4)?;
    let x2 = mixture_term(op.phi_ng, op.phi_di, coeffs.c9, coeffs.c10)?;
    Ok(AdaptiveStates { x1, x2 })
}

pub fn learning_rate<T: Scalar>(states: &AdaptiveStates<T>) -> Result<T> {
    let norm = states.x1 * states.x1 + states.x2 * states.x2;
    if norm == T::zero() {
        return Err(ModelError::ZeroStates);
    }
    Ok(norm.recip())
}

/// `u = y_d − ᾱ·x₁ − β̄·x₂`
pub fn adaptive_soi<T: Scalar>(
    ref_ca50: T,
    states: &AdaptiveStates<T>,
    ctrl: &ControllerState<T>,
) -> T {
    ref_ca50 - ctrl.alpha_hat * states.x1 - ctrl.beta_hat * states.x2
}

/// Observer step along `(x₁, x₂)` scaled by the learning rate.
pub fn adaptive_update<T: Scalar>(
    measured_ca50: T,
    ref_ca50: T,
    states: &AdaptiveStates<T>,
    ctrl: &ControllerState<T>,
) -> Result<ControllerState<T>> {
    let eta = learning_rate(states)?;
    let err = measured_ca50 - ref_ca50;
    Ok(ControllerState {
        alpha_hat: ctrl.alpha_hat + eta * states.x1 * err,
        beta_hat: ctrl.beta_hat + eta * states.x2 * err,
        last_error: err,
        ..*ctrl
    })
}

/// Model-inverting SOI for `ref_ca50`; records the volume at the returned SOI.
pub fn feedforward_soi<T: Scalar>(
    ref_ca50: T,
    op: &OperatingPoint<T>,
    coeffs: &ModelCoefficients<T>,
    geom: &EngineGeometry<T>,
    ctrl: &mut ControllerState<T>,
) -> Result<T> {
    let soi = feedforward_soi_at(ref_ca50, op, coeffs, geom, feedforward_volume(geom, ctrl))?;
    ctrl.last_v_soi = Some(geom.volume_at(soi));
    Ok(soi)
}

/// The volume the next feedforward command will be evaluated at.
pub fn feedforward_volume<T: Scalar>(geom: &EngineGeometry<T>, ctrl: &ControllerState<T>) -> T {
    ctrl.last_v_soi
        .unwrap_or_else(|| geom.volume_at(T::lit(FEEDFORWARD_SEED_SOI)))
}

/// Feedforward law at an explicit SOI volume.
pub fn feedforward_soi_at<T: Scalar>(
    ref_ca50: T,
    op: &OperatingPoint<T>,
    coeffs: &ModelCoefficients<T>,
    geom: &EngineGeometry<T>,
    v_soi: T,
) -> Result<T> {
    op.validate()?;
    let state = polytropic_state_at_soi(op.p_ivc, op.t_ivc, geom.ivc_volume(), v_soi, coeffs.k_c)?;
    let x_d = op.egr + T::lit(MEAN_RESIDUAL_FRACTION);
    Ok(ref_ca50
        - ignition_delay(op, state, coeffs)?
        - ca50_offset(x_d, op.phi_ng, op.phi_di, coeffs)?)
}

/// Clamps an SOI command to `[IVC + 5, +5]` deg aTDC.
pub fn saturate_soi<T: Scalar>(soi: T, geom: &EngineGeometry<T>) -> T {
    let lo = geom.ivc_angle + T::lit(SOI_MIN_AFTER_IVC);
    soi.max(lo).min(T::lit(SOI_MAX))
}

/// Optional first-order low-pass on the CA50 measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFilter<T> {
    /// Weight of the new sample, (0, 1].
    pub gain: T,
    value: Option<T>,
}

impl<T: Scalar> MeasurementFilter<T> {
    pub fn new(gain: T) -> Self {
        Self { gain, value: None }
    }

    pub fn apply(&mut self, sample: T) -> T {
        let next = match self.value {
            None => sample,
            Some(prev) => prev + self.gain * (sample - prev),
        };
        self.value = Some(next);
        next
    }
}

/// A controller driven once per fired cycle.
pub trait PhasingController<T: Scalar> {
    /// SOI command for the next cycle, already saturated.
    fn command(&mut self, ref_ca50: T, op: &OperatingPoint<T>) -> Result<T>;

    /// Feeds back the cycle that ran with the last command.
    fn observe(&mut self, record: &CycleRecord<T>) -> Result<()>;

    /// Observer values `(ᾱ, β̄)`, if the controller has any.
    fn observer(&self) -> Option<(T, T)>;

    fn state(&self) -> &ControllerState<T>;
}

#[derive(Debug, Clone)]
pub struct AdaptiveController<T> {
    coeffs: ModelCoefficients<T>,
    geom: EngineGeometry<T>,
    state: ControllerState<T>,
    filter: Option<MeasurementFilter<T>>,
    states: Option<AdaptiveStates<T>>,
}

impl<T: Scalar> AdaptiveController<T> {
    pub fn new(coeffs: ModelCoefficients<T>, geom: EngineGeometry<T>) -> Self {
        Self {
            coeffs,
            geom,
            state: ControllerState::default(),
            filter: None,
            states: None,
        }
    }

    pub fn with_filter(mut self, gain: T) -> Self {
        self.filter = Some(MeasurementFilter::new(gain));
        self
    }
}

impl<T: Scalar> PhasingController<T> for AdaptiveController<T> {
    fn command(&mut self, ref_ca50: T, op: &OperatingPoint<T>) -> Result<T> {
        let states = compute_states(op, &self.coeffs)?;
        self.states = Some(states);
        Ok(saturate_soi(
            adaptive_soi(ref_ca50, &states, &self.state),
            &self.geom,
        ))
    }

    fn observe(&mut self, record: &CycleRecord<T>) -> Result<()> {
        let Some(states) = self.states else {
            return Ok(());
        };
        let y = match self.filter.as_mut() {
            Some(f) => f.apply(record.ca50_measured),
            None => record.ca50_measured,
        };
        self.state = adaptive_update(y, record.ca50_ref, &states, &self.state)?;
        Ok(())
    }

    fn observer(&self) -> Option<(T, T)> {
        Some((self.state.alpha_hat, self.state.beta_hat))
    }

    fn state(&self) -> &ControllerState<T> {
        &self.state
    }
}

#[derive(Debug, Clone)]
pub struct FeedforwardController<T> {
    coeffs: ModelCoefficients<T>,
    geom: EngineGeometry<T>,
    state: ControllerState<T>,
}

impl<T: Scalar> FeedforwardController<T> {
    pub fn new(coeffs: ModelCoefficients<T>, geom: EngineGeometry<T>) -> Self {
        Self {
            coeffs,
            geom,
            state: ControllerState::default(),
        }
    }
}

impl<T: Scalar> PhasingController<T> for FeedforwardController<T> {
    fn command(&mut self, ref_ca50: T, op: &OperatingPoint<T>) -> Result<T> {
        let raw = feedforward_soi(ref_ca50, op, &self.coeffs, &self.geom, &mut self.state)?;
        let soi = saturate_soi(raw, &self.geom);
        self.state.last_v_soi = Some(self.geom.volume_at(soi));
        Ok(soi)
    }

    fn observe(&mut self, record: &CycleRecord<T>) -> Result<()> {
        self.state.last_error = record.ca50_measured - record.ca50_ref;
        Ok(())
    }

    fn observer(&self) -> Option<(T, T)> {
        None
    }

    fn state(&self) -> &ControllerState<T> {
        &self.state
    }
}
