use thiserror::Error;

/// Errors raised by the model equations, the plant and the controllers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("air mass is zero; equivalence ratios are undefined")]
    ZeroAirMass,

    #[error("charge mass is zero; residual fraction is undefined")]
    EmptyCharge,

    #[error("no oxygen depletion: ambient and exhaust oxygen fractions are equal")]
    NoOxygenDepletion,

    #[error("no pilot fuel: zero diesel equivalence ratio with a negative exponent")]
    NoPilotFuel,

    #[error("SOI {soi} deg aTDC outside [{min}, {max}]")]
    SoiOutOfRange { soi: f64, min: f64, max: f64 },

    #[error("misfire: knock integral reached {reached:.6} by {limit} deg aTDC (SOI {soi})")]
    Misfire { soi: f64, reached: f64, limit: f64 },

    #[error("adaptive states are both zero; learning rate undefined")]
    ZeroStates,
}

impl ModelError {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        ModelError::Invalid {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
