//! Engine domain types and the closed-form combustion phasing model.
//!
//! Start of combustion is predicted from the modified knock integral with the
//! in-cylinder state frozen at start of injection (SOI). Pressure and
//! temperature at SOI follow a polytropic compression from intake valve
//! closing (IVC). CA50 is SOC plus the Wiebe 50% offset of the burn duration.
//!
//! Units: crank angle in degrees after top dead center (aTDC), pressure in
//! bar, temperature in K, volume in m³, speed in RPM.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::scalar::Scalar;

/// Average residual gas fraction used by the feedforward law in place of an
/// unmeasurable per-cycle value.
pub const MEAN_RESIDUAL_FRACTION: f64 = 0.0329;

/// Latest SOI accepted by the closed-form model, deg aTDC.
pub const LATEST_MODEL_SOI: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineGeometry<T> {
    /// m
    pub bore: T,
    /// m
    pub stroke: T,
    /// m
    pub rod_length: T,
    pub compression_ratio: T,
    /// deg aTDC
    pub ivc_angle: T,
    pub ivo_angle: T,
    pub evo_angle: T,
    pub evc_angle: T,
}

impl<T: Scalar> EngineGeometry<T> {
    /// Six-cylinder 12.4 L heavy-duty engine converted to diesel / natural gas
    /// dual-fuel operation.
    pub fn reference_engine() -> Self {
        Self {
            bore: T::lit(0.126),
            stroke: T::lit(0.166),
            rod_length: T::lit(0.251),
            compression_ratio: T::lit(17.0),
            ivc_angle: T::lit(-148.5),
            ivo_angle: T::lit(-363.5),
            evo_angle: T::lit(137.0),
            evc_angle: T::lit(389.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let half = T::lit(0.5);
        if !(self.bore > T::zero() && self.stroke > T::zero()) {
            return Err(ModelError::invalid(
                "geometry",
                "bore and stroke must be positive",
            ));
        }
        if !(self.compression_ratio > T::one()) {
            return Err(ModelError::invalid(
                "geometry",
                "compression ratio must exceed 1",
            ));
        }
        if !(self.rod_length > self.stroke * half) {
            return Err(ModelError::invalid(
                "geometry",
                "connecting rod must be longer than the crank radius",
            ));
        }
        Ok(())
    }

    /// Swept volume of one cylinder, m³.
    pub fn displaced_volume(&self) -> T {
        piston_area(self.bore) * self.stroke
    }

    /// Volume at top dead center, m³.
    pub fn clearance_volume(&self) -> T {
        self.displaced_volume() / (self.compression_ratio - T::one())
    }

    /// Slider-crank cylinder volume at crank angle `theta` (deg aTDC), m³.
    pub fn volume_at(&self, theta: T) -> T {
        let r = self.stroke * T::lit(0.5);
        let l = self.rod_length;
        let (s, c) = theta.to_radians().sin_cos();
        let travel = l + r - r * c - (l * l - r * r * s * s).sqrt();
        self.clearance_volume() + piston_area(self.bore) * travel
    }

    pub fn ivc_volume(&self) -> T {
        self.volume_at(self.ivc_angle)
    }
}

fn piston_area<T: Scalar>(bore: T) -> T {
    T::lit(std::f64::consts::FRAC_PI_4) * bore * bore
}

/// Cylinder volume at crank angle `theta`; see [`EngineGeometry::volume_at`].
pub fn cylinder_volume<T: Scalar>(theta: T, geom: &EngineGeometry<T>) -> T {
    geom.volume_at(theta)
}

/// Per-cycle boundary conditions seen by the cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint<T> {
    /// RPM
    pub speed: T,
    pub phi_ng: T,
    pub phi_di: T,
    /// EGR mass fraction, 0..1
    pub egr: T,
    /// residual gas fraction, 0..1
    pub x_r: T,
    /// bar
    pub p_ivc: T,
    /// K
    pub t_ivc: T,
}

impl<T: Scalar> OperatingPoint<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| Err(ModelError::invalid("operating point", detail));
        let all = [
            self.speed,
            self.phi_ng,
            self.phi_di,
            self.egr,
            self.x_r,
            self.p_ivc,
            self.t_ivc,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite field");
        }
        if self.speed <= T::zero() {
            return bad("speed must be positive");
        }
        if self.egr < T::zero() || self.egr >= T::one() {
            return bad("EGR fraction must lie in [0, 1)");
        }
        if self.x_r < T::zero() || self.x_r >= T::one() {
            return bad("residual fraction must lie in [0, 1)");
        }
        if self.phi_ng < T::zero() || self.phi_di < T::zero() {
            return bad("equivalence ratios must be non-negative");
        }
        if self.p_ivc <= T::zero() || self.t_ivc <= T::zero() {
            return bad("IVC pressure and temperature must be positive");
        }
        Ok(())
    }

    /// Dilution fraction seen by the burn: EGR plus residuals.
    pub fn dilution(&self) -> T {
        dilution_fraction(self.egr, self.x_r)
    }
}

/// Trapped masses for one cycle, kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassState<T> {
    pub m_air: T,
    pub m_ng: T,
    pub m_diesel: T,
    pub m_egr: T,
    pub m_residual: T,
}

/// Oxygen mass fractions of ambient air, intake manifold and exhaust manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct O2Readings<T> {
    pub x_o2_amb: T,
    pub x_o2_int: T,
    pub x_o2_exh: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelProperties<T> {
    pub afr_stoich_diesel: T,
    pub afr_stoich_ng: T,
}

impl<T: Scalar> Default for FuelProperties<T> {
    fn default() -> Self {
        Self {
            afr_stoich_diesel: T::lit(14.5),
            // methane: CH4 + 2 (O2 + 3.76 N2)
            afr_stoich_ng: T::lit(17.19),
        }
    }
}

/// Coefficients of the SOC / burn-duration / CA50 model.
///
/// `c1 … c6` and `k_c` shape the ignition delay, `c8 … c11` the burn-duration
/// term. The Wiebe shape (`wiebe_a`, `wiebe_b`) is folded into `c11` for the
/// model; the plant needs it explicitly to build the burn trace, and the
/// plant-side burn-duration scale [`c7`](Self::c7) is derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficients<T> {
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub c4: T,
    pub c5: T,
    pub c6: T,
    pub c8: T,
    pub c9: T,
    pub c10: T,
    pub c11: T,
    pub k_c: T,
    pub wiebe_a: T,
    pub wiebe_b: T,
}

impl<T: Scalar> ModelCoefficients<T> {
    /// Published calibration of the model (pressure in bar, temperature in K)
    /// with a Wiebe shape of a = 6.908 (99.9 % completeness), b = 1.5.
    pub fn baseline() -> Self {
        Self {
            c1: T::lit(1.0504e-4),
            c2: T::lit(1.4958e-4),
            c3: T::lit(0.2284),
            c4: T::lit(-0.2604),
            c5: T::lit(9591.9),
            c6: T::lit(-0.5962),
            c8: T::lit(0.8292),
            c9: T::lit(0.0522),
            c10: T::lit(-0.9682),
            c11: T::lit(1.3359),
            k_c: T::lit(1.0546),
            wiebe_a: T::lit(6.908),
            wiebe_b: T::lit(1.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| Err(ModelError::invalid("coefficients", detail));
        let all = [
            self.c1,
            self.c2,
            self.c3,
            self.c4,
            self.c5,
            self.c6,
            self.c8,
            self.c9,
            self.c10,
            self.c11,
            self.k_c,
            self.wiebe_a,
            self.wiebe_b,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite coefficient");
        }
        if self.c5 <= T::zero() {
            return bad("c5 must be positive");
        }
        if self.c11 <= T::zero() {
            return bad("c11 must be positive");
        }
        if self.k_c <= T::one() {
            return bad("k_c must exceed 1");
        }
        if self.wiebe_a <= T::zero() || self.wiebe_b <= T::zero() {
            return bad("Wiebe shape must be positive");
        }
        Ok(())
    }

    /// Fraction of the burn duration elapsed at 50 % mass burned,
    /// `(ln 2 / a)^(1/b)`.
    pub fn wiebe_ca50_factor(&self) -> T {
        (T::lit(std::f64::consts::LN_2) / self.wiebe_a).powf(self.wiebe_b.recip())
    }

    /// Burn-duration scale implied by `c11` and the Wiebe shape.
    pub fn c7(&self) -> T {
        self.c11 / self.wiebe_ca50_factor()
    }
}

/// `(φ_NG, φ_DI)` from trapped masses.
pub fn equivalence_ratios<T: Scalar>(
    masses: &MassState<T>,
    fuels: &FuelProperties<T>,
) -> Result<(T, T)> {
    if masses.m_air <= T::zero() {
        return Err(ModelError::ZeroAirMass);
    }
    let phi_ng = masses.m_ng / masses.m_air * fuels.afr_stoich_ng;
    let phi_di = masses.m_diesel / masses.m_air * fuels.afr_stoich_diesel;
    Ok((phi_ng, phi_di))
}

/// EGR fraction inferred from oxygen sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgrEstimate<T> {
    pub egr: T,
    /// Set when the estimate falls outside [0, 1]; the value is not clamped.
    pub out_of_range: bool,
}

/// EGR fraction from the intake oxygen balance
/// `x_int = (1 − EGR)·x_amb + EGR·x_exh`.
pub fn egr_from_o2<T: Scalar>(readings: &O2Readings<T>) -> Result<EgrEstimate<T>> {
    let depletion = readings.x_o2_amb - readings.x_o2_exh;
    if depletion == T::zero() {
        return Err(ModelError::NoOxygenDepletion);
    }
    let egr = (readings.x_o2_amb - readings.x_o2_int) / depletion;
    Ok(EgrEstimate {
        egr,
        out_of_range: !(egr >= T::zero() && egr <= T::one()),
    })
}

pub fn residual_fraction<T: Scalar>(masses: &MassState<T>) -> Result<T> {
    let fresh = masses.m_air + masses.m_ng + masses.m_diesel + masses.m_egr;
    if fresh <= T::zero() {
        return Err(ModelError::EmptyCharge);
    }
    Ok(masses.m_residual / fresh)
}

#[inline]
pub fn dilution_fraction<T: Scalar>(egr: T, x_r: T) -> T {
    egr + x_r
}

/// In-cylinder pressure (bar) and temperature (K).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasState<T> {
    pub pressure: T,
    pub temperature: T,
}

/// Polytropic compression from `v_ivc` to `v_soi` with exponent `k_c`.
pub fn polytropic_state_at_soi<T: Scalar>(
    p_ivc: T,
    t_ivc: T,
    v_ivc: T,
    v_soi: T,
    k_c: T,
) -> Result<GasState<T>> {
    if !(v_ivc > T::zero() && v_soi > T::zero()) {
        return Err(ModelError::invalid(
            "volume",
            "cylinder volumes must be positive",
        ));
    }
    if !(p_ivc > T::zero() && t_ivc > T::zero()) {
        return Err(ModelError::invalid(
            "IVC state",
            "pressure and temperature must be positive",
        ));
    }
    let ratio = v_ivc / v_soi;
    Ok(GasState {
        pressure: p_ivc * ratio.powf(k_c),
        temperature: t_ivc * ratio.powf(k_c - T::one()),
    })
}

/// `φ_NG^e_ng + φ_DI^e_di`; rejects a zero ratio raised to a negative power.
pub fn mixture_term<T: Scalar>(phi_ng: T, phi_di: T, e_ng: T, e_di: T) -> Result<T> {
    if phi_di == T::zero() && e_di < T::zero() {
        return Err(ModelError::NoPilotFuel);
    }
    if phi_ng == T::zero() && e_ng < T::zero() {
        return Err(ModelError::invalid(
            "operating point",
            "zero natural gas equivalence ratio with a negative exponent",
        ));
    }
    Ok(phi_ng.powf(e_ng) + phi_di.powf(e_di))
}

/// Ignition delay SOC − SOI (CAD) for a frozen in-cylinder state.
pub fn ignition_delay<T: Scalar>(
    op: &OperatingPoint<T>,
    state: GasState<T>,
    coeffs: &ModelCoefficients<T>,
) -> Result<T> {
    let mix = mixture_term(op.phi_ng, op.phi_di, coeffs.c3, coeffs.c4)?;
    let arrhenius = (coeffs.c5 * state.pressure.powf(coeffs.c6) / state.temperature).exp();
    Ok((coeffs.c1 * op.egr + coeffs.c2) * op.speed * mix * arrhenius)
}

/// Crank angle from SOC to CA50, `c11·(1 + X_d)^c8·(φ_NG^c9 + φ_DI^c10)`.
pub fn ca50_offset<T: Scalar>(
    x_d: T,
    phi_ng: T,
    phi_di: T,
    coeffs: &ModelCoefficients<T>,
) -> Result<T> {
    let mix = mixture_term(phi_ng, phi_di, coeffs.c9, coeffs.c10)?;
    Ok(coeffs.c11 * (T::one() + x_d).powf(coeffs.c8) * mix)
}

/// Burn duration (CAD) from dilution and equivalence ratios.
pub fn burn_duration<T: Scalar>(
    x_d: T,
    phi_ng: T,
    phi_di: T,
    coeffs: &ModelCoefficients<T>,
) -> Result<T> {
    if x_d < T::zero() {
        return Err(ModelError::invalid(
            "dilution",
            "dilution fraction must be non-negative",
        ));
    }
    let mix = mixture_term(phi_ng, phi_di, coeffs.c9, coeffs.c10)?;
    Ok(coeffs.c7() * (T::one() + x_d).powf(coeffs.c8) * mix)
}

/// CA50 from SOC and burn duration through the Wiebe 50 % point.
pub fn ca50_from_soc_bd<T: Scalar>(soc: T, bd: T, coeffs: &ModelCoefficients<T>) -> T {
    soc + coeffs.wiebe_ca50_factor() * bd
}

fn check_soi<T: Scalar>(soi: T, geom: &EngineGeometry<T>) -> Result<()> {
    let max = T::lit(LATEST_MODEL_SOI);
    if !(soi >= geom.ivc_angle && soi <= max) {
        return Err(ModelError::SoiOutOfRange {
            soi: soi.as_f64(),
            min: geom.ivc_angle.as_f64(),
            max: LATEST_MODEL_SOI,
        });
    }
    Ok(())
}

/// Predicted SOC (deg aTDC) for an injection at `soi`.
pub fn predict_soc<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    coeffs: &ModelCoefficients<T>,
    geom: &EngineGeometry<T>,
) -> Result<T> {
    check_soi(soi, geom)?;
    predict_soc_at_volume(op, soi, geom.volume_at(soi), coeffs, geom)
}

/// As [`predict_soc`] with the SOI cylinder volume supplied by the caller.
///
/// The feedforward law evaluates the state at the previous cycle's SOI
/// volume; this entry point keeps that convention reproducible.
pub fn predict_soc_at_volume<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    v_soi: T,
    coeffs: &ModelCoefficients<T>,
    geom: &EngineGeometry<T>,
) -> Result<T> {
    op.validate()?;
    let state = polytropic_state_at_soi(op.p_ivc, op.t_ivc, geom.ivc_volume(), v_soi, coeffs.k_c)?;
    Ok(soi + ignition_delay(op, state, coeffs)?)
}

/// Predicted CA50 (deg aTDC) for an injection at `soi`.
pub fn predict_ca50<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    coeffs: &ModelCoefficients<T>,
    geom: &EngineGeometry<T>,
) -> Result<T> {
    Ok(predict_combustion(op, soi, coeffs, geom)?.ca50)
}

pub fn predict_ca50_at_volume<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    v_soi: T,
    coeffs: &ModelCoefficients<T>,
    geom: &EngineGeometry<T>,
) -> Result<T> {
    let soc = predict_soc_at_volume(op, soi, v_soi, coeffs, geom)?;
    Ok(soc + ca50_offset(op.dilution(), op.phi_ng, op.phi_di, coeffs)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombustionPrediction<T> {
    pub soc: T,
    pub ca50: T,
}

/// SOC and CA50 together; both share the polytropic state evaluation.
pub fn predict_combustion<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    coeffs: &ModelCoefficients<T>,
    geom: &EngineGeometry<T>,
) -> Result<CombustionPrediction<T>> {
    let soc = predict_soc(op, soi, coeffs, geom)?;
    let ca50 = soc + ca50_offset(op.dilution(), op.phi_ng, op.phi_di, coeffs)?;
    Ok(CombustionPrediction { soc, ca50 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geom() -> EngineGeometry<f64> {
        EngineGeometry::reference_engine()
    }

    fn case1_op() -> OperatingPoint<f64> {
        OperatingPoint {
            speed: 1200.0,
            phi_ng: 0.4,
            phi_di: 0.4,
            egr: 0.25,
            x_r: MEAN_RESIDUAL_FRACTION,
            p_ivc: 2.85,
            t_ivc: 372.56,
        }
    }

    #[test]
    fn volume_extremes_and_reference_displacement() {
        let g = geom();
        assert_eq!(g.volume_at(0.0), g.clearance_volume());
        assert_relative_eq!(
            g.volume_at(180.0),
            g.clearance_volume() + g.displaced_volume(),
            max_relative = 1e-14
        );
        // high-precision slider-crank arithmetic
        assert_relative_eq!(
            g.displaced_volume(),
            2.069850886188250e-3,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            g.clearance_volume(),
            1.293656803867656e-4,
            max_relative = 1e-13
        );
        assert_relative_eq!(g.ivc_volume(), 2.093778771104791e-3, max_relative = 1e-12);
        // six cylinders against the 12.4 L nameplate
        assert!((6.0 * g.displaced_volume() / 12.4e-3 - 1.0).abs() < 0.01);
    }

    #[test]
    fn geometry_validation() {
        let mut g = geom();
        assert!(g.validate().is_ok());
        g.compression_ratio = 1.0;
        assert!(g.validate().is_err());
        let mut g = geom();
        g.rod_length = g.stroke * 0.4;
        assert!(g.validate().is_err());
    }

    #[test]
    fn equivalence_ratio_cases() {
        let fuels = FuelProperties::<f64>::default();
        let m_air = 2.0e-3;
        let masses = MassState {
            m_air,
            m_ng: m_air / fuels.afr_stoich_ng,
            m_diesel: 0.0,
            m_egr: 0.0,
            m_residual: 0.0,
        };
        let (ng, di) = equivalence_ratios(&masses, &fuels).unwrap();
        assert_relative_eq!(ng, 1.0, max_relative = 1e-15);
        assert_eq!(di, 0.0);
        let zero_air = MassState {
            m_air: 0.0,
            ..masses
        };
        assert_eq!(
            equivalence_ratios(&zero_air, &fuels),
            Err(ModelError::ZeroAirMass)
        );
    }

    #[test]
    fn methane_stoichiometric_afr() {
        // CH4 + 2 (O2 + 3.76 N2): 2·4.76 mol air per mol fuel
        let oracle = 2.0 * 4.76 * 28.96 / 16.04;
        assert_relative_eq!(oracle, 17.188229426433915, max_relative = 1e-14);
        let fuels = FuelProperties::<f64>::default();
        assert!((fuels.afr_stoich_ng - oracle).abs() < 0.005);
    }

    #[test]
    fn egr_from_oxygen_balance() {
        let amb = 0.23;
        let exh = 0.11;
        let at = |int| {
            egr_from_o2(&O2Readings {
                x_o2_amb: amb,
                x_o2_int: int,
                x_o2_exh: exh,
            })
        };
        assert_eq!(at(amb).unwrap().egr, 0.0);
        assert_eq!(at(exh).unwrap().egr, 1.0);
        let int = amb - 0.25 * (amb - exh);
        assert_relative_eq!(int, 0.20, max_relative = 1e-12);
        let est = at(int).unwrap();
        assert_relative_eq!(est.egr, 0.25, max_relative = 1e-12);
        assert!(!est.out_of_range);
        assert!(at(0.24).unwrap().out_of_range);
        let degenerate = O2Readings {
            x_o2_amb: 0.2,
            x_o2_int: 0.2,
            x_o2_exh: 0.2,
        };
        assert_eq!(egr_from_o2(&degenerate), Err(ModelError::NoOxygenDepletion));
    }

    #[test]
    fn residual_fraction_cases() {
        let m = |r| MassState {
            m_air: 2.5e-3,
            m_ng: 0.2e-3,
            m_diesel: 0.05e-3,
            m_egr: 0.15e-3,
            m_residual: r,
        };
        assert_eq!(residual_fraction(&m(0.0)).unwrap(), 0.0);
        assert_relative_eq!(
            residual_fraction(&m(2.9e-3)).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            residual_fraction(&m(0.1e-3)).unwrap(),
            0.034482758620689655,
            max_relative = 1e-13
        );
        let empty = MassState {
            m_air: 0.0,
            m_ng: 0.0,
            m_diesel: 0.0,
            m_egr: 0.0,
            m_residual: 1.0,
        };
        assert_eq!(residual_fraction(&empty), Err(ModelError::EmptyCharge));
    }

    #[test]
    fn dilution_cases() {
        assert_eq!(dilution_fraction(0.0, 0.0), 0.0);
        assert_relative_eq!(
            dilution_fraction(0.25, MEAN_RESIDUAL_FRACTION),
            0.2829,
            max_relative = 1e-14
        );
        assert_relative_eq!(dilution_fraction(0.5, 0.05), 0.55, max_relative = 1e-14);
    }

    #[test]
    fn polytropic_cases() {
        let s = polytropic_state_at_soi(2.85, 372.56, 1.0e-3, 1.0e-3, 1.0546).unwrap();
        assert_eq!((s.pressure, s.temperature), (2.85, 372.56));
        let s = polytropic_state_at_soi(2.85, 372.56, 1.0e-3, 1.0e-4, 1.0).unwrap();
        assert_eq!(s.temperature, 372.56);
        let s = polytropic_state_at_soi(2.85, 372.56, 1.0e-3, 1.0e-4, 1.0546).unwrap();
        // 40-digit evaluation
        assert_relative_eq!(s.pressure, 32.31802853040839, max_relative = 1e-13);
        assert_relative_eq!(s.temperature, 422.4703406768053, max_relative = 1e-13);
        assert!(polytropic_state_at_soi(2.85, 372.56, 1.0e-3, 0.0, 1.0546).is_err());
    }

    #[test]
    fn ignition_delay_regression_point() {
        let c = ModelCoefficients::<f64>::baseline();
        let state = GasState {
            pressure: 32.30,
            temperature: 422.4,
        };
        let d = ignition_delay(&case1_op(), state, &c).unwrap();
        // 40-digit evaluation of the delay expression
        assert_relative_eq!(d, 7.667587967303731, max_relative = 1e-12);
        assert!(d > 1.0 && d < 10.0);
        let hotter = GasState {
            temperature: 430.0,
            ..state
        };
        assert!(ignition_delay(&case1_op(), hotter, &c).unwrap() < d);

        let mut c0 = c;
        c0.c5 = 0.0;
        let op = case1_op();
        let d0 = ignition_delay(&op, state, &c0).unwrap();
        let closed = (c.c1 * op.egr + c.c2) * op.speed * (0.4f64.powf(c.c3) + 0.4f64.powf(c.c4));
        assert_relative_eq!(d0, closed, max_relative = 1e-15);
    }

    #[test]
    fn zero_pilot_is_rejected() {
        let c = ModelCoefficients::<f64>::baseline();
        let op = OperatingPoint {
            phi_di: 0.0,
            ..case1_op()
        };
        assert_eq!(
            predict_soc(&op, -15.0, &c, &geom()),
            Err(ModelError::NoPilotFuel)
        );
        assert_eq!(
            burn_duration(0.2, 0.4, 0.0, &c),
            Err(ModelError::NoPilotFuel)
        );
    }

    #[test]
    fn burn_duration_and_c7() {
        let c = ModelCoefficients::<f64>::baseline();
        // 40-digit inversion of c11 = (ln2/a)^(1/b)·c7
        assert_relative_eq!(c.c7(), 6.186692468632944, max_relative = 1e-13);
        assert_relative_eq!(
            burn_duration(0.0, 1.0, 1.0, &c).unwrap(),
            2.0 * c.c7(),
            max_relative = 1e-14
        );
        assert!(
            burn_duration(0.3, 0.4, 0.4, &c).unwrap() > burn_duration(0.1, 0.4, 0.4, &c).unwrap()
        );
    }

    #[test]
    fn ca50_from_soc_and_bd() {
        let mut c = ModelCoefficients::<f64>::baseline();
        assert_eq!(ca50_from_soc_bd(-3.0, 0.0, &c), -3.0);
        let bd = burn_duration(0.0, 1.0, 1.0, &c).unwrap();
        assert_relative_eq!(
            ca50_from_soc_bd(0.0, bd, &c),
            2.0 * 1.3359,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            ca50_offset(0.0, 1.0, 1.0, &c).unwrap(),
            2.6718,
            max_relative = 1e-14
        );
        c.wiebe_a = std::f64::consts::LN_2;
        assert_relative_eq!(ca50_from_soc_bd(1.0, 7.5, &c), 8.5, max_relative = 1e-14);
    }

    #[test]
    fn predict_ca50_composition() {
        let c = ModelCoefficients::<f64>::baseline();
        let g = geom();
        let op = case1_op();
        let soc = predict_soc(&op, -15.0, &c, &g).unwrap();
        let ca50 = predict_ca50(&op, -15.0, &c, &g).unwrap();
        let offset =
            c.c11 * (1.0 + op.egr + op.x_r).powf(c.c8) * (0.4f64.powf(c.c9) + 0.4f64.powf(c.c10));
        assert_eq!(
            ca50,
            soc + ca50_offset(op.dilution(), op.phi_ng, op.phi_di, &c).unwrap()
        );
        assert_relative_eq!(ca50 - soc, offset, max_relative = 1e-14);
        // 40-digit evaluation at SOI = −15 with reference geometry
        assert_relative_eq!(soc, -9.433297415024026, max_relative = 1e-12);
        assert_relative_eq!(ca50, -3.879410958508934, max_relative = 1e-11);

        let mut c0 = c;
        c0.c5 = 0.0;
        let bare = OperatingPoint {
            egr: 0.0,
            x_r: 0.0,
            phi_ng: 1.0,
            phi_di: 1.0,
            ..op
        };
        let got = predict_ca50(&bare, -12.0, &c0, &g).unwrap();
        assert_relative_eq!(
            got,
            -12.0 + c.c2 * 1200.0 * 2.0 + 2.0 * c.c11,
            max_relative = 1e-13
        );
    }

    #[test]
    fn soi_outside_model_window() {
        let c = ModelCoefficients::<f64>::baseline();
        assert!(matches!(
            predict_soc(&case1_op(), 31.0, &c, &geom()),
            Err(ModelError::SoiOutOfRange { .. })
        ));
        assert!(predict_soc(&case1_op(), -150.0, &c, &geom()).is_err());
    }

    #[test]
    fn single_precision_tracks_double() {
        let c64 = ModelCoefficients::<f64>::baseline();
        let c32 = ModelCoefficients::<f32>::baseline();
        let op = case1_op();
        let op32 = OperatingPoint {
            speed: 1200.0f32,
            phi_ng: 0.4,
            phi_di: 0.4,
            egr: 0.25,
            x_r: 0.0329,
            p_ivc: 2.85,
            t_ivc: 372.56,
        };
        let a = predict_ca50(&op, -15.0, &c64, &geom()).unwrap();
        let b = predict_ca50(&op32, -15.0f32, &c32, &EngineGeometry::reference_engine()).unwrap();
        assert!((a - b as f64).abs() < 1e-3);
    }

    fn box_point() -> impl Strategy<Value = OperatingPoint<f64>> {
        (
            1200.0..1500.0,
            0.2..0.7,
            0.2..0.5,
            0.0..0.5,
            0.02..0.05,
            2.85..4.37,
            372.56..408.87,
        )
            .prop_map(
                |(speed, phi_ng, phi_di, egr, x_r, p_ivc, t_ivc)| OperatingPoint {
                    speed,
                    phi_ng,
                    phi_di,
                    egr,
                    x_r,
                    p_ivc,
                    t_ivc,
                },
            )
    }

    proptest! {
        #[test]
        fn unit_slope_in_soi_at_fixed_volume(op in box_point(), soi in -20.0..-10.0f64, du in 0.01..2.0f64) {
            let c = ModelCoefficients::<f64>::baseline();
            let g = geom();
            let v = g.volume_at(soi);
            let a = predict_ca50_at_volume(&op, soi, v, &c, &g).unwrap();
            let b = predict_ca50_at_volume(&op, soi + du, v, &c, &g).unwrap();
            prop_assert!(b > a);
            prop_assert!(((b - a) / du - 1.0).abs() < 1e-9);
        }

        #[test]
        fn ca50_offset_linear_in_bd(soc in -20.0..10.0f64, bd in 0.0..40.0f64) {
            let c = ModelCoefficients::<f64>::baseline();
            let got = ca50_from_soc_bd(soc, bd, &c) - soc;
            prop_assert!((got - c.wiebe_ca50_factor() * bd).abs() < 1e-12);
        }

        #[test]
        fn polytropic_round_trip(p in 1.0..5.0f64, t in 300.0..450.0f64, ratio in 1.0..17.0f64, k in 1.0..1.4f64) {
            let v_ivc = 2.0e-3;
            let v_soi = v_ivc / ratio;
            let s = polytropic_state_at_soi(p, t, v_ivc, v_soi, k).unwrap();
            let back = polytropic_state_at_soi(s.pressure, s.temperature, v_soi, v_ivc, k).unwrap();
            prop_assert!((back.pressure / p - 1.0).abs() < 1e-12);
            prop_assert!((back.temperature / t - 1.0).abs() < 1e-12);
        }

        #[test]
        fn egr_recovered_from_forward_mix(amb in 0.15..0.23f64, depletion in 0.01..0.15f64, egr in 0.0..=1.0f64) {
            let exh = amb - depletion;
            let int = (1.0 - egr) * amb + egr * exh;
            let est = egr_from_o2(&O2Readings { x_o2_amb: amb, x_o2_int: int, x_o2_exh: exh }).unwrap();
            prop_assert!((est.egr - egr).abs() < 1e-12);
        }

        #[test]
        fn volume_is_symmetric(theta in -360.0..360.0f64) {
            let g = geom();
            prop_assert!((g.volume_at(theta) - g.volume_at(-theta)).abs() < 1e-18);
        }
    }
}
