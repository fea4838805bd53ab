//! Crank-angle resolved combustion plant.
//!
//! The plant integrates the dual-fuel knock integral from SOI over a
//! polytropic compression trace instead of freezing the state at SOI, burns
//! the charge with a Wiebe profile, and wraps the cycle with the actuator and
//! sensor effects a controller has to live with: SOI quantization, EGR
//! transport lag, a two-cycle unfired start and CA50 measurement noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    burn_duration, ca50_from_soc_bd, mixture_term, predict_soc, EngineGeometry, GasState,
    ModelCoefficients, OperatingPoint,
};
use crate::error::{ModelError, Result};
use crate::scalar::Scalar;

/// Latest crank angle the knock integral may take to reach unity.
pub const MISFIRE_LIMIT: f64 = 60.0;

/// Cycles at the start of every run without fuel injection.
pub const UNFIRED_STARTUP_CYCLES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct PlantConfig<T> {
    pub geom: EngineGeometry<T>,
    /// Plant-side combustion coefficients (ignition integrand and burn).
    pub coeffs: ModelCoefficients<T>,
    /// Polytropic exponent of the in-cylinder trace.
    pub plant_poly_exp: T,
    /// Quadrature step, CAD.
    pub quad_step: T,
    /// Injector timing resolution, CAD.
    pub soi_resolution: T,
    /// Time constant of the EGR transport lag, cycles.
    pub egr_lag_cycles: u32,
    /// Half-width of the uniform CA50 measurement noise, CAD.
    pub ca50_noise_halfwidth: T,
    pub rng_seed: u64,
}

impl<T: Scalar> Default for PlantConfig<T> {
    fn default() -> Self {
        Self {
            geom: EngineGeometry::reference_engine(),
            coeffs: ModelCoefficients::baseline(),
            plant_poly_exp: T::lit(1.10),
            quad_step: T::lit(0.1),
            soi_resolution: T::lit(0.1),
            egr_lag_cycles: 3,
            ca50_noise_halfwidth: T::lit(0.5),
            rng_seed: 0,
        }
    }
}

impl<T: Scalar> PlantConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.geom.validate()?;
        self.coeffs.validate()?;
        if !(self.quad_step > T::zero() && self.quad_step <= T::lit(0.5)) {
            return Err(ModelError::invalid(
                "plant config",
                "quad_step must lie in (0, 0.5]",
            ));
        }
        if !(self.soi_resolution > T::zero()) {
            return Err(ModelError::invalid(
                "plant config",
                "soi_resolution must be positive",
            ));
        }
        if !(self.ca50_noise_halfwidth >= T::zero()) {
            return Err(ModelError::invalid(
                "plant config",
                "noise half-width must be non-negative",
            ));
        }
        if !(self.plant_poly_exp.is_finite() && self.plant_poly_exp > T::zero()) {
            return Err(ModelError::invalid(
                "plant config",
                "polytropic exponent must be positive",
            ));
        }
        Ok(())
    }

    /// In-cylinder state at crank angle `theta` on the polytropic trace from IVC.
    pub fn state_at(&self, op: &OperatingPoint<T>, theta: T) -> GasState<T> {
        let ratio = self.geom.ivc_volume() / self.geom.volume_at(theta);
        GasState {
            pressure: op.p_ivc * ratio.powf(self.plant_poly_exp),
            temperature: op.t_ivc * ratio.powf(self.plant_poly_exp - T::one()),
        }
    }
}

/// Maps intake manifold conditions onto the IVC state the model consumes:
/// `P_IVC = 1.45·P_man`, `T_IVC = T_man + 90 K`.
pub fn ivc_from_manifold<T: Scalar>(p_man: T, t_man: T) -> (T, T) {
    (T::lit(1.45) * p_man, t_man + T::lit(90.0))
}

struct Integrand<T> {
    /// `(c1·EGR + c2)·N·(φ_NG^c3 + φ_DI^c4)`
    scale: T,
    c5: T,
    c6: T,
}

impl<T: Scalar> Integrand<T> {
    fn new(op: &OperatingPoint<T>, coeffs: &ModelCoefficients<T>) -> Result<Self> {
        op.validate()?;
        let mix = mixture_term(op.phi_ng, op.phi_di, coeffs.c3, coeffs.c4)?;
        let scale = (coeffs.c1 * op.egr + coeffs.c2) * op.speed * mix;
        if !(scale > T::zero()) {
            return Err(ModelError::invalid(
                "operating point",
                "ignition delay scale must be positive",
            ));
        }
        Ok(Self {
            scale,
            c5: coeffs.c5,
            c6: coeffs.c6,
        })
    }

    #[inline]
    fn eval(&self, s: GasState<T>) -> T {
        (-self.c5 * s.pressure.powf(self.c6) / s.temperature).exp() / self.scale
    }
}

/// Start of combustion from the knock integral over the polytropic trace.
pub fn knock_integral_soc<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    cfg: &PlantConfig<T>,
) -> Result<T> {
    knock_integral_soc_with(op, soi, cfg, |theta| cfg.state_at(op, theta))
}

/// Knock integral with a caller-supplied in-cylinder state trace.
///
/// Marches from `soi` in steps of `cfg.quad_step` with the trapezoid rule.
/// Inside the step where the running integral crosses one, the integrand is
/// taken as linear between the step ends and the crossing is solved exactly.
pub fn knock_integral_soc_with<T, F>(
    op: &OperatingPoint<T>,
    soi: T,
    cfg: &PlantConfig<T>,
    trace: F,
) -> Result<T>
where
    T: Scalar,
    F: Fn(T) -> GasState<T>,
{
    if !(soi >= cfg.geom.ivc_angle) {
        return Err(ModelError::SoiOutOfRange {
            soi: soi.as_f64(),
            min: cfg.geom.ivc_angle.as_f64(),
            max: MISFIRE_LIMIT,
        });
    }
    let integrand = Integrand::new(op, &cfg.coeffs)?;
    let h = cfg.quad_step;
    let limit = T::lit(MISFIRE_LIMIT);
    let half = T::lit(0.5);
    let two = T::lit(2.0);

    let mut acc = T::zero();
    let mut f_lo = integrand.eval(trace(soi));
    let mut k = 0u32;
    loop {
        let lo = soi + h * T::from_u32(k).unwrap();
        let hi = soi + h * T::from_u32(k + 1).unwrap();
        if hi > limit {
            return Err(ModelError::Misfire {
                soi: soi.as_f64(),
                reached: acc.as_f64(),
                limit: MISFIRE_LIMIT,
            });
        }
        let f_hi = integrand.eval(trace(hi));
        let inc = (f_lo + f_hi) * half * h;
        if acc + inc >= T::one() {
            let rem = T::one() - acc;
            // f_lo·δ + (f_hi − f_lo)·δ²/(2h) = rem
            let slope = (f_hi - f_lo) / (two * h);
            let disc = (f_lo * f_lo + T::lit(4.0) * slope * rem).max(T::zero());
            let delta = two * rem / (f_lo + disc.sqrt());
            return Ok(lo + delta.min(h));
        }
        acc = acc + inc;
        f_lo = f_hi;
        k += 1;
    }
}

/// Knock integral accumulated from `soi` to `theta_end` on the same grid as
/// [`knock_integral_soc`], the last partial step by the trapezoid rule.
pub fn accumulated_integral<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    theta_end: T,
    cfg: &PlantConfig<T>,
) -> Result<T> {
    let integrand = Integrand::new(op, &cfg.coeffs)?;
    let f = |theta| integrand.eval(cfg.state_at(op, theta));
    let h = cfg.quad_step;
    let half = T::lit(0.5);
    let mut acc = T::zero();
    let mut k = 0u32;
    let mut f_lo = f(soi);
    loop {
        let lo = soi + h * T::from_u32(k).unwrap();
        let hi = soi + h * T::from_u32(k + 1).unwrap();
        if hi >= theta_end {
            let f_end = f(theta_end);
            return Ok(acc + (f_lo + f_end) * half * (theta_end - lo));
        }
        let f_hi = f(hi);
        acc = acc + (f_lo + f_hi) * half * h;
        f_lo = f_hi;
        k += 1;
    }
}

/// Wiebe mass fraction burned at crank angle `theta`.
pub fn wiebe_fraction<T: Scalar>(theta: T, soc: T, bd: T, coeffs: &ModelCoefficients<T>) -> T {
    if theta <= soc {
        return T::zero();
    }
    let progress = (theta - soc) / bd;
    T::one() - (-coeffs.wiebe_a * progress.powf(coeffs.wiebe_b)).exp()
}

/// Plant SOC minus the closed-form SOC for the same inputs and coefficients:
/// the error of freezing the in-cylinder state at SOI.
pub fn simplification_gap<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    cfg: &PlantConfig<T>,
) -> Result<T> {
    let plant = knock_integral_soc(op, soi, cfg)?;
    let model = predict_soc(op, soi, &cfg.coeffs, &cfg.geom)?;
    Ok(plant - model)
}

/// Combustion outcome of one fired cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combustion<T> {
    pub soc: T,
    pub bd: T,
    pub ca50: T,
}

/// Steady-state combustion for an injection at `soi` (no quantization, lag or noise).
pub fn fire<T: Scalar>(
    op: &OperatingPoint<T>,
    soi: T,
    cfg: &PlantConfig<T>,
) -> Result<Combustion<T>> {
    let soc = knock_integral_soc(op, soi, cfg)?;
    let bd = burn_duration(op.dilution(), op.phi_ng, op.phi_di, &cfg.coeffs)?;
    Ok(Combustion {
        soc,
        bd,
        ca50: ca50_from_soc_bd(soc, bd, &cfg.coeffs),
    })
}

/// Rounds `soi` to the nearest multiple of `resolution`, halves away from zero.
pub fn quantize_soi<T: Scalar>(soi: T, resolution: T) -> T {
    (soi / resolution).round() * resolution
}

/// One engine cycle as seen by the cylinder and the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord<T> {
    pub cycle_index: u64,
    /// Cycle start, s.
    pub time_s: T,
    /// Conditions in-cylinder (EGR after transport lag).
    pub op: OperatingPoint<T>,
    pub fired: bool,
    pub soi_commanded: T,
    pub soi_applied: T,
    pub soc: T,
    pub bd: T,
    pub ca50_actual: T,
    pub ca50_measured: T,
    pub ca50_ref: T,
    pub alpha_hat: Option<T>,
    pub beta_hat: Option<T>,
}

impl<T: Scalar> CycleRecord<T> {
    pub fn error(&self) -> T {
        self.ca50_actual - self.ca50_ref
    }
}

/// Scheduled conditions for one cycle. `op.egr` is the manifold EGR fraction;
/// the cylinder sees it through the transport lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleInputs<T> {
    pub op: OperatingPoint<T>,
    pub ca50_ref: T,
}

/// Stateful cycle-by-cycle plant.
#[derive(Debug, Clone)]
pub struct Plant<T> {
    cfg: PlantConfig<T>,
    cycle: u64,
    time_s: T,
    egr_in_cylinder: Option<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Plant<T> {
    pub fn new(cfg: PlantConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            cycle: 0,
            time_s: T::zero(),
            egr_in_cylinder: None,
        })
    }

    pub fn config(&self) -> &PlantConfig<T> {
        &self.cfg
    }

    /// Index of the next cycle to run.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Start time of the next cycle, s.
    pub fn time_s(&self) -> T {
        self.time_s
    }

    /// Whether the next cycle injects fuel.
    pub fn next_cycle_fires(&self) -> bool {
        self.cycle >= UNFIRED_STARTUP_CYCLES
    }

    /// Runs one cycle with the given SOI command.
    pub fn step(&mut self, soi_command: T, inputs: &CycleInputs<T>) -> Result<CycleRecord<T>> {
        inputs.op.validate()?;
        let commanded = inputs.op.egr;
        let lag = T::from_u32(self.cfg.egr_lag_cycles).unwrap();
        let egr = match self.egr_in_cylinder {
            None => commanded,
            Some(prev) => prev + (commanded - prev) / (lag + T::one()),
        };
        self.egr_in_cylinder = Some(egr);
        let op = OperatingPoint { egr, ..inputs.op };

        let mut record = CycleRecord {
            cycle_index: self.cycle,
            time_s: self.time_s,
            op,
            fired: self.next_cycle_fires(),
            soi_commanded: T::zero(),
            soi_applied: T::zero(),
            soc: T::zero(),
            bd: T::zero(),
            ca50_actual: T::zero(),
            ca50_measured: T::zero(),
            ca50_ref: inputs.ca50_ref,
            alpha_hat: None,
            beta_hat: None,
        };

        if record.fired {
            let applied = quantize_soi(soi_command, self.cfg.soi_resolution);
            let burn = fire(&op, applied, &self.cfg)?;
            let noise = if self.cfg.ca50_noise_halfwidth > T::zero() {
                let w = self.cfg.ca50_noise_halfwidth.as_f64();
                T::lit(self.rng.gen_range(-w..=w))
            } else {
                T::zero()
            };
            record.soi_commanded = soi_command;
            record.soi_applied = applied;
            record.soc = burn.soc;
            record.bd = burn.bd;
            record.ca50_actual = burn.ca50;
            record.ca50_measured = burn.ca50 + noise;
        }

        self.cycle += 1;
        // four-stroke: two revolutions per cycle
        self.time_s = self.time_s + T::lit(120.0) / op.speed;
        Ok(record)
    }
}
