//! Scenario files: piecewise-linear schedules of the operating conditions and
//! the CA50 reference, plus the controller and plant to run them against.

use dualfuel_core::engine::{ModelCoefficients, OperatingPoint, MEAN_RESIDUAL_FRACTION};
use dualfuel_core::plant::{ivc_from_manifold, PlantConfig};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Times closer than this to a breakpoint count as before it, s.
const TIME_EPS: f64 = 1e-9;

/// The schedule moves to `value` starting at `t`, linearly over `ramp_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub t: f64,
    pub value: f64,
    #[serde(default)]
    pub ramp_s: f64,
}

/// Piecewise-linear trajectory. The first breakpoint sets the initial value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(pub Vec<Breakpoint>);

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self(vec![Breakpoint {
            t: 0.0,
            value,
            ramp_s: 0.0,
        }])
    }

    /// Constant `from`, moving to `to` at `t` over `ramp_s`.
    pub fn step(from: f64, to: f64, t: f64, ramp_s: f64) -> Self {
        Self(vec![
            Breakpoint {
                t: 0.0,
                value: from,
                ramp_s: 0.0,
            },
            Breakpoint {
                t,
                value: to,
                ramp_s,
            },
        ])
    }

    pub fn validate(&self, name: &str) -> Result<(), HarnessError> {
        let bad =
            |detail: String| Err(HarnessError::Scenario(format!("schedule {name}: {detail}")));
        if self.0.is_empty() {
            return bad("no breakpoints".into());
        }
        for w in self.0.windows(2) {
            if w[1].t < w[0].t {
                return bad(format!("breakpoint at {} s precedes {} s", w[1].t, w[0].t));
            }
        }
        for bp in &self.0 {
            if !(bp.t.is_finite() && bp.value.is_finite() && bp.ramp_s.is_finite()) {
                return bad("non-finite breakpoint".into());
            }
            if bp.ramp_s < 0.0 || bp.t < 0.0 {
                return bad(format!("negative time or ramp at {} s", bp.t));
            }
        }
        Ok(())
    }

    /// Value at time `t`. A breakpoint takes effect only strictly after its
    /// time and ramps from wherever the schedule stood at that moment.
    pub fn value_at(&self, t: f64) -> f64 {
        self.value_with(self.0.len(), t)
    }

    fn value_with(&self, n: usize, t: f64) -> f64 {
        let Some(i) = (1..n).rev().find(|&i| t > self.0[i].t + TIME_EPS) else {
            return self.0[0].value;
        };
        let bp = self.0[i];
        if bp.ramp_s > 0.0 && t < bp.t + bp.ramp_s {
            let start = self.value_with(i, bp.t);
            start + (bp.value - start) * (t - bp.t) / bp.ramp_s
        } else {
            bp.value
        }
    }

    /// Breakpoint times after the first, where conditions start to change.
    pub fn change_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().skip(1).map(|bp| bp.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub speed: Schedule,
    pub phi_di: Schedule,
    pub phi_ng: Schedule,
    pub egr: Schedule,
    /// Intake manifold pressure (bar) and temperature (K); IVC state follows
    /// from these unless `p_ivc` / `t_ivc` are scheduled directly.
    #[serde(default = "default_p_man")]
    pub p_man: Schedule,
    #[serde(default = "default_t_man")]
    pub t_man: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ivc: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ivc: Option<Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_r: Option<Schedule>,
}

fn default_p_man() -> Schedule {
    Schedule::constant(2.0)
}

fn default_t_man() -> Schedule {
    Schedule::constant(300.0)
}

impl Schedules {
    fn named(&self) -> Vec<(&'static str, &Schedule)> {
        let mut v = vec![
            ("speed", &self.speed),
            ("phi_di", &self.phi_di),
            ("phi_ng", &self.phi_ng),
            ("egr", &self.egr),
            ("p_man", &self.p_man),
            ("t_man", &self.t_man),
        ];
        for (name, s) in [
            ("p_ivc", &self.p_ivc),
            ("t_ivc", &self.t_ivc),
            ("x_r", &self.x_r),
        ] {
            if let Some(s) = s {
                v.push((name, s));
            }
        }
        v
    }

    /// Conditions at time `t`; `egr` is the manifold value.
    pub fn op_at(&self, t: f64) -> OperatingPoint<f64> {
        let (p_map, t_map) = ivc_from_manifold(self.p_man.value_at(t), self.t_man.value_at(t));
        OperatingPoint {
            speed: self.speed.value_at(t),
            phi_ng: self.phi_ng.value_at(t),
            phi_di: self.phi_di.value_at(t),
            egr: self.egr.value_at(t),
            x_r: self
                .x_r
                .as_ref()
                .map_or(MEAN_RESIDUAL_FRACTION, |s| s.value_at(t)),
            p_ivc: self.p_ivc.as_ref().map_or(p_map, |s| s.value_at(t)),
            t_ivc: self.t_ivc.as_ref().map_or(t_map, |s| s.value_at(t)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Adaptive,
    Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration_s: f64,
    pub controller: ControllerKind,
    #[serde(default)]
    pub plant: PlantConfig<f64>,
    pub schedules: Schedules,
    pub reference: Schedule,
    /// Coefficients the controller uses; defaults to the published set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<ModelCoefficients<f64>>,
    /// Gain of the optional first-order filter on measured CA50.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_gain: Option<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(HarnessError::Scenario(format!(
                "bad duration {}",
                self.duration_s
            )));
        }
        if let Some(g) = self.filter_gain {
            if !(g > 0.0 && g <= 1.0) {
                return Err(HarnessError::Scenario(format!(
                    "filter gain {g} outside (0, 1]"
                )));
            }
        }
        for (name, s) in self.schedules.named() {
            s.validate(name)?;
        }
        self.reference.validate("reference")?;
        self.plant.validate()?;
        if let Some(c) = &self.coeffs {
            c.validate()?;
        }
        Ok(())
    }

    pub fn controller_coeffs(&self) -> ModelCoefficients<f64> {
        self.coeffs.unwrap_or_else(ModelCoefficients::baseline)
    }

    /// Sorted, de-duplicated times where any schedule or the reference changes.
    pub fn change_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .schedules
            .named()
            .into_iter()
            .flat_map(|(_, s)| s.change_times())
            .chain(self.reference.change_times())
            .filter(|&t| t > 0.0 && t < self.duration_s)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);
        times
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Duration of each appendix case, s.
pub const CASE_DURATION_S: f64 = 10.0;
/// When the appendix cases switch operating condition, s.
pub const CASE_SWITCH_S: f64 = 5.0;
/// Ramp applied to operating-condition changes in the appendix cases, s.
pub const CASE_RAMP_S: f64 = 0.5;

/// Appendix case `number` (1–6) with the given controller and a noise-free plant.
pub fn appendix_case(number: u8, controller: ControllerKind) -> Option<Scenario> {
    let constant = Schedule::constant;
    let ramp = |from, to| Schedule::step(from, to, CASE_SWITCH_S, CASE_RAMP_S);
    let (speed, phi_ng, egr, reference) = match number {
        1 => (
            constant(1200.0),
            constant(0.4),
            constant(0.25),
            Schedule::step(8.0, 10.0, CASE_SWITCH_S, 0.0),
        ),
        2 => (
            ramp(1200.0, 1500.0),
            constant(0.4),
            constant(0.25),
            constant(8.0),
        ),
        3 => (
            constant(1200.0),
            ramp(0.3, 0.5),
            constant(0.25),
            constant(8.0),
        ),
        4 => (
            constant(1200.0),
            constant(0.4),
            ramp(0.0, 0.5),
            constant(8.0),
        ),
        5 => (
            ramp(1200.0, 1500.0),
            ramp(0.3, 0.5),
            constant(0.25),
            constant(8.0),
        ),
        6 => (
            ramp(1200.0, 1500.0),
            ramp(0.3, 0.5),
            ramp(0.0, 0.5),
            constant(8.0),
        ),
        _ => return None,
    };
    Some(Scenario {
        duration_s: CASE_DURATION_S,
        controller,
        // measurement noise is studied separately
        plant: PlantConfig {
            ca50_noise_halfwidth: 0.0,
            ..PlantConfig::default()
        },
        schedules: Schedules {
            speed,
            phi_di: constant(0.4),
            phi_ng,
            egr,
            p_man: default_p_man(),
            t_man: default_t_man(),
            p_ivc: None,
            t_ivc: None,
            x_r: None,
        },
        reference,
        coeffs: None,
        filter_gain: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_applies_strictly_after_breakpoint() {
        let s = Schedule::step(8.0, 10.0, 5.0, 0.0);
        assert_eq!(s.value_at(0.0), 8.0);
        assert_eq!(s.value_at(5.0), 8.0);
        assert_eq!(s.value_at(5.0 + 1e-12), 8.0);
        assert_eq!(s.value_at(5.1), 10.0);
    }

    #[test]
    fn ramp_interpolates() {
        let s = Schedule::step(0.0, 0.5, 5.0, 0.5);
        assert!((s.value_at(5.25) - 0.25).abs() < 1e-12);
        assert!((s.value_at(5.1) - 0.1).abs() < 1e-12);
        assert_eq!(s.value_at(5.5), 0.5);
        assert_eq!(s.value_at(9.0), 0.5);
    }

    #[test]
    fn chained_ramps_start_from_current_value() {
        let s = Schedule(vec![
            Breakpoint {
                t: 0.0,
                value: 0.0,
                ramp_s: 0.0,
            },
            Breakpoint {
                t: 1.0,
                value: 1.0,
                ramp_s: 2.0,
            },
            Breakpoint {
                t: 2.0,
                value: 0.0,
                ramp_s: 1.0,
            },
        ]);
        // first ramp reached 0.5 at t = 2, second ramp pulls it down from there
        assert!((s.value_at(2.5) - 0.25).abs() < 1e-12);
        assert_eq!(s.value_at(4.0), 0.0);
    }

    #[test]
    fn manifold_maps_to_ivc_unless_overridden() {
        let mut sc = appendix_case(1, ControllerKind::Adaptive).unwrap();
        let op = sc.schedules.op_at(1.0);
        assert!((op.p_ivc - 2.9).abs() < 1e-12);
        assert!((op.t_ivc - 390.0).abs() < 1e-12);
        assert_eq!(op.x_r, MEAN_RESIDUAL_FRACTION);
        sc.schedules.p_ivc = Some(Schedule::constant(3.3));
        assert_eq!(sc.schedules.op_at(1.0).p_ivc, 3.3);
    }

    #[test]
    fn appendix_cases_are_valid() {
        for n in 1..=6 {
            let sc = appendix_case(n, ControllerKind::Feedforward).unwrap();
            sc.validate().unwrap();
            assert_eq!(sc.change_times(), vec![CASE_SWITCH_S]);
        }
        assert!(appendix_case(7, ControllerKind::Adaptive).is_none());
        let c6 = appendix_case(6, ControllerKind::Adaptive).unwrap();
        let after = c6.schedules.op_at(6.0);
        assert_eq!((after.speed, after.phi_ng, after.egr), (1500.0, 0.5, 0.5));
    }

    #[test]
    fn rejects_bad_schedules() {
        let mut sc = appendix_case(2, ControllerKind::Adaptive).unwrap();
        sc.schedules.speed.0[1].ramp_s = -1.0;
        assert!(sc.validate().is_err());
        let mut sc = appendix_case(2, ControllerKind::Adaptive).unwrap();
        sc.reference = Schedule(vec![]);
        assert!(sc.validate().is_err());
    }

    #[test]
    fn minimal_json_fills_defaults() {
        let text = r#"{
            "duration_s": 2.0,
            "controller": "adaptive",
            "plant": {"soi_resolution": 0.2},
            "schedules": {
                "speed": [{"t": 0, "value": 1300}],
                "phi_di": [{"t": 0, "value": 0.4}],
                "phi_ng": [{"t": 0, "value": 0.4}],
                "egr": [{"t": 0, "value": 0.2}, {"t": 1, "value": 0.3, "ramp_s": 0.5}]
            },
            "reference": [{"t": 0, "value": 8}]
        }"#;
        let sc = Scenario::from_json(text).unwrap();
        assert_eq!(sc.plant.soi_resolution, 0.2);
        assert_eq!(
            sc.plant.egr_lag_cycles,
            PlantConfig::<f64>::default().egr_lag_cycles
        );
        assert_eq!(sc.schedules.p_man, Schedule::constant(2.0));
        assert_eq!(sc.change_times(), vec![1.0]);
    }
}
