//! Closed-loop scenario execution and per-segment summaries.

use std::io::Write;

use dualfuel_core::control::{AdaptiveController, FeedforwardController, PhasingController};
use dualfuel_core::engine::OperatingPoint;
use dualfuel_core::plant::{CycleInputs, CycleRecord, Plant};
use dualfuel_core::ModelError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::{ControllerKind, Scenario};
use crate::HarnessError;

/// Half-width of the band a segment must stay inside to count as settled, CAD.
pub const SETTLING_BAND: f64 = 0.15;
/// Trailing fired cycles of a segment treated as steady state.
pub const STEADY_CYCLES: usize = 20;

const TIME_EPS: f64 = 1e-9;

pub const CSV_HEADER: [&str; 17] = [
    "cycle",
    "time_s",
    "speed",
    "phi_di",
    "phi_ng",
    "egr",
    "p_ivc",
    "t_ivc",
    "ca50_ref",
    "soi_cmd",
    "soi_applied",
    "soc",
    "bd",
    "ca50_actual",
    "ca50_meas",
    "alpha_hat",
    "beta_hat",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub start_s: f64,
    pub end_s: f64,
    pub fired_cycles: usize,
    /// Mean CA50 over the steady-state window, CAD.
    pub final_ca50: f64,
    /// Fired cycles until CA50 stays within the settling band of `final_ca50`;
    /// `None` if the last cycle is still outside.
    pub settling_cycles: Option<usize>,
    /// Largest excursion past `final_ca50` in the direction of travel, CAD.
    pub overshoot: f64,
    /// Tracking-error range over the steady-state window, CAD.
    pub steady_error_min: f64,
    pub steady_error_max: f64,
    pub peak_abs_error: f64,
}

impl SegmentSummary {
    /// Largest steady-state tracking error magnitude, CAD.
    pub fn steady_abs_error(&self) -> f64 {
        self.steady_error_min.abs().max(self.steady_error_max.abs())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub segments: Vec<SegmentSummary>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub records: Vec<CycleRecord<f64>>,
    pub summary: Summary,
    /// Set when a cycle failed (misfire); `records` holds the cycles before it.
    pub aborted: Option<ModelError>,
}

fn controller_for(sc: &Scenario) -> Box<dyn PhasingController<f64> + Send> {
    let coeffs = sc.controller_coeffs();
    match sc.controller {
        ControllerKind::Adaptive => {
            let c = AdaptiveController::new(coeffs, sc.plant.geom);
            match sc.filter_gain {
                Some(g) => Box::new(c.with_filter(g)),
                None => Box::new(c),
            }
        }
        ControllerKind::Feedforward => Box::new(FeedforwardController::new(coeffs, sc.plant.geom)),
    }
}

/// Runs `sc` cycle by cycle until its duration is covered.
///
/// The controller sees the scheduled speed and equivalence ratios of the
/// coming cycle, and the in-cylinder EGR of the previous one.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioRun, HarnessError> {
    sc.validate()?;
    let mut ctrl = controller_for(sc);
    let mut plant = Plant::new(sc.plant)?;
    let mut records = Vec::new();
    let mut egr_seen: Option<f64> = None;
    let mut aborted = None;

    while plant.time_s() < sc.duration_s - TIME_EPS {
        let t = plant.time_s();
        let op = sc.schedules.op_at(t);
        let ca50_ref = sc.reference.value_at(t);
        let sensed = OperatingPoint {
            egr: egr_seen.unwrap_or(op.egr),
            ..op
        };
        let command = if plant.next_cycle_fires() {
            match ctrl.command(ca50_ref, &sensed) {
                Ok(u) => u,
                Err(e) => {
                    aborted = Some(e);
                    break;
                }
            }
        } else {
            0.0
        };
        let mut record = match plant.step(command, &CycleInputs { op, ca50_ref }) {
            Ok(r) => r,
            Err(e) => {
                aborted = Some(e);
                break;
            }
        };
        egr_seen = Some(record.op.egr);
        if record.fired {
            ctrl.observe(&record)?;
        }
        if let Some((a, b)) = ctrl.observer() {
            record.alpha_hat = Some(a);
            record.beta_hat = Some(b);
        }
        records.push(record);
    }
    let summary = summarize(&records, &sc.change_times());
    Ok(ScenarioRun {
        records,
        summary,
        aborted,
    })
}

/// Independent scenarios in parallel, results in input order.
pub fn run_scenarios(scenarios: &[Scenario]) -> Vec<Result<ScenarioRun, HarnessError>> {
    scenarios.par_iter().map(run_scenario).collect()
}

/// Splits the run at `change_times` and summarises each segment's fired cycles.
pub fn summarize(records: &[CycleRecord<f64>], change_times: &[f64]) -> Summary {
    let Some(last) = records.last() else {
        return Summary::default();
    };
    let end = last.time_s + 120.0 / last.op.speed;
    let mut bounds = vec![0.0];
    bounds.extend(change_times.iter().copied().filter(|&t| t > 0.0 && t < end));
    bounds.push(end);

    let segments = bounds
        .windows(2)
        .map(|w| {
            let fired: Vec<&CycleRecord<f64>> = records
                .iter()
                .filter(|r| r.fired && r.time_s >= w[0] - TIME_EPS && r.time_s < w[1] - TIME_EPS)
                .collect();
            segment_summary(w[0], w[1], &fired)
        })
        .collect();
    Summary { segments }
}

fn segment_summary(start_s: f64, end_s: f64, fired: &[&CycleRecord<f64>]) -> SegmentSummary {
    if fired.is_empty() {
        return SegmentSummary {
            start_s,
            end_s,
            fired_cycles: 0,
            final_ca50: f64::NAN,
            settling_cycles: None,
            overshoot: 0.0,
            steady_error_min: f64::NAN,
            steady_error_max: f64::NAN,
            peak_abs_error: f64::NAN,
        };
    }
    let steady = &fired[fired.len().saturating_sub(STEADY_CYCLES)..];
    let final_ca50 = steady.iter().map(|r| r.ca50_actual).sum::<f64>() / steady.len() as f64;
    let settling_cycles = match fired
        .iter()
        .rposition(|r| (r.ca50_actual - final_ca50).abs() > SETTLING_BAND)
    {
        None => Some(0),
        Some(i) if i + 1 < fired.len() => Some(i + 1),
        Some(_) => None,
    };
    let direction = (final_ca50 - fired[0].ca50_actual).signum();
    let overshoot = fired
        .iter()
        .map(|r| direction * (r.ca50_actual - final_ca50))
        .fold(0.0f64, f64::max);
    let (steady_error_min, steady_error_max) = steady
        .iter()
        .map(|r| r.error())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e), hi.max(e))
        });
    let peak_abs_error = fired.iter().map(|r| r.error().abs()).fold(0.0f64, f64::max);
    SegmentSummary {
        start_s,
        end_s,
        fired_cycles: fired.len(),
        final_ca50,
        settling_cycles,
        overshoot,
        steady_error_min,
        steady_error_max,
        peak_abs_error,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the cycle stream in the fixed CSV column order.
pub fn write_records_csv<W: Write>(
    out: W,
    records: &[CycleRecord<f64>],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.cycle_index.to_string(),
            r.time_s.to_string(),
            r.op.speed.to_string(),
            r.op.phi_di.to_string(),
            r.op.phi_ng.to_string(),
            r.op.egr.to_string(),
            r.op.p_ivc.to_string(),
            r.op.t_ivc.to_string(),
            r.ca50_ref.to_string(),
            r.soi_commanded.to_string(),
            r.soi_applied.to_string(),
            r.soc.to_string(),
            r.bd.to_string(),
            r.ca50_actual.to_string(),
            r.ca50_measured.to_string(),
            opt(r.alpha_hat),
            opt(r.beta_hat),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{appendix_case, Schedule};

    fn quiet_case(n: u8, kind: ControllerKind) -> Scenario {
        let mut sc = appendix_case(n, kind).unwrap();
        sc.plant.ca50_noise_halfwidth = 0.0;
        sc
    }

    #[test]
    fn zero_duration_is_empty() {
        let mut sc = quiet_case(1, ControllerKind::Adaptive);
        sc.duration_s = 0.0;
        let run = run_scenario(&sc).unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.summary, Summary::default());
    }

    #[test]
    fn case_one_covers_ten_seconds() {
        let run = run_scenario(&quiet_case(1, ControllerKind::Adaptive)).unwrap();
        assert!(run.aborted.is_none());
        assert_eq!(run.records.len(), 100);
        assert_eq!(run.summary.segments.len(), 2);
        assert_eq!(run.summary.segments[0].fired_cycles, 48);
        assert_eq!(run.summary.segments[1].fired_cycles, 50);
        assert!(run.records[..2]
            .iter()
            .all(|r| !r.fired && r.ca50_actual == 0.0));
    }

    #[test]
    fn reference_step_reaches_plant_one_cycle_late() {
        let run = run_scenario(&quiet_case(1, ControllerKind::Adaptive)).unwrap();
        let first_new = run.records.iter().position(|r| r.ca50_ref == 10.0).unwrap();
        assert_eq!(run.records[first_new - 1].ca50_ref, 8.0);
        assert!(run.records[first_new - 1].time_s >= 5.0 - 1e-9);
    }

    #[test]
    fn runs_are_deterministic() {
        let sc = appendix_case(6, ControllerKind::Adaptive).unwrap();
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn misfire_aborts_with_partial_stream() {
        let mut sc = quiet_case(1, ControllerKind::Feedforward);
        sc.reference = Schedule::step(8.0, 8.0, 1.0, 0.0);
        sc.plant.coeffs.c5 *= 3.0;
        let run = run_scenario(&sc).unwrap();
        assert!(matches!(run.aborted, Some(ModelError::Misfire { .. })));
        assert_eq!(run.records.len(), 2);
    }

    #[test]
    fn settling_and_overshoot_on_a_hand_built_stream() {
        let mk = |i: u64, ca50: f64| CycleRecord {
            cycle_index: i,
            time_s: i as f64 * 0.1,
            op: OperatingPoint {
                speed: 1200.0,
                phi_ng: 0.4,
                phi_di: 0.4,
                egr: 0.25,
                x_r: 0.0329,
                p_ivc: 2.9,
                t_ivc: 390.0,
            },
            fired: true,
            soi_commanded: 0.0,
            soi_applied: 0.0,
            soc: 0.0,
            bd: 0.0,
            ca50_actual: ca50,
            ca50_measured: ca50,
            ca50_ref: 10.0,
            alpha_hat: None,
            beta_hat: None,
        };
        let mut recs: Vec<_> = [8.0, 10.6, 9.7, 10.2]
            .iter()
            .enumerate()
            .map(|(i, &v)| mk(i as u64, v))
            .collect();
        recs.extend((4..30).map(|i| mk(i, 10.0)));
        let s = summarize(&recs, &[]);
        let seg = &s.segments[0];
        assert_eq!(seg.fired_cycles, 30);
        assert_eq!(seg.final_ca50, 10.0);
        assert_eq!(seg.settling_cycles, Some(4));
        assert!((seg.overshoot - 0.6).abs() < 1e-12);
        assert_eq!((seg.steady_error_min, seg.steady_error_max), (0.0, 0.0));
        assert_eq!(seg.peak_abs_error, 2.0);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let run = run_scenario(&quiet_case(1, ControllerKind::Feedforward)).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &run.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), run.records.len());
        // feedforward has no observer
        assert!(text.lines().nth(3).unwrap().ends_with(",,"));
    }
}
