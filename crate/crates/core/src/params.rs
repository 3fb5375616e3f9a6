//! Simulation parameters and road geometry.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::drag::DragCoefficients;

/// Detection band for "joined a platoon": gap to `delta` and relative speed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct PlatoonTolerance {
    /// m
    pub gap: f64,
    /// m/s
    pub speed: f64,
}

impl Default for PlatoonTolerance {
    fn default() -> Self {
        Self {
            gap: 0.1,
            speed: 0.05,
        }
    }
}

/// Which predecessor acceleration a follower plugs into its safety bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(Serialize, Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum PredAccelSource {
    /// The command the predecessor issued for the current step.
    #[default]
    Communicated,
    /// Always assume the predecessor brakes at `a_min`.
    WorstCase,
}

/// Arrival process for new vehicles.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct SpawnParams {
    /// Lower bound of the uniform inter-arrival delay (s).
    pub delay_min: f64,
    /// Upper bound of the uniform inter-arrival delay (s).
    pub delay_max: f64,
    /// On-ramp entrants cap their speed by a predecessor closer than this (m).
    pub lookahead: f64,
    /// Master switch; `false` keeps the population fixed.
    pub enabled: bool,
}

impl Default for SpawnParams {
    fn default() -> Self {
        Self {
            delay_min: 0.5,
            delay_max: 1.5,
            lookahead: 100.0,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct RoadNetwork {
    /// m
    pub length: f64,
    /// Strictly increasing positions in (0, length).
    pub on_ramps: Vec<f64>,
    /// Strictly increasing positions in (0, length).
    pub off_ramps: Vec<f64>,
}

impl Default for RoadNetwork {
    fn default() -> Self {
        Self {
            length: 1750.0,
            on_ramps: vec![100.0, 600.0, 1100.0],
            off_ramps: vec![500.0, 1000.0, 1500.0],
        }
    }
}

impl RoadNetwork {
    /// Entry locations: the road start followed by every on-ramp.
    pub fn entry_points(&self) -> Vec<f64> {
        let mut points = Vec::with_capacity(self.on_ramps.len() + 1);
        points.push(0.0);
        points.extend_from_slice(&self.on_ramps);
        points
    }

    /// Exit locations strictly beyond `position`: later off-ramps and the road end.
    pub fn exits_beyond(&self, position: f64) -> Vec<f64> {
        let mut exits: Vec<f64> = self
            .off_ramps
            .iter()
            .copied()
            .filter(|&x| x > position)
            .collect();
        if self.length > position {
            exits.push(self.length);
        }
        exits
    }
}

/// Every tunable constant of a run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct SimParams {
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Minimum bumper-to-bumper gap (m).
    pub delta: f64,
    pub dt: f64,
    /// Safety activation band (m).
    pub eps_g: f64,
    /// Deadline activation band (m).
    pub eps_d: f64,
    pub eps_platoon: PlatoonTolerance,
    pub duration: f64,
    /// Class-K rate for the stopping-margin barrier (1/s); 0 gives the bare
    /// active-set rule.
    pub gamma: f64,
    pub pred_accel: PredAccelSource,
    /// Impose arrival deadlines at all.
    pub deadlines: bool,
    pub seed: u64,
    pub drag: DragCoefficients,
    pub road: RoadNetwork,
    pub spawn: SpawnParams,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            v_min: 20.0,
            v_max: 35.0,
            a_min: -4.0,
            a_max: 3.0,
            delta: 5.0,
            dt: 0.1,
            eps_g: 0.01,
            eps_d: 0.1,
            eps_platoon: PlatoonTolerance::default(),
            duration: 140.0,
            gamma: 1.0,
            pred_accel: PredAccelSource::Communicated,
            deadlines: true,
            seed: 0,
            drag: DragCoefficients::default(),
            road: RoadNetwork::default(),
            spawn: SpawnParams::default(),
        }
    }
}

impl SimParams {
    /// Hardest admissible braking at speed `v`: `a_min`, or less if a full
    /// step at `a_min` would undershoot `v_min`.
    pub fn braking_limit(&self, v: f64) -> f64 {
        let floor = (self.v_min - v) / self.dt;
        if floor > self.a_min {
            floor.min(self.a_max)
        } else {
            self.a_min
        }
    }

    /// Largest admissible acceleration at speed `v`.
    pub fn accel_limit(&self, v: f64) -> f64 {
        let ceil = (self.v_max - v) / self.dt;
        if ceil < self.a_max {
            ceil.max(self.a_min)
        } else {
            self.a_max
        }
    }

    /// The predecessor acceleration a follower should assume.
    pub fn assumed_pred_accel(&self, communicated: f64) -> f64 {
        match self.pred_accel {
            PredAccelSource::Communicated => communicated,
            PredAccelSource::WorstCase => self.a_min,
        }
    }

    /// Bound used by the post-step safety audit and the log checker.
    pub fn safety_slack(&self) -> f64 {
        self.eps_g + self.v_max * self.dt
    }
}

/// One violated parameter invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamViolation {
    /// Dotted key paths involved, e.g. `["v_min", "v_max"]`.
    pub keys: &'static [&'static str],
    /// The invariant that failed, e.g. `v_min < v_max`.
    pub invariant: &'static str,
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated", self.invariant)
    }
}

impl core::error::Error for ParamViolation {}

fn strictly_increasing_within(points: &[f64], length: f64) -> bool {
    points.iter().all(|&x| x > 0.0 && x < length) && points.windows(2).all(|w| w[0] < w[1])
}

/// Check every parameter invariant; returns all violations, not just the first.
pub fn validate_params(params: &SimParams) -> Result<(), Vec<ParamViolation>> {
    let p = params;
    let checks: [(bool, &'static [&'static str], &'static str); 20] = [
        (p.v_min > 0.0, &["v_min"], "v_min > 0"),
        (p.v_min < p.v_max, &["v_min", "v_max"], "v_min < v_max"),
        (p.a_min < 0.0, &["a_min"], "a_min < 0"),
        (p.a_max > 0.0, &["a_max"], "a_max > 0"),
        (p.delta > 0.0, &["delta"], "delta > 0"),
        (p.dt > 0.0, &["dt"], "dt > 0"),
        (p.eps_g >= 0.0, &["eps_g"], "eps_g >= 0"),
        (p.eps_d >= 0.0, &["eps_d"], "eps_d >= 0"),
        (
            p.eps_platoon.gap >= 0.0 && p.eps_platoon.speed >= 0.0,
            &["eps_platoon.gap", "eps_platoon.speed"],
            "eps_platoon >= 0",
        ),
        (p.duration >= 0.0, &["duration"], "duration >= 0"),
        (p.gamma >= 0.0, &["gamma"], "gamma >= 0"),
        (p.gamma * p.dt <= 1.0, &["gamma", "dt"], "gamma * dt <= 1"),
        (p.drag.c0 > 0.0, &["drag.c0"], "drag.c0 > 0"),
        (
            p.drag.c1 >= 0.0 && p.drag.c1 < 1.0,
            &["drag.c1"],
            "0 <= drag.c1 < 1",
        ),
        (p.drag.c2 > 0.0, &["drag.c2"], "drag.c2 > 0"),
        (p.road.length > 0.0, &["road.length"], "road.length > 0"),
        (
            strictly_increasing_within(&p.road.on_ramps, p.road.length),
            &["road.on_ramps", "road.length"],
            "road.on_ramps strictly increasing in (0, road.length)",
        ),
        (
            strictly_increasing_within(&p.road.off_ramps, p.road.length),
            &["road.off_ramps", "road.length"],
            "road.off_ramps strictly increasing in (0, road.length)",
        ),
        (
            p.spawn.delay_min > 0.0 && p.spawn.delay_min <= p.spawn.delay_max,
            &["spawn.delay_min", "spawn.delay_max"],
            "0 < spawn.delay_min <= spawn.delay_max",
        ),
        (
            p.spawn.lookahead >= 0.0,
            &["spawn.lookahead"],
            "spawn.lookahead >= 0",
        ),
    ];
    // NaN fails every comparison above, so it is reported as a violation too.
    let violations: Vec<ParamViolation> = checks
        .iter()
        .filter(|(ok, _, _)| !ok)
        .map(|&(_, keys, invariant)| ParamViolation { keys, invariant })
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn defaults_are_valid() {
        assert_eq!(validate_params(&SimParams::default()), Ok(()));
    }

    #[test]
    fn inverted_speed_limits_are_named() {
        let params = SimParams {
            v_min: 30.0,
            v_max: 20.0,
            ..SimParams::default()
        };
        let errs = validate_params(&params).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].to_string(), "v_min < v_max violated");
        assert_eq!(errs[0].keys, &["v_min", "v_max"]);
    }

    #[test]
    fn positive_a_min_is_rejected() {
        let params = SimParams {
            a_min: 1.0,
            ..SimParams::default()
        };
        let errs = validate_params(&params).unwrap_err();
        assert!(errs.iter().any(|e| e.to_string() == "a_min < 0 violated"));
    }

    #[test]
    fn every_violation_is_reported() {
        let mut params = SimParams {
            dt: 0.0,
            delta: -1.0,
            ..SimParams::default()
        };
        params.road.on_ramps = vec![600.0, 100.0];
        let errs = validate_params(&params).unwrap_err();
        let names: Vec<_> = errs.iter().map(|e| e.invariant).collect();
        assert!(names.contains(&"dt > 0"));
        assert!(names.contains(&"delta > 0"));
        assert!(names.contains(&"road.on_ramps strictly increasing in (0, road.length)"));
    }

    #[test]
    fn nan_is_a_violation() {
        let params = SimParams {
            eps_g: f64::NAN,
            ..SimParams::default()
        };
        assert!(validate_params(&params).is_err());
    }

    #[test]
    fn exits_beyond_includes_road_end() {
        let road = RoadNetwork::default();
        assert_eq!(road.exits_beyond(0.0), vec![500.0, 1000.0, 1500.0, 1750.0]);
        assert_eq!(road.exits_beyond(1100.0), vec![1500.0, 1750.0]);
        assert_eq!(road.entry_points(), vec![0.0, 100.0, 600.0, 1100.0]);
    }

    #[test]
    fn speed_limits_in_discrete_time() {
        let p = SimParams::default();
        assert_eq!(p.braking_limit(30.0), p.a_min);
        assert_eq!(p.braking_limit(p.v_min), 0.0);
        assert!((p.braking_limit(20.1) - (-1.0)).abs() < 1e-9);
        assert_eq!(p.accel_limit(p.v_max), 0.0);
        assert_eq!(p.accel_limit(20.0), p.a_max);
    }
}
