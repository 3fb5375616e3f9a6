//! Stopping-distance safety, arrival deadline, the safe acceleration interval
//! and the infeasibility verdicts that drive platoon splits and deadline
//! relaxation.

use core::fmt;

use crate::params::SimParams;

/// Two bounds closer than this are treated as touching.
pub const BOUND_TOL: f64 = 1e-12;

/// Closed interval of admissible accelerations, possibly empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleInterval {
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
}

impl FeasibleInterval {
    pub const EMPTY: Self = Self {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
        empty: true,
    };

    /// `[lo, hi]`; bounds that cross by less than [`BOUND_TOL`] collapse to `lo`.
    pub fn new(lo: f64, hi: f64) -> Self {
        if lo > hi + BOUND_TOL || lo.is_nan() || hi.is_nan() {
            Self::EMPTY
        } else {
            Self {
                lo,
                hi: hi.max(lo),
                empty: false,
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn contains(&self, a: f64) -> bool {
        !self.empty && self.lo <= a && a <= self.hi
    }

    pub fn cap_above(self, bound: f64) -> Self {
        if self.empty {
            self
        } else {
            Self::new(self.lo, self.hi.min(bound))
        }
    }

    pub fn cap_below(self, bound: f64) -> Self {
        if self.empty {
            self
        } else {
            Self::new(self.lo.max(bound), self.hi)
        }
    }

    /// The point of smallest magnitude, i.e. the minimizer of `a²/2`.
    pub fn min_norm(&self) -> Option<f64> {
        if self.empty {
            None
        } else {
            Some(0.0f64.clamp(self.lo, self.hi))
        }
    }
}

/// Why a follower cannot run the drag-minimizing controller this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeasibilityVerdict {
    Feasible,
    /// At the speed floor while the gradient bound demands braking.
    SplitCond1,
    /// The gradient bound demands braking harder than `a_min`.
    SplitCond2,
    /// Deadline active while the gradient bound demands braking.
    SplitCond3,
    /// Deadline active while safety demands braking on a closing gap.
    DeadlineConflict,
}

impl FeasibilityVerdict {
    pub fn is_split(self) -> bool {
        matches!(self, Self::SplitCond1 | Self::SplitCond2 | Self::SplitCond3)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Feasible => "feasible",
            Self::SplitCond1 => "split_speed_floor",
            Self::SplitCond2 => "split_braking_limit",
            Self::SplitCond3 => "split_deadline",
            Self::DeadlineConflict => "deadline_conflict",
        }
    }
}

impl fmt::Display for FeasibilityVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintError {
    /// `p̂ + δ > 0`: the gap is already below the minimum.
    GapViolated { p_hat: f64 },
}

impl fmt::Display for ConstraintError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GapViolated { p_hat } => {
                write!(
                    f,
                    "relative position {p_hat} m already violates the minimum gap"
                )
            }
        }
    }
}

impl core::error::Error for ConstraintError {}

/// Stopping-distance margin `g_s`; safe iff `≤ 0`.
///
/// For a closing gap (`v̂ > 0`) it adds the distance lost while both vehicles
/// brake at `a_min` and the predecessor then cruises at `v_min`.
pub fn stopping_margin(v: f64, p_hat: f64, v_hat: f64, params: &SimParams) -> f64 {
    let gap = p_hat + params.delta;
    if v_hat <= 0.0 {
        gap
    } else {
        gap + v_hat * ((params.v_min - v) / params.a_min) + v_hat * v_hat / (2.0 * params.a_min)
    }
}

/// The closing speed at which `g_s` is exactly zero for the given speed and gap.
pub fn critical_relative_speed(
    v: f64,
    p_hat: f64,
    params: &SimParams,
) -> Result<f64, ConstraintError> {
    let excess = v - params.v_min;
    let radicand = excess * excess + 2.0 * libm::fabs(params.a_min) * (p_hat + params.delta);
    if radicand < 0.0 || p_hat + params.delta > 0.0 {
        return Err(ConstraintError::GapViolated { p_hat });
    }
    Ok(excess - libm::sqrt(radicand))
}

/// `(S − p) − (t_f − t)·v`; satisfied iff `≤ 0`.
pub fn deadline_margin(
    position: f64,
    speed: f64,
    t: f64,
    exit_position: f64,
    deadline: f64,
) -> f64 {
    (exit_position - position) - (deadline - t) * speed
}

pub fn deadline_is_active(margin: f64, params: &SimParams) -> bool {
    params.deadlines && margin >= -params.eps_d
}

/// Upper acceleration bound from the stopping margin.
///
/// Discrete form of `ġ_s ≤ −γ·g_s`: the largest `a` such that, with both
/// vehicles holding their accelerations for one step, `g_s(t + dt) ≤
/// (1 − γ·dt)·g_s(t)`. The predecessor's acceleration is first raised to
/// what its own speed floor allows. `None` only with `γ = 0` and a margin
/// outside the activation band.
///
/// Writing `D = v − v_min` and `E = v_pred − v_min`, the margin is
/// `g_s = p̂ + δ + max(0, D² − E²)/(2|a_min|)`, which is increasing in `a`,
/// so the admissible set is a half-line.
pub fn safety_accel_bound(
    v: f64,
    p_hat: f64,
    v_hat: f64,
    pred_accel: f64,
    params: &SimParams,
) -> Option<f64> {
    let g = stopping_margin(v, p_hat, v_hat, params);
    if params.gamma == 0.0 && g < -params.eps_g {
        return None;
    }
    let dt = params.dt;
    let b = libm::fabs(params.a_min);
    let v_pred = v - v_hat;
    let a_pred = pred_accel.max(params.braking_limit(v_pred));
    let target = (1.0 - params.gamma * dt) * g;

    let d = v - params.v_min;
    let e_next = (v_pred + a_pred * dt - params.v_min).max(0.0);
    // next gap term: c0 + ½·a·dt²
    let c0 = p_hat + params.delta + v_hat * dt - 0.5 * a_pred * dt * dt;
    let a_gap = 2.0 * (target - c0) / (dt * dt);
    // below the knee the follower ends no faster than the predecessor
    let knee = (e_next - d) / dt;
    if a_gap <= knee {
        return Some(a_gap);
    }
    // x = D(t + dt) solves x² + |a_min|·dt·x + 2|a_min|·k = 0
    let k = c0 - 0.5 * d * dt - e_next * e_next / (2.0 * b) - target;
    let disc = b * b * dt * dt - 8.0 * b * k;
    let x = 0.5 * (-b * dt + libm::sqrt(disc.max(0.0)));
    Some((x - d) / dt)
}

/// Accelerations that keep speed limits and the stopping margin.
///
/// Braking at the hardest admissible rate is always part of the interval, so
/// it is never empty.
pub fn safe_accel_interval(
    v: f64,
    p_hat: f64,
    v_hat: f64,
    pred_accel: f64,
    params: &SimParams,
) -> FeasibleInterval {
    let lo = params.braking_limit(v);
    let mut hi = params.accel_limit(v);
    if let Some(bound) = safety_accel_bound(v, p_hat, v_hat, pred_accel, params) {
        // Below the braking limit nothing meets the target; brake as hard as allowed.
        hi = hi.min(bound.max(lo));
    }
    FeasibleInterval::new(lo, hi)
}

/// Which infeasibility condition holds, checked in a fixed precedence.
///
/// `safety_active` means the safety bound forbids `a = 0` on a closing gap.
pub fn classify_feasibility(
    v: f64,
    v_hat: f64,
    grad_bound: f64,
    deadline_active: bool,
    safety_active: bool,
    params: &SimParams,
) -> FeasibilityVerdict {
    let floor = params.braking_limit(v);
    if floor > params.a_min && grad_bound < floor - BOUND_TOL {
        FeasibilityVerdict::SplitCond1
    } else if grad_bound < params.a_min - BOUND_TOL {
        FeasibilityVerdict::SplitCond2
    } else if deadline_active && grad_bound < -BOUND_TOL {
        FeasibilityVerdict::SplitCond3
    } else if deadline_active && safety_active && v_hat >= 0.0 {
        FeasibilityVerdict::DeadlineConflict
    } else {
        FeasibilityVerdict::Feasible
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> SimParams {
        SimParams::default()
    }

    #[test]
    fn stopping_margin_opening_gap() {
        assert_eq!(stopping_margin(30.0, -10.0, -2.0, &params()), -5.0);
    }

    #[test]
    fn stopping_margin_closing_gap() {
        assert_relative_eq!(
            stopping_margin(30.0, -40.0, 5.0, &params()),
            -25.625,
            epsilon = 1e-12
        );
    }

    #[test]
    fn stopping_margin_is_continuous_at_zero() {
        let p = params();
        let at_zero = stopping_margin(30.0, -40.0, 0.0, &p);
        let just_above = stopping_margin(30.0, -40.0, 1e-12, &p);
        assert_eq!(at_zero, -35.0);
        assert!((just_above - at_zero).abs() < 1e-9);
    }

    #[test]
    fn critical_speed_is_a_root() {
        let p = params();
        let vh = critical_relative_speed(30.0, -17.5, &p).unwrap();
        assert_relative_eq!(vh, 10.0, epsilon = 1e-12);
        assert!(stopping_margin(30.0, -17.5, vh, &p).abs() < 1e-9);
        assert_eq!(critical_relative_speed(30.0, -5.0, &p).unwrap(), 0.0);
        assert!(critical_relative_speed(30.0, -4.0, &p).is_err());
    }

    #[test]
    fn deadline_margin_cases() {
        assert_eq!(deadline_margin(500.0, 25.0, 10.0, 1500.0, 50.0), 0.0);
        assert_eq!(deadline_margin(500.0, 20.0, 10.0, 1500.0, 50.0), 200.0);
        assert!(deadline_margin(1500.0, 20.0, 10.0, 1500.0, 50.0) <= 0.0);
        let p = params();
        assert!(deadline_is_active(0.0, &p));
        assert!(deadline_is_active(-0.05, &p));
        assert!(!deadline_is_active(-0.2, &p));
    }

    #[test]
    fn interior_state_gets_the_full_box() {
        let p = params();
        let iv = safe_accel_interval(30.0, -60.0, -1.0, 0.0, &p);
        assert_eq!((iv.lo, iv.hi), (p.a_min, p.a_max));
    }

    #[test]
    fn worst_case_boundary_forces_full_braking() {
        let p = params();
        let v_hat = 5.0;
        // p̂ that puts the pair exactly on g_s = 0
        let p_hat =
            -p.delta - v_hat * (30.0 - p.v_min) / -p.a_min + v_hat * v_hat / (2.0 * -p.a_min);
        assert!(stopping_margin(30.0, p_hat, v_hat, &p).abs() < 1e-12);
        let iv = safe_accel_interval(30.0, p_hat, v_hat, p.a_min, &p);
        assert_relative_eq!(iv.lo, p.a_min);
        assert_relative_eq!(iv.hi, p.a_min, epsilon = 1e-9);
    }

    fn margin_after_step(
        v: f64,
        p_hat: f64,
        v_hat: f64,
        a: f64,
        a_pred: f64,
        p: &SimParams,
    ) -> f64 {
        let dt = p.dt;
        let v_pred = v - v_hat;
        let v_next = v + a * dt;
        let p_hat_next = p_hat + v_hat * dt + 0.5 * (a - a_pred) * dt * dt;
        stopping_margin(v_next, p_hat_next, v_next - (v_pred + a_pred * dt), p)
    }

    #[test]
    fn safety_bound_meets_target_after_one_step() {
        let p = params();
        for &(v, p_hat, v_hat, a_pred) in &[
            (30.0, -40.0, 5.0, 0.0),
            (25.0, -12.0, 2.0, -1.0),
            (22.0, -9.0, 0.5, 1.0),
            (p.v_min, -p.delta - 0.01, -0.2, 0.0),
        ] {
            let g = stopping_margin(v, p_hat, v_hat, &p);
            let a = safety_accel_bound(v, p_hat, v_hat, a_pred, &p).unwrap();
            let after = margin_after_step(v, p_hat, v_hat, a, a_pred, &p);
            assert_relative_eq!(after, (1.0 - p.gamma * p.dt) * g, epsilon = 1e-9);
            assert!(margin_after_step(v, p_hat, v_hat, a + 1e-3, a_pred, &p) > after);
        }
    }

    #[test]
    fn speed_floor_with_opening_gap() {
        let p = params();
        let iv = safe_accel_interval(p.v_min, -p.delta, -1.0, 0.0, &p);
        assert_eq!((iv.lo, iv.hi), (0.0, p.a_max));
    }

    #[test]
    fn speed_ceiling() {
        let p = params();
        let iv = safe_accel_interval(p.v_max, -500.0, 0.0, 0.0, &p);
        assert_eq!(iv.hi, 0.0);
    }

    #[test]
    fn classification() {
        let p = params();
        // at v_min, predecessor pulling away
        assert_eq!(
            classify_feasibility(p.v_min, -1.0, -0.2, false, false, &p),
            FeasibilityVerdict::SplitCond1
        );
        assert_eq!(
            classify_feasibility(30.0, -30.0, -5.0, false, false, &p),
            FeasibilityVerdict::SplitCond2
        );
        assert_eq!(
            classify_feasibility(30.0, -1.0, -0.1, true, false, &p),
            FeasibilityVerdict::SplitCond3
        );
        assert_eq!(
            classify_feasibility(30.0, 3.0, 0.5, true, true, &p),
            FeasibilityVerdict::DeadlineConflict
        );
        assert_eq!(
            classify_feasibility(30.0, 3.0, 0.5, false, false, &p),
            FeasibilityVerdict::Feasible
        );
    }

    #[test]
    fn interval_helpers() {
        let iv = FeasibleInterval::new(-4.0, 3.0);
        assert_eq!(iv.min_norm(), Some(0.0));
        assert_eq!(iv.cap_above(-1.0).min_norm(), Some(-1.0));
        assert_eq!(iv.cap_below(0.5).min_norm(), Some(0.5));
        assert!(iv.cap_above(-5.0).is_empty());
        assert_eq!(FeasibleInterval::new(1.0, 1.0 - 1e-14).hi, 1.0);
        assert!(FeasibleInterval::EMPTY.cap_above(1.0).is_empty());
    }
}
