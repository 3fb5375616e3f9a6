//! Per-vehicle control laws.
//!
//! Followers solve `min ½a²` over the intersection of the safe interval, the
//! gradient-flow half-line and (while the deadline is active) `a ≥ 0`; the
//! answer is the point of that interval closest to zero. Heads brake to
//! `v_min` or, after a relaxed deadline, accelerate until it is met again.

use core::fmt;

use crate::constraints::{
    classify_feasibility, deadline_is_active, deadline_margin, safe_accel_interval,
    FeasibilityVerdict, FeasibleInterval, BOUND_TOL,
};
use crate::drag::{gradient_flow_bound, DragError};
use crate::params::SimParams;
use crate::vehicle::{RelativeKinematics, VehicleMode, VehicleState};

/// Constraint kinds that can bind the chosen acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    SpeedFloor,
    SpeedCeil,
    Safety,
    GradientFlow,
    Deadline,
}

impl Constraint {
    const ALL: [Constraint; 5] = [
        Constraint::SpeedFloor,
        Constraint::SpeedCeil,
        Constraint::Safety,
        Constraint::GradientFlow,
        Constraint::Deadline,
    ];

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// Small set of [`Constraint`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActiveConstraints(u8);

impl ActiveConstraints {
    pub fn insert(&mut self, c: Constraint) {
        self.0 |= c.bit();
    }

    pub fn contains(&self, c: Constraint) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Constraint> + '_ {
        Constraint::ALL.into_iter().filter(|c| self.contains(*c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    pub accel: f64,
    pub verdict: FeasibilityVerdict,
    pub active: ActiveConstraints,
    /// Mode the vehicle should run from the next step on.
    pub next_mode: VehicleMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlError {
    Drag(DragError),
}

impl From<DragError> for ControlError {
    fn from(e: DragError) -> Self {
        Self::Drag(e)
    }
}

impl fmt::Display for ControlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Drag(e) => write!(f, "drag model: {e}"),
        }
    }
}

impl core::error::Error for ControlError {}

/// Ingredients of the follower problem at one state.
#[derive(Debug, Clone, Copy)]
struct FollowerBounds {
    safe: FeasibleInterval,
    grad: f64,
    deadline_active: bool,
}

impl FollowerBounds {
    fn evaluate(
        state: &VehicleState,
        rel: &RelativeKinematics,
        pred_accel: f64,
        t: f64,
        params: &SimParams,
    ) -> Result<Self, ControlError> {
        let safe = safe_accel_interval(state.speed, rel.p_hat, rel.v_hat, pred_accel, params);
        let grad = gradient_flow_bound(state.speed, rel.p_hat, rel.v_hat, false, &params.drag)?;
        let margin = deadline_margin(
            state.position,
            state.speed,
            t,
            state.exit_position,
            state.deadline,
        );
        Ok(Self {
            safe,
            grad,
            deadline_active: deadline_is_active(margin, params),
        })
    }

    fn interval(&self, with_deadline: bool) -> FeasibleInterval {
        let iv = self.safe.cap_above(self.grad);
        if with_deadline && self.deadline_active {
            iv.cap_below(0.0)
        } else {
            iv
        }
    }

    fn verdict(
        &self,
        v: f64,
        v_hat: f64,
        with_deadline: bool,
        params: &SimParams,
    ) -> FeasibilityVerdict {
        let safety_active = self.safe.hi < -BOUND_TOL;
        classify_feasibility(
            v,
            v_hat,
            self.grad,
            with_deadline && self.deadline_active,
            safety_active,
            params,
        )
    }
}

fn binding(a: f64, bound: f64) -> bool {
    libm::fabs(a - bound) <= 1e-9
}

fn collect_active(
    a: f64,
    v: f64,
    safe: &FeasibleInterval,
    grad: Option<f64>,
    deadline_floor: Option<f64>,
    params: &SimParams,
) -> ActiveConstraints {
    let mut active = ActiveConstraints::default();
    let floor = params.braking_limit(v);
    let ceil = params.accel_limit(v);
    if binding(a, floor) && floor > params.a_min {
        active.insert(Constraint::SpeedFloor);
    }
    if binding(a, ceil) && ceil < params.a_max {
        active.insert(Constraint::SpeedCeil);
    }
    if binding(a, safe.hi) && safe.hi < ceil {
        active.insert(Constraint::Safety);
    }
    if grad.is_some_and(|g| binding(a, g)) {
        active.insert(Constraint::GradientFlow);
    }
    if deadline_floor.is_some_and(|d| binding(a, d)) {
        active.insert(Constraint::Deadline);
    }
    active
}

/// Would this vehicle, run as a plain follower, have a non-empty problem?
///
/// Used by platoon heads to decide whether to merge into the platoon ahead.
pub fn follower_verdict(
    state: &VehicleState,
    rel: &RelativeKinematics,
    pred_accel: f64,
    t: f64,
    params: &SimParams,
) -> Result<FeasibilityVerdict, ControlError> {
    let bounds = FollowerBounds::evaluate(state, rel, pred_accel, t, params)?;
    if bounds.interval(true).is_empty() {
        Ok(bounds.verdict(state.speed, rel.v_hat, true, params))
    } else {
        Ok(FeasibilityVerdict::Feasible)
    }
}

/// Minimum-norm follower control with the infeasibility fallbacks.
///
/// A deadline conflict drops the deadline and re-solves; a split condition
/// hands the vehicle to the leader policy in the same step.
pub fn solve_follower_control(
    state: &VehicleState,
    rel: &RelativeKinematics,
    pred_accel: f64,
    t: f64,
    params: &SimParams,
) -> Result<ControlDecision, ControlError> {
    let bounds = FollowerBounds::evaluate(state, rel, pred_accel, t, params)?;
    let with_deadline = state.mode == VehicleMode::Follower;

    let iv = bounds.interval(with_deadline);
    if let Some(a) = iv.min_norm() {
        let deadline_floor = (with_deadline && bounds.deadline_active).then_some(0.0);
        return Ok(ControlDecision {
            accel: a,
            verdict: FeasibilityVerdict::Feasible,
            active: collect_active(
                a,
                state.speed,
                &bounds.safe,
                Some(bounds.grad),
                deadline_floor,
                params,
            ),
            next_mode: state.mode,
        });
    }

    let mut verdict = bounds.verdict(state.speed, rel.v_hat, with_deadline, params);
    let mut mode = state.mode;
    if verdict == FeasibilityVerdict::DeadlineConflict {
        mode = update_mode(mode, verdict, 0.0, params);
        let relaxed = bounds.interval(false);
        if let Some(a) = relaxed.min_norm() {
            return Ok(ControlDecision {
                accel: a,
                verdict,
                active: collect_active(
                    a,
                    state.speed,
                    &bounds.safe,
                    Some(bounds.grad),
                    None,
                    params,
                ),
                next_mode: mode,
            });
        }
        verdict = bounds.verdict(state.speed, rel.v_hat, false, params);
    }

    let head_mode = update_mode(mode, verdict, 0.0, params);
    let promoted = VehicleState {
        mode: head_mode,
        ..state.clone()
    };
    let fallback = leader_control(&promoted, Some(rel), pred_accel, t, params)?;
    Ok(ControlDecision {
        verdict,
        next_mode: fallback.next_mode,
        ..fallback
    })
}

/// Lower acceleration bound that keeps the one-step deadline margin at or
/// below `−eps_d`; zero once the deadline is active.
pub fn deadline_accel_floor(margin: f64, time_left: f64, params: &SimParams) -> f64 {
    if !params.deadlines {
        return f64::NEG_INFINITY;
    }
    // margin' = margin − a·dt·(T − dt/2)
    let lever = params.dt * (time_left - 0.5 * params.dt);
    if margin >= -params.eps_d || lever <= 0.0 {
        0.0
    } else {
        ((margin + params.eps_d) / lever).min(0.0)
    }
}

/// Control of a platoon head.
///
/// `physical_pred` is the vehicle directly ahead on the road, if any; its
/// stopping margin is always enforced.
pub fn leader_control(
    state: &VehicleState,
    physical_pred: Option<&RelativeKinematics>,
    pred_accel: f64,
    t: f64,
    params: &SimParams,
) -> Result<ControlDecision, ControlError> {
    let v = state.speed;
    let safe = match physical_pred {
        Some(rel) => safe_accel_interval(v, rel.p_hat, rel.v_hat, pred_accel, params),
        None => FeasibleInterval::new(params.braking_limit(v), params.accel_limit(v)),
    };
    let margin = deadline_margin(state.position, v, t, state.exit_position, state.deadline);

    let (accel, deadline_floor) = match state.mode {
        VehicleMode::LeaderRecovering => (safe.hi, None),
        _ => {
            let floor = deadline_accel_floor(margin, state.deadline - t, params);
            // safety outranks the deadline
            (safe.lo.max(floor).min(safe.hi), Some(floor))
        }
    };
    let mode = if state.mode.is_head() {
        state.mode
    } else {
        state.mode.promoted()
    };
    let next_mode = update_mode(mode, FeasibilityVerdict::Feasible, margin, params);
    Ok(ControlDecision {
        accel,
        verdict: FeasibilityVerdict::Feasible,
        active: collect_active(accel, v, &safe, None, deadline_floor, params),
        next_mode,
    })
}

/// Mode transitions driven by a verdict and the current deadline margin.
pub fn update_mode(
    mode: VehicleMode,
    verdict: FeasibilityVerdict,
    deadline_margin: f64,
    params: &SimParams,
) -> VehicleMode {
    use VehicleMode::*;
    match (mode, verdict) {
        (Follower, v) if v.is_split() => Leader,
        (Follower, FeasibilityVerdict::DeadlineConflict) => FollowerDeadlineRelaxed,
        (FollowerDeadlineRelaxed, v) if v.is_split() => LeaderRecovering,
        (LeaderRecovering, _) if deadline_margin <= -params.eps_d => Leader,
        (m, _) => m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{relative_kinematics, test_vehicle};
    use approx::assert_relative_eq;

    fn params() -> SimParams {
        SimParams::default()
    }

    fn pair(v: f64, p_hat: f64, v_hat: f64) -> (VehicleState, RelativeKinematics) {
        let me = test_vehicle(1, 1000.0, v);
        let pred = test_vehicle(0, 1000.0 - p_hat, v - v_hat);
        let rel = relative_kinematics(&me, Some(&pred)).unwrap();
        (me, rel)
    }

    #[test]
    fn interior_follower_coasts() {
        let (me, rel) = pair(30.0, -20.0, 2.0);
        let d = solve_follower_control(&me, &rel, 0.0, 0.0, &params()).unwrap();
        assert_eq!(d.accel, 0.0);
        assert_eq!(d.verdict, FeasibilityVerdict::Feasible);
    }

    #[test]
    fn follower_tracks_gradient_bound_when_falling_behind() {
        let (me, rel) = pair(30.0, -20.0, -1.0);
        let d = solve_follower_control(&me, &rel, 0.0, 0.0, &params()).unwrap();
        assert_relative_eq!(d.accel, -0.165_401_938_190_260_36, max_relative = 1e-9);
        assert!(d.active.contains(Constraint::GradientFlow));
    }

    #[test]
    fn active_deadline_holds_speed() {
        let (mut me, rel) = pair(30.0, -20.0, 2.0);
        // margin exactly zero
        me.exit_position = me.position + 30.0 * 10.0;
        me.deadline = 10.0;
        let d = solve_follower_control(&me, &rel, 0.0, 0.0, &params()).unwrap();
        assert_eq!(d.accel, 0.0);
        assert!(d.active.contains(Constraint::Deadline));
    }

    #[test]
    fn speed_floor_with_braking_gradient_splits() {
        let p = params();
        let (me, rel) = pair(p.v_min, -20.0, -1.2);
        let d = solve_follower_control(&me, &rel, 0.0, 0.0, &p).unwrap();
        assert_eq!(d.verdict, FeasibilityVerdict::SplitCond1);
        assert_eq!(d.next_mode, VehicleMode::Leader);
        // leader policy at v_min
        assert_eq!(d.accel, 0.0);
    }

    #[test]
    fn deadline_conflict_relaxes_and_resolves() {
        let p = params();
        let v_hat = 5.0;
        let p_hat =
            -p.delta - v_hat * (30.0 - p.v_min) / -p.a_min + v_hat * v_hat / (2.0 * -p.a_min);
        let (mut me, rel) = pair(30.0, p_hat, v_hat);
        me.exit_position = me.position + 300.0;
        me.deadline = 10.0;
        let d = solve_follower_control(&me, &rel, 0.0, 0.0, &p).unwrap();
        assert_eq!(d.verdict, FeasibilityVerdict::DeadlineConflict);
        assert_eq!(d.next_mode, VehicleMode::FollowerDeadlineRelaxed);
        assert!(d.accel < 0.0);
    }

    #[test]
    fn leader_policy() {
        let p = params();
        let mut me = test_vehicle(0, 100.0, 30.0);
        me.mode = VehicleMode::Leader;
        let d = leader_control(&me, None, 0.0, 0.0, &p).unwrap();
        assert_eq!(d.accel, p.a_min);

        me.speed = p.v_min;
        let d = leader_control(&me, None, 0.0, 0.0, &p).unwrap();
        assert_eq!(d.accel, 0.0);

        me.speed = 25.0;
        me.mode = VehicleMode::LeaderRecovering;
        me.exit_position = 1500.0;
        me.deadline = 10.0;
        let d = leader_control(&me, None, 0.0, 0.0, &p).unwrap();
        assert_eq!(d.accel, p.a_max);
    }

    #[test]
    fn leader_holds_speed_when_deadline_binds() {
        let p = params();
        let mut me = test_vehicle(0, 500.0, 25.0);
        me.mode = VehicleMode::Leader;
        me.exit_position = 1500.0;
        me.deadline = 40.0;
        let d = leader_control(&me, None, 0.0, 0.0, &p).unwrap();
        assert_eq!(d.accel, 0.0);
    }

    #[test]
    fn mode_transitions() {
        let p = params();
        use FeasibilityVerdict::*;
        use VehicleMode::*;
        assert_eq!(update_mode(Follower, SplitCond2, 0.0, &p), Leader);
        assert_eq!(
            update_mode(Follower, DeadlineConflict, 0.0, &p),
            FollowerDeadlineRelaxed
        );
        assert_eq!(
            update_mode(FollowerDeadlineRelaxed, SplitCond1, 0.0, &p),
            LeaderRecovering
        );
        assert_eq!(update_mode(LeaderRecovering, Feasible, -1.0, &p), Leader);
        assert_eq!(
            update_mode(LeaderRecovering, Feasible, 0.0, &p),
            LeaderRecovering
        );
        assert_eq!(update_mode(Follower, Feasible, 0.0, &p), Follower);
        assert_eq!(
            update_mode(FollowerDeadlineRelaxed, Feasible, -5.0, &p),
            FollowerDeadlineRelaxed
        );
    }

    #[test]
    fn active_set_iteration() {
        let mut s = ActiveConstraints::default();
        assert!(s.is_empty());
        s.insert(Constraint::Safety);
        s.insert(Constraint::Deadline);
        let v: std::vec::Vec<_> = s.iter().collect();
        assert_eq!(v, [Constraint::Safety, Constraint::Deadline]);
    }
}
