//! Post-hoc metrics, platoon detection and independent oracles.
//!
//! Nothing here calls into the controller's interval arithmetic: the checkers
//! work from trajectory logs or re-derive each constraint by direct
//! substitution, so they can catch mistakes in the engine.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraints::{deadline_margin, stopping_margin};
use crate::drag::DragModel;
use crate::params::SimParams;
use crate::sim::{step, SimError, TrajectoryRecord, WorldState};
use crate::vehicle::{RelativeKinematics, VehicleId, VehicleMode, VehicleState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatoonGroup {
    pub head: VehicleId,
    /// Front to back.
    pub members: Vec<VehicleId>,
}

/// Physical platoons at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonReport {
    pub time: f64,
    pub groups: Vec<PlatoonGroup>,
}

/// First time a vehicle sat at the minimum gap and zero relative speed
/// behind a given predecessor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationEvent {
    pub follower: VehicleId,
    pub leader: VehicleId,
    pub time: f64,
}

fn joined(gap_excess: f64, v_hat: f64, params: &SimParams) -> bool {
    libm::fabs(v_hat) <= params.eps_platoon.speed
        && libm::fabs(gap_excess) <= params.eps_platoon.gap
}

/// Group `(id, position, speed)` samples into physical platoons.
pub fn detect_platoons(
    time: f64,
    snapshot: &[(VehicleId, f64, f64)],
    params: &SimParams,
) -> PlatoonReport {
    let mut order: Vec<(VehicleId, f64, f64)> = snapshot.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut groups: Vec<PlatoonGroup> = Vec::new();
    for (i, &(id, p, v)) in order.iter().enumerate() {
        let attached = i > 0 && {
            let (_, pp, pv) = order[i - 1];
            joined(p - pp + params.delta, v - pv, params)
        };
        match groups.last_mut() {
            Some(g) if attached => g.members.push(id),
            _ => groups.push(PlatoonGroup {
                head: id,
                members: vec![id],
            }),
        }
    }
    PlatoonReport { time, groups }
}

/// Records grouped by time, each group sorted by decreasing position.
fn by_time(trajectory: &[TrajectoryRecord]) -> Vec<Vec<&TrajectoryRecord>> {
    let mut sorted: Vec<&TrajectoryRecord> = trajectory.iter().collect();
    sorted.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(b.position.total_cmp(&a.position))
    });
    let mut out: Vec<Vec<&TrajectoryRecord>> = Vec::new();
    for r in sorted {
        match out.last_mut() {
            Some(g) if g[0].time == r.time => g.push(r),
            _ => out.push(vec![r]),
        }
    }
    out
}

pub fn platoon_reports(trajectory: &[TrajectoryRecord], params: &SimParams) -> Vec<PlatoonReport> {
    by_time(trajectory)
        .into_iter()
        .map(|g| {
            let snap: Vec<_> = g
                .iter()
                .map(|r| (r.vehicle_id, r.position, r.speed))
                .collect();
            detect_platoons(g[0].time, &snap, params)
        })
        .collect()
}

pub fn formation_events(
    trajectory: &[TrajectoryRecord],
    params: &SimParams,
) -> Vec<FormationEvent> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for g in by_time(trajectory) {
        for w in g.windows(2) {
            let (pred, me) = (w[0], w[1]);
            let key = (me.vehicle_id, pred.vehicle_id);
            if !seen.contains_key(&key)
                && joined(
                    me.position - pred.position + params.delta,
                    me.speed - pred.speed,
                    params,
                )
            {
                seen.insert(key, me.time);
                out.push(FormationEvent {
                    follower: me.vehicle_id,
                    leader: pred.vehicle_id,
                    time: me.time,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleEnergy {
    /// ∫F² dt (m²/s³).
    pub drag_squared: f64,
    /// ∫max(u, 0)·v dt (m²/s²).
    pub propulsive_work: f64,
    /// Time between first and last record (s).
    pub lifetime: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyMetrics {
    pub per_vehicle: BTreeMap<VehicleId, VehicleEnergy>,
}

impl EnergyMetrics {
    pub fn total_drag_squared(&self) -> f64 {
        self.per_vehicle.values().map(|e| e.drag_squared).sum()
    }

    pub fn total_propulsive_work(&self) -> f64 {
        self.per_vehicle.values().map(|e| e.propulsive_work).sum()
    }
}

/// Trapezoidal integrals of `F²` and of propulsive power per vehicle.
pub fn drag_energy(trajectory: &[TrajectoryRecord]) -> EnergyMetrics {
    let mut tracks: BTreeMap<VehicleId, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in trajectory {
        tracks.entry(r.vehicle_id).or_default().push(r);
    }
    let mut metrics = EnergyMetrics::default();
    for (id, mut track) in tracks {
        track.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut e = VehicleEnergy::default();
        for w in track.windows(2) {
            let h = w[1].time - w[0].time;
            e.drag_squared += 0.5 * h * (w[0].drag * w[0].drag + w[1].drag * w[1].drag);
            let power = |r: &TrajectoryRecord| r.applied_force.max(0.0) * r.speed;
            e.propulsive_work += 0.5 * h * (power(w[0]) + power(w[1]));
        }
        if let (Some(first), Some(last)) = (track.first(), track.last()) {
            e.lifetime = last.time - first.time;
        }
        metrics.per_vehicle.insert(id, e);
    }
    metrics
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyViolation {
    pub time: f64,
    pub vehicle: VehicleId,
    pub predecessor: VehicleId,
    /// `p̂ + δ`.
    pub gap_excess: f64,
}

/// Every record whose gap to the vehicle physically ahead exceeds the
/// discretization slack. Ordering is rebuilt from positions, not taken from
/// the engine.
pub fn check_safety_log(
    trajectory: &[TrajectoryRecord],
    params: &SimParams,
) -> Vec<SafetyViolation> {
    let limit = params.safety_slack();
    let mut out = Vec::new();
    for g in by_time(trajectory) {
        for w in g.windows(2) {
            let excess = w[1].position - w[0].position + params.delta;
            if excess > limit {
                out.push(SafetyViolation {
                    time: w[1].time,
                    vehicle: w[1].vehicle_id,
                    predecessor: w[0].vehicle_id,
                    gap_excess: excess,
                });
            }
        }
    }
    out
}

/// Largest `p̂ + δ` in the log, if any two vehicles coexisted.
pub fn max_gap_excess(trajectory: &[TrajectoryRecord], params: &SimParams) -> Option<f64> {
    by_time(trajectory)
        .iter()
        .flat_map(|g| {
            g.windows(2)
                .map(|w| w[1].position - w[0].position + params.delta)
        })
        .reduce(f64::max)
}

/// Commands that break "followers with an inactive deadline and leaders never
/// accelerate".
pub fn check_nonpositive_accel(
    trajectory: &[TrajectoryRecord],
    tol: f64,
) -> Vec<&TrajectoryRecord> {
    trajectory
        .iter()
        .filter(|r| match r.mode {
            VehicleMode::Follower => !r.deadline_active && r.accel > tol,
            VehicleMode::Leader => r.accel > tol,
            _ => false,
        })
        .collect()
}

/// `c·dt²` with `c = 4·a_max·max|F·F_v|` over a 50×50 follower grid and the
/// free-stream curve.
pub fn gradient_flow_slack(params: &SimParams) -> f64 {
    let n = 50;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let v = params.v_min + (params.v_max - params.v_min) * i as f64 / (n - 1) as f64;
        if let (Ok(f), Ok(d)) = (
            params.drag.force(v, 0.0, true),
            params.drag.partials(v, 0.0, true),
        ) {
            worst = worst.max(libm::fabs(f * d.dv));
        }
        for j in 0..n {
            let p_hat = -200.0 + (200.0 - params.delta) * j as f64 / (n - 1) as f64;
            if let (Ok(f), Ok(d)) = (
                params.drag.force(v, p_hat, false),
                params.drag.partials(v, p_hat, false),
            ) {
                worst = worst.max(libm::fabs(f * d.dv));
            }
        }
    }
    4.0 * params.a_max * worst * params.dt * params.dt
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFlowViolation {
    pub vehicle: VehicleId,
    pub time: f64,
    /// `F²(t + dt) − F²(t)`.
    pub increase: f64,
}

/// Step-to-step increases of a follower's `F²` beyond `slack`.
///
/// Only consecutive records where the vehicle ran the follower problem
/// successfully behind the same predecessor are compared.
pub fn check_gradient_flow(
    trajectory: &[TrajectoryRecord],
    params: &SimParams,
    slack: f64,
) -> Vec<GradientFlowViolation> {
    let mut tracks: BTreeMap<VehicleId, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in trajectory {
        tracks.entry(r.vehicle_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (id, mut track) in tracks {
        track.sort_by(|a, b| a.time.total_cmp(&b.time));
        for w in track.windows(2) {
            let (a, b) = (w[0], w[1]);
            let comparable = a.mode == VehicleMode::Follower
                && a.verdict == crate::constraints::FeasibilityVerdict::Feasible
                && a.predecessor.is_some()
                && a.predecessor == b.predecessor
                && (b.time - a.time - params.dt).abs() < 1e-9;
            if !comparable {
                continue;
            }
            let increase = b.drag * b.drag - a.drag * a.drag;
            if increase > slack {
                out.push(GradientFlowViolation {
                    vehicle: id,
                    time: a.time,
                    increase,
                });
            }
        }
    }
    out
}

/// Brute-force solution of the follower problem on a uniform grid.
///
/// Each constraint is evaluated by substituting the candidate acceleration:
/// speed limits on the next speed, the stopping margin of the predicted next
/// state, the sign of `J̇ = F·(F_v·a + F_p̂·v̂)` and the deadline sign
/// condition. Returns the feasible point of smallest magnitude, or `None`.
/// If no grid point is feasible the violation is minimized by ternary search
/// in case the feasible set is narrower than the grid spacing.
pub fn brute_force_control(
    state: &VehicleState,
    rel: &RelativeKinematics,
    pred_accel: f64,
    t: f64,
    params: &SimParams,
    grid_n: usize,
) -> Option<f64> {
    const TOL: f64 = 1e-9;
    let violation = |a: f64| problem_violation(state, rel, pred_accel, t, params, a);

    let n = grid_n.max(1);
    let span = params.a_max - params.a_min;
    let mut best: Option<f64> = None;
    let candidates = (0..=n)
        .map(|k| params.a_min + span * k as f64 / n as f64)
        .chain([0.0]);
    for a in candidates {
        if violation(a) <= TOL && best.map_or(true, |b: f64| libm::fabs(a) < libm::fabs(b)) {
            best = Some(a);
        }
    }
    if best.is_some() {
        return best;
    }
    let (mut lo, mut hi) = (params.a_min, params.a_max);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if violation(m1) <= violation(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let a = 0.5 * (lo + hi);
    (violation(a) <= TOL).then_some(a)
}

/// Largest constraint violation of the follower problem at acceleration `a`;
/// feasible iff `≤ 0` (up to rounding).
pub fn problem_violation(
    state: &VehicleState,
    rel: &RelativeKinematics,
    pred_accel: f64,
    t: f64,
    params: &SimParams,
    a: f64,
) -> f64 {
    let dt = params.dt;
    let v = state.speed;
    let v_next = v + a * dt;
    let hardest = params.a_min.max((params.v_min - v) / dt);

    let mut worst = (params.a_min - a).max(a - params.a_max);
    worst = worst
        .max((params.v_min - v_next) / dt)
        .max((v_next - params.v_max) / dt);

    // predecessor motion over the step, respecting its own speed floor
    let v_pred = v - rel.v_hat;
    let v_pred_next = (v_pred + pred_accel * dt).max(params.v_min);
    let a_pred = (v_pred_next - v_pred) / dt;
    let g = stopping_margin(v, rel.p_hat, rel.v_hat, params);
    if params.gamma > 0.0 || g >= -params.eps_g {
        let p_hat_next = rel.p_hat + rel.v_hat * dt + 0.5 * (a - a_pred) * dt * dt;
        let g_next = stopping_margin(v_next, p_hat_next, v_next - v_pred_next, params);
        let target = (1.0 - params.gamma * dt) * g;
        let scale = 1.0f64.max(libm::fabs(target));
        // the hardest admissible braking is always acceptable
        worst = worst.max(((g_next - target) / scale).min(a - hardest));
    }

    if let Ok(d) = params.drag.partials(v, rel.p_hat, false) {
        worst = worst.max(d.dv * a + d.dp * rel.v_hat);
    }

    let margin = deadline_margin(state.position, v, t, state.exit_position, state.deadline);
    if state.mode == VehicleMode::Follower && params.deadlines && margin >= -params.eps_d {
        worst = worst.max(-a);
    }
    worst
}

/// Outcome of one worst-case braking episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrakingEpisodeReport {
    pub steps: usize,
    /// Steps at which the safe interval was empty or excluded full braking.
    pub failures: usize,
    pub max_abs_delta_g: f64,
    pub max_g: f64,
}

/// The predecessor brakes at `a_min` to `v_min` and cruises; the follower
/// brakes as hard as it may. At every step the safe interval must be
/// non-empty and contain the follower's command.
pub fn braking_episode(v: f64, p_hat: f64, v_hat: f64, params: &SimParams) -> BrakingEpisodeReport {
    use crate::constraints::safe_accel_interval;
    let dt = params.dt;
    let (mut v, mut v_pred, mut p_hat) = (v, v - v_hat, p_hat);
    let t_stop = (v.max(v_pred) - params.v_min) / libm::fabs(params.a_min);
    let steps = libm::ceil((t_stop + 5.0) / dt) as usize;
    let mut report = BrakingEpisodeReport {
        steps,
        failures: 0,
        max_abs_delta_g: 0.0,
        max_g: f64::NEG_INFINITY,
    };
    let mut g = stopping_margin(v, p_hat, v - v_pred, params);
    for _ in 0..steps {
        let a_pred = params.braking_limit(v_pred);
        let a = params.braking_limit(v);
        let iv = safe_accel_interval(v, p_hat, v - v_pred, a_pred, params);
        if !iv.contains(a) {
            report.failures += 1;
        }
        p_hat += (v - v_pred) * dt + 0.5 * (a - a_pred) * dt * dt;
        v = (v + a * dt).max(params.v_min);
        v_pred = (v_pred + a_pred * dt).max(params.v_min);
        let g_next = stopping_margin(v, p_hat, v - v_pred, params);
        report.max_abs_delta_g = report.max_abs_delta_g.max(libm::fabs(g_next - g));
        report.max_g = report.max_g.max(g_next);
        g = g_next;
    }
    report
}

/// Result of a two-vehicle formation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationOutcome {
    /// First time the pair was inside the platoon tolerance.
    pub converged_at: Option<f64>,
    pub min_v_hat: f64,
    /// Any step with an active deadline.
    pub deadline_touched: bool,
    /// Follower left the follower mode.
    pub split: bool,
}

/// Run a leader and a faster follower until they form a platoon or the
/// leader covers `distance` metres. Deadlines are `deadline_factor` times the
/// free-flow travel time.
pub fn formation_pair(
    pred_speed: f64,
    speed: f64,
    p_hat: f64,
    distance: f64,
    deadline_factor: f64,
    params: &SimParams,
) -> Result<FormationOutcome, SimError> {
    let mut p = params.clone();
    p.spawn.enabled = false;
    let lead_pos = -p_hat;
    let exit = lead_pos + distance;
    let free_flow = |from: f64| (exit - from) / p.v_max;
    let lead = VehicleState {
        id: 0,
        position: lead_pos,
        speed: pred_speed,
        accel: 0.0,
        spawn_time: 0.0,
        deadline: deadline_factor * free_flow(lead_pos),
        exit_position: exit,
        mode: VehicleMode::Leader,
        platoon_id: 0,
    };
    let follower = VehicleState {
        id: 1,
        position: 0.0,
        speed,
        deadline: deadline_factor * free_flow(0.0),
        mode: VehicleMode::Follower,
        ..lead.clone()
    };
    let mut world = WorldState::with_vehicles(&p, vec![lead, follower])?;
    let mut out = FormationOutcome {
        converged_at: None,
        min_v_hat: speed - pred_speed,
        deadline_touched: false,
        split: false,
    };
    while world.vehicles.len() == 2 {
        step(&mut world, &p)?;
        if world
            .trajectory
            .iter()
            .rev()
            .take(2)
            .any(|r| r.deadline_active)
        {
            out.deadline_touched = true;
        }
        world.trajectory.clear();
        if world.vehicles.len() < 2 {
            break;
        }
        let (a, b) = (&world.vehicles[0], &world.vehicles[1]);
        let v_hat = b.speed - a.speed;
        out.min_v_hat = out.min_v_hat.min(v_hat);
        if b.mode != VehicleMode::Follower {
            out.split = true;
        }
        if joined(b.position - a.position + p.delta, v_hat, &p) {
            out.converged_at = Some(world.t);
            break;
        }
    }
    Ok(out)
}

/// Largest deviations of a formed pair at `(v_min, −δ)` over `steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumDrift {
    pub gap: f64,
    pub speed: f64,
    pub accel: f64,
}

pub fn kkt_hold(steps: usize, params: &SimParams) -> Result<EquilibriumDrift, SimError> {
    let mut p = params.clone();
    p.spawn.enabled = false;
    let far = 1.0e9;
    let lead = VehicleState {
        id: 0,
        position: 1000.0,
        speed: p.v_min,
        accel: 0.0,
        spawn_time: 0.0,
        deadline: far,
        exit_position: far,
        mode: VehicleMode::Leader,
        platoon_id: 0,
    };
    let follower = VehicleState {
        id: 1,
        position: 1000.0 - p.delta,
        mode: VehicleMode::Follower,
        ..lead.clone()
    };
    let mut world = WorldState::with_vehicles(&p, vec![lead, follower])?;
    let mut drift = EquilibriumDrift {
        gap: 0.0,
        speed: 0.0,
        accel: 0.0,
    };
    for _ in 0..steps {
        step(&mut world, &p)?;
        for r in world.trajectory.drain(..) {
            drift.accel = drift.accel.max(libm::fabs(r.accel));
        }
        let (a, b) = (&world.vehicles[0], &world.vehicles[1]);
        drift.gap = drift.gap.max(libm::fabs(a.position - b.position - p.delta));
        for v in [a, b] {
            drift.speed = drift.speed.max(libm::fabs(v.speed - p.v_min));
        }
    }
    Ok(drift)
}
