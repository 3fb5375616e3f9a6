//! Open-system engine: spawning, fixed-step integration, exits, platoon
//! resequencing and event logging.
//!
//! One step runs these phases in order:
//!
//! 1. control, front to back over the step-start snapshot, so each vehicle
//!    can use the command its predecessor just issued;
//! 2. constant-acceleration integration and speed projection;
//! 3. exits;
//! 4. resequencing (splits, then merges);
//! 5. spawns that are due;
//! 6. invariant audits.
//!
//! The RNG belongs to the world and is consumed in a fixed order per spawn
//! attempt: delay, entry location, speed, exit, deadline.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{
    deadline_is_active, deadline_margin, stopping_margin, FeasibilityVerdict,
};
use crate::controller::{
    follower_verdict, leader_control, solve_follower_control, ControlDecision, ControlError,
};
use crate::drag::DragModel;
use crate::params::{validate_params, ParamViolation, SimParams};
use crate::vehicle::{relative_kinematics, OrderingError, VehicleId, VehicleMode, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Spawn,
    Discard,
    Exit,
    Split,
    Merge,
    DeadlineRelax,
    DeadlineRecovered,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Spawn => "spawn",
            Self::Discard => "discard",
            Self::Exit => "exit",
            Self::Split => "split",
            Self::Merge => "merge",
            Self::DeadlineRelax => "deadline_relax",
            Self::DeadlineRecovered => "deadline_recovered",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub vehicle_id: VehicleId,
    pub detail: String,
}

/// State of one vehicle at the start of a step, with the command it issued.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub vehicle_id: VehicleId,
    pub platoon_id: u64,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    /// `u = a + F`.
    pub applied_force: f64,
    pub drag: f64,
    /// `g_s` against the physical predecessor, if any.
    pub gs_margin: Option<f64>,
    pub deadline_margin: f64,
    /// Mode the command was computed in.
    pub mode: VehicleMode,
    pub predecessor: Option<VehicleId>,
    pub deadline_active: bool,
    pub verdict: FeasibilityVerdict,
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub spawn_attempts: u64,
    pub spawned: u64,
    pub discarded: u64,
    pub exited: u64,
    pub splits: u64,
    pub merges: u64,
    pub relaxations: u64,
    /// Largest `p̂ + δ` seen after any step (−∞ if never two vehicles).
    pub max_gap_excess: f64,
    pub final_time: f64,
}

impl Default for RunSummary {
    fn default() -> Self {
        Self {
            steps: 0,
            spawn_attempts: 0,
            spawned: 0,
            discarded: 0,
            exited: 0,
            splits: 0,
            merges: 0,
            relaxations: 0,
            max_gap_excess: f64::NEG_INFINITY,
            final_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trajectory: Vec<TrajectoryRecord>,
    pub events: Vec<Event>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidParams(Vec<ParamViolation>),
    EmptyTrip {
        start: f64,
        exit: f64,
    },
    Ordering(OrderingError),
    Control {
        vehicle: VehicleId,
        source: ControlError,
    },
    /// `p̂ + δ` exceeded the discretization slack: an engine bug.
    SafetyAudit {
        time: f64,
        vehicle: VehicleId,
        predecessor: VehicleId,
        gap_excess: f64,
        limit: f64,
        dump: String,
    },
    PlatoonAudit {
        time: f64,
        detail: String,
    },
}

impl From<OrderingError> for SimError {
    fn from(e: OrderingError) -> Self {
        Self::Ordering(e)
    }
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidParams(v) => {
                f.write_str("invalid parameters:")?;
                for e in v {
                    write!(f, " {e};")?;
                }
                Ok(())
            }
            Self::EmptyTrip { start, exit } => {
                write!(f, "exit position {exit} m is not beyond start {start} m")
            }
            Self::Ordering(e) => write!(f, "{e}"),
            Self::Control { vehicle, source } => write!(f, "vehicle {vehicle}: {source}"),
            Self::SafetyAudit {
                time,
                vehicle,
                predecessor,
                gap_excess,
                limit,
                dump,
            } => write!(
                f,
                "safety audit failed at t={time}: vehicle {vehicle} behind {predecessor} has \
                 p_hat + delta = {gap_excess} > {limit}\n{dump}"
            ),
            Self::PlatoonAudit { time, detail } => {
                write!(f, "platoon audit failed at t={time}: {detail}")
            }
        }
    }
}

impl core::error::Error for SimError {}

/// The verdict a vehicle produced in the control phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepVerdict {
    pub vehicle: VehicleId,
    pub verdict: FeasibilityVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpawnOutcome {
    Spawned(VehicleId),
    Discarded(VehicleId),
}

/// Everything that evolves during a run.
#[derive(Debug, Clone)]
pub struct WorldState {
    /// Clock (s), always `step_index · dt`.
    pub t: f64,
    pub step_index: u64,
    /// Ordered by strictly decreasing position.
    pub vehicles: Vec<VehicleState>,
    /// Time of the next spawn attempt (s).
    pub next_spawn: f64,
    pub events: Vec<Event>,
    pub trajectory: Vec<TrajectoryRecord>,
    pub summary: RunSummary,
    rng: ChaCha8Rng,
    next_vehicle_id: VehicleId,
    next_platoon_id: u64,
}

impl WorldState {
    /// An empty road; the first spawn attempt is due immediately.
    pub fn new(params: &SimParams) -> Self {
        Self {
            t: 0.0,
            step_index: 0,
            vehicles: Vec::new(),
            next_spawn: 0.0,
            events: Vec::new(),
            trajectory: Vec::new(),
            summary: RunSummary::default(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            next_vehicle_id: 0,
            next_platoon_id: 0,
        }
    }

    /// A world seeded with given vehicles (sorted here by position).
    ///
    /// Platoon ids and modes are taken as given and must be consistent.
    pub fn with_vehicles(
        params: &SimParams,
        mut vehicles: Vec<VehicleState>,
    ) -> Result<Self, SimError> {
        vehicles.sort_by(|a, b| b.position.total_cmp(&a.position));
        let mut world = Self::new(params);
        world.next_vehicle_id = vehicles.iter().map(|v| v.id + 1).max().unwrap_or(0);
        world.next_platoon_id = vehicles.iter().map(|v| v.platoon_id + 1).max().unwrap_or(0);
        world.vehicles = vehicles;
        audit(&mut world, params)?;
        Ok(world)
    }

    /// Contiguous platoons, front to back, as `(platoon_id, members)`.
    pub fn platoons(&self) -> Vec<(u64, Vec<VehicleId>)> {
        let mut out: Vec<(u64, Vec<VehicleId>)> = Vec::new();
        for v in &self.vehicles {
            match out.last_mut() {
                Some((id, members)) if *id == v.platoon_id => members.push(v.id),
                _ => out.push((v.platoon_id, alloc::vec![v.id])),
            }
        }
        out
    }

    fn fresh_vehicle_id(&mut self) -> VehicleId {
        let id = self.next_vehicle_id;
        self.next_vehicle_id += 1;
        id
    }

    fn fresh_platoon_id(&mut self) -> u64 {
        let id = self.next_platoon_id;
        self.next_platoon_id += 1;
        id
    }

    fn log(&mut self, time: f64, kind: EventKind, vehicle_id: VehicleId, detail: String) {
        self.events.push(Event {
            time,
            kind,
            vehicle_id,
            detail,
        });
    }
}

/// Travel-time budget `t_f − t0 ~ U((S − p0)/v0, (S − p0)/v_min)`.
pub fn draw_deadline<R: Rng + ?Sized>(
    p0: f64,
    v0: f64,
    exit: f64,
    rng: &mut R,
    params: &SimParams,
) -> Result<f64, SimError> {
    if exit <= p0 {
        return Err(SimError::EmptyTrip { start: p0, exit });
    }
    let distance = exit - p0;
    let fastest = distance / v0;
    let slowest = distance / params.v_min;
    if fastest >= slowest {
        return Ok(slowest);
    }
    Ok(rng.gen_range(fastest..=slowest))
}

/// One insertion attempt at `entry`; the arrival delay and the entry location
/// have already been drawn.
pub fn try_spawn(
    world: &mut WorldState,
    entry: f64,
    params: &SimParams,
) -> Result<SpawnOutcome, SimError> {
    let t = world.t;
    let id = world.fresh_vehicle_id();
    world.summary.spawn_attempts += 1;

    // vehicles[..idx] are at or ahead of the entry
    let idx = world.vehicles.partition_point(|v| v.position >= entry);
    let ahead = idx.checked_sub(1).map(|i| world.vehicles[i].clone());
    let behind = world.vehicles.get(idx).cloned();

    let cap = match &ahead {
        Some(a) if entry > 0.0 && a.position - entry <= params.spawn.lookahead => {
            a.speed.min(params.v_max)
        }
        _ => params.v_max,
    };
    let v0 = world.rng.gen_range(params.v_min..=cap.max(params.v_min));
    let exits = params.road.exits_beyond(entry);
    if exits.is_empty() {
        return Err(SimError::EmptyTrip {
            start: entry,
            exit: params.road.length,
        });
    }
    let exit = exits[world.rng.gen_range(0..exits.len())];

    let own_ok = ahead.as_ref().map_or(true, |a| {
        a.position > entry && stopping_margin(v0, entry - a.position, v0 - a.speed, params) <= 0.0
    });
    let behind_ok = behind.as_ref().map_or(true, |b| {
        stopping_margin(b.speed, b.position - entry, b.speed - v0, params) <= 0.0
    });
    if !(own_ok && behind_ok) {
        world.summary.discarded += 1;
        world.log(
            t,
            EventKind::Discard,
            id,
            format!("entry={entry} v0={v0:.3}"),
        );
        return Ok(SpawnOutcome::Discarded(id));
    }

    let budget = draw_deadline(entry, v0, exit, &mut world.rng, params)?;
    let (mode, platoon_id) = match &ahead {
        Some(a) => (VehicleMode::Follower, a.platoon_id),
        None => (VehicleMode::Leader, world.fresh_platoon_id()),
    };
    world.vehicles.insert(
        idx,
        VehicleState {
            id,
            position: entry,
            speed: v0,
            accel: 0.0,
            spawn_time: t,
            deadline: t + budget,
            exit_position: exit,
            mode,
            platoon_id,
        },
    );
    world.summary.spawned += 1;
    world.log(
        t,
        EventKind::Spawn,
        id,
        format!(
            "entry={entry} v0={v0:.3} exit={exit} deadline={:.3}",
            t + budget
        ),
    );
    Ok(SpawnOutcome::Spawned(id))
}

fn spawn_due(world: &mut WorldState, params: &SimParams) -> Result<(), SimError> {
    if !params.spawn.enabled {
        return Ok(());
    }
    let entries = params.road.entry_points();
    while world.next_spawn <= world.t + 1e-9 {
        let delay = world
            .rng
            .gen_range(params.spawn.delay_min..=params.spawn.delay_max);
        world.next_spawn += delay;
        let entry = entries[world.rng.gen_range(0..entries.len())];
        try_spawn(world, entry, params)?;
    }
    Ok(())
}

/// Platoon heads must be in a head mode and nobody else may be.
fn promote_heads(vehicles: &mut [VehicleState]) {
    for i in 0..vehicles.len() {
        let starts = i == 0 || vehicles[i].platoon_id != vehicles[i - 1].platoon_id;
        if starts && !vehicles[i].mode.is_head() {
            vehicles[i].mode = vehicles[i].mode.promoted();
        }
    }
}

/// Splits for every split verdict, then merges of eligible heads into the
/// platoon physically ahead.
pub fn resequence(
    world: &mut WorldState,
    verdicts: &[StepVerdict],
    params: &SimParams,
) -> Result<(), SimError> {
    let t = world.t;
    let mut split_now = BTreeSet::new();
    for sv in verdicts.iter().filter(|sv| sv.verdict.is_split()) {
        let Some(i) = world.vehicles.iter().position(|v| v.id == sv.vehicle) else {
            continue;
        };
        split_now.insert(sv.vehicle);
        let old = world.vehicles[i].platoon_id;
        let is_run_start = i == 0 || world.vehicles[i - 1].platoon_id != old;
        world.vehicles[i].mode = world.vehicles[i].mode.promoted();
        if is_run_start {
            continue;
        }
        let new = world.fresh_platoon_id();
        for v in world.vehicles[i..]
            .iter_mut()
            .take_while(|v| v.platoon_id == old)
        {
            v.platoon_id = new;
        }
        world.summary.splits += 1;
        world.log(
            t,
            EventKind::Split,
            sv.vehicle,
            format!("{} -> platoon {new}", sv.verdict),
        );
    }

    for i in 1..world.vehicles.len() {
        let me = &world.vehicles[i];
        let pred = &world.vehicles[i - 1];
        if me.mode != VehicleMode::Leader
            || me.platoon_id == pred.platoon_id
            || split_now.contains(&me.id)
        {
            continue;
        }
        let rel = relative_kinematics(me, Some(pred))?;
        let pred_accel = params.assumed_pred_accel(pred.accel);
        let verdict = follower_verdict(me, &rel, pred_accel, t, params).map_err(|source| {
            SimError::Control {
                vehicle: me.id,
                source,
            }
        })?;
        if verdict != FeasibilityVerdict::Feasible {
            continue;
        }
        let (old, new, id) = (me.platoon_id, pred.platoon_id, me.id);
        world.vehicles[i].mode = VehicleMode::Follower;
        for v in world.vehicles[i..]
            .iter_mut()
            .take_while(|v| v.platoon_id == old)
        {
            v.platoon_id = new;
        }
        world.summary.merges += 1;
        world.log(t, EventKind::Merge, id, format!("joins platoon {new}"));
    }
    Ok(())
}

fn control_phase(
    world: &mut WorldState,
    params: &SimParams,
) -> Result<Vec<ControlDecision>, SimError> {
    let t = world.t;
    let n = world.vehicles.len();
    let mut decisions: Vec<ControlDecision> = Vec::with_capacity(n);
    for i in 0..n {
        let me = &world.vehicles[i];
        let pred = i.checked_sub(1).map(|j| &world.vehicles[j]);
        let rel = match pred {
            Some(p) => Some(relative_kinematics(me, Some(p))?),
            None => None,
        };
        let pred_accel = params.assumed_pred_accel(decisions.last().map_or(0.0, |d| d.accel));
        let decision = match &rel {
            Some(rel) if !me.mode.is_head() => {
                solve_follower_control(me, rel, pred_accel, t, params)
            }
            _ => leader_control(me, rel.as_ref(), pred_accel, t, params),
        }
        .map_err(|source| SimError::Control {
            vehicle: me.id,
            source,
        })?;

        let p_hat = rel.map_or(0.0, |r| r.p_hat);
        let drag = params
            .drag
            .force(me.speed, p_hat, rel.is_none())
            .map_err(|e| SimError::Control {
                vehicle: me.id,
                source: e.into(),
            })?;
        let margin = deadline_margin(me.position, me.speed, t, me.exit_position, me.deadline);
        world.trajectory.push(TrajectoryRecord {
            time: t,
            vehicle_id: me.id,
            platoon_id: me.platoon_id,
            position: me.position,
            speed: me.speed,
            accel: decision.accel,
            applied_force: decision.accel + drag,
            drag,
            gs_margin: rel.map(|r| stopping_margin(me.speed, r.p_hat, r.v_hat, params)),
            deadline_margin: margin,
            mode: me.mode,
            predecessor: pred.map(|p| p.id),
            deadline_active: deadline_is_active(margin, params),
            verdict: decision.verdict,
        });
        decisions.push(decision);
    }
    Ok(decisions)
}

/// Advance the world by one step of `params.dt`.
pub fn step(world: &mut WorldState, params: &SimParams) -> Result<(), SimError> {
    let t = world.t;
    let decisions = control_phase(world, params)?;

    let mut verdicts = Vec::new();
    let t_new = (world.step_index + 1) as f64 * params.dt;
    let mut relaxed = Vec::new();
    let mut recovered = Vec::new();
    for (v, d) in world.vehicles.iter_mut().zip(&decisions) {
        let dt = params.dt;
        v.position += v.speed * dt + 0.5 * d.accel * dt * dt;
        v.speed = (v.speed + d.accel * dt).clamp(params.v_min, params.v_max);
        v.accel = d.accel;

        if d.verdict == FeasibilityVerdict::DeadlineConflict && v.mode == VehicleMode::Follower {
            relaxed.push(v.id);
        }
        if d.verdict != FeasibilityVerdict::Feasible {
            verdicts.push(StepVerdict {
                vehicle: v.id,
                verdict: d.verdict,
            });
        }
        let was = v.mode;
        v.mode = d.next_mode;
        if v.mode == VehicleMode::LeaderRecovering {
            let m = deadline_margin(v.position, v.speed, t_new, v.exit_position, v.deadline);
            if m <= -params.eps_d {
                v.mode = VehicleMode::Leader;
            }
        }
        if was == VehicleMode::LeaderRecovering && v.mode == VehicleMode::Leader {
            recovered.push(v.id);
        }
    }
    for id in relaxed {
        world.summary.relaxations += 1;
        world.log(
            t,
            EventKind::DeadlineRelax,
            id,
            String::from("deadline_conflict"),
        );
    }

    world.t = t_new;
    world.step_index += 1;
    for id in recovered {
        world.log(t_new, EventKind::DeadlineRecovered, id, String::new());
    }

    let mut exited = Vec::new();
    world.vehicles.retain(|v| {
        let gone = v.position >= v.exit_position;
        if gone {
            exited.push((v.id, v.exit_position));
        }
        !gone
    });
    for (id, s) in exited {
        world.summary.exited += 1;
        world.log(t_new, EventKind::Exit, id, format!("exit={s}"));
    }
    promote_heads(&mut world.vehicles);

    resequence(world, &verdicts, params)?;
    promote_heads(&mut world.vehicles);
    spawn_due(world, params)?;

    world.summary.steps += 1;
    world.summary.final_time = t_new;
    audit(world, params)
}

fn dump_neighbourhood(vehicles: &[VehicleState], i: usize) -> String {
    let mut s = String::new();
    let lo = i.saturating_sub(2);
    let hi = (i + 2).min(vehicles.len());
    for v in &vehicles[lo..hi] {
        let _ = writeln!(
            s,
            "  id={} p={} v={} a={} mode={} platoon={}",
            v.id, v.position, v.speed, v.accel, v.mode, v.platoon_id
        );
    }
    s
}

fn audit(world: &mut WorldState, params: &SimParams) -> Result<(), SimError> {
    let t = world.t;
    let limit = params.safety_slack();
    let mut seen = BTreeSet::new();
    for i in 0..world.vehicles.len() {
        let me = &world.vehicles[i];
        let starts = i == 0 || world.vehicles[i - 1].platoon_id != me.platoon_id;
        if starts && !seen.insert(me.platoon_id) {
            return Err(SimError::PlatoonAudit {
                time: t,
                detail: format!("platoon {} is not contiguous", me.platoon_id),
            });
        }
        if starts != me.mode.is_head() {
            return Err(SimError::PlatoonAudit {
                time: t,
                detail: format!("vehicle {} has mode {} but heads={starts}", me.id, me.mode),
            });
        }
        if i == 0 {
            continue;
        }
        let pred = &world.vehicles[i - 1];
        relative_kinematics(me, Some(pred))?;
        let excess = me.position - pred.position + params.delta;
        if excess > world.summary.max_gap_excess {
            world.summary.max_gap_excess = excess;
        }
        if excess > limit {
            return Err(SimError::SafetyAudit {
                time: t,
                vehicle: me.id,
                predecessor: pred.id,
                gap_excess: excess,
                limit,
                dump: dump_neighbourhood(&world.vehicles, i),
            });
        }
    }
    Ok(())
}

/// Number of steps needed for the clock to reach `duration`.
pub fn step_count(params: &SimParams) -> u64 {
    if params.duration <= 0.0 {
        return 0;
    }
    libm::ceil(params.duration / params.dt - 1e-9) as u64
}

/// Run until the clock reaches `params.duration`.
pub fn run(params: &SimParams) -> Result<RunOutput, SimError> {
    validate_params(params).map_err(SimError::InvalidParams)?;
    let mut world = WorldState::new(params);
    run_world(&mut world, params)?;
    Ok(RunOutput {
        trajectory: world.trajectory,
        events: world.events,
        summary: world.summary,
    })
}

/// Step an existing world until the clock reaches `params.duration`.
pub fn run_world(world: &mut WorldState, params: &SimParams) -> Result<(), SimError> {
    for _ in world.step_index..step_count(params) {
        step(world, params)?;
    }
    Ok(())
}
