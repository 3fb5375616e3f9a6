//! The acceptance property suite behind `platoon verify`.

use std::time::{Duration, Instant};

use platoon_core::analysis::{
    braking_episode, brute_force_control, check_gradient_flow, check_nonpositive_accel,
    check_safety_log, formation_pair, gradient_flow_slack, kkt_hold,
};
use platoon_core::constraints::stopping_margin;
use platoon_core::controller::{follower_verdict, solve_follower_control};
use platoon_core::sim::run;
use platoon_core::{
    DragModel, FeasibilityVerdict, RelativeKinematics, RunOutput, SimError, SimParams, VehicleMode,
    VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::output::trajectory_csv;

pub const SEEDS: u64 = 50;
pub const FEASIBILITY_EPISODES: usize = 10_000;
pub const FORMATION_PAIRS: usize = 500;
pub const ORACLE_STATES: usize = 10_000;
pub const ORACLE_GRID: usize = 10_000;
pub const KKT_STEPS: usize = 1000;
pub const FD_GRID: usize = 50;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-6;
pub const NONPOSITIVE_TOL: f64 = 1e-12;
pub const TARGET_INFLOW: f64 = 3500.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// One seeded run and how long it took.
pub struct TimedRun {
    pub seed: u64,
    pub output: Result<RunOutput, SimError>,
    pub elapsed: Duration,
}

/// `SEEDS` consecutive seeds starting at `params.seed`.
pub fn seeded_runs(params: &SimParams) -> Vec<TimedRun> {
    (0..SEEDS)
        .map(|k| {
            let mut p = params.clone();
            p.seed = params.seed.wrapping_add(k);
            let start = Instant::now();
            let output = run(&p);
            TimedRun {
                seed: p.seed,
                output,
                elapsed: start.elapsed(),
            }
        })
        .collect()
}

pub fn check_safety(runs: &[TimedRun], params: &SimParams) -> CheckResult {
    let mut failures = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut slowest = Duration::ZERO;
    for r in runs {
        slowest = slowest.max(r.elapsed);
        match &r.output {
            Ok(out) => {
                let bad = check_safety_log(&out.trajectory, params);
                if !bad.is_empty() {
                    failures.push(format!("seed {}: {} records", r.seed, bad.len()));
                }
                worst_excess = worst_excess.max(out.summary.max_gap_excess);
            }
            Err(e) => failures.push(format!("seed {}: {e}", r.seed)),
        }
    }
    let too_slow = slowest >= Duration::from_secs(10);
    let passed = failures.is_empty() && !too_slow && runs.len() as u64 == SEEDS;
    let mut detail = format!(
        "{} seeds, max p_hat+delta {:.3e} m (limit {}), slowest run {:.3} s",
        runs.len(),
        worst_excess,
        params.safety_slack(),
        slowest.as_secs_f64()
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; failing: {}", failures.join(", ")));
    }
    CheckResult::new("safety", passed, detail)
}

pub fn check_throughput(runs: &[TimedRun], params: &SimParams) -> CheckResult {
    let counts: Vec<u64> = runs
        .iter()
        .filter_map(|r| r.output.as_ref().ok())
        .map(|o| o.summary.spawned)
        .collect();
    if counts.len() != runs.len() || counts.is_empty() || params.duration <= 0.0 {
        return CheckResult::new("throughput", false, "not every run completed".into());
    }
    let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    let inflow = mean * 3600.0 / params.duration;
    let rel = (inflow - TARGET_INFLOW).abs() / TARGET_INFLOW;
    let passed = (120.0..=155.0).contains(&mean) && rel <= 0.15;
    CheckResult::new(
        "throughput",
        passed,
        format!(
            "mean spawned {mean:.2} (min {}, max {}), inflow {inflow:.0} veh/h ({:+.1}% of {TARGET_INFLOW})",
            counts.iter().min().unwrap(),
            counts.iter().max().unwrap(),
            100.0 * (inflow - TARGET_INFLOW) / TARGET_INFLOW
        ),
    )
}

/// Closing speed and gap with `g_s ≤ 0`; one in ten sits on the boundary.
fn closing_state(rng: &mut ChaCha8Rng, params: &SimParams) -> (f64, f64, f64) {
    let v = rng.gen_range(params.v_min..=params.v_max);
    let v_pred = rng.gen_range(params.v_min..=v);
    let v_hat = v - v_pred;
    let boundary = -params.delta - stopping_margin(v, -params.delta, v_hat, params);
    let p_hat = if rng.gen_bool(0.1) {
        boundary
    } else {
        boundary - rng.gen_range(0.0..100.0)
    };
    (v, p_hat, v_hat)
}

pub fn check_recursive_feasibility(params: &SimParams) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x7431);
    let limit = 2.0 * params.a_max * params.dt;
    let (mut failures, mut failed_episodes) = (0usize, 0usize);
    let (mut worst_dg, mut worst_g) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..FEASIBILITY_EPISODES {
        let (v, p_hat, v_hat) = closing_state(&mut rng, params);
        let rep = braking_episode(v, p_hat, v_hat, params);
        failures += rep.failures;
        if rep.failures > 0 || rep.max_abs_delta_g > limit {
            failed_episodes += 1;
        }
        worst_dg = worst_dg.max(rep.max_abs_delta_g);
        worst_g = worst_g.max(rep.max_g);
    }
    CheckResult::new(
        "recursive_feasibility",
        failed_episodes == 0,
        format!(
            "{FEASIBILITY_EPISODES} episodes, {failures} empty or braking-excluding steps, \
             max |dg_s| {worst_dg:.3e} (limit {limit:.3}), max g_s {worst_g:.3e}"
        ),
    )
}

pub fn check_nonpositive_runs(runs: &[TimedRun]) -> CheckResult {
    let mut records = 0usize;
    let mut bad = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for out in runs.iter().filter_map(|r| r.output.as_ref().ok()) {
        records += out.trajectory.len();
        let v = check_nonpositive_accel(&out.trajectory, NONPOSITIVE_TOL);
        bad += v.len();
        worst = v.iter().map(|r| r.accel).fold(worst, f64::max);
    }
    let complete = runs.iter().all(|r| r.output.is_ok());
    let mut detail =
        format!("{records} records, {bad} unconstrained accelerations above {NONPOSITIVE_TOL:e}");
    if bad > 0 {
        detail.push_str(&format!(" (largest {worst:.3e})"));
    }
    CheckResult::new("nonpositive_accel", complete && bad == 0, detail)
}

pub fn check_formation(params: &SimParams) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x7432);
    let tol = params.eps_platoon.speed;
    let (mut converged, mut dipped, mut touched, mut split, mut errors) = (0, 0, 0, 0, 0);
    let mut slowest: f64 = 0.0;
    let mut min_v_hat = f64::INFINITY;
    for _ in 0..FORMATION_PAIRS {
        let pred = rng.gen_range(params.v_min..params.v_max - 0.5);
        let speed = rng.gen_range(pred + 0.1..=params.v_max);
        let boundary = -params.delta - stopping_margin(speed, -params.delta, speed - pred, params);
        let p_hat = boundary - rng.gen_range(0.0..200.0);
        match formation_pair(pred, speed, p_hat, 20_000.0, 10.0, params) {
            Ok(o) => {
                if let Some(t) = o.converged_at {
                    converged += 1;
                    slowest = slowest.max(t);
                }
                min_v_hat = min_v_hat.min(o.min_v_hat);
                dipped += usize::from(o.min_v_hat < -tol);
                touched += usize::from(o.deadline_touched);
                split += usize::from(o.split);
            }
            Err(_) => errors += 1,
        }
    }
    let passed =
        converged == FORMATION_PAIRS && dipped == 0 && touched == 0 && split == 0 && errors == 0;
    CheckResult::new(
        "formation",
        passed,
        format!(
            "{converged}/{FORMATION_PAIRS} converged (slowest {slowest:.1} s), min v_hat {min_v_hat:.4} m/s, \
             {dipped} below -{tol}, {touched} deadline activations, {split} splits, {errors} errors"
        ),
    )
}

pub fn check_kkt(params: &SimParams) -> CheckResult {
    match kkt_hold(KKT_STEPS, params) {
        Ok(d) => CheckResult::new(
            "kkt_equilibrium",
            d.gap <= 1e-6 && d.speed <= 1e-6 && d.accel <= 1e-9,
            format!(
                "{KKT_STEPS} steps, gap drift {:.3e} m, speed drift {:.3e} m/s, max |a| {:.3e}",
                d.gap, d.speed, d.accel
            ),
        ),
        Err(e) => CheckResult::new("kkt_equilibrium", false, e.to_string()),
    }
}

/// A follower state with `g_s ≤ 0` and a met deadline, plus a predecessor command.
fn oracle_state(
    rng: &mut ChaCha8Rng,
    params: &SimParams,
) -> (VehicleState, RelativeKinematics, f64) {
    let v = rng.gen_range(params.v_min..=params.v_max);
    let v_pred = rng.gen_range(params.v_min..=params.v_max);
    let v_hat = v - v_pred;
    let boundary = -params.delta - stopping_margin(v, -params.delta, v_hat, params);
    let p_hat = match rng.gen_range(0..10) {
        0 => boundary,
        1 => boundary - rng.gen_range(0.0..0.5),
        _ => boundary - rng.gen_range(0.0..150.0),
    };
    let pred_accel = if rng.gen_bool(0.1) {
        params.a_min
    } else {
        rng.gen_range(params.a_min..=params.a_max)
    };
    let trip = 1000.0;
    let margin = if rng.gen_bool(0.3) {
        -rng.gen_range(0.0..2.0 * params.eps_d)
    } else {
        -rng.gen_range(0.0..50.0)
    };
    let state = VehicleState {
        id: 1,
        position: 0.0,
        speed: v,
        accel: 0.0,
        spawn_time: 0.0,
        deadline: (trip - margin) / v,
        exit_position: trip,
        mode: VehicleMode::Follower,
        platoon_id: 0,
    };
    let rel = RelativeKinematics {
        p_hat,
        v_hat,
        a_hat: 0.0,
    };
    (state, rel, pred_accel)
}

pub fn check_oracle(params: &SimParams) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x7433);
    let resolution = (params.a_max - params.a_min) / ORACLE_GRID as f64;
    let (mut mismatched_verdicts, mut off_grid, mut errors, mut infeasible) = (0, 0, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..ORACLE_STATES {
        let (state, rel, pred_accel) = oracle_state(&mut rng, params);
        let oracle = brute_force_control(&state, &rel, pred_accel, 0.0, params, ORACLE_GRID);
        let verdict = match follower_verdict(&state, &rel, pred_accel, 0.0, params) {
            Ok(v) => v,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        if oracle.is_some() != (verdict == FeasibilityVerdict::Feasible) {
            mismatched_verdicts += 1;
            continue;
        }
        let Some(a_oracle) = oracle else {
            infeasible += 1;
            continue;
        };
        match solve_follower_control(&state, &rel, pred_accel, 0.0, params) {
            Ok(d) => {
                let delta = (d.accel - a_oracle).abs();
                worst = worst.max(delta);
                off_grid += usize::from(delta > resolution);
            }
            Err(_) => errors += 1,
        }
    }
    CheckResult::new(
        "oracle_equivalence",
        mismatched_verdicts == 0 && off_grid == 0 && errors == 0,
        format!(
            "{ORACLE_STATES} states ({infeasible} infeasible), {mismatched_verdicts} verdict mismatches, \
             max |a - oracle| {worst:.3e} (resolution {resolution:.1e}), {errors} errors"
        ),
    )
}

pub fn check_gradient_flow_runs(params: &SimParams) -> CheckResult {
    let mut p = params.clone();
    p.deadlines = false;
    let slack = gradient_flow_slack(&p);
    let (mut compared, mut bad, mut errors) = (0usize, 0usize, 0usize);
    for r in seeded_runs(&p) {
        match r.output {
            Ok(out) => {
                compared += out.trajectory.len();
                bad += check_gradient_flow(&out.trajectory, &p, slack).len();
            }
            Err(_) => errors += 1,
        }
    }
    CheckResult::new(
        "gradient_flow",
        bad == 0 && errors == 0,
        format!("{SEEDS} runs without deadlines, {compared} records, {bad} F^2 increases above {slack:.3e}, {errors} errors"),
    )
}

pub fn check_determinism(params: &SimParams) -> CheckResult {
    match (run(params), run(params)) {
        (Ok(a), Ok(b)) => {
            let (a, b) = (trajectory_csv(&a.trajectory), trajectory_csv(&b.trajectory));
            CheckResult::new(
                "determinism",
                a == b,
                format!("seed {}, {} bytes of trajectory.csv", params.seed, a.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => CheckResult::new("determinism", false, e.to_string()),
    }
}

/// Lowest `p̂` at which the wake still removes a `1e-3` fraction of drag.
pub fn wake_extent(params: &SimParams) -> f64 {
    (1e-3 / params.drag.c1).ln() / params.drag.c2
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

/// Largest relative error of `∂F/∂v` on the full follower box and of
/// `∂F/∂p̂` inside the wake, both against central differences.
pub fn drag_fd_errors(params: &SimParams) -> (f64, f64) {
    let model = &params.drag;
    let h = FD_STEP;
    let rel = |fd: f64, exact: f64| (fd - exact).abs() / exact.abs();
    let f = |v: f64, p: f64| model.force(v, p, false).expect("positive speed");
    let (mut worst_v, mut worst_p) = (0.0f64, 0.0f64);
    for v in grid(params.v_min, params.v_max, FD_GRID) {
        for p in grid(-200.0, -params.delta, FD_GRID) {
            let d = model.partials(v, p, false).expect("positive speed");
            worst_v = worst_v.max(rel((f(v + h, p) - f(v - h, p)) / (2.0 * h), d.dv));
        }
        for p in grid(wake_extent(params).max(-200.0), -params.delta, FD_GRID) {
            let d = model.partials(v, p, false).expect("positive speed");
            worst_p = worst_p.max(rel((f(v, p + h) - f(v, p - h)) / (2.0 * h), d.dp));
        }
    }
    (worst_v, worst_p)
}

pub fn check_drag_calculus(params: &SimParams) -> CheckResult {
    let (ev, ep) = drag_fd_errors(params);
    CheckResult::new(
        "drag_calculus",
        ev <= FD_REL_TOL && ep <= FD_REL_TOL,
        format!(
            "{FD_GRID}x{FD_GRID} grids, max rel. error dF/dv {ev:.2e} on p_hat in [-200, -{}], \
             dF/dp_hat {ep:.2e} on p_hat in [{:.1}, -{}] (tol {FD_REL_TOL:e})",
            params.delta,
            wake_extent(params).max(-200.0),
            params.delta
        ),
    )
}

/// Every acceptance check, in order.
pub fn run_suite(params: &SimParams) -> Vec<CheckResult> {
    let runs = seeded_runs(params);
    vec![
        check_safety(&runs, params),
        check_throughput(&runs, params),
        check_recursive_feasibility(params),
        check_nonpositive_runs(&runs),
        check_formation(params),
        check_kkt(params),
        check_oracle(params),
        check_gradient_flow_runs(params),
        check_determinism(params),
        check_drag_calculus(params),
    ]
}
