//! Run artifacts: trajectory and event CSVs, metrics summary and config echo.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use platoon_core::analysis::{
    check_nonpositive_accel, check_safety_log, drag_energy, formation_events,
};
use platoon_core::{Event, RunOutput, SimParams, TrajectoryRecord};
use thiserror::Error;

pub const TRAJECTORY_HEADER: &str = "t,id,platoon_id,p,v,a,u,drag,gs_margin,deadline_margin,mode";
pub const EVENTS_HEADER: &str = "t,kind,id,detail";

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

/// `printf("%g")`: six significant digits, trailing zeros dropped.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn trajectory_csv(records: &[TrajectoryRecord]) -> String {
    let mut sorted: Vec<&TrajectoryRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.vehicle_id.cmp(&b.vehicle_id))
    });
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in sorted {
        let gs = r.gs_margin.map(fmt_g).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_g(r.time),
            r.vehicle_id,
            r.platoon_id,
            fmt_g(r.position),
            fmt_g(r.speed),
            fmt_g(r.accel),
            fmt_g(r.applied_force),
            fmt_g(r.drag),
            gs,
            fmt_g(r.deadline_margin),
            r.mode,
        );
    }
    out
}

pub fn events_csv(events: &[Event]) -> String {
    let mut out = String::from(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        let detail = if e.detail.contains([',', '"', '\n']) {
            format!("\"{}\"", e.detail.replace('"', "\"\""))
        } else {
            e.detail.clone()
        };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_g(e.time),
            e.kind,
            e.vehicle_id,
            detail
        );
    }
    out
}

/// Counts, inflow, energy and the post-hoc checks as `key = value` lines.
pub fn metrics_text(run: &RunOutput, params: &SimParams) -> String {
    let s = &run.summary;
    let energy = drag_energy(&run.trajectory);
    let inflow = if params.duration > 0.0 {
        s.spawned as f64 * 3600.0 / params.duration
    } else {
        0.0
    };
    let mut out = String::new();
    let mut line = |key: &str, value: String| {
        let _ = writeln!(out, "{key} = {value}");
    };
    line("seed", params.seed.to_string());
    line("steps", s.steps.to_string());
    line("final_time", fmt_g(s.final_time));
    line("spawn_attempts", s.spawn_attempts.to_string());
    line("spawned", s.spawned.to_string());
    line("discarded", s.discarded.to_string());
    line("exited", s.exited.to_string());
    line("splits", s.splits.to_string());
    line("merges", s.merges.to_string());
    line("deadline_relaxations", s.relaxations.to_string());
    line("inflow_veh_per_h", fmt_g(inflow));
    line("max_gap_excess_m", fmt_g(s.max_gap_excess));
    line("total_drag_squared", fmt_g(energy.total_drag_squared()));
    line(
        "total_propulsive_work",
        fmt_g(energy.total_propulsive_work()),
    );
    line(
        "formations",
        formation_events(&run.trajectory, params).len().to_string(),
    );
    line(
        "safety_violations",
        check_safety_log(&run.trajectory, params).len().to_string(),
    );
    line(
        "positive_accel_violations",
        check_nonpositive_accel(&run.trajectory, 1e-12)
            .len()
            .to_string(),
    );
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, OutputError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| OutputError {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write `trajectory.csv`, `events.csv`, `metrics.txt` and `config.echo`
/// into `dir`, creating it if needed.
pub fn emit_outputs(
    run: &RunOutput,
    params: &SimParams,
    config_echo: &str,
    dir: &Path,
) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(vec![
        write(dir, "trajectory.csv", &trajectory_csv(&run.trajectory))?,
        write(dir, "events.csv", &events_csv(&run.events))?,
        write(dir, "metrics.txt", &metrics_text(run, params))?,
        write(dir, "config.echo", config_echo)?,
    ])
}
