//! Time-space diagram as a standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use platoon_core::{SimParams, TrajectoryRecord, VehicleId};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("empty plot window [{0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error("plot window [{t_a}, {t_b}] is outside the run horizon [0, {horizon}]")]
    OutsideHorizon { t_a: f64, t_b: f64, horizon: f64 },
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 640.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Frame {
    t_a: f64,
    t_b: f64,
    length: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        LEFT + (t - self.t_a) / (self.t_b - self.t_a) * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, p: f64) -> f64 {
        HEIGHT - BOTTOM - p / self.length * (HEIGHT - TOP - BOTTOM)
    }
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Position against time for every vehicle present in `[t_a, t_b]`.
///
/// On-ramps are dash-dot guide lines, off-ramps dotted. Circles mark
/// vehicles entering inside the window, squares mark exits.
pub fn render_timespace_plot(
    trajectory: &[TrajectoryRecord],
    params: &SimParams,
    t_a: f64,
    t_b: f64,
) -> Result<String, PlotError> {
    if t_a.partial_cmp(&t_b) != Some(std::cmp::Ordering::Less) {
        return Err(PlotError::EmptyWindow(t_a, t_b));
    }
    if t_a < 0.0 || t_b > params.duration + 1e-9 {
        return Err(PlotError::OutsideHorizon {
            t_a,
            t_b,
            horizon: params.duration,
        });
    }
    let frame = Frame {
        t_a,
        t_b,
        length: params.road.length,
    };
    let eps = 1e-9;

    let mut tracks: BTreeMap<VehicleId, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in trajectory {
        tracks.entry(r.vehicle_id).or_default().push(r);
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    // axes and ticks
    let (x0, x1) = (frame.x(t_a), frame.x(t_b));
    let (y0, y1) = (frame.y(0.0), frame.y(frame.length));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2},{y1:.2} V{y0:.2} H{x1:.2}" fill="none" stroke="black"/>"#
    );
    let dt_tick = nice_step(t_b - t_a, 6);
    let mut t = (t_a / dt_tick).ceil() * dt_tick;
    while t <= t_b + eps {
        let x = frame.x(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 20.0,
            crate::output::fmt_g(t)
        );
        t += dt_tick;
    }
    let dp_tick = nice_step(frame.length, 7);
    let mut p = 0.0;
    while p <= frame.length + eps {
        let y = frame.y(p);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            crate::output::fmt_g(p)
        );
        p += dp_tick;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time (s)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">position (m)</text>"#,
        (y0 + y1) / 2.0
    );

    // ramps
    for (ramps, dash, class) in [
        (&params.road.on_ramps, "8,4,2,4", "on-ramp"),
        (&params.road.off_ramps, "2,3", "off-ramp"),
    ] {
        for &r in ramps.iter() {
            let y = frame.y(r);
            let _ = writeln!(
                svg,
                r#"<line class="{class}" x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="{dash}"/>"#
            );
        }
    }

    for (k, (id, track)) in tracks.iter().enumerate() {
        let inside: Vec<&&TrajectoryRecord> = track
            .iter()
            .filter(|r| r.time >= t_a - eps && r.time <= t_b + eps)
            .collect();
        let (Some(first), Some(last)) = (inside.first(), inside.last()) else {
            continue;
        };
        let color = PALETTE[k % PALETTE.len()];
        let mut points = String::new();
        for r in &inside {
            let _ = write!(points, "{:.2},{:.2} ", frame.x(r.time), frame.y(r.position));
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="vehicle" data-id="{id}" points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            points.trim_end()
        );
        if (first.time - track[0].time).abs() < eps && first.time > t_a + eps {
            let _ = writeln!(
                svg,
                r#"<circle class="entry" cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                frame.x(first.time),
                frame.y(first.position)
            );
        }
        let exited = track.last().is_some_and(|r| r.time == last.time)
            && last.time < params.duration - params.dt - eps
            && last.time < t_b - eps;
        if exited {
            let _ = writeln!(
                svg,
                r#"<rect class="exit" x="{:.2}" y="{:.2}" width="5" height="5" fill="none" stroke="{color}"/>"#,
                frame.x(last.time) - 2.5,
                frame.y(last.position) - 2.5
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use platoon_core::{FeasibilityVerdict, VehicleMode};

    fn record(id: VehicleId, time: f64, position: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            time,
            vehicle_id: id,
            platoon_id: id,
            position,
            speed: 25.0,
            accel: 0.0,
            applied_force: 0.0,
            drag: 0.0,
            gs_margin: None,
            deadline_margin: -1.0,
            mode: VehicleMode::Leader,
            predecessor: None,
            deadline_active: false,
            verdict: FeasibilityVerdict::Feasible,
        }
    }

    #[test]
    fn empty_window_is_rejected() {
        let p = SimParams::default();
        assert_eq!(
            render_timespace_plot(&[], &p, 5.0, 5.0),
            Err(PlotError::EmptyWindow(5.0, 5.0))
        );
        assert!(matches!(
            render_timespace_plot(&[], &p, 0.0, 500.0),
            Err(PlotError::OutsideHorizon { .. })
        ));
    }

    #[test]
    fn single_vehicle_is_one_straight_polyline() {
        let p = SimParams::default();
        let traj: Vec<_> = (0..=100)
            .map(|k| record(7, k as f64 * 0.1, 25.0 * k as f64 * 0.1))
            .collect();
        let svg = render_timespace_plot(&traj, &p, 0.0, 10.0).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts: Vec<(f64, f64)> = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap()
            .split(' ')
            .map(|s| {
                let (x, y) = s.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect();
        let slope = (pts[100].1 - pts[0].1) / (pts[100].0 - pts[0].0);
        for w in pts.windows(2) {
            assert!(((w[1].1 - w[0].1) / (w[1].0 - w[0].0) - slope).abs() < 0.01);
        }
        assert_eq!(svg.matches("class=\"on-ramp\"").count(), 3);
        assert_eq!(svg.matches("class=\"off-ramp\"").count(), 3);
    }
}
