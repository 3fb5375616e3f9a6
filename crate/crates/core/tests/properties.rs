use std::collections::BTreeSet;

use platoon_core::analysis::{braking_episode, brute_force_control, check_safety_log};
use platoon_core::constraints::{critical_relative_speed, safe_accel_interval, stopping_margin};
use platoon_core::controller::{follower_verdict, solve_follower_control};
use platoon_core::drag::gradient_flow_bound;
use platoon_core::sim::run;
use platoon_core::vehicle::relative_kinematics;
use platoon_core::{
    DragModel, FeasibilityVerdict, RelativeKinematics, SimParams, VehicleMode, VehicleState,
};
use proptest::prelude::*;

fn defaults() -> SimParams {
    SimParams::default()
}

fn vehicle(id: u64, position: f64, speed: f64) -> VehicleState {
    VehicleState {
        id,
        position,
        speed,
        accel: 0.0,
        spawn_time: 0.0,
        deadline: 1.0e6,
        exit_position: 1.0e6,
        mode: VehicleMode::Follower,
        platoon_id: 0,
    }
}

/// `p̂` on the `g_s = 0` boundary for the given speeds.
fn boundary(v: f64, v_hat: f64, p: &SimParams) -> f64 {
    -p.delta - stopping_margin(v, -p.delta, v_hat, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn drag_increases_with_speed(v in 0.01f64..35.0, dv in 0.01f64..5.0, p_hat in -500.0f64..-5.0) {
        let c = defaults().drag;
        prop_assert!(c.force(v + dv, p_hat, false).unwrap() > c.force(v, p_hat, false).unwrap());
        prop_assert!(c.force(v + dv, p_hat, true).unwrap() > c.force(v, p_hat, true).unwrap());
    }

    #[test]
    fn follower_drag_decreases_towards_predecessor(v in 1.0f64..35.0, p_hat in -150.0f64..-6.0, dp in 0.01f64..1.0) {
        let c = defaults().drag;
        prop_assert!(c.force(v, p_hat + dp, false).unwrap() < c.force(v, p_hat, false).unwrap());
        prop_assert_eq!(c.force(v, p_hat + dp, true).unwrap(), c.force(v, p_hat, true).unwrap());
    }

    #[test]
    fn speed_partial_matches_central_difference(v in 20.0f64..=35.0, p_hat in -200.0f64..=-5.0) {
        let c = defaults().drag;
        let h = 1e-5;
        let fd = (c.force(v + h, p_hat, false).unwrap() - c.force(v - h, p_hat, false).unwrap()) / (2.0 * h);
        let exact = c.partials(v, p_hat, false).unwrap().dv;
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{} vs {}", fd, exact);
    }

    // Beyond the wake the partial falls under the rounding of F itself.
    #[test]
    fn position_partial_matches_central_difference(v in 20.0f64..=35.0, p_hat in -79.9f64..=-5.0) {
        let c = defaults().drag;
        let h = 1e-5;
        let fd = (c.force(v, p_hat + h, false).unwrap() - c.force(v, p_hat - h, false).unwrap()) / (2.0 * h);
        let exact = c.partials(v, p_hat, false).unwrap().dp;
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{} vs {}", fd, exact);
    }

    #[test]
    fn gradient_bound_never_raises_drag(
        v in 20.0f64..=35.0,
        p_hat in -300.0f64..-5.0,
        v_hat in -15.0f64..15.0,
        below in 0.0f64..5.0,
    ) {
        let c = defaults().drag;
        let a = gradient_flow_bound(v, p_hat, v_hat, false, &c).unwrap() - below;
        let d = c.partials(v, p_hat, false).unwrap();
        let scale = (d.dv * a).abs().max((d.dp * v_hat).abs());
        prop_assert!(d.dv * a + d.dp * v_hat <= 4.0 * f64::EPSILON * scale);
    }

    #[test]
    fn stopping_margin_implies_gap(v in 20.0f64..=35.0, v_pred in 20.0f64..=35.0, p_hat in -200.0f64..10.0) {
        let p = defaults();
        if stopping_margin(v, p_hat, v - v_pred, &p) <= 0.0 {
            prop_assert!(p_hat + p.delta <= 0.0);
        }
    }

    #[test]
    fn critical_relative_speed_is_a_root(v in 20.5f64..=35.0, frac in 0.001f64..=1.0) {
        let p = defaults();
        let excess = v - p.v_min;
        // deepest gap for which a real root exists
        let gap = -frac * excess * excess / (2.0 * p.a_min.abs());
        let p_hat = gap - p.delta;
        let crit = critical_relative_speed(v, p_hat, &p).unwrap();
        prop_assert!(crit > 0.0);
        prop_assert!(stopping_margin(v, p_hat, crit, &p).abs() <= 1e-9);
    }

    // Sterbenz: the difference of two speeds within a factor of two is exact.
    #[test]
    fn relative_speed_round_trips(v in 20.0f64..=35.0, v_pred in 20.0f64..=35.0, gap in 0.1f64..500.0) {
        let me = vehicle(1, 1000.0, v);
        let pred = vehicle(0, 1000.0 + gap, v_pred);
        let rel = relative_kinematics(&me, Some(&pred)).unwrap();
        prop_assert!(rel.p_hat < 0.0);
        prop_assert_eq!((pred.speed + rel.v_hat).to_bits(), me.speed.to_bits());
    }

    #[test]
    fn safe_interval_contains_hardest_braking(
        v in 20.0f64..=35.0,
        v_pred in 20.0f64..=35.0,
        back in 0.0f64..200.0,
        pred_accel in -4.0f64..=3.0,
    ) {
        let p = defaults();
        let p_hat = boundary(v, v - v_pred, &p) - back;
        let iv = safe_accel_interval(v, p_hat, v - v_pred, pred_accel, &p);
        prop_assert!(!iv.is_empty());
        prop_assert!(iv.contains(p.braking_limit(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn braking_episode_keeps_margin_level(v in 20.0f64..=35.0, frac in 0.0f64..=1.0, back in 0.0f64..100.0) {
        let p = defaults();
        let v_hat = frac * (v - p.v_min);
        let rep = braking_episode(v, boundary(v, v_hat, &p) - back, v_hat, &p);
        prop_assert_eq!(rep.failures, 0);
        prop_assert!(rep.max_abs_delta_g <= 2.0 * p.a_max * p.dt);
    }

    #[test]
    fn solver_matches_grid_oracle(
        v in 20.0f64..=35.0,
        v_pred in 20.0f64..=35.0,
        back in 0.0f64..150.0,
        pred_accel in -4.0f64..=3.0,
        margin in -50.0f64..=0.0,
    ) {
        let p = defaults();
        let v_hat = v - v_pred;
        let state = VehicleState {
            deadline: (1000.0 - margin) / v,
            exit_position: 1000.0,
            ..vehicle(1, 0.0, v)
        };
        let rel = RelativeKinematics { p_hat: boundary(v, v_hat, &p) - back, v_hat, a_hat: 0.0 };
        let n = 2000;
        let oracle = brute_force_control(&state, &rel, pred_accel, 0.0, &p, n);
        let verdict = follower_verdict(&state, &rel, pred_accel, 0.0, &p).unwrap();
        prop_assert_eq!(oracle.is_some(), verdict == FeasibilityVerdict::Feasible);
        if let Some(a) = oracle {
            let d = solve_follower_control(&state, &rel, pred_accel, 0.0, &p).unwrap();
            prop_assert!((d.accel - a).abs() <= (p.a_max - p.a_min) / n as f64);
        }
    }
}

#[test]
fn default_runs_are_safe_and_open() {
    for seed in 0..5 {
        let p = SimParams { seed, ..defaults() };
        let out = run(&p).unwrap();
        assert!(check_safety_log(&out.trajectory, &p).is_empty());

        // positions strictly decrease front to back at every instant
        let mut by_time: std::collections::BTreeMap<u64, Vec<(f64, u64)>> = Default::default();
        for r in &out.trajectory {
            by_time
                .entry((r.time / p.dt).round() as u64)
                .or_default()
                .push((r.position, r.vehicle_id));
        }
        for snapshot in by_time.values_mut() {
            snapshot.sort_by(|a, b| b.0.total_cmp(&a.0));
            assert!(snapshot.windows(2).all(|w| w[0].0 > w[1].0));
        }

        // exited vehicles never come back
        let exits: BTreeSet<u64> = out
            .events
            .iter()
            .filter(|e| e.kind == platoon_core::EventKind::Exit)
            .map(|e| e.vehicle_id)
            .collect();
        let exit_time = |id: u64| {
            out.events
                .iter()
                .find(|e| e.kind == platoon_core::EventKind::Exit && e.vehicle_id == id)
                .unwrap()
                .time
        };
        for r in &out.trajectory {
            if exits.contains(&r.vehicle_id) {
                assert!(r.time < exit_time(r.vehicle_id));
            }
        }
    }
}
