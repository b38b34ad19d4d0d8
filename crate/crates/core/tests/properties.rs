use proptest::prelude::*;
use uavcap_core::camera::{
    back_project, estimate_range, project, CameraIntrinsics, CameraMount, DetectionClass, ImageDetection,
};
use uavcap_core::coordination::{allowed_transition, MissionPhase};
use uavcap_core::guidance::{saturate, CommandLimits, SearchArea};
use uavcap_core::perception::{kf_predict, kf_update, Measurement, PerceptionParams, TrackEstimate};
use uavcap_core::world::{
    step_ball, step_uav, wrap_angle, BallState, Frame, PendulumParams, UavState, Vec3, VehicleParams, VelocityCommand,
};
use uavcap_core::{parse_config, Mode, ScenarioConfig};

fn vec3(lim: f64) -> impl Strategy<Value = Vec3> {
    (-lim..lim, -lim..lim, -lim..lim).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rod_length_is_preserved(
        theta in 0.0..1.2f64,
        phi in -3.1..3.1f64,
        theta_dot in -2.0..2.0f64,
        phi_dot in -2.0..2.0f64,
        accel in vec3(3.0),
        wind in vec3(0.2),
        support in vec3(20.0),
    ) {
        let params = PendulumParams::default();
        let mut ball = BallState { theta, phi, theta_dot, phi_dot, ..BallState::hanging() };
        for _ in 0..200 {
            ball = step_ball(&ball, &accel, &wind, &params, 1.0 / 400.0);
            // Past horizontal the run is flagged invalid and stops.
            if !ball.swing_valid() {
                break;
            }
            let d = (ball.world_position(&support, params.rod_length) - support).norm();
            prop_assert!((d - params.rod_length).abs() < 1e-9);
        }
    }

    #[test]
    fn velocity_lags_toward_the_command(
        v0 in vec3(1.0),
        cmd in vec3(1.0),
        yaw in -3.0..3.0f64,
        world in any::<bool>(),
    ) {
        let params = VehicleParams::default();
        let frame = if world { Frame::World } else { Frame::Vehicle };
        let c = VelocityCommand::new(cmd.x, cmd.y, cmd.z, 0.3, frame);
        let mut s = UavState { velocity: v0, ..UavState::at_rest(Vec3::new(0.0, 0.0, 50.0), yaw) };
        let mut err = f64::INFINITY;
        for _ in 0..1200 {
            let target = if world { cmd } else { s.vehicle_to_world(&cmd) };
            let next = step_uav(&s, &c, &params, 1.0 / 400.0).unwrap();
            let target_next = if world { cmd } else { next.vehicle_to_world(&cmd) };
            let e = (next.velocity - target).norm();
            // The vehicle-frame target rotates with the yaw, so only the world
            // frame error is strictly non-increasing.
            prop_assert!(!world || e <= (s.velocity - target).norm() + 1e-12);
            prop_assert!(next.velocity.xy().norm() <= params.v_max_h + 1e-12);
            prop_assert!(next.velocity.z.abs() <= params.v_max_z + 1e-12);
            err = (next.velocity - target_next).norm();
            s = next;
        }
        let tol = if world { 0.01 } else { 0.25 };
        prop_assert!(err < tol);
    }

    #[test]
    fn altitude_never_negative(v in -3.0..0.0f64, z0 in 0.0..0.5f64) {
        let mut s = UavState::at_rest(Vec3::new(0.0, 0.0, z0), 0.0);
        let c = VelocityCommand::new(0.0, 0.0, v, 0.0, Frame::World);
        for _ in 0..800 {
            s = step_uav(&s, &c, &VehicleParams::default(), 1.0 / 400.0).unwrap();
            prop_assert!(s.position.z >= 0.0);
        }
    }

    #[test]
    fn explore_lanes_cover_the_area(
        x_min in -20.0..0.0f64,
        width in 1.0..40.0f64,
        y_min in -20.0..0.0f64,
        height in 0.5..40.0f64,
        spacing in 0.5..10.0f64,
        u in 0.0..1.0f64,
        v in 0.0..1.0f64,
    ) {
        let area = SearchArea { x_min, x_max: x_min + width, y_min, y_max: y_min + height, altitude: 5.0, lane_spacing: spacing };
        let wps = area.waypoints();
        prop_assert!(wps.len() >= 2 && wps.len().is_multiple_of(2));
        for lane in wps.chunks(2) {
            prop_assert_eq!(lane[0].y, lane[1].y);
            prop_assert!(((lane[0].x - lane[1].x).abs() - width).abs() < 1e-9);
        }
        let p = (x_min + u * width, y_min + v * height);
        let gap = wps.iter().map(|w| (w.y - p.1).abs()).fold(f64::INFINITY, f64::min);
        prop_assert!(gap <= spacing / 2.0 + 1e-9);
    }

    #[test]
    fn range_shrinks_as_the_box_grows(w1 in 0.5..400.0f64, dw in 0.01..100.0f64, size in 0.05..2.0f64) {
        let intr = CameraIntrinsics::default();
        let det = |w| ImageDetection { x: 320.0, y: 240.0, w, h: w, class: DetectionClass::Ball, t: 0.0 };
        let r1 = estimate_range(&det(w1), &intr, size).unwrap();
        let r2 = estimate_range(&det(w1 + dw), &intr, size).unwrap();
        prop_assert!(r2 < r1);
    }

    #[test]
    fn projection_inverts(
        p in vec3(10.0),
        yaw in -3.1..3.1f64,
        depth in 0.5..30.0f64,
    ) {
        let uav = UavState::at_rest(Vec3::new(0.0, 0.0, 10.0), yaw);
        let mount = CameraMount::new(Vec3::new(0.2, 0.0, -0.1));
        let intr = CameraIntrinsics::default();
        let (cx, cy) = intr.center();
        let x = cx + p.x * 30.0;
        let y = cy + p.y * 20.0;
        let w = back_project(x, y, depth, &uav, &mount, &intr);
        let (x2, y2) = project(&w, &uav, &mount, &intr).unwrap();
        prop_assert!((x - x2).abs() < 1e-8 && (y - y2).abs() < 1e-8);
    }

    #[test]
    fn covariance_stays_symmetric(
        zs in prop::collection::vec((200.0..440.0f64, 150.0..330.0f64, 1.0..20.0f64, any::<bool>()), 1..60),
    ) {
        let p = PerceptionParams::default();
        let m = |(x, y, r): (f64, f64, f64), t| Measurement { x, y, r, sigma_pixel: 2.0, sigma_range: 0.2, t };
        let mut tr = TrackEstimate::initialize(DetectionClass::Ball, &m((320.0, 240.0, 5.0), 0.0), &p);
        for (k, (x, y, r, seen)) in zs.into_iter().enumerate() {
            tr = kf_predict(&tr, 1.0 / 30.0, &p);
            if seen {
                tr = kf_update(&tr, &m((x, y, r), (k + 1) as f64 / 30.0), &p).0;
            }
            let c = tr.covariance;
            prop_assert!((c - c.transpose()).abs().max() <= 1e-9 * c.abs().max());
            prop_assert!((0..6).all(|i| c[(i, i)] > 0.0));
            prop_assert!(c.symmetric_eigenvalues().min() > -1e-9 * c.abs().max());
        }
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let turns = (a - w) / std::f64::consts::TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn saturation_respects_limits(c in vec3(10.0), yr in -5.0..5.0f64) {
        let lim = CommandLimits::default();
        let s = saturate(&VelocityCommand::new(c.x, c.y, c.z, yr, Frame::World), &lim);
        prop_assert!(s.vx.hypot(s.vy) <= lim.v_max_h + 1e-12);
        prop_assert!(s.vz.abs() <= lim.v_max_z && s.yaw_rate.abs() <= lim.yaw_rate_max);
        // Horizontal direction is kept.
        prop_assert!((s.vx * c.y - s.vy * c.x).abs() < 1e-9);
    }

    #[test]
    fn config_survives_toml(seed in any::<u64>(), duration in 1.0..300.0f64, single in any::<bool>()) {
        let mode = if single { Mode::Single } else { Mode::Collaborative };
        let mut cfg = ScenarioConfig::default().with_seed(seed).with_mode(mode);
        cfg.duration = duration;
        prop_assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn terminal_phases_are_absorbing() {
    for from in [MissionPhase::Done, MissionPhase::Failed] {
        for to in MissionPhase::ALL {
            assert!(!allowed_transition(from, to));
        }
    }
    for from in MissionPhase::ALL.into_iter().filter(|p| !p.is_terminal()) {
        assert!(allowed_transition(from, MissionPhase::Failed));
        assert!(!allowed_transition(from, from));
    }
}
