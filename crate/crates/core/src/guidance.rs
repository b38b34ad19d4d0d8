//! Image-based visual servoing, the camera → world command transform,
//! saturation and the lawnmower search used before anything is in view.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraMount};
use crate::error::{Error, Result};
use crate::perception::TrackEstimate;
use crate::world::{rotate_z, wrap_angle, Frame, UavState, Vec3, VelocityCommand};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceGains {
    /// rad/s per px of horizontal image error.
    pub kp_psi: f64,
    pub kd_psi: f64,
    /// m/s per px of vertical image error.
    pub kp_z: f64,
    pub kd_z: f64,
    /// m/s per m of range error.
    pub kp_r: f64,
    pub kd_r: f64,
    /// Desired range, m.
    pub r_des: f64,
}

impl Default for GuidanceGains {
    fn default() -> Self {
        Self {
            kp_psi: 0.005,
            kd_psi: 0.002,
            kp_z: 0.004,
            kd_z: 0.001,
            kp_r: 0.8,
            kd_r: 1.0,
            r_des: 2.5,
        }
    }
}

impl GuidanceGains {
    pub fn with_range(self, r_des: f64) -> Self {
        Self { r_des, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandLimits {
    pub v_max_h: f64,
    pub v_max_z: f64,
    pub yaw_rate_max: f64,
}

impl Default for CommandLimits {
    fn default() -> Self {
        Self {
            v_max_h: 2.5,
            v_max_z: 1.5,
            yaw_rate_max: 1.0,
        }
    }
}

/// Raw outputs of the PD servo law:
///
/// ```text
/// ψ̇ = kp_ψ (W/2 − x) − kd_ψ ẋ
/// ż = kp_z (H/2 − y) − kd_z ẏ
/// ṙ = kp_r (r_des − r) − kd_r ṙ_est
/// ```
///
/// `range_rate` is the desired rate of change of range, so a positive
/// range error (too far) gives a negative value, closing on the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoRates {
    pub yaw_rate: f64,
    pub climb_rate: f64,
    pub range_rate: f64,
}

pub fn servo_rates(track: &TrackEstimate, intr: &CameraIntrinsics, gains: &GuidanceGains) -> Result<ServoRates> {
    if !track.is_active() {
        return Err(Error::NoTrack);
    }
    let (cx, cy) = intr.center();
    Ok(ServoRates {
        yaw_rate: gains.kp_psi * (cx - track.x()) + gains.kd_psi * (-track.x_rate()),
        climb_rate: gains.kp_z * (cy - track.y()) + gains.kd_z * (-track.y_rate()),
        range_rate: gains.kp_r * (gains.r_des - track.range()) + gains.kd_r * (-track.range_rate()),
    })
}

/// Servo command in the camera frame. Closing range means moving along the
/// optical axis, so forward speed is the negated range rate. Lateral
/// velocity is always zero; azimuth is handled by yaw.
pub fn servo_command(track: &TrackEstimate, intr: &CameraIntrinsics, gains: &GuidanceGains) -> Result<VelocityCommand> {
    let r = servo_rates(track, intr, gains)?;
    Ok(VelocityCommand::new(
        -r.range_rate,
        0.0,
        r.climb_rate,
        r.yaw_rate,
        Frame::Camera,
    ))
}

/// Camera-frame command → world frame. The camera looks along vehicle +x so
/// forward/lateral/climb map directly onto the vehicle axes, which are then
/// rotated by yaw. Yaw rate passes through.
pub fn camera_to_vehicle(cmd: &VelocityCommand, _mount: &CameraMount, vehicle_yaw: f64) -> Result<VelocityCommand> {
    if cmd.frame != Frame::Camera {
        return Err(Error::FrameMismatch {
            expected: Frame::Camera,
            got: cmd.frame,
        });
    }
    let w = rotate_z(&cmd.linear(), vehicle_yaw);
    Ok(VelocityCommand::new(w.x, w.y, w.z, cmd.yaw_rate, Frame::World))
}

/// Clamps a command. The horizontal pair is scaled as a vector so its
/// direction is kept.
pub fn saturate(cmd: &VelocityCommand, limits: &CommandLimits) -> VelocityCommand {
    let mut out = *cmd;
    let h = cmd.vx.hypot(cmd.vy);
    if h > limits.v_max_h {
        let s = limits.v_max_h / h;
        out.vx *= s;
        out.vy *= s;
    }
    out.vz = cmd.vz.clamp(-limits.v_max_z, limits.v_max_z);
    out.yaw_rate = cmd.yaw_rate.clamp(-limits.yaw_rate_max, limits.yaw_rate_max);
    out
}

/// World-frame velocity toward `goal` with speed `min(gain·dist, v_max_h)`,
/// turning to face the horizontal direction of travel.
pub fn goto_command(
    current: &UavState,
    goal: &Vec3,
    gain: f64,
    yaw_gain: f64,
    limits: &CommandLimits,
) -> VelocityCommand {
    let delta = goal - current.position;
    let v = delta * gain;
    let horizontal = delta.x.hypot(delta.y);
    let yaw_rate = if horizontal > 0.5 {
        yaw_gain * wrap_angle(delta.y.atan2(delta.x) - current.yaw)
    } else {
        0.0
    };
    saturate(&VelocityCommand::new(v.x, v.y, v.z, yaw_rate, Frame::World), limits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchArea {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub altitude: f64,
    pub lane_spacing: f64,
}

impl Default for SearchArea {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 40.0,
            y_min: -16.0,
            y_max: 16.0,
            altitude: 6.5,
            lane_spacing: 8.0,
        }
    }
}

impl SearchArea {
    pub fn is_degenerate(&self) -> bool {
        !(self.x_max > self.x_min && self.y_max > self.y_min && self.lane_spacing > 0.0)
    }

    /// Boustrophedon waypoints: lanes along x, at most `lane_spacing` apart
    /// and inset by half a spacing from the y edges.
    pub fn waypoints(&self) -> Vec<Vec3> {
        let height = self.y_max - self.y_min;
        let lanes = (height / self.lane_spacing).ceil().max(1.0) as usize;
        let step = height / lanes as f64;
        let mut out = Vec::with_capacity(2 * lanes);
        for k in 0..lanes {
            let y = self.y_min + (k as f64 + 0.5) * step;
            let (a, b) = if k % 2 == 0 {
                (self.x_min, self.x_max)
            } else {
                (self.x_max, self.x_min)
            };
            out.push(Vec3::new(a, y, self.altitude));
            out.push(Vec3::new(b, y, self.altitude));
        }
        out
    }
}

/// Lawnmower search state. Cycles through the waypoints indefinitely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorePattern {
    pub waypoints: Vec<Vec3>,
    pub index: usize,
    pub capture_radius: f64,
}

impl ExplorePattern {
    pub fn new(area: &SearchArea) -> Result<Self> {
        if area.is_degenerate() {
            return Err(Error::InvalidParameter {
                field: "explore_area".into(),
                reason: "area must have positive extent and lane spacing".into(),
            });
        }
        Ok(Self {
            waypoints: area.waypoints(),
            index: 0,
            capture_radius: 0.5,
        })
    }

    pub fn active_waypoint(&self) -> Vec3 {
        self.waypoints[self.index]
    }

    /// Starts the sweep at the waypoint closest to `position`.
    pub fn resume_from(&mut self, position: &Vec3) {
        self.index = self
            .waypoints
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - position).norm().total_cmp(&(b.1 - position).norm()))
            .map(|(i, _)| i)
            .unwrap_or(0);
    }

    /// Velocity toward the active waypoint, advancing first if already
    /// within the capture radius.
    pub fn explore_command(&mut self, current: &UavState, limits: &CommandLimits) -> VelocityCommand {
        if (self.active_waypoint() - current.position).norm() <= self.capture_radius {
            self.index = (self.index + 1) % self.waypoints.len();
        }
        goto_command(current, &self.active_waypoint(), 1.0, 1.5, limits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::DetectionClass;
    use crate::perception::{idx, Measurement, PerceptionParams};

    fn track_at(x: f64, y: f64, r: f64) -> TrackEstimate {
        TrackEstimate::initialize(
            DetectionClass::Ball,
            &Measurement {
                x,
                y,
                r,
                sigma_pixel: 2.0,
                sigma_range: 0.1,
                t: 0.0,
            },
            &PerceptionParams::default(),
        )
    }

    #[test]
    fn setpoint_gives_zero_command() {
        let g = GuidanceGains::default();
        let cmd = servo_command(&track_at(320.0, 240.0, g.r_des), &CameraIntrinsics::default(), &g).unwrap();
        assert_eq!(cmd, VelocityCommand::zero(Frame::Camera));
        let w = camera_to_vehicle(&cmd, &CameraMount::new(Vec3::zeros()), 1.1).unwrap();
        assert_eq!(w.linear(), Vec3::zeros());
        assert_eq!(w.yaw_rate, 0.0);
    }

    #[test]
    fn yaw_and_range_examples() {
        let g = GuidanceGains::default();
        let intr = CameraIntrinsics::default();
        let cmd = servo_command(&track_at(420.0, 240.0, g.r_des), &intr, &g).unwrap();
        assert!((cmd.yaw_rate + 0.5).abs() < 1e-12);
        let g2 = GuidanceGains { r_des: 2.0, ..g };
        let t = track_at(320.0, 240.0, 5.0);
        assert!((servo_rates(&t, &intr, &g2).unwrap().range_rate + 2.4).abs() < 1e-12);
        let cmd = servo_command(&t, &intr, &g2).unwrap();
        assert!((cmd.vx - 2.4).abs() < 1e-12);
    }

    #[test]
    fn derivative_opposes_pixel_motion() {
        let g = GuidanceGains::default();
        let mut t = track_at(320.0, 240.0, g.r_des);
        t.state[idx::XD] = 15.0;
        let cmd = servo_command(&t, &CameraIntrinsics::default(), &g).unwrap();
        assert!(cmd.yaw_rate < 0.0);
    }

    #[test]
    fn no_track_is_an_error() {
        let t = TrackEstimate::uninitialized(DetectionClass::Ball);
        assert_eq!(
            servo_command(&t, &CameraIntrinsics::default(), &GuidanceGains::default()),
            Err(Error::NoTrack)
        );
    }

    #[test]
    fn frame_transform() {
        let m = CameraMount::new(Vec3::zeros());
        let c = VelocityCommand::new(1.0, 0.0, 0.2, 0.1, Frame::Camera);
        let w = camera_to_vehicle(&c, &m, 0.0).unwrap();
        assert_eq!(
            (w.vx, w.vy, w.vz, w.yaw_rate, w.frame),
            (1.0, 0.0, 0.2, 0.1, Frame::World)
        );
        let w = camera_to_vehicle(
            &VelocityCommand::new(1.0, 0.0, 0.0, 0.0, Frame::Camera),
            &m,
            std::f64::consts::FRAC_PI_2,
        )
        .unwrap();
        assert!((w.linear() - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!(camera_to_vehicle(&VelocityCommand::zero(Frame::World), &m, 0.0).is_err());
    }

    #[test]
    fn saturation() {
        let lim = CommandLimits::default();
        let c = VelocityCommand::new(1.0, -1.0, 0.5, 0.3, Frame::World);
        assert_eq!(saturate(&c, &lim), c);
        let c = saturate(&VelocityCommand::new(4.0, 3.0, 0.0, 2.0, Frame::World), &lim);
        assert!((c.vx - 2.0).abs() < 1e-12 && (c.vy - 1.5).abs() < 1e-12);
        assert_eq!(c.yaw_rate, 1.0);
    }

    #[test]
    fn explore_advances_at_waypoint() {
        let area = SearchArea::default();
        let mut p = ExplorePattern::new(&area).unwrap();
        let first = p.waypoints[0];
        let second = p.waypoints[1];
        let uav = UavState::at_rest(first, 0.0);
        let cmd = p.explore_command(&uav, &CommandLimits::default());
        assert_eq!(p.index, 1);
        assert!(cmd.linear().dot(&(second - first)) > 0.0);
    }

    #[test]
    fn explore_command_is_bounded() {
        let lim = CommandLimits::default();
        let mut p = ExplorePattern::new(&SearchArea::default()).unwrap();
        let uav = UavState::at_rest(Vec3::new(-50.0, 70.0, 0.0), 2.0);
        let c = p.explore_command(&uav, &lim);
        assert!(c.vx.hypot(c.vy) <= lim.v_max_h + 1e-12);
        assert!(c.vz.abs() <= lim.v_max_z);
    }

    #[test]
    fn degenerate_area_rejected() {
        let area = SearchArea {
            x_max: 0.0,
            ..Default::default()
        };
        assert!(ExplorePattern::new(&area).is_err());
    }
}
