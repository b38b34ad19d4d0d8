//! World dynamics: the pattern-flying target drone, the ball hanging from it
//! on a rigid rod, and the own UAVs as first-order velocity-tracking vehicles.
//!
//! Frames are world ENU (z up). Vehicle frame is x forward, y left, z up,
//! rotated from world by yaw about z.

use std::f64::consts::{PI, TAU};
use std::sync::LazyLock;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub const GRAVITY: f64 = 9.81;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl UavState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            yaw: wrap_angle(yaw),
            yaw_rate: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
    }

    /// Rotates a vehicle-frame vector into the world frame.
    pub fn vehicle_to_world(&self, v: &Vec3) -> Vec3 {
        rotate_z(v, self.yaw)
    }

    /// Rotates a world-frame vector into the vehicle frame.
    pub fn world_to_vehicle(&self, v: &Vec3) -> Vec3 {
        rotate_z(v, -self.yaw)
    }
}

pub(crate) fn rotate_z(v: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Camera,
    Vehicle,
    World,
}

/// Velocity plus yaw-rate command. In the camera frame `vx` is along the
/// optical axis, `vy` is the lateral component and `vz` is climb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
    pub frame: Frame,
}

impl VelocityCommand {
    pub fn new(vx: f64, vy: f64, vz: f64, yaw_rate: f64, frame: Frame) -> Self {
        Self {
            vx,
            vy,
            vz,
            yaw_rate,
            frame,
        }
    }

    pub fn zero(frame: Frame) -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, frame)
    }

    pub fn linear(&self) -> Vec3 {
        Vec3::new(self.vx, self.vy, self.vz)
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.vz.is_finite() && self.yaw_rate.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// First-order velocity time constant, s.
    pub tau: f64,
    pub v_max_h: f64,
    pub v_max_z: f64,
    pub yaw_rate_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            tau: 0.4,
            v_max_h: 2.5,
            v_max_z: 1.5,
            yaw_rate_max: 1.0,
        }
    }
}

/// Advances one own UAV by `dt` under a world- or vehicle-frame command.
///
/// Velocity follows `v' = v + (dt/τ)(v_cmd - v)`, is saturated, and then
/// integrates position (semi-implicit Euler). Altitude never drops below the
/// ground plane.
pub fn step_uav(state: &UavState, cmd: &VelocityCommand, params: &VehicleParams, dt: f64) -> Result<UavState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            field: "dt".into(),
            reason: "must be positive".into(),
        });
    }
    if !cmd.is_finite() {
        return Err(Error::NonFinite("velocity command"));
    }
    let v_cmd = match cmd.frame {
        Frame::World => cmd.linear(),
        Frame::Vehicle => state.vehicle_to_world(&cmd.linear()),
        Frame::Camera => {
            return Err(Error::FrameMismatch {
                expected: Frame::World,
                got: Frame::Camera,
            })
        }
    };

    let alpha = (dt / params.tau).min(1.0);
    let mut v = state.velocity + (v_cmd - state.velocity) * alpha;
    let h = (v.x * v.x + v.y * v.y).sqrt();
    if h > params.v_max_h {
        let s = params.v_max_h / h;
        v.x *= s;
        v.y *= s;
    }
    v.z = v.z.clamp(-params.v_max_z, params.v_max_z);

    let mut position = state.position + v * dt;
    if position.z < 0.0 {
        position.z = 0.0;
        if v.z < 0.0 {
            v.z = 0.0;
        }
    }

    let yaw_rate = cmd.yaw_rate.clamp(-params.yaw_rate_max, params.yaw_rate_max);
    Ok(UavState {
        position,
        velocity: v,
        yaw: wrap_angle(state.yaw + yaw_rate * dt),
        yaw_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    StaticHover,
    StraightLine,
    FigureEight,
}

/// Flight pattern of the target drone. For the figure-eight, `extent` is the
/// lemniscate half-width and the rate is chosen so the mean path speed equals
/// `speed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryPattern {
    pub kind: PatternKind,
    pub center: Vec3,
    pub heading: f64,
    pub speed: f64,
    pub extent: f64,
}

impl Default for TrajectoryPattern {
    fn default() -> Self {
        Self {
            kind: PatternKind::StaticHover,
            center: Vec3::new(22.0, 4.0, 8.0),
            heading: 0.0,
            speed: 0.5,
            extent: 6.0,
        }
    }
}

/// Arc length of one full period of the unit Gerono lemniscate
/// `(sin s, sin s cos s)`, s in [0, 2π].
static UNIT_GERONO_PERIMETER: LazyLock<f64> = LazyLock::new(gerono_perimeter);

fn gerono_perimeter() -> f64 {
    // Composite Simpson; the integrand is smooth and periodic.
    const N: usize = 4096;
    let speed = |s: f64| {
        let dx = s.cos();
        let dy = (2.0 * s).cos();
        (dx * dx + dy * dy).sqrt()
    };
    let h = TAU / N as f64;
    let mut acc = speed(0.0) + speed(TAU);
    for i in 1..N {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * speed(i as f64 * h);
    }
    acc * h / 3.0
}

impl TrajectoryPattern {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        };
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return Err(bad("speed", "must be finite and >= 0"));
        }
        if self.kind == PatternKind::FigureEight && !(self.extent > 0.0) {
            return Err(bad("extent", "must be > 0 for figure_eight"));
        }
        if !self.center.iter().all(|c| c.is_finite()) || !self.heading.is_finite() {
            return Err(bad("center", "must be finite"));
        }
        Ok(())
    }

    /// Angular rate of the lemniscate parameter, rad/s.
    pub fn figure_eight_rate(&self) -> f64 {
        if self.extent <= 0.0 {
            return 0.0;
        }
        let period = self.extent * *UNIT_GERONO_PERIMETER / self.speed;
        if period.is_finite() {
            TAU / period
        } else {
            0.0
        }
    }

    /// Period of the pattern in seconds, if it is periodic.
    pub fn period(&self) -> Option<f64> {
        match self.kind {
            PatternKind::FigureEight if self.speed > 0.0 => Some(TAU / self.figure_eight_rate()),
            _ => None,
        }
    }

    /// Position, velocity and acceleration of the target drone at `t`.
    pub fn kinematics(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let zero = Vec3::zeros();
        match self.kind {
            PatternKind::StaticHover => (self.center, zero, zero),
            PatternKind::StraightLine => {
                let dir = Vec3::new(self.heading.cos(), self.heading.sin(), 0.0);
                (self.center + dir * (self.speed * t), dir * self.speed, zero)
            }
            PatternKind::FigureEight => {
                let a = self.extent;
                let w = self.figure_eight_rate();
                let (s, c) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                let local_p = Vec3::new(a * s, 0.5 * a * s2, 0.0);
                let local_v = Vec3::new(a * w * c, a * w * c2, 0.0);
                let local_a = Vec3::new(-a * w * w * s, -2.0 * a * w * w * s2, 0.0);
                (
                    self.center + rotate_z(&local_p, self.heading),
                    rotate_z(&local_v, self.heading),
                    rotate_z(&local_a, self.heading),
                )
            }
        }
    }
}

/// Target drone position and velocity at time `t >= 0`.
pub fn target_pose(pattern: &TrajectoryPattern, t: f64) -> (Vec3, Vec3) {
    let (p, v, _) = pattern.kinematics(t);
    (p, v)
}

/// Suspended ball. While attached, `theta` is the deflection from straight
/// down and `phi` the azimuth of the deflection; `free_*` are only meaningful
/// once detached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    pub theta: f64,
    pub phi: f64,
    pub theta_dot: f64,
    pub phi_dot: f64,
    pub attached: bool,
    pub free_position: Vec3,
    pub free_velocity: Vec3,
}

impl Default for BallState {
    fn default() -> Self {
        Self::hanging()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub rod_length: f64,
    pub mass: f64,
    /// Linear damping coefficient on the bob's relative velocity, 1/s.
    pub damping: f64,
    pub gravity: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            rod_length: 1.5,
            mass: 0.1,
            damping: 0.05,
            gravity: GRAVITY,
        }
    }
}

/// Regular chart for the lower hemisphere: horizontal components of the unit
/// rod direction, `q = (sinθ cosφ, sinθ sinφ)`, and their rates.
#[derive(Debug, Clone, Copy)]
struct Chart {
    q: Vector2<f64>,
    qd: Vector2<f64>,
}

impl Chart {
    fn from_angles(b: &BallState) -> Self {
        let (st, ct) = b.theta.sin_cos();
        let (sp, cp) = b.phi.sin_cos();
        Self {
            q: Vector2::new(st * cp, st * sp),
            qd: Vector2::new(
                ct * b.theta_dot * cp - st * sp * b.phi_dot,
                ct * b.theta_dot * sp + st * cp * b.phi_dot,
            ),
        }
    }

    fn into_angles(self, prev: &BallState) -> BallState {
        let rho = self.q.norm();
        let mut out = *prev;
        if rho == 0.0 {
            let sd = self.qd.norm();
            out.theta = 0.0;
            out.phi = if sd > 0.0 { self.qd.y.atan2(self.qd.x) } else { prev.phi };
            out.theta_dot = sd;
            out.phi_dot = 0.0;
            return out;
        }
        let theta = rho.min(1.0).asin();
        out.theta = theta;
        out.phi = self.q.y.atan2(self.q.x);
        out.theta_dot = self.q.dot(&self.qd) / (rho * theta.cos());
        out.phi_dot = (self.q.x * self.qd.y - self.q.y * self.qd.x) / (rho * rho);
        out
    }

    fn vertical(&self) -> f64 {
        (1.0 - self.q.norm_squared()).max(1e-12).sqrt()
    }

    /// Second time derivative of `q`. `g_eff` is the effective specific
    /// force at the bob in the pivot frame (gravity − pivot accel + wind/m).
    fn accel(&self, g_eff: &Vec3, length: f64, damping: f64) -> Vector2<f64> {
        let q = self.q;
        let qd = self.qd;
        let w = self.vertical();
        let w2 = w * w;
        let s = q.dot(&qd);
        let force = Vector2::new(g_eff.x + g_eff.z * q.x / w, g_eff.y + g_eff.z * q.y / w) / length;
        let b = force - q * (qd.norm_squared() / w2 + s * s / (w2 * w2));
        // (I + q qᵀ/w²)⁻¹ = I − q qᵀ since w² + |q|² = 1.
        b - q * q.dot(&b) - qd * damping
    }
}

impl BallState {
    pub fn hanging() -> Self {
        Self {
            theta: 0.0,
            phi: 0.0,
            theta_dot: 0.0,
            phi_dot: 0.0,
            attached: true,
            free_position: Vec3::zeros(),
            free_velocity: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.theta, self.phi, self.theta_dot, self.phi_dot]
            .iter()
            .all(|v| v.is_finite())
            && self.free_position.iter().all(|v| v.is_finite())
            && self.free_velocity.iter().all(|v| v.is_finite())
    }

    /// True while the rod stays below horizontal.
    pub fn swing_valid(&self) -> bool {
        !self.attached || self.theta.abs() < PI / 2.0
    }

    /// Bob position relative to the support, per unit rod length.
    fn rod_direction(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(st * cp, st * sp, -ct)
    }

    /// Bob velocity relative to the support.
    pub fn relative_velocity(&self, length: f64) -> Vec3 {
        let c = Chart::from_angles(self);
        let w = c.vertical();
        Vec3::new(c.qd.x, c.qd.y, c.q.dot(&c.qd) / w) * length
    }

    /// World position of the ball (free position once detached).
    pub fn world_position(&self, support: &Vec3, length: f64) -> Vec3 {
        if self.attached {
            ball_world_position(support, self, length)
        } else {
            self.free_position
        }
    }

    pub fn world_velocity(&self, support_velocity: &Vec3, length: f64) -> Vec3 {
        if self.attached {
            support_velocity + self.relative_velocity(length)
        } else {
            self.free_velocity
        }
    }

    /// Releases the ball, seeding free flight from the current kinematics.
    pub fn detach(&mut self, support: &Vec3, support_velocity: &Vec3, length: f64) {
        if !self.attached {
            return;
        }
        self.free_position = ball_world_position(support, self, length);
        self.free_velocity = support_velocity + self.relative_velocity(length);
        self.attached = false;
    }

    /// Mechanical energy of the bob relative to a fixed support.
    pub fn energy(&self, params: &PendulumParams) -> f64 {
        let v = self.relative_velocity(params.rod_length);
        let z = -params.rod_length * self.theta.cos();
        0.5 * params.mass * v.norm_squared() + params.mass * params.gravity * z
    }
}

/// `support + L (sinθ cosφ, sinθ sinφ, −cosθ)`.
pub fn ball_world_position(support: &Vec3, ball: &BallState, length: f64) -> Vec3 {
    support + ball.rod_direction() * length
}

/// Advances the ball by one RK4 step of the moving-pivot spherical pendulum
/// (or ballistic flight when detached). `support_accel` and `wind_force` are
/// held constant over the step.
pub fn step_ball(
    ball: &BallState,
    support_accel: &Vec3,
    wind_force: &Vec3,
    params: &PendulumParams,
    dt: f64,
) -> BallState {
    if !ball.attached {
        let a = Vec3::new(0.0, 0.0, -params.gravity) + wind_force / params.mass;
        let mut out = *ball;
        out.free_position = ball.free_position + ball.free_velocity * dt + a * (0.5 * dt * dt);
        out.free_velocity = ball.free_velocity + a * dt;
        return out;
    }

    let g_eff = Vec3::new(0.0, 0.0, -params.gravity) - support_accel + wind_force / params.mass;
    let l = params.rod_length;
    let c = params.damping;
    let deriv = |s: &Chart| (s.qd, s.accel(&g_eff, l, c));
    let shift = |s: &Chart, dq: Vector2<f64>, dqd: Vector2<f64>, h: f64| Chart {
        q: s.q + dq * h,
        qd: s.qd + dqd * h,
    };

    let y0 = Chart::from_angles(ball);
    let (k1q, k1v) = deriv(&y0);
    let (k2q, k2v) = deriv(&shift(&y0, k1q, k1v, 0.5 * dt));
    let (k3q, k3v) = deriv(&shift(&y0, k2q, k2v, 0.5 * dt));
    let (k4q, k4v) = deriv(&shift(&y0, k3q, k3v, dt));
    let mut y1 = Chart {
        q: y0.q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0),
        qd: y0.qd + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
    };
    let rho = y1.q.norm();
    if rho >= 1.0 {
        // Rod at or past horizontal: keep the chart usable and let the
        // caller see the violation through `swing_valid`.
        y1.q *= 1.0 / rho;
        let mut out = y1.into_angles(ball);
        out.theta = PI / 2.0;
        return out;
    }
    y1.into_angles(ball)
}

/// Inclusive detachment threshold.
pub fn detach_check(pull_force: f64, threshold: f64) -> bool {
    pull_force >= threshold
}

/// Per-axis Ornstein–Uhlenbeck wind force acting on the ball, N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindModel {
    pub mean: Vec3,
    pub sigma: f64,
    pub correlation_time: f64,
}

impl Default for WindModel {
    fn default() -> Self {
        Self {
            mean: Vec3::zeros(),
            sigma: 0.035,
            correlation_time: 2.0,
        }
    }
}

impl WindModel {
    pub fn calm() -> Self {
        Self {
            mean: Vec3::zeros(),
            sigma: 0.0,
            correlation_time: 2.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.sigma > 0.0 || self.mean.norm() > 0.0
    }

    /// Stationary initial draw.
    pub fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        if self.sigma == 0.0 {
            return self.mean;
        }
        let mut f = self.mean;
        for i in 0..3 {
            let n: f64 = rng.sample(StandardNormal);
            f[i] += self.sigma * n;
        }
        f
    }

    /// Exact OU transition over `dt`.
    pub fn step<R: Rng + ?Sized>(&self, force: &Vec3, dt: f64, rng: &mut R) -> Vec3 {
        if self.sigma == 0.0 {
            return self.mean;
        }
        let decay = (-dt / self.correlation_time).exp();
        let spread = self.sigma * (1.0 - decay * decay).sqrt();
        let mut f = Vec3::zeros();
        for i in 0..3 {
            let n: f64 = rng.sample(StandardNormal);
            f[i] = self.mean[i] + (force[i] - self.mean[i]) * decay + spread * n;
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / 400.0;

    #[test]
    fn wrap_angle_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn uav_at_rest_stays_put() {
        let s = UavState::at_rest(Vec3::new(1.0, 2.0, 3.0), 0.3);
        let out = step_uav(
            &s,
            &VelocityCommand::zero(Frame::World),
            &VehicleParams::default(),
            0.37,
        )
        .unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn uav_lag_single_step() {
        let s = UavState::at_rest(Vec3::new(0.0, 0.0, 5.0), 0.0);
        let p = VehicleParams {
            tau: 0.5,
            ..Default::default()
        };
        let cmd = VelocityCommand::new(1.0, 0.0, 0.0, 0.0, Frame::World);
        let out = step_uav(&s, &cmd, &p, 0.05).unwrap();
        assert!((out.velocity - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn uav_lag_converges() {
        let p = VehicleParams::default();
        let cmd = VelocityCommand::new(1.2, -0.7, 0.4, 0.0, Frame::World);
        let mut s = UavState::at_rest(Vec3::new(0.0, 0.0, 5.0), 0.0);
        for _ in 0..(10.0 * p.tau / DT) as usize {
            s = step_uav(&s, &cmd, &p, DT).unwrap();
        }
        assert!((s.velocity - cmd.linear()).norm() < 0.01 * cmd.linear().norm());
    }

    #[test]
    fn uav_rejects_bad_commands() {
        let s = UavState::at_rest(Vec3::zeros(), 0.0);
        let p = VehicleParams::default();
        let nan = VelocityCommand::new(f64::NAN, 0.0, 0.0, 0.0, Frame::World);
        assert_eq!(step_uav(&s, &nan, &p, DT), Err(Error::NonFinite("velocity command")));
        let cam = VelocityCommand::zero(Frame::Camera);
        assert!(matches!(step_uav(&s, &cam, &p, DT), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn vehicle_frame_command_rotates_by_yaw() {
        let s = UavState::at_rest(Vec3::new(0.0, 0.0, 5.0), PI / 2.0);
        let p = VehicleParams {
            tau: DT,
            ..Default::default()
        };
        let out = step_uav(&s, &VelocityCommand::new(1.0, 0.0, 0.0, 0.0, Frame::Vehicle), &p, DT).unwrap();
        assert!((out.velocity - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn uav_saturates_and_clamps_ground() {
        let p = VehicleParams {
            tau: DT,
            ..Default::default()
        };
        let s = UavState::at_rest(Vec3::zeros(), 0.0);
        let out = step_uav(&s, &VelocityCommand::new(4.0, 3.0, -2.0, 5.0, Frame::World), &p, DT).unwrap();
        assert!((out.velocity.xy().norm() - p.v_max_h).abs() < 1e-12);
        assert_eq!(out.position.z, 0.0);
        assert_eq!(out.yaw_rate, p.yaw_rate_max);
    }

    #[test]
    fn static_and_straight_patterns() {
        let hover = TrajectoryPattern {
            kind: PatternKind::StaticHover,
            center: Vec3::new(0.0, 0.0, 5.0),
            ..Default::default()
        };
        assert_eq!(target_pose(&hover, 17.0), (Vec3::new(0.0, 0.0, 5.0), Vec3::zeros()));
        let line = TrajectoryPattern {
            kind: PatternKind::StraightLine,
            center: Vec3::new(1.0, 2.0, 5.0),
            speed: 1.0,
            heading: 0.0,
            ..Default::default()
        };
        let (p, v) = target_pose(&line, 3.0);
        assert!((p - Vec3::new(4.0, 2.0, 5.0)).norm() < 1e-12);
        assert!((v - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn figure_eight_is_periodic_with_mean_speed() {
        let pat = TrajectoryPattern {
            kind: PatternKind::FigureEight,
            center: Vec3::new(3.0, -1.0, 6.0),
            heading: 0.7,
            speed: 0.5,
            extent: 4.0,
        };
        let period = pat.period().unwrap();
        for &t in &[0.0, 1.3, 17.9, 40.2] {
            let (a, _) = target_pose(&pat, t);
            let (b, _) = target_pose(&pat, t + period);
            assert!((a - b).norm() < 1e-9);
        }
        // Path length over one period by fine polyline / period.
        let n = 200_000;
        let mut len = 0.0;
        let mut prev = target_pose(&pat, 0.0).0;
        for i in 1..=n {
            let p = target_pose(&pat, period * i as f64 / n as f64).0;
            len += (p - prev).norm();
            prev = p;
        }
        assert!((len / period - 0.5).abs() < 1e-6);
    }

    #[test]
    fn figure_eight_velocity_matches_finite_difference() {
        let pat = TrajectoryPattern {
            kind: PatternKind::FigureEight,
            speed: 1.0,
            extent: 5.0,
            ..Default::default()
        };
        let h = 1e-5;
        for &t in &[0.0, 2.0, 9.5] {
            let (_, v, a) = pat.kinematics(t + h);
            let (p1, v1, _) = pat.kinematics(t + 2.0 * h);
            let (p0, v0, _) = pat.kinematics(t);
            assert!(((p1 - p0) / (2.0 * h) - v).norm() < 1e-8);
            assert!(((v1 - v0) / (2.0 * h) - a).norm() < 1e-7);
        }
    }

    #[test]
    fn pattern_validation() {
        let mut p = TrajectoryPattern {
            kind: PatternKind::FigureEight,
            extent: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        p.extent = 1.0;
        p.speed = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn hanging_ball_is_equilibrium() {
        let b = BallState::hanging();
        let out = step_ball(&b, &Vec3::zeros(), &Vec3::zeros(), &PendulumParams::default(), DT);
        assert_eq!(out, b);
    }

    #[test]
    fn ball_geometry() {
        let b = BallState::hanging();
        let p = ball_world_position(&Vec3::new(0.0, 0.0, 5.0), &b, 1.5);
        assert!((p - Vec3::new(0.0, 0.0, 3.5)).norm() < 1e-15);
        let b = BallState {
            theta: PI / 6.0,
            ..BallState::hanging()
        };
        let p = ball_world_position(&Vec3::zeros(), &b, 1.5);
        assert!((p - Vec3::new(0.75, 0.0, -1.299_038_105_676_658)).norm() < 1e-12);
    }

    #[test]
    fn small_angle_period() {
        let params = PendulumParams {
            damping: 0.0,
            ..Default::default()
        };
        let mut b = BallState {
            theta: 0.05,
            ..BallState::hanging()
        };
        // Period from successive upward zero crossings of u = sinθ cosφ.
        let mut crossings = Vec::new();
        let mut prev_u = b.theta.sin() * b.phi.cos();
        for k in 1..=(20.0 / DT) as usize {
            b = step_ball(&b, &Vec3::zeros(), &Vec3::zeros(), &params, DT);
            let u = b.theta.sin() * b.phi.cos();
            if prev_u < 0.0 && u >= 0.0 {
                let frac = prev_u / (prev_u - u);
                crossings.push((k as f64 - 1.0 + frac) * DT);
            }
            prev_u = u;
        }
        let period = (crossings.last().unwrap() - crossings[0]) / (crossings.len() - 1) as f64;
        let analytic = 2.0 * PI * (1.5 / GRAVITY).sqrt();
        assert!((analytic - 2.457).abs() < 1e-3);
        assert!((period - analytic).abs() / analytic < 0.01, "period {period}");
    }

    #[test]
    fn detach_threshold_is_inclusive() {
        assert!(!detach_check(0.0, 5.0));
        assert!(detach_check(5.0, 5.0));
    }

    #[test]
    fn detached_ball_falls_ballistically() {
        let mut b = BallState::hanging();
        b.detach(&Vec3::new(0.0, 0.0, 10.0), &Vec3::new(1.0, 0.0, 0.0), 1.5);
        assert!(!b.attached);
        let params = PendulumParams::default();
        let out = step_ball(&b, &Vec3::zeros(), &Vec3::zeros(), &params, 0.5);
        assert!((out.free_position - Vec3::new(0.5, 0.0, 8.5 - 0.5 * GRAVITY * 0.25)).norm() < 1e-12);
    }

    #[test]
    fn wind_calm_is_constant_mean() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let m = WindModel::calm();
        assert_eq!(m.step(&Vec3::zeros(), DT, &mut rng), Vec3::zeros());
    }
}
