//! Tracker and grabber mission state machines, grab detection, and the
//! lossy, delayed broadcast channel between the drones.

use std::collections::VecDeque;

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{back_project, CameraIntrinsics, CameraMount, DetectionClass};
use crate::guidance::{
    camera_to_vehicle, goto_command, saturate, servo_command, CommandLimits, ExplorePattern, GuidanceGains,
};
use crate::perception::{idx, DronePerception, TrackEstimate, TrackStatus};
use crate::world::{rotate_z, Frame, UavState, Vec3, VelocityCommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionPhase {
    Idle,
    Takeoff,
    Explore,
    TrackDrone,
    ApproachHandoff,
    ServoBall,
    Grab,
    RetreatLand,
    Done,
    Failed,
}

impl MissionPhase {
    pub const ALL: [MissionPhase; 10] = [
        MissionPhase::Idle,
        MissionPhase::Takeoff,
        MissionPhase::Explore,
        MissionPhase::TrackDrone,
        MissionPhase::ApproachHandoff,
        MissionPhase::ServoBall,
        MissionPhase::Grab,
        MissionPhase::RetreatLand,
        MissionPhase::Done,
        MissionPhase::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, MissionPhase::Done | MissionPhase::Failed)
    }

    /// Servo and grab: the close-in part of the capture.
    pub fn is_terminal_approach(self) -> bool {
        matches!(self, MissionPhase::ServoBall | MissionPhase::Grab)
    }

    pub fn name(self) -> &'static str {
        match self {
            MissionPhase::Idle => "idle",
            MissionPhase::Takeoff => "takeoff",
            MissionPhase::Explore => "explore",
            MissionPhase::TrackDrone => "track_drone",
            MissionPhase::ApproachHandoff => "approach_handoff",
            MissionPhase::ServoBall => "servo_ball",
            MissionPhase::Grab => "grab",
            MissionPhase::RetreatLand => "retreat_land",
            MissionPhase::Done => "done",
            MissionPhase::Failed => "failed",
        }
    }

    /// Index in the declared phase order, used to order timeline bands.
    pub fn ordinal(self) -> usize {
        Self::ALL.iter().position(|p| *p == self).unwrap_or(0)
    }
}

/// Edges of the phase graph. `done` and `failed` have no outgoing edges.
pub fn allowed_transition(from: MissionPhase, to: MissionPhase) -> bool {
    use MissionPhase::*;
    if from.is_terminal() || from == to {
        return false;
    }
    if to == Failed {
        return true;
    }
    matches!(
        (from, to),
        (Idle, Takeoff)
            | (Takeoff, Explore)
            | (Takeoff, ApproachHandoff)
            | (Explore, TrackDrone)
            | (Explore, Done)
            | (TrackDrone, Explore)
            | (TrackDrone, ServoBall)
            | (TrackDrone, Done)
            | (ApproachHandoff, ServoBall)
            | (ServoBall, Grab)
            | (ServoBall, ApproachHandoff)
            | (ServoBall, Explore)
            | (Grab, RetreatLand)
            | (Grab, ApproachHandoff)
            | (Grab, ServoBall)
            | (Grab, Explore)
            | (RetreatLand, Done)
            | (Idle, Done)
            | (Takeoff, Done)
    )
}

/// Checks a sequence of observed phases (starting phase first) against the
/// graph. Returns the first offending edge.
pub fn validate_trace(phases: &[MissionPhase]) -> Result<(), (MissionPhase, MissionPhase)> {
    for w in phases.windows(2) {
        if !allowed_transition(w[0], w[1]) {
            return Err((w[0], w[1]));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Tracker,
    Grabber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    BallSighting,
    GrabConfirmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub position: Vec3,
    pub covariance: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneMessage {
    pub sender: Role,
    pub t_sent: f64,
    pub kind: MessageKind,
    pub payload: Option<Sighting>,
}

impl DroneMessage {
    pub fn sighting(sender: Role, t: f64, s: Sighting) -> Self {
        Self {
            sender,
            t_sent: t,
            kind: MessageKind::BallSighting,
            payload: Some(s),
        }
    }

    pub fn grab_confirmed(sender: Role, t: f64) -> Self {
        Self {
            sender,
            t_sent: t,
            kind: MessageKind::GrabConfirmed,
            payload: None,
        }
    }

    /// Payload present iff the message is a sighting.
    pub fn is_well_formed(&self) -> bool {
        (self.kind == MessageKind::BallSighting) == self.payload.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub latency: f64,
    pub drop_probability: f64,
    pub rate_limit: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            latency: 0.1,
            drop_probability: 0.05,
            rate_limit: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelEventKind {
    Sent,
    Dropped,
    RateLimited,
    Delivered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEvent {
    pub kind: ChannelEventKind,
    pub message: DroneMessage,
}

/// Simulated broadcast link. Sightings are rate limited at send and may be
/// dropped; grab confirmations bypass both. Every surviving message arrives
/// `latency` after it was sent, in send order.
#[derive(Debug, Clone, Default)]
pub struct Channel {
    model: ChannelModel,
    in_flight: VecDeque<(f64, DroneMessage)>,
    last_send: Vec<(Role, f64)>,
}

const TICK_EPS: f64 = 1e-9;

impl Channel {
    pub fn new(model: ChannelModel) -> Self {
        Self {
            model,
            ..Default::default()
        }
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    fn rate_ok(&mut self, sender: Role, t: f64) -> bool {
        if self.model.rate_limit <= 0.0 {
            return true;
        }
        let min_gap = 1.0 / self.model.rate_limit;
        match self.last_send.iter_mut().find(|(r, _)| *r == sender) {
            Some((_, last)) if t - *last < min_gap - TICK_EPS => false,
            Some((_, last)) => {
                *last = t;
                true
            }
            None => {
                self.last_send.push((sender, t));
                true
            }
        }
    }

    /// Accepts this tick's outbox and returns everything due by `t`, along
    /// with per-message channel events for the log.
    pub fn channel_step<R: Rng + ?Sized>(
        &mut self,
        outbox: Vec<DroneMessage>,
        rng: &mut R,
        t: f64,
    ) -> (Vec<DroneMessage>, Vec<ChannelEvent>) {
        let mut events = Vec::new();
        for msg in outbox {
            let reliable = msg.kind == MessageKind::GrabConfirmed;
            if !reliable {
                if !self.rate_ok(msg.sender, msg.t_sent) {
                    events.push(ChannelEvent {
                        kind: ChannelEventKind::RateLimited,
                        message: msg,
                    });
                    continue;
                }
                let u: f64 = rng.random();
                if u < self.model.drop_probability {
                    events.push(ChannelEvent {
                        kind: ChannelEventKind::Dropped,
                        message: msg,
                    });
                    continue;
                }
            }
            events.push(ChannelEvent {
                kind: ChannelEventKind::Sent,
                message: msg,
            });
            self.in_flight.push_back((msg.t_sent + self.model.latency, msg));
        }
        let mut delivered = Vec::new();
        while let Some((due, _)) = self.in_flight.front() {
            if *due > t + TICK_EPS {
                break;
            }
            let (_, msg) = self.in_flight.pop_front().expect("front checked");
            events.push(ChannelEvent {
                kind: ChannelEventKind::Delivered,
                message: msg,
            });
            delivered.push(msg);
        }
        (delivered, events)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureGeometry {
    pub capture_radius: f64,
    pub cone_half_angle_deg: f64,
    pub rel_speed_max: f64,
}

impl Default for CaptureGeometry {
    fn default() -> Self {
        Self {
            capture_radius: 0.25,
            cone_half_angle_deg: 45.0,
            rel_speed_max: 1.5,
        }
    }
}

/// Basket contact test: ball within the capture radius of the gripper point,
/// inside the forward approach cone, and slow enough relative to the gripper.
/// All bounds inclusive.
pub fn grab_detect(
    ball: &Vec3,
    gripper: &Vec3,
    gripper_yaw: f64,
    relative_speed: f64,
    geometry: &CaptureGeometry,
) -> bool {
    let rel = ball - gripper;
    let d = rel.norm();
    if d > geometry.capture_radius || relative_speed > geometry.rel_speed_max {
        return false;
    }
    if d == 0.0 {
        return true;
    }
    let axis = Vec3::new(gripper_yaw.cos(), gripper_yaw.sin(), 0.0);
    let cos_angle = (rel.dot(&axis) / d).clamp(-1.0, 1.0);
    cos_angle >= geometry.cone_half_angle_deg.to_radians().cos() - 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionParams {
    pub takeoff_altitude: f64,
    pub altitude_tolerance: f64,
    /// Range the tracker holds to the ball, m.
    pub tracker_standoff: f64,
    /// Range held to the target drone before the ball is selected, m.
    pub drone_standoff: f64,
    /// Grabber stops this far short of a handed-off ball position, m.
    pub handoff_standoff: f64,
    pub standoff_tolerance: f64,
    pub range_rate_tolerance: f64,
    /// Max pixel offset from the image centre to commit to a grab.
    pub pixel_threshold: f64,
    /// Time for the range setpoint to ramp from standoff to contact, s.
    pub grab_ramp_time: f64,
    pub grab_time_budget: f64,
    pub mission_budget: f64,
    pub claw_pull_force: f64,
    pub land_tolerance: f64,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            takeoff_altitude: 6.5,
            altitude_tolerance: 0.3,
            tracker_standoff: 6.0,
            drone_standoff: 5.0,
            handoff_standoff: 5.0,
            standoff_tolerance: 0.3,
            range_rate_tolerance: 0.3,
            pixel_threshold: 20.0,
            grab_ramp_time: 4.0,
            grab_time_budget: 10.0,
            mission_budget: 120.0,
            claw_pull_force: 8.0,
            land_tolerance: 0.05,
        }
    }
}

/// Static description of one own drone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneSetup {
    pub role: Role,
    pub home: Vec3,
    pub intr: CameraIntrinsics,
    pub mount: CameraMount,
    pub gains: GuidanceGains,
    pub limits: CommandLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissionEvent {
    /// Ball track dropped; `terminal` when it happened in servo/grab.
    BallTrackLoss {
        terminal: bool,
    },
    /// Grab window ran out without contact.
    GrabMiss,
    GrabConfirmed,
    BudgetExceeded,
}

/// Per-tick inputs shared by both state machines.
#[derive(Debug, Clone, Copy)]
pub struct TickInputs<'a> {
    pub t: f64,
    pub own: &'a UavState,
    pub perception: &'a DronePerception,
    pub inbox: &'a [DroneMessage],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub command: VelocityCommand,
    pub messages: Vec<DroneMessage>,
    pub transition: Option<(MissionPhase, MissionPhase)>,
    pub events: Vec<MissionEvent>,
}

fn servo_world(track: &TrackEstimate, setup: &DroneSetup, r_des: f64, yaw: f64) -> Option<VelocityCommand> {
    let cam = servo_command(track, &setup.intr, &setup.gains.with_range(r_des)).ok()?;
    let world = camera_to_vehicle(&cam, &setup.mount, yaw).ok()?;
    Some(saturate(&world, &setup.limits))
}

/// Rate of change of range as seen from the moving drone: the track's
/// range rate describes target motion only, so the drone's own speed along
/// the boresight is subtracted.
fn closing_rate(track: &TrackEstimate, own: &UavState) -> f64 {
    let boresight = Vec3::new(own.yaw.cos(), own.yaw.sin(), 0.0);
    track.range_rate() - own.velocity.dot(&boresight)
}

fn hover() -> VelocityCommand {
    VelocityCommand::zero(Frame::World)
}

/// World-frame ball estimate from a ball track, with a position covariance
/// built from the pixel and range variances.
pub fn sighting_from_track(
    track: &TrackEstimate,
    own: &UavState,
    mount: &CameraMount,
    intr: &CameraIntrinsics,
) -> Sighting {
    let r = track.range();
    let position = back_project(track.x(), track.y(), r, own, mount, intr);
    let scale = r / intr.focal_length;
    let p = &track.covariance;
    let cam = Matrix3::from_diagonal(&Vec3::new(
        p[(idx::R, idx::R)],
        p[(idx::X, idx::X)] * scale * scale,
        p[(idx::Y, idx::Y)] * scale * scale,
    ));
    // Columns: world images of camera forward, right, down.
    let rot = Matrix3::from_columns(&[
        rotate_z(&Vec3::x(), own.yaw),
        rotate_z(&-Vec3::y(), own.yaw),
        -Vec3::z(),
    ]);
    Sighting {
        position,
        covariance: rot * cam * rot.transpose(),
    }
}

struct Transition {
    from: MissionPhase,
    phase: MissionPhase,
}

impl Transition {
    fn to(&mut self, next: MissionPhase) {
        self.phase = next;
    }

    fn finish(self, command: VelocityCommand, messages: Vec<DroneMessage>, events: Vec<MissionEvent>) -> StepOutput {
        StepOutput {
            command,
            messages,
            transition: (self.phase != self.from).then_some((self.from, self.phase)),
            events,
        }
    }
}

/// Tracker drone: search, then hold the ball in view at a standoff and keep
/// broadcasting its world position until the grabber confirms capture.
#[derive(Debug, Clone)]
pub struct TrackerFsm {
    pub phase: MissionPhase,
    pub setup: DroneSetup,
    pub explore: ExplorePattern,
}

impl TrackerFsm {
    pub fn new(setup: DroneSetup, explore: ExplorePattern) -> Self {
        Self {
            phase: MissionPhase::Idle,
            setup,
            explore,
        }
    }

    pub fn tracker_step(&mut self, input: &TickInputs<'_>, mission: &MissionParams) -> StepOutput {
        let out = self.tracker_tick(input, mission);
        if let Some((_, to)) = out.transition {
            self.phase = to;
        }
        out
    }

    fn tracker_tick(&mut self, input: &TickInputs<'_>, mission: &MissionParams) -> StepOutput {
        let mut tr = Transition {
            from: self.phase,
            phase: self.phase,
        };
        let own = input.own;
        let perception = input.perception;
        let mut messages = Vec::new();

        if self.phase.is_terminal() {
            return tr.finish(hover(), messages, Vec::new());
        }
        if input.inbox.iter().any(|m| m.kind == MessageKind::GrabConfirmed) {
            tr.to(MissionPhase::Done);
            return tr.finish(hover(), messages, Vec::new());
        }

        let command = match self.phase {
            MissionPhase::Idle => {
                tr.to(MissionPhase::Takeoff);
                self.climb(own, mission)
            }
            MissionPhase::Takeoff => {
                if (own.position.z - mission.takeoff_altitude).abs() <= mission.altitude_tolerance {
                    tr.to(MissionPhase::Explore);
                    self.explore.resume_from(&own.position);
                    self.explore.explore_command(own, &self.setup.limits)
                } else {
                    self.climb(own, mission)
                }
            }
            MissionPhase::Explore => match perception.active_track() {
                Some(track) => {
                    tr.to(MissionPhase::TrackDrone);
                    self.hold(track, own, mission).unwrap_or_else(hover)
                }
                None => self.explore.explore_command(own, &self.setup.limits),
            },
            MissionPhase::TrackDrone => match perception.active_track() {
                Some(track) => {
                    if perception.ball.status == TrackStatus::Tracking {
                        let s = sighting_from_track(&perception.ball, own, &self.setup.mount, &self.setup.intr);
                        messages.push(DroneMessage::sighting(Role::Tracker, input.t, s));
                    }
                    self.hold(track, own, mission).unwrap_or_else(hover)
                }
                None => {
                    tr.to(MissionPhase::Explore);
                    self.explore.resume_from(&own.position);
                    self.explore.explore_command(own, &self.setup.limits)
                }
            },
            _ => hover(),
        };
        tr.finish(command, messages, Vec::new())
    }

    fn climb(&self, own: &UavState, mission: &MissionParams) -> VelocityCommand {
        let goal = Vec3::new(self.setup.home.x, self.setup.home.y, mission.takeoff_altitude);
        goto_command(own, &goal, 1.0, 0.0, &self.setup.limits)
    }

    fn hold(&self, track: &TrackEstimate, own: &UavState, mission: &MissionParams) -> Option<VelocityCommand> {
        let r_des = match track.class {
            DetectionClass::Ball => mission.tracker_standoff,
            DetectionClass::Drone => mission.drone_standoff,
        };
        servo_world(track, &self.setup, r_des, own.yaw)
    }
}

/// Grabber drone. In collaborative mode it waits for a sighting, flies to it
/// and takes over with its own camera; in single mode it searches itself.
#[derive(Debug, Clone)]
pub struct GrabberFsm {
    pub phase: MissionPhase,
    pub setup: DroneSetup,
    pub collaborative: bool,
    pub explore: ExplorePattern,
    pub latest_sighting: Option<Sighting>,
    pub grab_started: f64,
    pub confirmed: bool,
}

impl GrabberFsm {
    pub fn new(setup: DroneSetup, explore: ExplorePattern, collaborative: bool) -> Self {
        Self {
            phase: MissionPhase::Idle,
            setup,
            collaborative,
            explore,
            latest_sighting: None,
            grab_started: 0.0,
            confirmed: false,
        }
    }

    fn search_phase(&self) -> MissionPhase {
        if self.collaborative {
            MissionPhase::ApproachHandoff
        } else {
            MissionPhase::Explore
        }
    }

    pub fn grabber_step(&mut self, input: &TickInputs<'_>, grabbed: bool, mission: &MissionParams) -> StepOutput {
        let out = self.grabber_tick(input, grabbed, mission);
        if let Some((_, to)) = out.transition {
            self.phase = to;
        }
        out
    }

    fn grabber_tick(&mut self, input: &TickInputs<'_>, grabbed: bool, mission: &MissionParams) -> StepOutput {
        let mut tr = Transition {
            from: self.phase,
            phase: self.phase,
        };
        let own = input.own;
        let perception = input.perception;
        let ball = &perception.ball;
        let t = input.t;
        let mut messages = Vec::new();
        let mut events = Vec::new();

        for m in input.inbox {
            if let (MessageKind::BallSighting, Some(s)) = (m.kind, m.payload) {
                self.latest_sighting = Some(s);
            }
        }
        if self.phase.is_terminal() {
            return tr.finish(hover(), messages, events);
        }

        if grabbed && !self.confirmed && self.phase.is_terminal_approach() {
            self.confirmed = true;
            messages.push(DroneMessage::grab_confirmed(Role::Grabber, t));
            events.push(MissionEvent::GrabConfirmed);
        }
        if self.confirmed && self.phase.is_terminal_approach() {
            // Contact during servo still passes through grab.
            if self.phase == MissionPhase::ServoBall {
                tr.to(MissionPhase::Grab);
                return tr.finish(hover(), messages, events);
            }
            tr.to(MissionPhase::RetreatLand);
            return tr.finish(self.retreat(own), messages, events);
        }

        if !self.confirmed && t > mission.mission_budget {
            events.push(MissionEvent::BudgetExceeded);
            tr.to(MissionPhase::Failed);
            return tr.finish(hover(), messages, events);
        }

        let lost_terminal = |events: &mut Vec<MissionEvent>| {
            events.push(MissionEvent::BallTrackLoss { terminal: true });
        };

        let command = match self.phase {
            MissionPhase::Idle => {
                if self.collaborative && self.latest_sighting.is_none() {
                    hover()
                } else {
                    tr.to(MissionPhase::Takeoff);
                    self.climb(own, mission)
                }
            }
            MissionPhase::Takeoff => {
                if (own.position.z - mission.takeoff_altitude).abs() <= mission.altitude_tolerance {
                    let next = self.search_phase();
                    tr.to(next);
                    if next == MissionPhase::Explore {
                        self.explore.resume_from(&own.position);
                    }
                    self.search(own, mission)
                } else {
                    self.climb(own, mission)
                }
            }
            MissionPhase::Explore => match perception.active_track() {
                Some(track) => {
                    tr.to(MissionPhase::TrackDrone);
                    servo_world(track, &self.setup, mission.drone_standoff, own.yaw).unwrap_or_else(hover)
                }
                None => self.explore.explore_command(own, &self.setup.limits),
            },
            MissionPhase::TrackDrone => {
                if perception.selection.active == DetectionClass::Ball && ball.status == TrackStatus::Tracking {
                    tr.to(MissionPhase::ServoBall);
                    self.servo_ball(ball, own, self.setup.gains.r_des)
                } else {
                    match perception.active_track() {
                        Some(track) => {
                            let r_des = match track.class {
                                DetectionClass::Drone => mission.drone_standoff,
                                DetectionClass::Ball => self.setup.gains.r_des,
                            };
                            servo_world(track, &self.setup, r_des, own.yaw).unwrap_or_else(hover)
                        }
                        None => {
                            tr.to(MissionPhase::Explore);
                            self.explore.resume_from(&own.position);
                            self.explore.explore_command(own, &self.setup.limits)
                        }
                    }
                }
            }
            MissionPhase::ApproachHandoff => {
                if ball.status == TrackStatus::Tracking {
                    tr.to(MissionPhase::ServoBall);
                    self.servo_ball(ball, own, self.setup.gains.r_des)
                } else {
                    self.search(own, mission)
                }
            }
            MissionPhase::ServoBall => {
                if !ball.is_active() {
                    lost_terminal(&mut events);
                    let next = self.search_phase();
                    tr.to(next);
                    if next == MissionPhase::Explore {
                        self.explore.resume_from(&own.position);
                    }
                    self.search(own, mission)
                } else {
                    let r_des = self.setup.gains.r_des;
                    let (cx, cy) = self.setup.intr.center();
                    let settled = (ball.range() - r_des).abs() <= mission.standoff_tolerance
                        && closing_rate(ball, own).abs() <= mission.range_rate_tolerance
                        && (ball.x() - cx).abs() <= mission.pixel_threshold
                        && (ball.y() - cy).abs() <= mission.pixel_threshold;
                    if settled {
                        tr.to(MissionPhase::Grab);
                        self.grab_started = t;
                    }
                    self.servo_ball(ball, own, r_des)
                }
            }
            MissionPhase::Grab => {
                let elapsed = t - self.grab_started;
                if !ball.is_active() {
                    lost_terminal(&mut events);
                    let next = self.search_phase();
                    tr.to(next);
                    if next == MissionPhase::Explore {
                        self.explore.resume_from(&own.position);
                    }
                    self.search(own, mission)
                } else if elapsed > mission.grab_time_budget {
                    events.push(MissionEvent::GrabMiss);
                    if self.collaborative {
                        tr.to(MissionPhase::ApproachHandoff);
                    } else {
                        tr.to(MissionPhase::ServoBall);
                    }
                    self.servo_ball(ball, own, self.setup.gains.r_des)
                } else {
                    let ramp = (1.0 - elapsed / mission.grab_ramp_time).max(0.0);
                    self.servo_ball(ball, own, self.setup.gains.r_des * ramp)
                }
            }
            MissionPhase::RetreatLand => {
                let landed = own.position.z <= mission.land_tolerance
                    && (own.position.xy() - self.setup.home.xy()).norm() <= 0.5;
                if landed {
                    tr.to(MissionPhase::Done);
                    hover()
                } else {
                    self.retreat(own)
                }
            }
            MissionPhase::Done | MissionPhase::Failed => hover(),
        };
        tr.finish(command, messages, events)
    }

    fn climb(&self, own: &UavState, mission: &MissionParams) -> VelocityCommand {
        let goal = Vec3::new(self.setup.home.x, self.setup.home.y, mission.takeoff_altitude);
        goto_command(own, &goal, 1.0, 0.0, &self.setup.limits)
    }

    fn servo_ball(&self, ball: &TrackEstimate, own: &UavState, r_des: f64) -> VelocityCommand {
        servo_world(ball, &self.setup, r_des, own.yaw).unwrap_or_else(hover)
    }

    /// Handoff pursuit in collaborative mode, lawnmower otherwise.
    fn search(&mut self, own: &UavState, mission: &MissionParams) -> VelocityCommand {
        if !self.collaborative {
            return self.explore.explore_command(own, &self.setup.limits);
        }
        let Some(s) = self.latest_sighting else {
            return hover();
        };
        let cam = self.setup.mount.world_position(own);
        let delta = s.position - cam;
        let horizontal = delta.xy().norm();
        // Stand off on the current bearing, backing away if already closer,
        // so the target drone above the ball stays inside the field of view.
        let goal = if horizontal > 0.1 {
            let back = Vec3::new(delta.x, delta.y, 0.0) * (mission.handoff_standoff / horizontal);
            s.position - back
        } else {
            Vec3::new(cam.x, cam.y, s.position.z)
        };
        let goal_vehicle = goal - (cam - own.position);
        let mut cmd = goto_command(own, &goal_vehicle, 1.0, 1.5, &self.setup.limits);
        // Keep facing the sighting even once the goal is reached.
        if horizontal > 0.1 {
            let bearing = delta.y.atan2(delta.x);
            cmd.yaw_rate = (1.5 * crate::world::wrap_angle(bearing - own.yaw))
                .clamp(-self.setup.limits.yaw_rate_max, self.setup.limits.yaw_rate_max);
        }
        cmd
    }

    fn retreat(&self, own: &UavState) -> VelocityCommand {
        let home = self.setup.home;
        let horizontal = (own.position.xy() - home.xy()).norm();
        let goal = if horizontal > 0.3 {
            Vec3::new(home.x, home.y, own.position.z)
        } else {
            Vec3::new(home.x, home.y, home.z.min(own.position.z) - 1.0)
        };
        let mut cmd = goto_command(own, &goal, 1.0, 0.0, &self.setup.limits);
        cmd.yaw_rate = 0.0;
        cmd
    }
}
