//! Multirate scenario loop. Dynamics advance every step; vision and control
//! fire on fixed step dividers so every tick lands on a dynamics boundary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, ScenarioConfig};
use super::log::{LogHeader, LogRecord, SimEvent, SimLog, UavTruth, Verdict, LOG_SCHEMA, LOG_VERSION};
use crate::camera::{
    ball_search_gate, estimate_range, synth_detection, DetectionClass, DetectionRequest, ImageDetection, SceneSnapshot,
};
use crate::coordination::{
    grab_detect, Channel, DroneMessage, GrabberFsm, MissionEvent, MissionPhase, Role, TickInputs, TrackerFsm,
};
use crate::error::Result;
use crate::guidance::ExplorePattern;
use crate::perception::{DronePerception, LifecycleEvent, Measurement};
use crate::world::{detach_check, step_ball, step_uav, BallState, Frame, UavState, Vec3, VelocityCommand};

/// Named random streams fanned out from the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Wind = 1,
    CameraTracker = 2,
    CameraGrabber = 3,
    Channel = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// How much of the run to keep in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogDetail {
    /// Every record stream.
    Full,
    /// Phases, events and the verdict only (Monte Carlo batches).
    Outcome,
}

struct OwnDrone {
    role: Role,
    state: UavState,
    perception: DronePerception,
    command: VelocityCommand,
    rng: ChaCha8Rng,
    inbox: Vec<DroneMessage>,
    /// Pose at the previous vision frame.
    vision_pose: UavState,
}

enum Fsm {
    Tracker(TrackerFsm),
    Grabber(GrabberFsm),
}

impl Fsm {
    fn phase(&self) -> MissionPhase {
        match self {
            Fsm::Tracker(f) => f.phase,
            Fsm::Grabber(f) => f.phase,
        }
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    detail: LogDetail,
    dt: f64,
    total_steps: u64,
    vision_every: u64,
    control_every: u64,
    step: u64,
    ball: BallState,
    ball_held: bool,
    wind: Vec3,
    wind_rng: ChaCha8Rng,
    channel: Channel,
    channel_rng: ChaCha8Rng,
    pending_outbox: Vec<DroneMessage>,
    drones: Vec<(OwnDrone, Fsm)>,
    capture_time: Option<f64>,
    swing_invalid: bool,
    records: Vec<LogRecord>,
    header: LogHeader,
}

fn role_stream(role: Role) -> Stream {
    match role {
        Role::Tracker => Stream::CameraTracker,
        Role::Grabber => Stream::CameraGrabber,
    }
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, detail: LogDetail) -> Result<Self> {
        cfg.validate()?;
        let rates = cfg.rates;
        let dt = 1.0 / rates.dynamics;
        let vision_every = rates.vision_every();
        let control_every = rates.control_every();
        let header = LogHeader {
            schema: LOG_SCHEMA.into(),
            version: LOG_VERSION,
            config: cfg.clone(),
            dynamics_dt: dt,
            vision_every,
            control_every,
            effective_vision_rate: rates.dynamics / vision_every as f64,
            effective_control_rate: rates.dynamics / control_every as f64,
        };

        let mut drones = Vec::new();
        for &role in cfg.roles() {
            let setup = cfg.setup(role);
            let explore = ExplorePattern::new(&cfg.search)?;
            let fsm = match role {
                Role::Tracker => Fsm::Tracker(TrackerFsm::new(setup, explore)),
                Role::Grabber => Fsm::Grabber(GrabberFsm::new(setup, explore, cfg.mode == Mode::Collaborative)),
            };
            drones.push((
                OwnDrone {
                    role,
                    state: cfg.initial_state(role),
                    perception: DronePerception::default(),
                    command: VelocityCommand::zero(Frame::World),
                    rng: stream_rng(cfg.seed, role_stream(role)),
                    inbox: Vec::new(),
                    vision_pose: cfg.initial_state(role),
                },
                fsm,
            ));
        }

        let mut wind_rng = stream_rng(cfg.seed, Stream::Wind);
        let wind = cfg.world.wind.initial(&mut wind_rng);
        Ok(Self {
            cfg: cfg.clone(),
            detail,
            dt,
            total_steps: (cfg.duration * rates.dynamics).round() as u64,
            vision_every,
            control_every,
            step: 0,
            ball: BallState::hanging(),
            ball_held: false,
            wind,
            wind_rng,
            channel: Channel::new(cfg.channel),
            channel_rng: stream_rng(cfg.seed, Stream::Channel),
            pending_outbox: Vec::new(),
            drones,
            capture_time: None,
            swing_invalid: false,
            records: Vec::new(),
            header,
        })
    }

    fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    fn full(&self) -> bool {
        self.detail == LogDetail::Full
    }

    fn target(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        self.cfg.target.kinematics(t)
    }

    fn grabber_index(&self) -> usize {
        self.drones
            .iter()
            .position(|(d, _)| d.role == Role::Grabber)
            .expect("grabber always present")
    }

    fn ball_position(&self, t: f64) -> Vec3 {
        let (support, _, _) = self.target(t);
        self.ball.world_position(&support, self.cfg.world.rod_length)
    }

    fn ball_velocity(&self, t: f64) -> Vec3 {
        let (_, sv, _) = self.target(t);
        self.ball.world_velocity(&sv, self.cfg.world.rod_length)
    }

    fn vision_tick(&mut self, t: f64) {
        let (support, _, _) = self.target(t);
        let scene = SceneSnapshot {
            target_drone: support,
            ball: self.ball_position(t),
            drone_span: self.cfg.world.drone_span,
            ball_diameter: self.cfg.world.ball_diameter,
        };
        let intr = self.cfg.intrinsics();
        let noise = self.cfg.camera.noise;
        let pparams = self.cfg.perception;
        let full = self.full();
        let world = self.cfg.world;
        let require_gate = self.cfg.camera.require_drone_gate;
        let size_sigma = noise.sigma_size.max(0.5);

        for (drone, fsm) in self.drones.iter_mut() {
            let setup = self.cfg.setup(drone.role);
            let mut req = DetectionRequest {
                observer: &drone.state,
                mount: &setup.mount,
                intr: &intr,
                noise: &noise,
                class: DetectionClass::Drone,
                gate: None,
                t,
            };
            let drone_det = synth_detection(&scene, &req, &mut drone.rng);
            let gate = drone_det.map(|d| ball_search_gate(&d, world.drone_span, world.rod_length, world.ball_diameter));
            let needs_gate = require_gate && !drone.perception.ball.is_active();
            req.class = DetectionClass::Ball;
            req.gate = if needs_gate { gate.as_ref() } else { None };
            let mut ball_det = synth_detection(&scene, &req, &mut drone.rng);
            if needs_gate && gate.is_none() {
                ball_det = None;
            }

            let to_meas = |det: &ImageDetection, size: f64| -> Option<Measurement> {
                let r = estimate_range(det, &intr, size).ok()?;
                Some(Measurement {
                    x: det.x,
                    y: det.y,
                    r,
                    sigma_pixel: pparams.sigma_pixel,
                    sigma_range: r * size_sigma / det.w,
                    t,
                })
            };
            drone
                .perception
                .compensate(&drone.vision_pose, &drone.state, &setup.mount, &intr);
            drone.vision_pose = drone.state;
            let drone_meas = drone_det.as_ref().and_then(|d| to_meas(d, world.drone_span));
            let ball_meas = ball_det.as_ref().and_then(|d| to_meas(d, world.ball_diameter));
            let (de, be) = drone
                .perception
                .update(drone_meas.as_ref(), ball_meas.as_ref(), t, &pparams);

            let phase = fsm.phase();
            for (class, det, meas, event) in [
                (DetectionClass::Drone, drone_det, drone_meas, de),
                (DetectionClass::Ball, ball_det, ball_meas, be),
            ] {
                match event {
                    LifecycleEvent::Lost => self.records.push(LogRecord::Event {
                        t,
                        drone: Some(drone.role),
                        event: SimEvent::TrackLoss { class, phase },
                    }),
                    LifecycleEvent::Rejected if full => self.records.push(LogRecord::Event {
                        t,
                        drone: Some(drone.role),
                        event: SimEvent::MeasurementRejected { class },
                    }),
                    _ => {}
                }
                if !full {
                    continue;
                }
                if let (Some(d), Some(m)) = (det, meas) {
                    self.records.push(LogRecord::Detection {
                        t,
                        drone: drone.role,
                        class,
                        x: d.x,
                        y: d.y,
                        w: d.w,
                        h: d.h,
                        range: m.r,
                    });
                }
                let track = match class {
                    DetectionClass::Drone => &drone.perception.drone,
                    DetectionClass::Ball => &drone.perception.ball,
                };
                if track.is_active() || event != LifecycleEvent::None {
                    self.records.push(LogRecord::Track {
                        t,
                        drone: drone.role,
                        class,
                        status: track.status,
                        event,
                        x: track.x(),
                        y: track.y(),
                        x_rate: track.x_rate(),
                        y_rate: track.y_rate(),
                        range: track.range(),
                        range_rate: track.range_rate(),
                    });
                }
            }
        }
    }

    fn control_tick(&mut self, t: f64) {
        let full = self.full();
        let outbox = std::mem::take(&mut self.pending_outbox);
        let (delivered, channel_events) = self.channel.channel_step(outbox, &mut self.channel_rng, t);
        if full {
            for ev in channel_events {
                self.records.push(LogRecord::Message {
                    t,
                    event: ev.kind,
                    message: ev.message,
                });
            }
        }
        for (drone, _) in self.drones.iter_mut() {
            drone.inbox = delivered.iter().filter(|m| m.sender != drone.role).copied().collect();
        }

        // Basket contact, evaluated on ground truth while the grabber is in
        // its close-in phases.
        let gi = self.grabber_index();
        let mut grabbed = false;
        {
            let (g, fsm) = &self.drones[gi];
            if self.ball.attached && fsm.phase().is_terminal_approach() {
                let gripper = self.cfg.grabber_mount().world_position(&g.state);
                let gripper_vel = g.state.velocity;
                let rel_speed = (self.ball_velocity(t) - gripper_vel).norm();
                if grab_detect(
                    &self.ball_position(t),
                    &gripper,
                    g.state.yaw,
                    rel_speed,
                    &self.cfg.capture,
                ) && detach_check(self.cfg.mission.claw_pull_force, self.cfg.world.detach_threshold)
                {
                    grabbed = true;
                }
            }
        }
        if grabbed {
            let (support, sv, _) = self.target(t);
            self.ball.detach(&support, &sv, self.cfg.world.rod_length);
            self.ball_held = true;
            self.capture_time = Some(t);
            self.records.push(LogRecord::Event {
                t,
                drone: Some(Role::Grabber),
                event: SimEvent::Grab,
            });
            self.records.push(LogRecord::Event {
                t,
                drone: None,
                event: SimEvent::Detach,
            });
        }

        let mission = self.cfg.mission;
        let mut outbox = Vec::new();
        let mut records = Vec::new();
        for (drone, fsm) in self.drones.iter_mut() {
            let inputs = TickInputs {
                t,
                own: &drone.state,
                perception: &drone.perception,
                inbox: &drone.inbox,
            };
            let out = match fsm {
                Fsm::Tracker(f) => f.tracker_step(&inputs, &mission),
                Fsm::Grabber(f) => f.grabber_step(&inputs, grabbed, &mission),
            };
            drone.command = out.command;
            if let Some((from, to)) = out.transition {
                records.push(LogRecord::Phase {
                    t,
                    drone: drone.role,
                    from,
                    to,
                });
            }
            for e in out.events {
                records.push(LogRecord::Event {
                    t,
                    drone: Some(drone.role),
                    event: SimEvent::Mission { event: e },
                });
            }
            if full {
                records.push(LogRecord::Command {
                    t,
                    step: self.step,
                    drone: drone.role,
                    vx: out.command.vx,
                    vy: out.command.vy,
                    vz: out.command.vz,
                    yaw_rate: out.command.yaw_rate,
                });
            }
            outbox.extend(out.messages);
        }
        self.records.extend(records);
        self.pending_outbox = outbox;
    }

    /// One dynamics step from `t` to `t + dt`.
    fn dynamics_step(&mut self, t: f64) -> Result<()> {
        let dt = self.dt;
        let (_, _, accel_mid) = self.target(t + 0.5 * dt);
        let pendulum = self.cfg.world.pendulum();
        self.wind = self.cfg.world.wind.step(&self.wind, dt, &mut self.wind_rng);
        if !self.ball_held {
            self.ball = step_ball(&self.ball, &accel_mid, &self.wind, &pendulum, dt);
        }
        for (drone, _) in self.drones.iter_mut() {
            drone.state = step_uav(&drone.state, &drone.command, &self.cfg.vehicle, dt)?;
        }
        if self.ball_held {
            let g = &self.drones[self.grabber_index()].0;
            self.ball.free_position = self.cfg.grabber_mount().world_position(&g.state);
            self.ball.free_velocity = g.state.velocity;
        }
        let invalid = !self.ball.swing_valid();
        if invalid && !self.swing_invalid {
            self.records.push(LogRecord::Event {
                t: t + dt,
                drone: None,
                event: SimEvent::InvalidSwing,
            });
        }
        self.swing_invalid = invalid;
        Ok(())
    }

    fn finished(&self) -> bool {
        let phases: Vec<MissionPhase> = self.drones.iter().map(|(_, f)| f.phase()).collect();
        let grabber = self.drones[self.grabber_index()].1.phase();
        grabber == MissionPhase::Failed || phases.iter().all(|p| *p == MissionPhase::Done)
    }

    fn finite(&self) -> bool {
        self.ball.is_finite()
            && self.wind.iter().all(|v| v.is_finite())
            && self.drones.iter().all(|(d, _)| d.state.is_finite())
    }

    fn log_truth(&mut self) {
        let t = self.time();
        let (target, target_velocity, _) = self.target(t);
        let uavs = self
            .drones
            .iter()
            .map(|(d, _)| UavTruth {
                drone: d.role,
                state: d.state,
            })
            .collect();
        let rec = LogRecord::Truth {
            step: self.step,
            t,
            target,
            target_velocity,
            ball: self.ball_position(t),
            ball_velocity: self.ball_velocity(t),
            ball_attached: self.ball.attached,
            wind: self.wind,
            uavs,
        };
        self.records.push(rec);
    }

    pub fn run(mut self) -> Result<SimLog> {
        let mut verdict = None;
        while self.step < self.total_steps {
            let t = self.time();
            if self.step.is_multiple_of(self.vision_every) {
                self.vision_tick(t);
            }
            if self.step.is_multiple_of(self.control_every) {
                self.control_tick(t);
            }
            if self.finished() {
                break;
            }
            let stepped = self.dynamics_step(t);
            self.step += 1;
            if stepped.is_err() || !self.finite() {
                verdict = Some(Verdict::Invalid);
                break;
            }
            if self.full() {
                self.log_truth();
            }
        }
        let verdict = verdict.unwrap_or(if self.capture_time.is_some() {
            Verdict::Captured
        } else {
            Verdict::Timeout
        });
        if verdict == Verdict::Timeout && self.drones[self.grabber_index()].1.phase() != MissionPhase::Failed {
            self.records.push(LogRecord::Event {
                t: self.time(),
                drone: Some(Role::Grabber),
                event: SimEvent::Mission {
                    event: MissionEvent::BudgetExceeded,
                },
            });
        }
        self.records.push(LogRecord::Verdict {
            t: self.time(),
            steps: self.step,
            verdict,
            capture_time: self.capture_time,
        });
        Ok(SimLog {
            header: self.header,
            records: self.records,
        })
    }
}

impl ScenarioConfig {
    pub fn grabber_mount(&self) -> crate::camera::CameraMount {
        crate::camera::CameraMount::new(self.grabber.camera_mount)
    }
}

/// Runs one scenario with the full log.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimLog> {
    Simulation::new(cfg, LogDetail::Full)?.run()
}

pub fn run_scenario_with(cfg: &ScenarioConfig, detail: LogDetail) -> Result<SimLog> {
    Simulation::new(cfg, detail)?.run()
}
