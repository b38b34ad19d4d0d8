//! Run log: newline-delimited JSON records behind a versioned header line.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::camera::DetectionClass;
use crate::coordination::{
    validate_trace, ChannelEventKind, DroneMessage, MessageKind, MissionEvent, MissionPhase, Role,
};
use crate::error::{Error, Result};
use crate::perception::{LifecycleEvent, TrackStatus};
use crate::world::{UavState, Vec3};

pub const LOG_SCHEMA: &str = "uavcap.run-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Captured,
    Timeout,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub version: u32,
    pub config: ScenarioConfig,
    pub dynamics_dt: f64,
    pub vision_every: u64,
    pub control_every: u64,
    pub effective_vision_rate: f64,
    pub effective_control_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavTruth {
    pub drone: Role,
    pub state: UavState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    Grab,
    Detach,
    InvalidSwing,
    TrackLoss { class: DetectionClass, phase: MissionPhase },
    MeasurementRejected { class: DetectionClass },
    Mission { event: MissionEvent },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(Box<LogHeader>),
    Truth {
        step: u64,
        t: f64,
        target: Vec3,
        target_velocity: Vec3,
        ball: Vec3,
        ball_velocity: Vec3,
        ball_attached: bool,
        wind: Vec3,
        uavs: Vec<UavTruth>,
    },
    Detection {
        t: f64,
        drone: Role,
        class: DetectionClass,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        range: f64,
    },
    Track {
        t: f64,
        drone: Role,
        class: DetectionClass,
        status: TrackStatus,
        event: LifecycleEvent,
        x: f64,
        y: f64,
        x_rate: f64,
        y_rate: f64,
        range: f64,
        range_rate: f64,
    },
    Command {
        t: f64,
        step: u64,
        drone: Role,
        vx: f64,
        vy: f64,
        vz: f64,
        yaw_rate: f64,
    },
    Phase {
        t: f64,
        drone: Role,
        from: MissionPhase,
        to: MissionPhase,
    },
    Message {
        t: f64,
        event: ChannelEventKind,
        message: DroneMessage,
    },
    Event {
        t: f64,
        drone: Option<Role>,
        event: SimEvent,
    },
    Verdict {
        t: f64,
        steps: u64,
        verdict: Verdict,
        capture_time: Option<f64>,
    },
}

impl LogRecord {
    /// Stream key used for the per-stream timestamp ordering check.
    pub fn stream(&self) -> Option<(String, f64)> {
        let key = |s: String, t: f64| Some((s, t));
        match self {
            LogRecord::Header(_) => None,
            LogRecord::Truth { t, .. } => key("truth".into(), *t),
            LogRecord::Detection { t, drone, class, .. } => key(format!("detection/{drone:?}/{class:?}"), *t),
            LogRecord::Track { t, drone, class, .. } => key(format!("track/{drone:?}/{class:?}"), *t),
            LogRecord::Command { t, drone, .. } => key(format!("command/{drone:?}"), *t),
            LogRecord::Phase { t, drone, .. } => key(format!("phase/{drone:?}"), *t),
            LogRecord::Message { t, event, message } => {
                key(format!("message/{event:?}/{:?}/{:?}", message.sender, message.kind), *t)
            }
            LogRecord::Event { t, drone, event } => {
                let name = serde_json::to_value(event)
                    .ok()
                    .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(String::from))
                    .unwrap_or_default();
                let detail = match event {
                    SimEvent::Mission { event } => format!("{event:?}"),
                    SimEvent::TrackLoss { class, .. } | SimEvent::MeasurementRejected { class } => format!("{class:?}"),
                    _ => String::new(),
                };
                key(format!("event/{drone:?}/{name}/{detail}"), *t)
            }
            LogRecord::Verdict { t, .. } => key("verdict".into(), *t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

/// Post-run digest, written next to the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub verdict: Verdict,
    pub capture_time: Option<f64>,
    pub end_time: f64,
    pub steps: u64,
    pub final_phases: BTreeMap<String, MissionPhase>,
    pub failure_cause: Option<String>,
    pub event_counts: BTreeMap<String, usize>,
    pub messages_delivered: usize,
    pub messages_dropped: usize,
}

impl SimLog {
    pub fn verdict_record(&self) -> Option<(f64, u64, Verdict, Option<f64>)> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::Verdict {
                t,
                steps,
                verdict,
                capture_time,
            } => Some((*t, *steps, *verdict, *capture_time)),
            _ => None,
        })
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict_record().map(|v| v.2).unwrap_or(Verdict::Invalid)
    }

    pub fn capture_time(&self) -> Option<f64> {
        self.verdict_record().and_then(|v| v.3)
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Log(e.to_string());
        let ser = |e: serde_json::Error| Error::Log(e.to_string());
        serde_json::to_writer(&mut w, &LogRecord::Header(Box::new(self.header.clone()))).map_err(ser)?;
        w.write_all(b"\n").map_err(io)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(ser)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_ndjson_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_ndjson(&mut out).expect("in-memory write");
        out
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Log(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::Log(format!("line {}: {e}", i + 1)))?;
            match rec {
                LogRecord::Header(h) if header.is_none() => {
                    if h.schema != LOG_SCHEMA || h.version != LOG_VERSION {
                        return Err(Error::Log(format!(
                            "unsupported log schema {} v{}",
                            h.schema, h.version
                        )));
                    }
                    header = Some(*h);
                }
                LogRecord::Header(_) => return Err(Error::Log(format!("line {}: duplicate header", i + 1))),
                other => records.push(other),
            }
        }
        let header = header.ok_or_else(|| Error::Log("missing header record".into()))?;
        Ok(Self { header, records })
    }

    /// Observed phase sequence (initial phase first) for one drone.
    pub fn phase_trace(&self, drone: Role) -> Vec<MissionPhase> {
        let mut out = vec![MissionPhase::Idle];
        for r in &self.records {
            if let LogRecord::Phase { drone: d, from, to, .. } = r {
                if *d == drone {
                    if out.last() != Some(from) {
                        out.push(*from);
                    }
                    out.push(*to);
                }
            }
        }
        out
    }

    pub fn drones(&self) -> Vec<Role> {
        self.header.config.roles().to_vec()
    }

    /// Every drone's phase trace follows the phase graph.
    pub fn validate_phases(&self) -> std::result::Result<(), String> {
        for d in self.drones() {
            validate_trace(&self.phase_trace(d))
                .map_err(|(a, b)| format!("{d:?}: illegal transition {} -> {}", a.name(), b.name()))?;
        }
        Ok(())
    }

    /// Timestamps strictly increase within each record stream.
    pub fn validate_streams(&self) -> std::result::Result<(), String> {
        let mut last: BTreeMap<String, f64> = BTreeMap::new();
        for r in &self.records {
            if let Some((k, t)) = r.stream() {
                if let Some(prev) = last.get(&k) {
                    if t <= *prev {
                        return Err(format!("stream {k}: t={t} after {prev}"));
                    }
                }
                last.insert(k, t);
            }
        }
        Ok(())
    }

    pub fn sent_messages(&self, kind: MessageKind) -> usize {
        self.records
            .iter()
            .filter(|r| {
                matches!(r, LogRecord::Message { event: ChannelEventKind::Sent, message, .. } if message.kind == kind)
            })
            .count()
    }

    pub fn events(&self) -> impl Iterator<Item = (f64, Option<Role>, &SimEvent)> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Event { t, drone, event } => Some((*t, *drone, event)),
            _ => None,
        })
    }

    /// Failure classification for non-captured runs. The most recent
    /// disruption in the close-in phases decides: a dropped ball track, or a
    /// grab window that expired because the ball left the capture volume.
    pub fn failure_cause(&self) -> Option<String> {
        match self.verdict() {
            Verdict::Captured => return None,
            Verdict::Invalid => return Some("invalid".into()),
            Verdict::Timeout => {}
        }
        let mut cause = None;
        let mut acquired = false;
        for r in &self.records {
            match r {
                LogRecord::Event {
                    drone: Some(Role::Grabber),
                    event: SimEvent::Mission { event },
                    ..
                } => match event {
                    MissionEvent::BallTrackLoss { terminal: true } => cause = Some("terminal_track_loss"),
                    MissionEvent::GrabMiss => cause = Some("wind_displacement"),
                    _ => {}
                },
                LogRecord::Phase {
                    drone: Role::Grabber,
                    to: MissionPhase::ServoBall,
                    ..
                } => acquired = true,
                _ => {}
            }
        }
        Some(
            cause
                .unwrap_or(if acquired { "other" } else { "not_acquired" })
                .to_string(),
        )
    }

    /// Ground truth at every logged dynamics step, with the grabber's latest
    /// ball pixel track, each drone's latest command and current phase carried
    /// forward from the slower streams.
    pub fn timeseries_csv(&self) -> String {
        let drones = self.drones();
        let names: Vec<String> = drones.iter().map(|d| format!("{d:?}").to_lowercase()).collect();
        let mut out =
            String::from("step,t,target_x,target_y,target_z,ball_x,ball_y,ball_z,ball_attached,ball_px,ball_py");
        for n in &names {
            for c in [
                "x",
                "y",
                "z",
                "yaw",
                "cmd_vx",
                "cmd_vy",
                "cmd_vz",
                "cmd_yaw_rate",
                "phase",
            ] {
                out.push_str(&format!(",{n}_{c}"));
            }
        }
        out.push('\n');
        let mut pixel: Option<(f64, f64)> = None;
        let mut commands = vec![[0.0f64; 4]; drones.len()];
        let mut phases = vec![MissionPhase::Idle; drones.len()];
        let slot = |d: Role| drones.iter().position(|x| *x == d);
        for r in &self.records {
            match r {
                LogRecord::Track {
                    drone: Role::Grabber,
                    class: DetectionClass::Ball,
                    status,
                    x,
                    y,
                    ..
                } => pixel = (*status != TrackStatus::Uninitialized).then_some((*x, *y)),
                LogRecord::Command {
                    drone,
                    vx,
                    vy,
                    vz,
                    yaw_rate,
                    ..
                } => {
                    if let Some(i) = slot(*drone) {
                        commands[i] = [*vx, *vy, *vz, *yaw_rate];
                    }
                }
                LogRecord::Phase { drone, to, .. } => {
                    if let Some(i) = slot(*drone) {
                        phases[i] = *to;
                    }
                }
                LogRecord::Truth {
                    step,
                    t,
                    target,
                    ball,
                    ball_attached,
                    uavs,
                    ..
                } => {
                    let (px, py) = pixel.map(|(x, y)| (x.to_string(), y.to_string())).unwrap_or_default();
                    out.push_str(&format!(
                        "{step},{t},{},{},{},{},{},{},{ball_attached},{px},{py}",
                        target.x, target.y, target.z, ball.x, ball.y, ball.z
                    ));
                    for u in uavs {
                        let i = slot(u.drone).unwrap_or(0);
                        let p = u.state.position;
                        let c = commands[i];
                        out.push_str(&format!(
                            ",{},{},{},{},{},{},{},{},{}",
                            p.x,
                            p.y,
                            p.z,
                            u.state.yaw,
                            c[0],
                            c[1],
                            c[2],
                            c[3],
                            phases[i].name()
                        ));
                    }
                    out.push('\n');
                }
                _ => {}
            }
        }
        out
    }

    pub fn summary(&self) -> RunSummary {
        let (end_time, steps, verdict, capture_time) =
            self.verdict_record().unwrap_or((0.0, 0, Verdict::Invalid, None));
        let mut final_phases = BTreeMap::new();
        for d in self.drones() {
            let trace = self.phase_trace(d);
            final_phases.insert(
                format!("{d:?}").to_lowercase(),
                *trace.last().unwrap_or(&MissionPhase::Idle),
            );
        }
        let mut event_counts = BTreeMap::new();
        for (_, _, e) in self.events() {
            let name = match e {
                SimEvent::Mission { event } => serde_json::to_value(event)
                    .ok()
                    .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(String::from))
                    .unwrap_or_default(),
                other => serde_json::to_value(other)
                    .ok()
                    .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(String::from))
                    .unwrap_or_default(),
            };
            *event_counts.entry(name).or_insert(0) += 1;
        }
        let count = |kind: ChannelEventKind| {
            self.records
                .iter()
                .filter(|r| matches!(r, LogRecord::Message { event, .. } if *event == kind))
                .count()
        };
        RunSummary {
            seed: self.header.config.seed,
            verdict,
            capture_time,
            end_time,
            steps,
            final_phases,
            failure_cause: self.failure_cause(),
            event_counts,
            messages_delivered: count(ChannelEventKind::Delivered),
            messages_dropped: count(ChannelEventKind::Dropped),
        }
    }
}
