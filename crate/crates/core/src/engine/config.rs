//! Scenario configuration: a TOML document where every key is optional and
//! falls back to the documented baseline. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraMount, SensorNoise};
use crate::coordination::{CaptureGeometry, ChannelModel, DroneSetup, MissionParams, Role};
use crate::error::{Error, Result};
use crate::guidance::{CommandLimits, GuidanceGains, SearchArea};
use crate::perception::PerceptionParams;
use crate::world::{PatternKind, PendulumParams, TrajectoryPattern, UavState, Vec3, VehicleParams, WindModel, GRAVITY};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Tracker and grabber.
    Collaborative,
    /// Grabber alone.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub rod_length: f64,
    pub ball_diameter: f64,
    pub ball_mass: f64,
    pub damping: f64,
    pub gravity: f64,
    /// Physical span of the target drone, used for its box and ranging.
    pub drone_span: f64,
    pub detach_threshold: f64,
    pub wind: WindModel,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rod_length: 1.5,
            ball_diameter: 0.18,
            ball_mass: 0.1,
            damping: 0.05,
            gravity: GRAVITY,
            drone_span: 0.35,
            detach_threshold: 5.0,
            wind: WindModel::default(),
        }
    }
}

impl WorldConfig {
    pub fn pendulum(&self) -> PendulumParams {
        PendulumParams {
            rod_length: self.rod_length,
            mass: self.ball_mass,
            damping: self.damping,
            gravity: self.gravity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub dynamics: f64,
    pub vision: f64,
    pub control: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            dynamics: 400.0,
            vision: 30.0,
            control: 20.0,
        }
    }
}

impl Rates {
    /// Dynamics steps between ticks of a slower loop (nearest integer).
    pub fn divider(&self, rate: f64) -> u64 {
        ((self.dynamics / rate).round() as u64).max(1)
    }

    pub fn vision_every(&self) -> u64 {
        self.divider(self.vision)
    }

    pub fn control_every(&self) -> u64 {
        self.divider(self.control)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: f64,
    pub height: f64,
    pub focal_length: f64,
    pub noise: SensorNoise,
    /// Only search for an untracked ball inside the region below a drone
    /// detection.
    pub require_drone_gate: bool,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let intr = CameraIntrinsics::default();
        Self {
            width: intr.width,
            height: intr.height,
            focal_length: intr.focal_length,
            noise: SensorNoise::default(),
            require_drone_gate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneConfig {
    pub home: Vec3,
    pub yaw: f64,
    pub camera_mount: Vec3,
}

impl DroneConfig {
    fn grabber() -> Self {
        Self {
            home: Vec3::new(0.0, 0.0, 0.0),
            yaw: 0.0,
            camera_mount: Vec3::new(0.6, 0.0, 0.0),
        }
    }

    fn tracker() -> Self {
        Self {
            home: Vec3::new(0.0, -16.0, 0.0),
            yaw: 0.0,
            camera_mount: Vec3::new(0.1, 0.0, 0.0),
        }
    }
}

impl Default for DroneConfig {
    fn default() -> Self {
        Self::grabber()
    }
}

fn default_tracker() -> DroneConfig {
    DroneConfig::tracker()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    pub duration: f64,
    pub mode: Mode,
    pub world: WorldConfig,
    pub target: TrajectoryPattern,
    pub rates: Rates,
    pub camera: CameraConfig,
    pub vehicle: VehicleParams,
    pub grabber: DroneConfig,
    #[serde(default = "default_tracker")]
    pub tracker: DroneConfig,
    pub gains: GuidanceGains,
    pub perception: PerceptionParams,
    pub mission: MissionParams,
    pub capture: CaptureGeometry,
    pub search: SearchArea,
    pub channel: ChannelModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 1,
            duration: 180.0,
            mode: Mode::Collaborative,
            world: WorldConfig::default(),
            target: TrajectoryPattern::default(),
            rates: Rates::default(),
            camera: CameraConfig::default(),
            vehicle: VehicleParams::default(),
            grabber: DroneConfig::grabber(),
            tracker: DroneConfig::tracker(),
            gains: GuidanceGains::default(),
            perception: PerceptionParams::default(),
            mission: MissionParams::default(),
            capture: CaptureGeometry::default(),
            search: SearchArea::default(),
            channel: ChannelModel::default(),
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    /// Sensor noise, wind and message drops switched off. Detection becomes
    /// certain out to the sensor's maximum range.
    pub fn noise_free(mut self) -> Self {
        let mut noise = self.camera.noise.noiseless();
        noise.near_range = noise.max_range;
        noise.far_range = noise.max_range;
        self.camera.noise = noise;
        self.world.wind = WindModel::calm();
        self.channel.drop_probability = 0.0;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Target drone moving in a straight line at `speed`.
    pub fn moving_target(mut self, speed: f64) -> Self {
        self.target.kind = PatternKind::StraightLine;
        self.target.speed = speed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            width: self.camera.width,
            height: self.camera.height,
            focal_length: self.camera.focal_length,
            frame_rate: self.rates.vision,
        }
    }

    pub fn limits(&self) -> CommandLimits {
        CommandLimits {
            v_max_h: self.vehicle.v_max_h,
            v_max_z: self.vehicle.v_max_z,
            yaw_rate_max: self.vehicle.yaw_rate_max,
        }
    }

    pub fn drone(&self, role: Role) -> &DroneConfig {
        match role {
            Role::Grabber => &self.grabber,
            Role::Tracker => &self.tracker,
        }
    }

    pub fn setup(&self, role: Role) -> DroneSetup {
        let d = self.drone(role);
        DroneSetup {
            role,
            home: d.home,
            intr: self.intrinsics(),
            mount: CameraMount::new(d.camera_mount),
            gains: self.gains,
            limits: self.limits(),
        }
    }

    pub fn initial_state(&self, role: Role) -> UavState {
        let d = self.drone(role);
        UavState::at_rest(d.home, d.yaw)
    }

    pub fn roles(&self) -> &'static [Role] {
        match self.mode {
            Mode::Collaborative => &[Role::Tracker, Role::Grabber],
            Mode::Single => &[Role::Grabber],
        }
    }

    /// Collects every violated range constraint, each prefixed with its
    /// field path.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut positive = |path: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{path}: must be a finite value > 0 (got {v})"));
            }
        };
        positive("duration", self.duration);
        positive("world.rod_length", self.world.rod_length);
        positive("world.ball_diameter", self.world.ball_diameter);
        positive("world.ball_mass", self.world.ball_mass);
        positive("world.gravity", self.world.gravity);
        positive("world.drone_span", self.world.drone_span);
        positive("world.detach_threshold", self.world.detach_threshold);
        positive("world.wind.correlation_time", self.world.wind.correlation_time);
        positive("rates.dynamics", self.rates.dynamics);
        positive("rates.vision", self.rates.vision);
        positive("rates.control", self.rates.control);
        positive("camera.width", self.camera.width);
        positive("camera.height", self.camera.height);
        positive("camera.focal_length", self.camera.focal_length);
        positive("vehicle.tau", self.vehicle.tau);
        positive("vehicle.v_max_h", self.vehicle.v_max_h);
        positive("vehicle.v_max_z", self.vehicle.v_max_z);
        positive("vehicle.yaw_rate_max", self.vehicle.yaw_rate_max);
        positive("gains.kp_psi", self.gains.kp_psi);
        positive("gains.kp_z", self.gains.kp_z);
        positive("gains.kp_r", self.gains.kp_r);
        positive("gains.r_des", self.gains.r_des);
        positive("perception.sigma_pixel", self.perception.sigma_pixel);
        positive("perception.loss_timeout", self.perception.loss_timeout);
        positive("perception.gate_chi2", self.perception.gate_chi2);
        positive("mission.grab_ramp_time", self.mission.grab_ramp_time);
        positive("mission.mission_budget", self.mission.mission_budget);
        positive("capture.capture_radius", self.capture.capture_radius);
        positive("capture.cone_half_angle_deg", self.capture.cone_half_angle_deg);
        positive("capture.rel_speed_max", self.capture.rel_speed_max);
        positive("search.lane_spacing", self.search.lane_spacing);

        let mut check = |cond: bool, msg: String| {
            if !cond {
                errs.push(msg);
            }
        };
        check(
            self.version == CONFIG_VERSION,
            format!(
                "version: unsupported schema version {} (expected {CONFIG_VERSION})",
                self.version
            ),
        );
        check(
            self.rates.vision <= self.rates.dynamics,
            "rates.vision: must not exceed rates.dynamics".into(),
        );
        check(
            self.rates.control <= self.rates.dynamics,
            "rates.control: must not exceed rates.dynamics".into(),
        );
        check(
            self.world.damping >= 0.0,
            format!("world.damping: must be >= 0 (got {})", self.world.damping),
        );
        check(self.world.wind.sigma >= 0.0, "world.wind.sigma: must be >= 0".into());
        check(
            self.camera.noise.sigma_center >= 0.0 && self.camera.noise.sigma_size >= 0.0,
            "camera.noise: sigmas must be >= 0".into(),
        );
        check(
            self.camera.noise.near_range <= self.camera.noise.far_range
                && self.camera.noise.far_range <= self.camera.noise.max_range,
            "camera.noise: need near_range <= far_range <= max_range".into(),
        );
        check(
            (0.0..=1.0).contains(&self.camera.noise.far_probability),
            "camera.noise.far_probability: must lie in [0, 1]".into(),
        );
        check(
            (0.0..=1.0).contains(&self.channel.drop_probability),
            "channel.drop_probability: must lie in [0, 1]".into(),
        );
        check(self.channel.latency >= 0.0, "channel.latency: must be >= 0".into());
        check(
            self.channel.rate_limit >= 0.0,
            "channel.rate_limit: must be >= 0".into(),
        );
        check(
            self.gains.r_des > self.capture.capture_radius,
            "gains.r_des: must exceed capture.capture_radius".into(),
        );
        check(
            self.mission.claw_pull_force >= 0.0,
            "mission.claw_pull_force: must be >= 0".into(),
        );
        check(
            !self.search.is_degenerate(),
            "search: area must have x_max > x_min and y_max > y_min".into(),
        );
        if let Err(Error::InvalidParameter { field, reason }) = self.target.validate() {
            errs.push(format!("target.{field}: {reason}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}
