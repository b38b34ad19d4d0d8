//! Synthetic camera: pinhole projection of ground-truth geometry into
//! drone/ball detections with pixel noise, detection dropouts and optional
//! search gating, plus known-size monocular ranging.
//!
//! Camera frame: optical axis along vehicle +x, image x to the right
//! (vehicle −y), image y downward (−z). Principal point at (W/2, H/2).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{rotate_z, UavState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: f64,
    pub height: f64,
    pub focal_length: f64,
    pub frame_rate: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 480.0,
            focal_length: 600.0,
            frame_rate: 30.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn center(&self) -> (f64, f64) {
        (self.width / 2.0, self.height / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }
}

/// Camera fixed to the vehicle, looking along vehicle +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    pub translation: Vec3,
}

impl CameraMount {
    pub fn new(translation: Vec3) -> Self {
        Self { translation }
    }

    /// World position of the optical centre.
    pub fn world_position(&self, vehicle: &UavState) -> Vec3 {
        vehicle.position + rotate_z(&self.translation, vehicle.yaw)
    }

    /// Optical axis in the world frame.
    pub fn boresight(&self, vehicle: &UavState) -> Vec3 {
        Vec3::new(vehicle.yaw.cos(), vehicle.yaw.sin(), 0.0)
    }

    /// World point → camera frame `(forward, right, down)`.
    pub fn to_camera(&self, vehicle: &UavState, point: &Vec3) -> Vec3 {
        let rel = rotate_z(&(point - self.world_position(vehicle)), -vehicle.yaw);
        Vec3::new(rel.x, -rel.y, -rel.z)
    }

    /// Camera frame `(forward, right, down)` → world point.
    pub fn to_world(&self, vehicle: &UavState, cam: &Vec3) -> Vec3 {
        self.world_position(vehicle) + rotate_z(&Vec3::new(cam.x, -cam.y, -cam.z), vehicle.yaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionClass {
    Drone,
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageDetection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class: DetectionClass,
    pub t: f64,
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// Box-centre noise, px.
    pub sigma_center: f64,
    /// Box-size noise, px.
    pub sigma_size: f64,
    /// Detection is certain up to this depth, m.
    pub near_range: f64,
    /// Detection probability has decayed linearly to `far_probability` here.
    pub far_range: f64,
    pub far_probability: f64,
    /// Beyond `far_range` the probability keeps falling linearly to 0 at
    /// this depth.
    pub max_range: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            sigma_center: 2.0,
            sigma_size: 1.0,
            near_range: 8.0,
            far_range: 25.0,
            far_probability: 0.2,
            max_range: 30.0,
        }
    }
}

impl SensorNoise {
    /// Zero noise; detection probability unchanged.
    pub fn noiseless(self) -> Self {
        Self {
            sigma_center: 0.0,
            sigma_size: 0.0,
            ..self
        }
    }

    pub fn detection_probability(&self, depth: f64) -> f64 {
        if depth <= self.near_range {
            1.0
        } else if depth <= self.far_range {
            let s = (depth - self.near_range) / (self.far_range - self.near_range);
            1.0 - (1.0 - self.far_probability) * s
        } else if depth < self.max_range {
            self.far_probability * (self.max_range - depth) / (self.max_range - self.far_range)
        } else {
            0.0
        }
    }
}

/// Ground truth the camera can see.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSnapshot {
    pub target_drone: Vec3,
    pub ball: Vec3,
    pub drone_span: f64,
    pub ball_diameter: f64,
}

impl SceneSnapshot {
    fn object(&self, class: DetectionClass) -> (Vec3, f64) {
        match class {
            DetectionClass::Drone => (self.target_drone, self.drone_span),
            DetectionClass::Ball => (self.ball, self.ball_diameter),
        }
    }
}

/// Pinhole projection. `None` behind the camera or outside the image.
pub fn project(point: &Vec3, vehicle: &UavState, mount: &CameraMount, intr: &CameraIntrinsics) -> Option<(f64, f64)> {
    let c = mount.to_camera(vehicle, point);
    if c.x <= 0.0 {
        return None;
    }
    let (cx, cy) = intr.center();
    let x = cx + intr.focal_length * c.y / c.x;
    let y = cy + intr.focal_length * c.z / c.x;
    intr.contains(x, y).then_some((x, y))
}

/// Inverse of [`project`] given the depth along the optical axis.
pub fn back_project(
    x: f64,
    y: f64,
    depth: f64,
    vehicle: &UavState,
    mount: &CameraMount,
    intr: &CameraIntrinsics,
) -> Vec3 {
    let (cx, cy) = intr.center();
    let cam = Vec3::new(
        depth,
        (x - cx) * depth / intr.focal_length,
        (y - cy) * depth / intr.focal_length,
    );
    mount.to_world(vehicle, &cam)
}

/// Request for one synthesized detection.
#[derive(Debug, Clone, Copy)]
pub struct DetectionRequest<'a> {
    pub observer: &'a UavState,
    pub mount: &'a CameraMount,
    pub intr: &'a CameraIntrinsics,
    pub noise: &'a SensorNoise,
    pub class: DetectionClass,
    pub gate: Option<&'a PixelRect>,
    pub t: f64,
}

/// Synthesizes a detection of `req.class` from the scene.
///
/// The box side is `f·size/depth` with `depth` along the optical axis. Every
/// call consumes exactly four normal draws and one uniform draw from `rng`
/// so a camera's stream stays aligned regardless of outcomes.
pub fn synth_detection<R: Rng + ?Sized>(
    scene: &SceneSnapshot,
    req: &DetectionRequest<'_>,
    rng: &mut R,
) -> Option<ImageDetection> {
    let n_x: f64 = rng.sample(StandardNormal);
    let n_y: f64 = rng.sample(StandardNormal);
    let n_w: f64 = rng.sample(StandardNormal);
    let _reserved: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();

    let (point, size) = scene.object(req.class);
    let cam = req.mount.to_camera(req.observer, &point);
    let depth = cam.x;
    if depth <= 0.0 {
        return None;
    }
    let (cx, cy) = req.intr.center();
    let f = req.intr.focal_length;
    let x_true = cx + f * cam.y / depth;
    let y_true = cy + f * cam.z / depth;
    if !req.intr.contains(x_true, y_true) {
        return None;
    }
    if u >= req.noise.detection_probability(depth) {
        return None;
    }
    let x = x_true + req.noise.sigma_center * n_x;
    let y = y_true + req.noise.sigma_center * n_y;
    if !req.intr.contains(x, y) {
        return None;
    }
    if let Some(gate) = req.gate {
        if !gate.contains(x, y) {
            return None;
        }
    }
    let w = (f * size / depth + req.noise.sigma_size * n_w).max(1.0);
    Some(ImageDetection {
        x,
        y,
        w,
        h: w,
        class: req.class,
        t: req.t,
    })
}

/// Known-size monocular range: `r = f·D/w`.
pub fn estimate_range(det: &ImageDetection, intr: &CameraIntrinsics, true_size: f64) -> Result<f64> {
    if !(det.w > 0.0) || !det.w.is_finite() {
        return Err(Error::InvalidDetection(format!("box width {} must be positive", det.w)));
    }
    Ok(intr.focal_length * true_size / det.w)
}

/// Pixel region below a drone detection where its hanging ball can appear.
pub fn ball_search_gate(drone: &ImageDetection, drone_span: f64, rod_length: f64, ball_diameter: f64) -> PixelRect {
    let px_per_m = drone.w / drone_span;
    let half_w = (0.5 * drone_span + rod_length + ball_diameter) * px_per_m;
    PixelRect {
        x_min: drone.x - half_w,
        x_max: drone.x + half_w,
        y_min: drone.y - drone_span * px_per_m,
        y_max: drone.y + (1.5 * (rod_length + ball_diameter) + drone_span) * px_per_m,
    }
}
