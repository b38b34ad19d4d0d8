//! Image-plane tracking: a constant-velocity Kalman filter over
//! `(x, y, ẋ, ẏ, r, ṙ)`, track lifecycle (init, coast, loss, reacquire) and
//! the drone → ball attention switch.

use nalgebra::{Matrix2, Matrix3, Matrix6, Matrix6x3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{back_project, CameraIntrinsics, CameraMount, DetectionClass};
use crate::world::UavState;

pub type StateVector = Vector6<f64>;
pub type Covariance = Matrix6<f64>;

/// Indices into the filter state.
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const XD: usize = 2;
    pub const YD: usize = 3;
    pub const R: usize = 4;
    pub const RD: usize = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Uninitialized,
    Tracking,
    Coasting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    /// Pixel acceleration PSD at or beyond `q_reference_range`, px²/s³.
    pub q_pixel: f64,
    /// Below this range the pixel PSD grows as `(q_reference_range / r)²`,
    /// since a given metric acceleration of the target moves it faster
    /// across the image the closer it is, m.
    pub q_reference_range: f64,
    /// Range acceleration PSD, m²/s³.
    pub q_range: f64,
    pub sigma_pixel: f64,
    pub init_var_pixel_rate: f64,
    pub init_var_range_rate: f64,
    pub init_range_ball: f64,
    pub init_range_drone: f64,
    pub loss_timeout: f64,
    /// χ² gate on the pixel innovation (2 dof).
    pub gate_chi2: f64,
    pub switch_range: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            q_pixel: 200.0,
            q_reference_range: 6.0,
            q_range: 2.0,
            sigma_pixel: 2.0,
            init_var_pixel_rate: 2500.0,
            init_var_range_rate: 1.0,
            init_range_ball: 6.0,
            init_range_drone: 30.0,
            loss_timeout: 0.8,
            gate_chi2: 9.21,
            switch_range: 8.0,
        }
    }
}

impl PerceptionParams {
    /// Effective pixel acceleration PSD for a target at `range`.
    pub fn q_pixel_at(&self, range: f64) -> f64 {
        let r = range.max(0.05);
        self.q_pixel * (self.q_reference_range / r).max(1.0).powi(2)
    }

    pub fn init_range(&self, class: DetectionClass) -> f64 {
        match class {
            DetectionClass::Ball => self.init_range_ball,
            DetectionClass::Drone => self.init_range_drone,
        }
    }
}

/// A ranged detection ready for the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub sigma_pixel: f64,
    pub sigma_range: f64,
    pub t: f64,
}

impl Measurement {
    fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.r)
    }

    fn noise(&self) -> Matrix3<f64> {
        let p = self.sigma_pixel * self.sigma_pixel;
        Matrix3::from_diagonal(&Vector3::new(p, p, self.sigma_range * self.sigma_range))
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.r, self.sigma_pixel, self.sigma_range, self.t]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub state: StateVector,
    pub covariance: Covariance,
    pub status: TrackStatus,
    /// Time of the last accepted measurement.
    pub last_update: f64,
    /// Time the state refers to.
    pub time: f64,
    pub class: DetectionClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum UpdateOutcome {
    Accepted { mahalanobis2: f64 },
    Rejected { mahalanobis2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    None,
    Initialized,
    Updated,
    Reacquired,
    Coasting,
    Rejected,
    Lost,
}

fn measurement_matrix() -> SMatrix<f64, 3, 6> {
    let mut h = SMatrix::<f64, 3, 6>::zeros();
    h[(0, idx::X)] = 1.0;
    h[(1, idx::Y)] = 1.0;
    h[(2, idx::R)] = 1.0;
    h
}

fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    f[(idx::X, idx::XD)] = dt;
    f[(idx::Y, idx::YD)] = dt;
    f[(idx::R, idx::RD)] = dt;
    f
}

/// Discrete white-noise-acceleration process noise.
fn process_noise(dt: f64, range: f64, params: &PerceptionParams) -> Matrix6<f64> {
    let q_pixel = params.q_pixel_at(range);
    let block = |q: f64| Matrix2::new(dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt.powi(2) / 2.0, dt) * q;
    let mut qm = Matrix6::zeros();
    for (p, v, q) in [
        (idx::X, idx::XD, q_pixel),
        (idx::Y, idx::YD, q_pixel),
        (idx::R, idx::RD, params.q_range),
    ] {
        let b = block(q);
        qm[(p, p)] = b[(0, 0)];
        qm[(p, v)] = b[(0, 1)];
        qm[(v, p)] = b[(1, 0)];
        qm[(v, v)] = b[(1, 1)];
    }
    qm
}

fn symmetrize(p: &Covariance) -> Covariance {
    (p + p.transpose()) * 0.5
}

impl TrackEstimate {
    pub fn uninitialized(class: DetectionClass) -> Self {
        Self {
            state: StateVector::zeros(),
            covariance: Covariance::zeros(),
            status: TrackStatus::Uninitialized,
            last_update: 0.0,
            time: 0.0,
            class,
        }
    }

    pub fn initialize(class: DetectionClass, m: &Measurement, params: &PerceptionParams) -> Self {
        let mut state = StateVector::zeros();
        state[idx::X] = m.x;
        state[idx::Y] = m.y;
        state[idx::R] = m.r;
        let p = m.sigma_pixel * m.sigma_pixel;
        let covariance = Covariance::from_diagonal(&StateVector::from([
            p,
            p,
            params.init_var_pixel_rate,
            params.init_var_pixel_rate,
            m.sigma_range * m.sigma_range,
            params.init_var_range_rate,
        ]));
        Self {
            state,
            covariance,
            status: TrackStatus::Tracking,
            last_update: m.t,
            time: m.t,
            class,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status != TrackStatus::Uninitialized
    }

    pub fn x(&self) -> f64 {
        self.state[idx::X]
    }
    pub fn y(&self) -> f64 {
        self.state[idx::Y]
    }
    pub fn x_rate(&self) -> f64 {
        self.state[idx::XD]
    }
    pub fn y_rate(&self) -> f64 {
        self.state[idx::YD]
    }
    pub fn range(&self) -> f64 {
        self.state[idx::R]
    }
    pub fn range_rate(&self) -> f64 {
        self.state[idx::RD]
    }

    /// Kalman gain for a measurement with noise covariance `r`.
    pub fn gain(&self, r: &Matrix3<f64>) -> Matrix6x3<f64> {
        let h = measurement_matrix();
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.try_inverse().unwrap_or_else(Matrix3::zeros);
        self.covariance * h.transpose() * s_inv
    }
}

/// Constant-velocity propagation by `dt`.
pub fn kf_predict(track: &TrackEstimate, dt: f64, params: &PerceptionParams) -> TrackEstimate {
    let f = transition(dt);
    let mut out = *track;
    out.state = f * track.state;
    out.covariance = symmetrize(&(f * track.covariance * f.transpose() + process_noise(dt, track.range(), params)));
    out.time = track.time + dt;
    out
}

/// Linear update on `(x, y, r)` with a χ² gate on the pixel innovation.
/// A rejected measurement leaves the estimate untouched and the track
/// coasting.
pub fn kf_update(track: &TrackEstimate, m: &Measurement, params: &PerceptionParams) -> (TrackEstimate, UpdateOutcome) {
    let h = measurement_matrix();
    let r = m.noise();
    let innovation = m.vector() - h * track.state;
    let s = h * track.covariance * h.transpose() + r;

    let s_px = s.fixed_view::<2, 2>(0, 0).into_owned();
    let nu_px = innovation.fixed_rows::<2>(0).into_owned();
    let d2 = match s_px.try_inverse() {
        Some(inv) => (nu_px.transpose() * inv * nu_px)[(0, 0)],
        None => f64::INFINITY,
    };
    if !(d2 <= params.gate_chi2) {
        let mut out = *track;
        out.status = TrackStatus::Coasting;
        return (out, UpdateOutcome::Rejected { mahalanobis2: d2 });
    }

    let Some(s_inv) = s.try_inverse() else {
        let mut out = *track;
        out.status = TrackStatus::Coasting;
        return (out, UpdateOutcome::Rejected { mahalanobis2: d2 });
    };
    let k = track.covariance * h.transpose() * s_inv;
    let i_kh = Covariance::identity() - k * h;
    let mut out = *track;
    out.state = track.state + k * innovation;
    // Joseph form.
    out.covariance = symmetrize(&(i_kh * track.covariance * i_kh.transpose() + k * r * k.transpose()));
    out.status = TrackStatus::Tracking;
    out.last_update = m.t;
    (out, UpdateOutcome::Accepted { mahalanobis2: d2 })
}

/// Advances a track to time `t` given an optional measurement.
pub fn track_lifecycle(
    track: &TrackEstimate,
    measurement: Option<&Measurement>,
    t: f64,
    params: &PerceptionParams,
) -> (TrackEstimate, LifecycleEvent) {
    if track.status == TrackStatus::Uninitialized {
        return match measurement {
            Some(m) if m.is_finite() && m.r <= params.init_range(track.class) => (
                TrackEstimate::initialize(track.class, m, params),
                LifecycleEvent::Initialized,
            ),
            _ => (*track, LifecycleEvent::None),
        };
    }

    let was = track.status;
    let dt = t - track.time;
    let predicted = if dt > 0.0 {
        kf_predict(track, dt, params)
    } else {
        *track
    };

    let (mut next, mut event) = match measurement.filter(|m| m.is_finite()) {
        Some(m) => match kf_update(&predicted, m, params) {
            (tr, UpdateOutcome::Accepted { .. }) => {
                let ev = if was == TrackStatus::Coasting {
                    LifecycleEvent::Reacquired
                } else {
                    LifecycleEvent::Updated
                };
                (tr, ev)
            }
            (tr, UpdateOutcome::Rejected { .. }) => (tr, LifecycleEvent::Rejected),
        },
        None => {
            let mut tr = predicted;
            tr.status = TrackStatus::Coasting;
            (tr, LifecycleEvent::Coasting)
        }
    };

    if next.status == TrackStatus::Coasting && t - next.last_update > params.loss_timeout {
        next = TrackEstimate::uninitialized(track.class);
        event = LifecycleEvent::Lost;
    }
    (next, event)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSelection {
    pub active: DetectionClass,
}

impl Default for TargetSelection {
    fn default() -> Self {
        Self {
            active: DetectionClass::Drone,
        }
    }
}

/// Attention switch. Drone until it is within `switch_range` and the ball is
/// tracked; then the ball, latched for as long as the ball track survives.
/// With no drone track at all, a tracked ball is selected directly.
pub fn select_target(
    drone: &TrackEstimate,
    ball: &TrackEstimate,
    selection: TargetSelection,
    switch_range: f64,
) -> TargetSelection {
    let active = match selection.active {
        DetectionClass::Ball if ball.is_active() => DetectionClass::Ball,
        _ => {
            let ball_ok = ball.status == TrackStatus::Tracking;
            let drone_close = !drone.is_active() || drone.range() <= switch_range;
            if ball_ok && drone_close {
                DetectionClass::Ball
            } else {
                DetectionClass::Drone
            }
        }
    };
    TargetSelection { active }
}

/// Moves a track's position states from the camera pose `before` to the
/// pose `after`, treating the target as fixed in the world over the
/// interval. Rates and covariance are left alone, so the filter's velocity
/// states describe target motion only.
pub fn compensate_ego_motion(
    track: &TrackEstimate,
    before: &UavState,
    after: &UavState,
    mount: &CameraMount,
    intr: &CameraIntrinsics,
) -> TrackEstimate {
    if !track.is_active() {
        return *track;
    }
    let world = back_project(track.x(), track.y(), track.range(), before, mount, intr);
    let cam = mount.to_camera(after, &world);
    if !(cam.x > 1e-3) {
        return *track;
    }
    let (cx, cy) = intr.center();
    let mut out = *track;
    out.state[idx::X] = cx + intr.focal_length * cam.y / cam.x;
    out.state[idx::Y] = cy + intr.focal_length * cam.z / cam.x;
    out.state[idx::R] = cam.x;
    out
}

/// Everything one drone knows from its own camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DronePerception {
    pub drone: TrackEstimate,
    pub ball: TrackEstimate,
    pub selection: TargetSelection,
}

impl Default for DronePerception {
    fn default() -> Self {
        Self {
            drone: TrackEstimate::uninitialized(DetectionClass::Drone),
            ball: TrackEstimate::uninitialized(DetectionClass::Ball),
            selection: TargetSelection::default(),
        }
    }
}

impl DronePerception {
    /// Runs both track lifecycles for one vision frame and refreshes the
    /// target selection. Returns the (drone, ball) lifecycle events.
    pub fn update(
        &mut self,
        drone: Option<&Measurement>,
        ball: Option<&Measurement>,
        t: f64,
        params: &PerceptionParams,
    ) -> (LifecycleEvent, LifecycleEvent) {
        let (d, de) = track_lifecycle(&self.drone, drone, t, params);
        let (b, be) = track_lifecycle(&self.ball, ball, t, params);
        self.drone = d;
        self.ball = b;
        self.selection = select_target(&self.drone, &self.ball, self.selection, params.switch_range);
        (de, be)
    }

    /// Applies [`compensate_ego_motion`] to both tracks.
    pub fn compensate(&mut self, before: &UavState, after: &UavState, mount: &CameraMount, intr: &CameraIntrinsics) {
        self.drone = compensate_ego_motion(&self.drone, before, after, mount, intr);
        self.ball = compensate_ego_motion(&self.ball, before, after, mount, intr);
    }

    /// Track of the currently selected target, falling back to the other
    /// one if the selected track is empty.
    pub fn active_track(&self) -> Option<&TrackEstimate> {
        let (first, second) = match self.selection.active {
            DetectionClass::Ball => (&self.ball, &self.drone),
            DetectionClass::Drone => (&self.drone, &self.ball),
        };
        [first, second].into_iter().find(|t| t.is_active())
    }
}

/// Iterates predict/update on the covariance until the gain settles.
/// Returns the converged gain for a measurement with the given noise,
/// with the pixel PSD taken at the reference range.
pub fn steady_state_gain(
    params: &PerceptionParams,
    dt: f64,
    sigma_pixel: f64,
    sigma_range: f64,
    max_iterations: usize,
) -> Matrix6x3<f64> {
    let m = Measurement {
        x: 0.0,
        y: 0.0,
        r: params.q_reference_range.max(1.0),
        sigma_pixel,
        sigma_range,
        t: 0.0,
    };
    let gated = PerceptionParams {
        gate_chi2: f64::INFINITY,
        ..*params
    };
    let mut track = TrackEstimate::initialize(DetectionClass::Ball, &m, &gated);
    let mut prev = Matrix6x3::zeros();
    for _ in 0..max_iterations {
        let pred = kf_predict(&track, dt, &gated);
        let k = pred.gain(&m.noise());
        let (next, _) = kf_update(&pred, &Measurement { t: pred.time, ..m }, &gated);
        track = next;
        if (k - prev).abs().max() == 0.0 {
            return k;
        }
        prev = k;
    }
    prev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(x: f64, y: f64, r: f64, t: f64) -> Measurement {
        Measurement {
            x,
            y,
            r,
            sigma_pixel: 2.0,
            sigma_range: 0.1,
            t,
        }
    }

    fn tracking() -> TrackEstimate {
        TrackEstimate::initialize(
            DetectionClass::Ball,
            &meas(300.0, 200.0, 4.0, 0.0),
            &PerceptionParams::default(),
        )
    }

    #[test]
    fn predict_zero_velocity_keeps_position() {
        let p = PerceptionParams::default();
        let t = tracking();
        let out = kf_predict(&t, 0.37, &p);
        assert_eq!(out.x(), 300.0);
        assert_eq!(out.y(), 200.0);
        assert_eq!(out.range(), 4.0);
        assert!(out.covariance.trace() > t.covariance.trace());
    }

    #[test]
    fn predict_moves_with_velocity() {
        let mut t = tracking();
        t.state[idx::XD] = 10.0;
        let out = kf_predict(&t, 0.1, &PerceptionParams::default());
        assert!((out.x() - 301.0).abs() < 1e-12);
    }

    #[test]
    fn update_limits_to_measurement_with_tiny_noise() {
        let p = PerceptionParams::default();
        let t = kf_predict(&tracking(), 0.033, &p);
        let m = Measurement {
            sigma_pixel: 1e-9,
            sigma_range: 1e-9,
            ..meas(301.0, 199.0, 4.1, 0.033)
        };
        let (out, outcome) = kf_update(&t, &m, &p);
        assert!(matches!(outcome, UpdateOutcome::Accepted { .. }));
        assert!((out.x() - 301.0).abs() < 1e-6);
        assert!((out.y() - 199.0).abs() < 1e-6);
        assert!((out.range() - 4.1).abs() < 1e-6);
    }

    #[test]
    fn update_contracts_covariance() {
        let p = PerceptionParams::default();
        let prior = kf_predict(&tracking(), 0.033, &p);
        let (post, _) = kf_update(&prior, &meas(300.5, 200.2, 4.0, 0.033), &p);
        let diff = prior.covariance - post.covariance;
        let eig = diff.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > -1e-9), "{eig}");
        assert!((post.covariance - post.covariance.transpose()).abs().max() < 1e-10);
    }

    #[test]
    fn outlier_is_rejected_and_coasts() {
        let p = PerceptionParams::default();
        let prior = kf_predict(&tracking(), 0.033, &p);
        let (out, outcome) = kf_update(&prior, &meas(450.0, 200.0, 4.0, 0.033), &p);
        assert!(matches!(outcome, UpdateOutcome::Rejected { mahalanobis2 } if mahalanobis2 > 9.21));
        assert_eq!(out.status, TrackStatus::Coasting);
        assert_eq!(out.state, prior.state);
    }

    #[test]
    fn lifecycle_initializes_only_when_near() {
        let p = PerceptionParams::default();
        let empty = TrackEstimate::uninitialized(DetectionClass::Ball);
        let (t, ev) = track_lifecycle(&empty, Some(&meas(320.0, 240.0, 4.0, 0.0)), 0.0, &p);
        assert_eq!((t.status, ev), (TrackStatus::Tracking, LifecycleEvent::Initialized));
        let (t, ev) = track_lifecycle(&empty, Some(&meas(320.0, 240.0, 7.0, 0.0)), 0.0, &p);
        assert_eq!((t.status, ev), (TrackStatus::Uninitialized, LifecycleEvent::None));
    }

    #[test]
    fn lifecycle_loses_track_after_timeout() {
        let p = PerceptionParams::default();
        let mut t = tracking();
        let mut lost = Vec::new();
        for k in 1..=30 {
            let (n, ev) = track_lifecycle(&t, None, k as f64 / 30.0, &p);
            t = n;
            if ev == LifecycleEvent::Lost {
                lost.push(k);
            }
        }
        assert_eq!(t.status, TrackStatus::Uninitialized);
        // Lost fires once, on the first tick past the 0.8 s timeout.
        assert_eq!(lost, vec![25]);
    }

    #[test]
    fn lifecycle_reacquires_without_reinit() {
        let p = PerceptionParams::default();
        let mut t = tracking();
        // Establish a pixel velocity of 30 px/s.
        for k in 1..=30 {
            let tk = k as f64 / 30.0;
            t = track_lifecycle(&t, Some(&meas(300.0 + 30.0 * tk, 200.0, 4.0, tk)), tk, &p).0;
        }
        let v_before = t.x_rate();
        assert!(v_before > 20.0);
        for k in 31..=35 {
            t = track_lifecycle(&t, None, k as f64 / 30.0, &p).0;
            assert_eq!(t.status, TrackStatus::Coasting);
        }
        let tk = 36.0 / 30.0;
        let (t, ev) = track_lifecycle(&t, Some(&meas(300.0 + 30.0 * tk, 200.0, 4.0, tk)), tk, &p);
        assert_eq!(ev, LifecycleEvent::Reacquired);
        assert_eq!(t.status, TrackStatus::Tracking);
        assert!(t.x_rate() > 20.0);
    }

    #[test]
    fn selection_switch_and_latch() {
        let p = PerceptionParams::default();
        let mut drone = TrackEstimate::initialize(DetectionClass::Drone, &meas(320.0, 200.0, 20.0, 0.0), &p);
        let ball = tracking();
        let sel = select_target(&drone, &ball, TargetSelection::default(), 8.0);
        assert_eq!(sel.active, DetectionClass::Drone);
        drone.state[idx::R] = 7.0;
        let sel = select_target(&drone, &ball, sel, 8.0);
        assert_eq!(sel.active, DetectionClass::Ball);
        let mut coasting = ball;
        coasting.status = TrackStatus::Coasting;
        drone.state[idx::R] = 20.0;
        assert_eq!(select_target(&drone, &coasting, sel, 8.0).active, DetectionClass::Ball);
        let gone = TrackEstimate::uninitialized(DetectionClass::Ball);
        assert_eq!(select_target(&drone, &gone, sel, 8.0).active, DetectionClass::Drone);
    }
}
