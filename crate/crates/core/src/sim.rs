//! Synthetic stand-ins for the camera, the 2D detector and the 6-DoF pose
//! estimator. Everything is a pure function of the scenario config and the
//! frame index.
//!
//! Object body frame: origin at the centroid, symmetry axis along body `+y`.
//! Scenario poses are expressed in the camera optical frame (`z` forward,
//! `x` right, `y` down).

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed, Purpose};
use crate::se3::{Pose, Quat, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("frame {frame} outside scenario range [0, {frame_count})")]
    FrameOutOfRange { frame: u64, frame_count: u64 },
    #[error("tracking-mode estimate requires a prior pose")]
    MissingPrior,
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("invalid object spec: {0}")]
    InvalidObject(String),
    #[error("cannot read config {path}: {reason}")]
    ConfigFile { path: String, reason: String },
}

/// Pinhole intrinsics. The default matches a 640×480 stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

impl CameraIntrinsics {
    /// Pixel coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 1e-3 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn max_u(&self) -> f64 {
        f64::from(self.width - 1)
    }

    pub fn max_v(&self) -> f64 {
        f64::from(self.height - 1)
    }
}

/// Cylindrical object model.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub class_label: String,
    pub height: f64,
    pub diameter: f64,
}

impl ObjectSpec {
    pub fn new(class_label: impl Into<String>, height: f64, diameter: f64) -> Result<Self, SimError> {
        if !(height > 0.0 && height.is_finite()) || !(diameter > 0.0 && diameter.is_finite()) {
            return Err(SimError::InvalidObject(format!("height {height} and diameter {diameter} must be positive")));
        }
        Ok(ObjectSpec { class_label: class_label.into(), height, diameter })
    }

    /// 22 cm × 6 cm drink bottle.
    pub fn bottle() -> Self {
        ObjectSpec { class_label: "bottle".into(), height: 0.22, diameter: 0.06 }
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Static,
    #[serde(alias = "dynamic")]
    DynamicHandheld,
    #[serde(alias = "occlusion")]
    PartialOcclusion,
}

/// Frames `[start_frame, end_frame)` during which `fraction` of the object is
/// hidden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub start_frame: u64,
    pub end_frame: u64,
    pub fraction: f64,
}

/// Above this occluded fraction the detector no longer fires.
pub const DETECTION_OCCLUSION_LIMIT: f64 = 0.5;
/// Position-noise inflation per unit occluded fraction.
pub const OCCLUSION_NOISE_GAIN: f64 = 5.0;
/// Transverse rotation-noise σ relative to the axial σ.
pub const TRANSVERSE_ROT_RATIO: f64 = 0.5;
/// The detector runs on every `DETECTION_STRIDE`-th frame.
pub const DETECTION_STRIDE: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub frame_count: u64,
    pub frame_rate: f64,
    /// Per-axis position noise σ, meters.
    pub noise_pos_sigma: f64,
    /// Rotation noise σ about the symmetry axis, degrees.
    pub noise_rot_sigma: f64,
    pub detection_dropout: f64,
    pub occlusion_windows: Vec<OcclusionWindow>,
    pub rng_seed: u64,
    /// Dynamic only: peak lateral excursion, meters.
    pub motion_amplitude: f64,
    /// Dynamic only: sweep period, seconds.
    pub motion_period: f64,
    /// Dynamic only: peak rotation about the symmetry axis, degrees.
    pub motion_twist_deg: f64,
    /// Object rest pose in the camera frame.
    pub base_pose: Pose,
    /// False when the scene has no reference measurement (handheld runs).
    pub ground_truth_available: bool,
    /// Frames on which the estimator is forced to fail.
    pub failure_frames: Vec<u64>,
}

/// Static-scene position precision the presets are calibrated to, meters
/// (norm of the three per-axis σ).
pub const STATIC_SIGMA_XYZ: f64 = 1.05e-3;
/// Partial-occlusion position precision the occlusion preset is calibrated to.
pub const OCCLUSION_SIGMA_XYZ: f64 = 6.40e-3;

pub const STATIC_FRAMES: u64 = 1312;
pub const DYNAMIC_FRAMES: u64 = 1097;
pub const OCCLUSION_FRAMES: u64 = 921;

impl ScenarioConfig {
    fn base(kind: ScenarioKind, frame_count: u64) -> Self {
        ScenarioConfig {
            kind,
            frame_count,
            frame_rate: 30.0,
            noise_pos_sigma: STATIC_SIGMA_XYZ / 3f64.sqrt(),
            noise_rot_sigma: 8.0,
            detection_dropout: 0.02,
            occlusion_windows: Vec::new(),
            rng_seed: 2024,
            motion_amplitude: 0.0,
            motion_period: 4.0,
            motion_twist_deg: 0.0,
            base_pose: Pose::from_translation(0.0, 0.0, 0.70),
            ground_truth_available: true,
            failure_frames: Vec::new(),
        }
    }

    pub fn static_preset() -> Self {
        Self::base(ScenarioKind::Static, STATIC_FRAMES)
    }

    pub fn dynamic_preset() -> Self {
        ScenarioConfig {
            motion_amplitude: 0.10,
            motion_period: 4.0,
            motion_twist_deg: 20.0,
            ground_truth_available: false,
            ..Self::base(ScenarioKind::DynamicHandheld, DYNAMIC_FRAMES)
        }
    }

    /// Half the bottle hidden for the whole run plus a 1.5 s near-total
    /// occlusion. Base noise is solved so the expected σ_xyz over the run is
    /// [`OCCLUSION_SIGMA_XYZ`].
    pub fn occlusion_preset() -> Self {
        let windows = vec![
            OcclusionWindow { start_frame: 0, end_frame: 400, fraction: 0.5 },
            OcclusionWindow { start_frame: 400, end_frame: 445, fraction: 0.9 },
            OcclusionWindow { start_frame: 445, end_frame: OCCLUSION_FRAMES, fraction: 0.5 },
        ];
        let mut cfg = ScenarioConfig { occlusion_windows: windows, ..Self::base(ScenarioKind::PartialOcclusion, OCCLUSION_FRAMES) };
        cfg.noise_pos_sigma = cfg.calibrated_pos_sigma(OCCLUSION_SIGMA_XYZ);
        cfg
    }

    pub fn preset(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Static => Self::static_preset(),
            ScenarioKind::DynamicHandheld => Self::dynamic_preset(),
            ScenarioKind::PartialOcclusion => Self::occlusion_preset(),
        }
    }

    /// Per-axis base σ for which the run-averaged position variance, with
    /// occlusion inflation applied frame by frame, gives `target_sigma_xyz`.
    pub fn calibrated_pos_sigma(&self, target_sigma_xyz: f64) -> f64 {
        let mean_gain_sq = (0..self.frame_count).map(|f| self.occlusion_noise_gain(f).powi(2)).sum::<f64>() / self.frame_count as f64;
        target_sigma_xyz / (3.0 * mean_gain_sq).sqrt()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.frame_count == 0 {
            return bad("frame_count must be > 0".into());
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!("frame_rate {} must be positive", self.frame_rate));
        }
        if !(0.0..=1.0).contains(&self.detection_dropout) {
            return bad(format!("detection_dropout {} outside [0, 1]", self.detection_dropout));
        }
        if !(self.noise_pos_sigma >= 0.0 && self.noise_rot_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative".into());
        }
        for w in &self.occlusion_windows {
            if w.start_frame >= w.end_frame || w.end_frame > self.frame_count {
                return bad(format!("occlusion window [{}, {}) outside [0, {})", w.start_frame, w.end_frame, self.frame_count));
            }
            if !(0.0..=1.0).contains(&w.fraction) {
                return bad(format!("occlusion fraction {} outside [0, 1]", w.fraction));
            }
        }
        if self.kind == ScenarioKind::DynamicHandheld && !(self.motion_period > 0.0 && self.motion_period.is_finite()) {
            return bad("motion_period must be positive".into());
        }
        if !self.base_pose.is_finite() {
            return bad("base pose must be finite".into());
        }
        Ok(())
    }

    /// Largest occluded fraction covering `frame` (0 when unoccluded).
    pub fn occlusion_fraction(&self, frame: u64) -> f64 {
        self.occlusion_windows.iter().filter(|w| (w.start_frame..w.end_frame).contains(&frame)).map(|w| w.fraction).fold(0.0, f64::max)
    }

    pub fn occlusion_noise_gain(&self, frame: u64) -> f64 {
        1.0 + OCCLUSION_NOISE_GAIN * self.occlusion_fraction(frame)
    }

    pub fn frame_time(&self, frame: u64) -> f64 {
        frame as f64 / self.frame_rate
    }

    fn check_frame(&self, frame: u64) -> Result<(), SimError> {
        if frame >= self.frame_count {
            return Err(SimError::FrameOutOfRange { frame, frame_count: self.frame_count });
        }
        Ok(())
    }

    /// Loads a key-value (TOML) scenario file. Missing keys fall back to the
    /// preset for the file's `kind`.
    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SimError::ConfigFile { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::ConfigFile { reason, .. } => SimError::ConfigFile { path: path.display().to_string(), reason },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| SimError::ConfigFile { path: "<string>".into(), reason: e.to_string() })?;
        let cfg = file.apply();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// On-disk scenario schema. Every key except `kind` is optional.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    kind: ScenarioKind,
    frame_count: Option<u64>,
    frame_rate: Option<f64>,
    noise_pos_sigma: Option<f64>,
    noise_rot_sigma: Option<f64>,
    detection_dropout: Option<f64>,
    rng_seed: Option<u64>,
    motion_amplitude: Option<f64>,
    motion_period: Option<f64>,
    motion_twist_deg: Option<f64>,
    base_position: Option<[f64; 3]>,
    base_quaternion: Option<[f64; 4]>,
    ground_truth_available: Option<bool>,
    failure_frames: Option<Vec<u64>>,
    occlusion: Option<Vec<OcclusionWindow>>,
}

impl ScenarioFile {
    fn apply(self) -> ScenarioConfig {
        let mut c = ScenarioConfig::preset(self.kind);
        if let Some(n) = self.frame_count {
            c.frame_count = n;
            // preset windows are sized for the preset length
            for w in &mut c.occlusion_windows {
                w.end_frame = w.end_frame.min(n);
            }
            c.occlusion_windows.retain(|w| w.start_frame < w.end_frame);
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            frame_rate,
            noise_pos_sigma,
            noise_rot_sigma,
            detection_dropout,
            rng_seed,
            motion_amplitude,
            motion_period,
            motion_twist_deg,
            ground_truth_available,
            failure_frames
        );
        if let Some(w) = self.occlusion {
            c.occlusion_windows = w;
        }
        if let Some(p) = self.base_position {
            c.base_pose.position = Vec3::new(p[0], p[1], p[2]);
        }
        if let Some(q) = self.base_quaternion {
            c.base_pose.orientation = Quat::new(q[0], q[1], q[2], q[3]);
        }
        c
    }
}

/// 2D detector output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    /// `(u_min, v_min, u_max, v_max)` pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
    pub class_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    /// Multi-iteration refinement from a detection ROI.
    Registration,
    /// Single refinement seeded by the previous pose.
    Tracking,
}

impl EstimateMode {
    pub fn iterations(self) -> u32 {
        match self {
            EstimateMode::Registration => 3,
            EstimateMode::Tracking => 1,
        }
    }

    /// Noise multiplier: more refinement iterations, less noise.
    pub fn noise_scale(self) -> f64 {
        1.0 / f64::from(self.iterations()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateResult {
    pub success: bool,
    pub pose: Option<Pose>,
    pub iterations_used: u32,
}

impl EstimateResult {
    pub fn failed(mode: EstimateMode) -> Self {
        EstimateResult { success: false, pose: None, iterations_used: mode.iterations() }
    }

    pub fn ok(mode: EstimateMode, pose: Pose) -> Self {
        EstimateResult { success: true, pose: Some(pose), iterations_used: mode.iterations() }
    }
}

/// Ground-truth object pose (camera frame) at `frame`.
pub fn ground_truth(cfg: &ScenarioConfig, _object: &ObjectSpec, frame: u64) -> Result<Pose, SimError> {
    cfg.check_frame(frame)?;
    Ok(match cfg.kind {
        ScenarioKind::Static | ScenarioKind::PartialOcclusion => cfg.base_pose,
        ScenarioKind::DynamicHandheld => {
            let phase = std::f64::consts::TAU * cfg.frame_time(frame) / cfg.motion_period;
            let s = phase.sin();
            let offset = Vec3::new(cfg.motion_amplitude * s, 0.0, 0.0);
            let twist = Quat::from_axis_angle(&Vec3::y(), cfg.motion_twist_deg.to_radians() * s);
            Pose::new(cfg.base_pose.position + offset, cfg.base_pose.orientation.multiply(&twist))
        }
    })
}

/// Bounding box of the object's cylinder hull projected into the image,
/// clamped to the image. `None` when the object is behind the camera or
/// entirely outside the frame.
pub fn project_bbox(intrinsics: &CameraIntrinsics, object: &ObjectSpec, pose: &Pose) -> Option<[f64; 4]> {
    const RIM_SAMPLES: usize = 32;
    let r = object.radius();
    let h = 0.5 * object.height;
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for end in [-h, h] {
        for k in 0..RIM_SAMPLES {
            let a = std::f64::consts::TAU * k as f64 / RIM_SAMPLES as f64;
            let p = pose.transform_point(&Vec3::new(r * a.cos(), end, r * a.sin()));
            let (u, v) = intrinsics.project(&p)?;
            b = [b[0].min(u), b[1].min(v), b[2].max(u), b[3].max(v)];
        }
    }
    let clamped = [
        b[0].clamp(0.0, intrinsics.max_u()),
        b[1].clamp(0.0, intrinsics.max_v()),
        b[2].clamp(0.0, intrinsics.max_u()),
        b[3].clamp(0.0, intrinsics.max_v()),
    ];
    (clamped[0] < clamped[2] && clamped[1] < clamped[3]).then_some(clamped)
}

pub fn is_detection_frame(frame: u64) -> bool {
    frame.is_multiple_of(DETECTION_STRIDE)
}

/// Detector output at `frame` for an object at `gt` (camera frame).
pub fn simulate_detection(cfg: &ScenarioConfig, object: &ObjectSpec, frame: u64, gt: &Pose) -> Option<Detection> {
    if !is_detection_frame(frame) || frame >= cfg.frame_count {
        return None;
    }
    if cfg.occlusion_fraction(frame) > DETECTION_OCCLUSION_LIMIT {
        return None;
    }
    if cfg.detection_dropout > 0.0 && keyed(cfg.rng_seed, frame, Purpose::DetectionDropout).random::<f64>() < cfg.detection_dropout {
        return None;
    }
    let bbox = project_bbox(&CameraIntrinsics::default(), object, gt)?;
    let confidence = keyed(cfg.rng_seed, frame, Purpose::DetectionConfidence).random_range(0.75..=1.0);
    Some(Detection { frame, bbox, confidence, class_label: object.class_label.clone() })
}

/// Pose estimator stand-in. Registration succeeds unless the object is fully
/// hidden; tracking needs a prior and succeeds unless `frame` is listed in
/// `cfg.failure_frames`. Noise: per-axis Gaussian position noise (inflated
/// inside occlusion windows) and body-frame rotation noise concentrated on
/// the symmetry axis.
pub fn simulate_estimate(
    cfg: &ScenarioConfig,
    mode: EstimateMode,
    frame: u64,
    gt: &Pose,
    prior: Option<&Pose>,
) -> Result<EstimateResult, SimError> {
    if mode == EstimateMode::Tracking && prior.is_none() {
        return Err(SimError::MissingPrior);
    }
    let occluded = cfg.occlusion_fraction(frame);
    if cfg.failure_frames.contains(&frame) || (mode == EstimateMode::Registration && occluded >= 1.0) {
        return Ok(EstimateResult::failed(mode));
    }
    let purpose = match mode {
        EstimateMode::Registration => Purpose::RegistrationNoise,
        EstimateMode::Tracking => Purpose::TrackingNoise,
    };
    let mut rng = keyed(cfg.rng_seed, frame, purpose);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let pos_sigma = cfg.noise_pos_sigma * mode.noise_scale() * (1.0 + OCCLUSION_NOISE_GAIN * occluded);
    let rot_sigma = cfg.noise_rot_sigma.to_radians() * mode.noise_scale();
    let dp = Vec3::new(gauss(), gauss(), gauss()) * pos_sigma;
    let axial = gauss() * rot_sigma;
    let tx = gauss() * rot_sigma * TRANSVERSE_ROT_RATIO;
    let tz = gauss() * rot_sigma * TRANSVERSE_ROT_RATIO;
    if pos_sigma == 0.0 && rot_sigma == 0.0 {
        return Ok(EstimateResult::ok(mode, *gt));
    }
    let dq = Quat::from_rotation_vector(&Vec3::new(tx, axial, tz));
    let pose = Pose::new(gt.position + dp, gt.orientation.multiply(&dq));
    Ok(EstimateResult::ok(mode, pose))
}
