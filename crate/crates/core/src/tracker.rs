//! Per-object tracking lifecycle: `Uninitialized → Tracking → Lost → Tracking`.
//!
//! A tracker registers on a detection, then refines frame to frame from its
//! previous pose. It drops to `Lost` after three consecutive estimator
//! failures, on a pose jump above the position/rotation limits, or when no
//! detection has been seen for longer than the detection timeout. A fresh
//! detection re-registers it.

use thiserror::Error;

use crate::se3::{pose_delta, Pose};
use crate::sim::{CameraIntrinsics, Detection, EstimateMode, EstimateResult};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrackerError {
    #[error("frame {frame} is not after the previous frame {previous}")]
    NonMonotoneFrame { frame: u64, previous: u64 },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Uninitialized,
    Tracking,
    Lost,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Uninitialized => "UNINITIALIZED",
            Phase::Tracking => "TRACKING",
            Phase::Lost => "LOST",
        }
    }
}

/// Why a tracker left `Tracking`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LostReason {
    ConsecutiveFailures,
    PositionJump,
    RotationJump,
    DetectionTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerThresholds {
    pub max_consecutive_failures: u32,
    /// meters
    pub max_pos_jump: f64,
    /// degrees
    pub max_rot_jump: f64,
    /// seconds
    pub detection_timeout: f64,
    /// Hz
    pub frame_rate: f64,
}

impl Default for TrackerThresholds {
    fn default() -> Self {
        TrackerThresholds { max_consecutive_failures: 3, max_pos_jump: 0.15, max_rot_jump: 90.0, detection_timeout: 3.0, frame_rate: 30.0 }
    }
}

impl TrackerThresholds {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let ok = self.max_consecutive_failures > 0
            && [self.max_pos_jump, self.max_rot_jump, self.detection_timeout, self.frame_rate].iter().all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(TrackerError::InvalidThresholds(format!("{self:?}")))
        }
    }

    /// Frames without a detection that still count as fresh.
    pub fn timeout_frames(&self) -> f64 {
        self.detection_timeout * self.frame_rate
    }
}

/// Image rectangle handed to the estimator for registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    /// `(u_min, v_min, u_max, v_max)` pixels.
    pub rect: [f64; 4],
}

impl Roi {
    pub fn width(&self) -> f64 {
        self.rect[2] - self.rect[0]
    }
    pub fn height(&self) -> f64 {
        self.rect[3] - self.rect[1]
    }
}

/// Fraction of the bbox extent added on each side.
pub const ROI_MARGIN: f64 = 0.10;

pub fn roi_from_bbox(d: &Detection) -> Roi {
    roi_from_bbox_in(d, &CameraIntrinsics::default())
}

/// The bbox grown by [`ROI_MARGIN`] per side, clamped to the image and kept
/// at least one pixel wide and tall.
pub fn roi_from_bbox_in(d: &Detection, cam: &CameraIntrinsics) -> Roi {
    let [u0, v0, u1, v1] = d.bbox;
    let mu = ROI_MARGIN * (u1 - u0).max(0.0);
    let mv = ROI_MARGIN * (v1 - v0).max(0.0);
    let (max_u, max_v) = (cam.max_u(), cam.max_v());
    let mut r = [(u0 - mu).clamp(0.0, max_u), (v0 - mv).clamp(0.0, max_v), (u1 + mu).clamp(0.0, max_u), (v1 + mv).clamp(0.0, max_v)];
    for (lo, hi, max) in [(0, 2, max_u), (1, 3, max_v)] {
        if r[hi] - r[lo] < 1.0 {
            if r[lo] + 1.0 <= max {
                r[hi] = r[lo] + 1.0;
            } else {
                r[lo] = max - 1.0;
                r[hi] = max;
            }
        }
    }
    Roi { rect: r }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub phase: Phase,
    pub last_pose: Option<Pose>,
    pub consecutive_failures: u32,
    pub last_detection_frame: Option<u64>,
    pub last_update_frame: Option<u64>,
    pub reinit_count: u32,
}

impl Default for TrackerState {
    fn default() -> Self {
        TrackerState {
            phase: Phase::Uninitialized,
            last_pose: None,
            consecutive_failures: 0,
            last_detection_frame: None,
            last_update_frame: None,
            reinit_count: 0,
        }
    }
}

/// Result of one [`Tracker::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Pose emitted this frame; present only while tracking.
    pub pose: Option<Pose>,
    pub transition: Option<(Phase, Phase)>,
    pub lost_reason: Option<LostReason>,
    /// Estimator mode invoked this frame, if any.
    pub mode: Option<EstimateMode>,
}

/// Request passed to the injected estimator.
#[derive(Debug, Clone, Copy)]
pub enum EstimateRequest<'a> {
    Register { roi: &'a Roi, detection: &'a Detection },
    Track { prior: &'a Pose },
}

impl EstimateRequest<'_> {
    pub fn mode(&self) -> EstimateMode {
        match self {
            EstimateRequest::Register { .. } => EstimateMode::Registration,
            EstimateRequest::Track { .. } => EstimateMode::Tracking,
        }
    }
}

/// One object's state machine.
#[derive(Debug, Clone)]
pub struct Tracker {
    thresholds: TrackerThresholds,
    state: TrackerState,
}

impl Tracker {
    pub fn new(thresholds: TrackerThresholds) -> Result<Self, TrackerError> {
        thresholds.validate()?;
        Ok(Tracker { thresholds, state: TrackerState::default() })
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn thresholds(&self) -> &TrackerThresholds {
        &self.thresholds
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    /// Advances the machine to `frame`. `estimator` is called at most once.
    pub fn step<F>(&mut self, frame: u64, detection: Option<&Detection>, estimator: F) -> Result<StepOutput, TrackerError>
    where
        F: FnOnce(EstimateRequest<'_>) -> EstimateResult,
    {
        if let Some(previous) = self.state.last_update_frame {
            if frame <= previous {
                return Err(TrackerError::NonMonotoneFrame { frame, previous });
            }
        }
        self.state.last_update_frame = Some(frame);
        if detection.is_some() {
            self.state.last_detection_frame = Some(frame);
        }

        let mut out = StepOutput { pose: None, transition: None, lost_reason: None, mode: None };
        match self.state.phase {
            Phase::Uninitialized | Phase::Lost => {
                let Some(det) = detection else { return Ok(out) };
                let roi = roi_from_bbox(det);
                out.mode = Some(EstimateMode::Registration);
                let result = estimator(EstimateRequest::Register { roi: &roi, detection: det });
                if let (true, Some(pose)) = (result.success, result.pose) {
                    let from = self.state.phase;
                    if from == Phase::Lost {
                        self.state.reinit_count += 1;
                    }
                    self.state.phase = Phase::Tracking;
                    self.state.last_pose = Some(pose);
                    self.state.consecutive_failures = 0;
                    out.pose = Some(pose);
                    out.transition = Some((from, Phase::Tracking));
                }
            }
            Phase::Tracking => {
                let last_det = self.state.last_detection_frame.unwrap_or(frame);
                if (frame - last_det) as f64 > self.thresholds.timeout_frames() {
                    self.lose(&mut out, LostReason::DetectionTimeout);
                    return Ok(out);
                }
                let prior = self.state.last_pose.expect("tracking phase always holds a pose");
                out.mode = Some(EstimateMode::Tracking);
                let result = estimator(EstimateRequest::Track { prior: &prior });
                match (result.success, result.pose) {
                    (true, Some(pose)) => {
                        let delta = pose_delta(&prior, &pose);
                        if delta.d_pos > self.thresholds.max_pos_jump {
                            self.lose(&mut out, LostReason::PositionJump);
                        } else if delta.d_rot > self.thresholds.max_rot_jump {
                            self.lose(&mut out, LostReason::RotationJump);
                        } else {
                            self.state.last_pose = Some(pose);
                            self.state.consecutive_failures = 0;
                            out.pose = Some(pose);
                        }
                    }
                    _ => {
                        self.state.consecutive_failures += 1;
                        if self.state.consecutive_failures >= self.thresholds.max_consecutive_failures {
                            self.lose(&mut out, LostReason::ConsecutiveFailures);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn lose(&mut self, out: &mut StepOutput, reason: LostReason) {
        self.state.phase = Phase::Lost;
        self.state.consecutive_failures = 0;
        out.transition = Some((Phase::Tracking, Phase::Lost));
        out.lost_reason = Some(reason);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{Quat, Vec3};

    fn det(frame: u64) -> Detection {
        Detection { frame, bbox: [300.0, 180.0, 340.0, 300.0], confidence: 0.9, class_label: "bottle".into() }
    }

    fn ok(pose: Pose) -> impl FnOnce(EstimateRequest<'_>) -> EstimateResult {
        move |req| EstimateResult::ok(req.mode(), pose)
    }

    fn fail(req: EstimateRequest<'_>) -> EstimateResult {
        EstimateResult::failed(req.mode())
    }

    fn tracking_at(pose: Pose) -> Tracker {
        let mut t = Tracker::new(TrackerThresholds::default()).unwrap();
        let o = t.step(0, Some(&det(0)), ok(pose)).unwrap();
        assert_eq!(o.transition, Some((Phase::Uninitialized, Phase::Tracking)));
        t
    }

    #[test]
    fn roi_expands_by_ten_percent() {
        let d = Detection { bbox: [100.0, 100.0, 200.0, 200.0], ..det(0) };
        assert_eq!(roi_from_bbox(&d).rect, [90.0, 90.0, 210.0, 210.0]);
    }

    #[test]
    fn roi_clamps_to_image() {
        let d = Detection { bbox: [0.0, 0.0, 639.0, 479.0], ..det(0) };
        assert_eq!(roi_from_bbox(&d).rect, [0.0, 0.0, 639.0, 479.0]);
        let d = Detection { bbox: [600.0, 2.0, 639.0, 50.0], ..det(0) };
        let r = roi_from_bbox(&d).rect;
        assert_eq!(r[2], 639.0);
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn roi_degenerate_box() {
        let d = Detection { bbox: [50.0, 60.0, 50.5, 60.5], ..det(0) };
        let r = roi_from_bbox(&d);
        assert!(r.width() >= 1.0 && r.height() >= 1.0);
        let d = Detection { bbox: [639.0, 479.0, 639.0, 479.0], ..det(0) };
        let r = roi_from_bbox(&d);
        assert!(r.width() >= 1.0 && r.height() >= 1.0);
        assert!(r.rect[2] <= 639.0 && r.rect[3] <= 479.0 && r.rect[0] >= 0.0);
    }

    #[test]
    fn no_detection_stays_uninitialized() {
        let mut t = Tracker::new(TrackerThresholds::default()).unwrap();
        let o = t.step(0, None, |_| panic!("estimator must not run")).unwrap();
        assert_eq!(o.pose, None);
        assert_eq!(t.phase(), Phase::Uninitialized);
    }

    #[test]
    fn failed_registration_stays_put() {
        let mut t = Tracker::new(TrackerThresholds::default()).unwrap();
        t.step(0, Some(&det(0)), fail).unwrap();
        assert_eq!(t.phase(), Phase::Uninitialized);
    }

    #[test]
    fn third_consecutive_failure_loses() {
        let mut t = tracking_at(Pose::from_translation(0.0, 0.0, 0.7));
        t.step(1, None, fail).unwrap();
        t.step(2, None, fail).unwrap();
        assert_eq!(t.phase(), Phase::Tracking);
        assert_eq!(t.state().consecutive_failures, 2);
        let o = t.step(3, None, fail).unwrap();
        assert_eq!(t.phase(), Phase::Lost);
        assert_eq!(o.lost_reason, Some(LostReason::ConsecutiveFailures));
    }

    #[test]
    fn success_resets_failure_count() {
        let p = Pose::from_translation(0.0, 0.0, 0.7);
        let mut t = tracking_at(p);
        t.step(1, None, fail).unwrap();
        t.step(2, None, fail).unwrap();
        t.step(3, None, ok(p)).unwrap();
        t.step(4, None, fail).unwrap();
        t.step(5, None, fail).unwrap();
        assert_eq!(t.phase(), Phase::Tracking);
    }

    #[test]
    fn position_jump_loses() {
        let p = Pose::from_translation(0.0, 0.0, 0.7);
        let mut t = tracking_at(p);
        let o = t.step(1, None, ok(Pose::from_translation(0.2, 0.0, 0.7))).unwrap();
        assert_eq!(o.pose, None);
        assert_eq!(o.lost_reason, Some(LostReason::PositionJump));
        // jump rejection does not count as a failure
        assert_eq!(t.state().consecutive_failures, 0);

        let mut t = tracking_at(p);
        t.step(1, None, ok(Pose::from_translation(0.16, 0.0, 0.7))).unwrap();
        assert_eq!(t.phase(), Phase::Lost);

        let mut t = tracking_at(p);
        t.step(1, None, ok(Pose::from_translation(0.149, 0.0, 0.7))).unwrap();
        assert_eq!(t.phase(), Phase::Tracking);
    }

    #[test]
    fn rotation_jump_loses() {
        let p = Pose::from_translation(0.0, 0.0, 0.7);
        let turned = |deg: f64| Pose::new(p.position, Quat::from_axis_angle(&Vec3::z(), deg.to_radians()));
        let mut t = tracking_at(p);
        let o = t.step(1, None, ok(turned(95.0))).unwrap();
        assert_eq!(o.lost_reason, Some(LostReason::RotationJump));
        let mut t = tracking_at(p);
        t.step(1, None, ok(turned(85.0))).unwrap();
        assert_eq!(t.phase(), Phase::Tracking);
    }

    #[test]
    fn detection_timeout_loses_at_frame_91() {
        let p = Pose::from_translation(0.0, 0.0, 0.7);
        let mut t = tracking_at(p);
        for f in 1..=90 {
            t.step(f, None, ok(p)).unwrap();
            assert_eq!(t.phase(), Phase::Tracking, "frame {f}");
        }
        let o = t.step(91, None, ok(p)).unwrap();
        assert_eq!(o.lost_reason, Some(LostReason::DetectionTimeout));
        assert_eq!(o.mode, None);
    }

    #[test]
    fn detection_refreshes_timeout() {
        let p = Pose::from_translation(0.0, 0.0, 0.7);
        let mut t = tracking_at(p);
        for f in 1..=200 {
            let d = (f % 5 == 0).then(|| det(f));
            t.step(f, d.as_ref(), ok(p)).unwrap();
        }
        assert_eq!(t.phase(), Phase::Tracking);
    }

    #[test]
    fn recovery_counts_reinit() {
        let p = Pose::from_translation(0.0, 0.0, 0.7);
        let mut t = tracking_at(p);
        for f in 1..=3 {
            t.step(f, None, fail).unwrap();
        }
        assert_eq!(t.phase(), Phase::Lost);
        let o = t.step(4, None, |_| panic!("no registration without detection")).unwrap();
        assert_eq!(o.pose, None);
        let o = t.step(5, Some(&det(5)), ok(p)).unwrap();
        assert_eq!(o.transition, Some((Phase::Lost, Phase::Tracking)));
        assert_eq!(o.mode, Some(EstimateMode::Registration));
        assert_eq!(t.state().reinit_count, 1);
    }

    #[test]
    fn frames_must_increase() {
        let mut t = tracking_at(Pose::IDENTITY);
        assert_eq!(t.step(0, None, fail), Err(TrackerError::NonMonotoneFrame { frame: 0, previous: 0 }));
    }

    #[test]
    fn thresholds_validated() {
        let bad = TrackerThresholds { frame_rate: 0.0, ..Default::default() };
        assert!(Tracker::new(bad).is_err());
    }
}
