//! Experiment layer: tracking scenarios and their metrics, the five-position
//! grasp experiment and the glue-path demo, all driven through the same
//! perception → stream → planner → UDP → robot wiring.
//!
//! World frame as in [`crate::planner`]. A head camera at (0.05, 0, 0.60)
//! looks at the workspace center; perception works in its optical frame and
//! the consumer maps poses to the world with the rig extrinsic.

use std::any::type_name;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::bridge::{
    bind_bridge, grasp_outcome, robot_loop, trace_sample, Bridge, BridgeError, BridgeStats, Channel, Commander, GraspTrace, LimitTable,
    RobotSim, SceneObject, TargetTable,
};
use crate::planner::{
    distance_to_polyline, ik_solve_with, interpolate, normalize_joints, plan_glue_path, plan_grasp, IkConfig, JointVector, KinematicChain,
    PlanError, StageName, TrajectoryPlan,
};
use crate::se3::{geodesic_deg, rotation_vector_in_frame, Pose, Quat, Vec3};
use crate::sim::{
    simulate_detection, simulate_estimate, EstimateMode, EstimateResult, ObjectSpec, ScenarioConfig, ScenarioKind, SimError,
    OCCLUSION_SIGMA_XYZ, STATIC_SIGMA_XYZ,
};
use crate::stream::{
    CellFetcher, HttpFetcher, ObjectTrack, PollEvent, Poller, PoseReport, PoseServer, RateTimer, SnapshotCell, StreamError,
};
use crate::tracker::{EstimateRequest, LostReason, Phase, Tracker, TrackerError, TrackerThresholds};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("metrics need at least one frame")]
    EmptyLog,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

/// Pretty-printed JSON document with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    std::fs::write(path, to_json(value)).map_err(io_err(path))
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: u64,
    /// Tracker phase after this frame.
    pub phase: Phase,
    /// Pose emitted this frame (camera frame).
    pub pose: Option<Pose>,
    pub ground_truth: Pose,
    pub detected: bool,
    pub mode: Option<EstimateMode>,
    pub transition: Option<(Phase, Phase)>,
    pub lost_reason: Option<LostReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<FrameRecord>,
    pub ground_truth_available: bool,
    /// Object at rest for the whole run.
    pub static_scene: bool,
    pub reinit_count: u32,
    pub elapsed: Duration,
}

fn na<S: serde::Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("N/A"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMetrics {
    pub frames: u64,
    pub success_rate: f64,
    #[serde(serialize_with = "na")]
    pub sigma_xyz_mm: Option<f64>,
    pub sigma_rot_deg: f64,
    #[serde(serialize_with = "na")]
    pub y_axis_ratio: Option<f64>,
    pub fps: f64,
    pub reinit_count: u32,
}

fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Scenario-level statistics over a per-frame log.
///
/// * `success_rate`: frames ending in `TRACKING` over all frames.
/// * `sigma_xyz_mm`: norm of the per-axis standard deviations of the emitted
///   position (error against ground truth when available, spread about the
///   sample mean otherwise); absent for a moving scene without ground truth.
/// * `sigma_rot_deg`: standard deviation of the geodesic angle between each
///   emitted rotation and the first registered one.
/// * `y_axis_ratio`: `Σ r_y² / Σ ‖r‖²` over body-frame rotation vectors
///   relative to the first registered rotation; static scenes only.
pub fn compute_metrics(log: &MetricsLog) -> Result<ScenarioMetrics, HarnessError> {
    if log.records.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    let frames = log.records.len() as u64;
    let tracked = log.records.iter().filter(|r| r.phase == Phase::Tracking).count();
    let emitted: Vec<(&Pose, &Pose)> = log.records.iter().filter_map(|r| r.pose.as_ref().map(|p| (p, &r.ground_truth))).collect();

    let sigma_xyz_mm = if !log.ground_truth_available && !log.static_scene {
        None
    } else {
        let axis_sigma = |axis: usize| {
            let v: Vec<f64> = emitted
                .iter()
                .map(|(p, gt)| if log.ground_truth_available { p.position[axis] - gt.position[axis] } else { p.position[axis] })
                .collect();
            std_dev(&v)
        };
        Some(Vec3::new(axis_sigma(0), axis_sigma(1), axis_sigma(2)).norm() * 1e3)
    };

    let (sigma_rot_deg, y_axis_ratio) = match emitted.first() {
        None => (0.0, None),
        Some((first, _)) => {
            let q0 = first.orientation;
            let angles: Vec<f64> = emitted.iter().map(|(p, _)| geodesic_deg(&q0, &p.orientation)).collect();
            let (mut ry, mut rr) = (0.0, 0.0);
            for (p, _) in &emitted {
                let r = rotation_vector_in_frame(&q0, &p.orientation);
                ry += r.y * r.y;
                rr += r.norm_squared();
            }
            let ratio = (log.static_scene && rr > 0.0).then(|| ry / rr);
            (std_dev(&angles), ratio)
        }
    };

    let secs = log.elapsed.as_secs_f64();
    Ok(ScenarioMetrics {
        frames,
        success_rate: tracked as f64 / frames as f64,
        sigma_xyz_mm,
        sigma_rot_deg,
        y_axis_ratio,
        fps: if secs > 0.0 { frames as f64 / secs } else { f64::INFINITY },
        reinit_count: log.reinit_count,
    })
}

// ------------------------------------------------------- tracking scenario

pub fn scenario_name(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::Static => "static",
        ScenarioKind::DynamicHandheld => "dynamic",
        ScenarioKind::PartialOcclusion => "occlusion",
    }
}

#[derive(Debug, Serialize)]
struct LogLine<'a> {
    frame: u64,
    state: &'a str,
    detected: bool,
    mode: Option<&'a str>,
    position: Option<[f64; 3]>,
    quaternion: Option<[f64; 4]>,
    gt_position: [f64; 3],
    transition: Option<[&'a str; 2]>,
    lost_reason: Option<String>,
}

fn log_line(r: &FrameRecord) -> String {
    let line = LogLine {
        frame: r.frame,
        state: r.phase.as_str(),
        detected: r.detected,
        mode: r.mode.map(|m| match m {
            EstimateMode::Registration => "registration",
            EstimateMode::Tracking => "tracking",
        }),
        position: r.pose.map(|p| p.position.into()),
        quaternion: r.pose.map(|p| p.orientation.to_array()),
        gt_position: r.ground_truth.position.into(),
        transition: r.transition.map(|(a, b)| [a.as_str(), b.as_str()]),
        lost_reason: r.lost_reason.map(|l| format!("{l:?}")),
    };
    serde_json::to_string(&line).expect("log line serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingSummary {
    pub scenario: &'static str,
    pub seed: u64,
    pub metrics: ScenarioMetrics,
    pub note: &'static str,
}

pub const FPS_NOTE: &str = "fps is simulated-frame throughput on this machine; it does not measure neural inference and is not comparable to camera-pipeline frame rates";

#[derive(Debug, Clone, Default)]
pub struct OutputPaths {
    /// Per-frame JSON lines.
    pub log: Option<PathBuf>,
    /// Metrics summary JSON.
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub metrics: ScenarioMetrics,
    pub log: MetricsLog,
    pub summary: TrackingSummary,
}

/// Runs `cfg.frame_count` frames of simulated perception through the tracker.
pub fn run_tracking_scenario(cfg: &ScenarioConfig, object: &ObjectSpec, out: &OutputPaths) -> Result<ScenarioRun, HarnessError> {
    cfg.validate()?;
    let mut tracker = Tracker::new(TrackerThresholds { frame_rate: cfg.frame_rate, ..TrackerThresholds::default() })?;
    let mut writer = match &out.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.frame_count as usize);
    let start = Instant::now();
    for frame in 0..cfg.frame_count {
        let gt = crate::sim::ground_truth(cfg, object, frame)?;
        let det = simulate_detection(cfg, object, frame, &gt);
        let step = tracker.step(frame, det.as_ref(), |req| estimate(cfg, frame, &gt, req))?;
        let record = FrameRecord {
            frame,
            phase: tracker.phase(),
            pose: step.pose,
            ground_truth: gt,
            detected: det.is_some(),
            mode: step.mode,
            transition: step.transition,
            lost_reason: step.lost_reason,
        };
        if let (Some(w), Some(p)) = (writer.as_mut(), out.log.as_ref()) {
            writeln!(w, "{}", log_line(&record)).map_err(io_err(p))?;
        }
        records.push(record);
    }
    let elapsed = start.elapsed();
    if let (Some(mut w), Some(p)) = (writer, out.log.as_ref()) {
        w.flush().map_err(io_err(p))?;
    }
    let log = MetricsLog {
        records,
        ground_truth_available: cfg.ground_truth_available,
        static_scene: cfg.kind != ScenarioKind::DynamicHandheld,
        reinit_count: tracker.state().reinit_count,
        elapsed,
    };
    let metrics = compute_metrics(&log)?;
    let summary = TrackingSummary { scenario: scenario_name(cfg.kind), seed: cfg.rng_seed, metrics: metrics.clone(), note: FPS_NOTE };
    if let Some(p) = &out.summary {
        write_json(p, &summary)?;
    }
    Ok(ScenarioRun { metrics, log, summary })
}

fn estimate(cfg: &ScenarioConfig, frame: u64, gt: &Pose, req: EstimateRequest<'_>) -> EstimateResult {
    let mode = req.mode();
    let prior = match req {
        EstimateRequest::Track { prior } => Some(*prior),
        EstimateRequest::Register { .. } => None,
    };
    simulate_estimate(cfg, mode, frame, gt, prior.as_ref()).unwrap_or_else(|_| EstimateResult::failed(mode))
}

// ------------------------------------------------------------- pipeline

/// Head-camera extrinsic: camera optical frame (z forward, x right, y down)
/// expressed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub camera: Pose,
}

impl Rig {
    pub fn looking_at(eye: Vec3, target: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&Vec3::z()).normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
        Rig { camera: Pose::new(eye, Quat::from_matrix(&m)) }
    }

    pub fn to_world(&self, camera_pose: &Pose) -> Pose {
        self.camera.compose(camera_pose)
    }

    pub fn to_camera(&self, world_pose: &Pose) -> Pose {
        self.camera.inverse().compose(world_pose)
    }
}

pub const WORKSPACE_CENTER: [f64; 2] = [0.70, 0.0];
pub const WORKSPACE_HALF: f64 = 0.10;

impl Default for Rig {
    fn default() -> Self {
        Rig::looking_at(Vec3::new(0.05, 0.0, 0.60), Vec3::new(WORKSPACE_CENTER[0], WORKSPACE_CENTER[1], 0.11))
    }
}

/// Pose of a cylinder standing on its base at `centroid` (body `y` up).
pub fn upright(centroid: Vec3) -> Pose {
    Pose::new(centroid, Quat::from_axis_angle(&Vec3::x(), std::f64::consts::FRAC_PI_2))
}

/// Perception defaults for pipeline runs: the static noise model on an
/// open-ended frame stream.
pub fn pipeline_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig { frame_count: u64::MAX, rng_seed: seed, ..ScenarioConfig::static_preset() }
}

/// Simulated camera, detector and estimator feeding one tracker; produces a
/// [`PoseReport`] per frame.
pub struct Perception {
    cfg: ScenarioConfig,
    object: ObjectSpec,
    id: String,
    tracker: Tracker,
    rig: Rig,
    confidence: f64,
}

impl Perception {
    pub fn new(cfg: ScenarioConfig, object: ObjectSpec, id: impl Into<String>, rig: Rig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let tracker = Tracker::new(TrackerThresholds { frame_rate: cfg.frame_rate, ..TrackerThresholds::default() })?;
        Ok(Perception { cfg, object, id: id.into(), tracker, rig, confidence: 0.0 })
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Observes the object at `object_world` and reports the tracker output.
    pub fn frame(&mut self, frame: u64, timestamp: f64, object_world: &Pose) -> Result<PoseReport, HarnessError> {
        let gt = self.rig.to_camera(object_world);
        let det = simulate_detection(&self.cfg, &self.object, frame, &gt);
        if let Some(d) = &det {
            self.confidence = d.confidence;
        }
        let cfg = &self.cfg;
        self.tracker.step(frame, det.as_ref(), |req| estimate(cfg, frame, &gt, req))?;
        let st = self.tracker.state();
        let pose = if st.phase == Phase::Tracking { st.last_pose } else { None };
        Ok(PoseReport {
            timestamp,
            frame,
            objects: vec![ObjectTrack {
                id: self.id.clone(),
                class_label: self.object.class_label.clone(),
                state: st.phase,
                pose,
                confidence: self.confidence,
            }],
        })
    }
}

/// Turns an object pose into a trajectory. The only part of the pipeline
/// that differs between tasks.
pub trait TaskTemplate {
    fn plan(&self, object_world: &Pose, chain: &KinematicChain) -> Result<TrajectoryPlan, PlanError>;
}

pub struct GraspTemplate {
    pub object: ObjectSpec,
}

impl TaskTemplate for GraspTemplate {
    fn plan(&self, object_world: &Pose, chain: &KinematicChain) -> Result<TrajectoryPlan, PlanError> {
        plan_grasp(object_world, &self.object, chain)
    }
}

/// Edge vertices relative to the tracked object's centroid, world-aligned.
pub struct GlueTemplate {
    pub edge: Vec<Vec3>,
    pub standoff: f64,
}

impl GlueTemplate {
    pub fn world_edge(&self, anchor: &Vec3) -> Vec<Vec3> {
        self.edge.iter().map(|v| anchor + v).collect()
    }
}

impl TaskTemplate for GlueTemplate {
    fn plan(&self, object_world: &Pose, chain: &KinematicChain) -> Result<TrajectoryPlan, PlanError> {
        plan_glue_path(&self.world_edge(&object_world.position), self.standoff, chain)
    }
}

pub const COMMAND_RATE: f64 = 30.0;
/// Seconds the executor holds while the object is not tracked before aborting.
pub const LOST_ABORT: f64 = 5.0;
/// Seconds allowed for the first tracked pose to arrive.
pub const ACQUIRE_TIMEOUT: f64 = 5.0;
/// Hold at the final waypoint before a run counts as complete.
pub const SETTLE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Unreachable,
    NotDetected,
    Aborted,
}

#[derive(Debug, Clone)]
enum ExecState {
    Waiting { waited: f64 },
    Executing { t: f64, held: f64, joints: JointVector },
    Done(RunStatus),
}

/// Consumer side: plans once from the first tracked pose, then steps the
/// plan at the command rate, pausing while the object is not tracked.
pub struct Executor<T: TaskTemplate> {
    template: T,
    chain: KinematicChain,
    rig: Rig,
    object_id: String,
    commander: Commander,
    ik: IkConfig,
    state: ExecState,
    plan: Option<TrajectoryPlan>,
    anchor: Option<Pose>,
}

impl<T: TaskTemplate> Executor<T> {
    pub fn new(template: T, chain: KinematicChain, rig: Rig, object_id: impl Into<String>) -> Self {
        Executor {
            template,
            chain,
            rig,
            object_id: object_id.into(),
            commander: Commander::new(),
            ik: IkConfig { pos_tolerance: 1e-4, rot_tolerance_deg: 0.05, max_iterations: 50, ..IkConfig::default() },
            state: ExecState::Waiting { waited: 0.0 },
            plan: None,
            anchor: None,
        }
    }

    pub fn plan(&self) -> Option<&TrajectoryPlan> {
        self.plan.as_ref()
    }

    /// World pose of the object the plan was built from.
    pub fn anchor(&self) -> Option<&Pose> {
        self.anchor.as_ref()
    }

    pub fn status(&self) -> Option<RunStatus> {
        match self.state {
            ExecState::Done(s) => Some(s),
            _ => None,
        }
    }

    pub fn plan_time(&self) -> Option<f64> {
        match self.state {
            ExecState::Executing { t, .. } => Some(t),
            _ => None,
        }
    }

    pub fn stage(&self) -> Option<StageName> {
        self.plan.as_ref().zip(self.plan_time()).and_then(|(p, t)| p.stage_at(t))
    }

    fn tracked_pose(&self, ev: &PollEvent) -> Option<Pose> {
        if ev.stale {
            return None;
        }
        let obj = ev.report.as_ref()?.object(&self.object_id)?;
        if obj.state == Phase::Tracking {
            obj.pose
        } else {
            None
        }
    }

    /// Advances by `dt` given the latest poll result; returns datagrams to send.
    pub fn tick(&mut self, ev: &PollEvent, dt: f64) -> Vec<Vec<u8>> {
        let tracked = self.tracked_pose(ev);
        match &mut self.state {
            ExecState::Done(_) => Vec::new(),
            ExecState::Waiting { waited } => {
                *waited += dt;
                match tracked {
                    Some(cam) => {
                        let world = self.rig.to_world(&cam);
                        self.anchor = Some(world);
                        match self.template.plan(&world, &self.chain) {
                            Ok(plan) => {
                                self.plan = Some(plan);
                                self.state = ExecState::Executing { t: 0.0, held: 0.0, joints: self.chain.rest.clone() };
                                self.command(dt)
                            }
                            Err(e) => {
                                log::warn!("planning failed: {e}");
                                self.state = ExecState::Done(RunStatus::Unreachable);
                                Vec::new()
                            }
                        }
                    }
                    None if *waited > ACQUIRE_TIMEOUT => {
                        self.state = ExecState::Done(RunStatus::NotDetected);
                        Vec::new()
                    }
                    None => Vec::new(),
                }
            }
            ExecState::Executing { held, .. } => {
                if tracked.is_some() {
                    *held = 0.0;
                    self.command(dt)
                } else {
                    *held += dt;
                    if *held > LOST_ABORT {
                        self.state = ExecState::Done(RunStatus::Aborted);
                    }
                    Vec::new()
                }
            }
        }
    }

    fn command(&mut self, dt: f64) -> Vec<Vec<u8>> {
        let plan = self.plan.as_ref().expect("executing with a plan");
        let duration = plan.duration();
        let ExecState::Executing { t, joints, .. } = &mut self.state else { return Vec::new() };
        let (target, gripper) = interpolate(plan, t.min(duration)).expect("time clamped to plan");
        *joints = match ik_solve_with(&self.chain, &target, joints, &self.ik) {
            Ok(s) => s.joints,
            Err(PlanError::Unreachable { best, .. }) => best,
            Err(_) => joints.clone(),
        };
        let normalized = normalize_joints(joints, &self.chain);
        let packets = [self.commander.packet(Channel::Arm, &normalized), self.commander.hand(Channel::RightHand, gripper)];
        *t += dt;
        if *t > duration + SETTLE {
            self.state = ExecState::Done(RunStatus::Completed);
        }
        packets.into_iter().map(|p| p.expect("fixed joint counts fit the wire format")).collect()
    }
}

/// Type names of the components a pipeline run passes through; identical
/// for every task template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Wiring {
    pub perception: &'static str,
    pub tracker: &'static str,
    pub stream: &'static str,
    pub bridge: &'static str,
    pub robot: &'static str,
}

impl Wiring {
    fn lockstep() -> Self {
        Wiring {
            perception: type_name::<Perception>(),
            tracker: type_name::<Tracker>(),
            stream: type_name::<Poller<CellFetcher>>(),
            bridge: type_name::<Bridge>(),
            robot: type_name::<RobotSim>(),
        }
    }
}

/// A scene object seen by the camera, optionally graspable.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub object: ObjectSpec,
    pub pose: Pose,
    pub graspable: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub status: RunStatus,
    pub trace: GraspTrace,
    pub plan: Option<TrajectoryPlan>,
    pub anchor: Option<Pose>,
    pub bridge: BridgeStats,
    pub published: u64,
    pub wiring: Wiring,
}

/// All components in one thread on a simulated clock. Every hop still
/// serializes: reports go through JSON and the snapshot cell, commands
/// through the datagram codec and the bridge.
pub fn run_lockstep<T: TaskTemplate>(
    chain: &KinematicChain,
    rig: Rig,
    scene: &Scene,
    template: T,
    seed: u64,
) -> Result<PipelineRun, HarnessError> {
    let mut perception = Perception::new(pipeline_scenario(seed), scene.object.clone(), scene.id.clone(), rig)?;
    let cell = SnapshotCell::new();
    let mut poller = Poller::connect(CellFetcher(cell.clone()))?;
    let mut exec = Executor::new(template, chain.clone(), rig, scene.id.clone());
    let mut bridge = Bridge::new(LimitTable::for_chain(chain));
    let object = scene.graspable.then(|| SceneObject::new(scene.id.clone(), scene.object.clone(), scene.pose));
    let mut robot = RobotSim::new(chain.clone(), object);
    let mut trace = GraspTrace { object_rest_z: scene.pose.position.z, ..GraspTrace::default() };

    let dt = 1.0 / COMMAND_RATE;
    let mut frame = 0u64;
    let status = loop {
        let world = robot.state.object.as_ref().map_or(scene.pose, |o| o.pose);
        cell.publish(&perception.frame(frame, frame as f64 * dt, &world)?);
        let ev = poller.poll();
        for datagram in exec.tick(&ev, dt) {
            if let Ok(cmd) = bridge.handle(&datagram) {
                robot.state.apply(&cmd);
            }
        }
        robot.step(dt);
        trace.samples.push(robot.sample(exec.stage()));
        frame += 1;
        if let Some(s) = exec.status() {
            break s;
        }
    };
    trace.safety_violations = robot.safety_violations;
    trace.substeps = robot.substeps;
    trace.max_speed = robot.max_speed;
    Ok(PipelineRun {
        status,
        trace,
        plan: exec.plan().cloned(),
        anchor: exec.anchor().copied(),
        bridge: bridge.stats(),
        published: cell.published_count(),
        wiring: Wiring::lockstep(),
    })
}

/// The same components as [`run_lockstep`] on the wall clock: a publisher
/// thread behind an HTTP server, the executor polling it and sending UDP
/// datagrams to a bridge thread that feeds a real-time robot loop.
pub fn run_live<T: TaskTemplate>(
    chain: &KinematicChain,
    rig: Rig,
    scene: &Scene,
    template: T,
    seed: u64,
) -> Result<PipelineRun, HarnessError> {
    let table = TargetTable::new();
    let object = scene.graspable.then(|| SceneObject::new(scene.id.clone(), scene.object.clone(), scene.pose));
    let robot =
        robot_loop(RobotSim::new(chain.clone(), object), table.clone(), 240.0).map_err(|e| HarnessError::Bridge(BridgeError::Io(e)))?;
    let bridge = bind_bridge("127.0.0.1:0", LimitTable::for_chain(chain), table)?;

    let cell = SnapshotCell::new();
    let mut perception = Perception::new(pipeline_scenario(seed), scene.object.clone(), scene.id.clone(), rig)?;
    let watch = robot.watch();
    let fixed = scene.pose;
    let publisher = crate::stream::publisher_loop(cell.clone(), COMMAND_RATE, move |tick| {
        let world = watch.state()?.object.map_or(fixed, |o| o.pose);
        perception.frame(tick, tick as f64 / COMMAND_RATE, &world).ok()
    })?;
    let server = PoseServer::bind("127.0.0.1:0", cell)?;
    let mut poller = Poller::connect(HttpFetcher::new(server.url(), Duration::from_millis(100)))?;

    let socket = UdpSocket::bind("127.0.0.1:0").map_err(|e| HarnessError::Bridge(BridgeError::Io(e)))?;
    let to = bridge.local_addr();
    let mut exec = Executor::new(template, chain.clone(), rig, scene.id.clone());
    let mut trace = GraspTrace { object_rest_z: scene.pose.position.z, ..GraspTrace::default() };
    let mut timer = RateTimer::new(COMMAND_RATE)?;
    let watch = robot.watch();
    let status = loop {
        timer.wait();
        let ev = poller.poll();
        for datagram in exec.tick(&ev, 1.0 / COMMAND_RATE) {
            if let Err(e) = socket.send_to(&datagram, to) {
                log::warn!("udp send: {e}");
            }
        }
        if let Some(state) = watch.state() {
            trace.samples.push(trace_sample(chain, &state, exec.stage()));
        }
        if let Some(s) = exec.status() {
            break s;
        }
    };
    // let the last datagrams land before tearing down
    std::thread::sleep(Duration::from_millis(100));
    let published = publisher.stop();
    server.shutdown();
    let stats = bridge.stop();
    if let Some(sim) = robot.stop() {
        trace.safety_violations = sim.safety_violations;
        trace.substeps = sim.substeps;
        trace.max_speed = sim.max_speed;
        if let Some(last) = trace.samples.last_mut() {
            *last = sim.sample(last.stage);
        }
    }
    Ok(PipelineRun {
        status,
        trace,
        plan: exec.plan().cloned(),
        anchor: exec.anchor().copied(),
        bridge: stats,
        published,
        wiring: Wiring {
            perception: type_name::<Perception>(),
            tracker: type_name::<Tracker>(),
            stream: type_name::<Poller<HttpFetcher>>(),
            bridge: type_name::<Bridge>(),
            robot: type_name::<RobotSim>(),
        },
    })
}

// ------------------------------------------------------ grasp experiment

/// Workspace positions; "front" is away from the robot (+x), "left" is +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionName {
    Center,
    FrontLeft,
    FrontRight,
    RearLeft,
    RearRight,
}

/// Bottle centroid heights above the desk for the default object.
pub fn bottle_on_desk(x: f64, y: f64) -> Vec3 {
    Vec3::new(x, y, 0.5 * ObjectSpec::bottle().height)
}

/// Center and corners of the 20 × 20 cm workspace.
pub fn default_positions() -> Vec<(PositionName, Vec3)> {
    let [cx, cy] = WORKSPACE_CENTER;
    let h = WORKSPACE_HALF;
    vec![
        (PositionName::Center, bottle_on_desk(cx, cy)),
        (PositionName::FrontLeft, bottle_on_desk(cx + h, cy + h)),
        (PositionName::FrontRight, bottle_on_desk(cx + h, cy - h)),
        (PositionName::RearLeft, bottle_on_desk(cx - h, cy + h)),
        (PositionName::RearRight, bottle_on_desk(cx - h, cy - h)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspPositionResult {
    pub name: PositionName,
    pub position: [f64; 3],
    pub status: RunStatus,
    pub success: bool,
    pub lift_height: f64,
    pub max_joint_speed: f64,
    pub safety_violations: u64,
    pub bridge: BridgeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspReport {
    pub seed: u64,
    pub positions: Vec<GraspPositionResult>,
    pub overall_success_count: usize,
}

pub fn grasp_position(name: PositionName, centroid: Vec3, seed: u64, live: bool) -> Result<GraspPositionResult, HarnessError> {
    let chain = KinematicChain::right_arm();
    let object = ObjectSpec::bottle();
    let scene = Scene { id: "bottle-0".into(), object: object.clone(), pose: upright(centroid), graspable: true };
    let template = GraspTemplate { object };
    let run = if live {
        run_live(&chain, Rig::default(), &scene, template, seed)?
    } else {
        run_lockstep(&chain, Rig::default(), &scene, template, seed)?
    };
    let outcome = grasp_outcome(&run.trace);
    Ok(GraspPositionResult {
        name,
        position: centroid.into(),
        status: run.status,
        success: run.status == RunStatus::Completed && outcome.success,
        lift_height: outcome.lift_height,
        max_joint_speed: run.trace.max_speed,
        safety_violations: run.trace.safety_violations,
        bridge: run.bridge,
    })
}

/// Places the bottle at each position in turn and runs the full pipeline on
/// the simulated clock. Position `i` uses seed `seed + i`.
pub fn run_grasp_experiment(positions: &[(PositionName, Vec3)], seed: u64) -> Result<GraspReport, HarnessError> {
    let mut results = Vec::with_capacity(positions.len());
    for (i, (name, centroid)) in positions.iter().enumerate() {
        results.push(grasp_position(*name, *centroid, seed.wrapping_add(i as u64), false)?);
    }
    let overall_success_count = results.iter().filter(|r| r.success).count();
    Ok(GraspReport { seed, positions: results, overall_success_count })
}

// ------------------------------------------------------------- glue demo

/// Window panel resting on a fixture, modeled as a thin disc.
pub fn window_object() -> ObjectSpec {
    ObjectSpec { class_label: "window".into(), height: 0.01, diameter: 0.30 }
}

pub const WINDOW_CENTER: [f64; 3] = [0.70, 0.0, 0.10];
pub const GLUE_STANDOFF: f64 = 0.02;

/// Inner edge of the default window, relative to its centroid.
pub fn default_window_edge() -> Vec<Vec3> {
    let (a, b, z) = (0.08, 0.08, 0.005);
    vec![Vec3::new(-a, -b, z), Vec3::new(a, -b, z), Vec3::new(a, b, z), Vec3::new(-a, b, z), Vec3::new(-a, -b, z)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlueReport {
    pub status: RunStatus,
    pub vertices: usize,
    pub samples: usize,
    pub max_deviation_mm: f64,
    pub mean_deviation_mm: f64,
    /// Tracked window position against the true one at planning time.
    pub anchor_error_mm: f64,
    pub max_joint_speed: f64,
    pub safety_violations: u64,
    pub bridge: BridgeStats,
    pub wiring: Wiring,
}

/// Runs the glue template on the tracked window and measures the executed
/// tool path against the offset polyline from the first vertex onward.
pub fn run_glue_demo(edge: &[Vec3], seed: u64) -> Result<GlueReport, HarnessError> {
    let chain = KinematicChain::right_arm();
    let center = Vec3::new(WINDOW_CENTER[0], WINDOW_CENTER[1], WINDOW_CENTER[2]);
    let scene = Scene { id: "window-0".into(), object: window_object(), pose: upright(center), graspable: false };
    let template = GlueTemplate { edge: edge.to_vec(), standoff: GLUE_STANDOFF };
    if edge.len() < 2 {
        return Err(PlanError::InvalidPath(format!("edge needs >= 2 vertices, got {}", edge.len())).into());
    }
    let run = run_lockstep(&chain, Rig::default(), &scene, template, seed)?;
    let (max, mean, samples) = match &run.plan {
        Some(plan) => {
            let offset: Vec<Vec3> = plan.waypoints().map(|(_, w)| w.target.position).collect();
            let d: Vec<f64> = run
                .trace
                .samples
                .iter()
                .filter(|s| matches!(s.stage, Some(StageName::GlueSegment(i)) if i >= 1))
                .map(|s| distance_to_polyline(&s.tool_position, &offset))
                .collect();
            let max = d.iter().copied().fold(0.0, f64::max);
            let mean = if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 };
            (max, mean, d.len())
        }
        None => (f64::INFINITY, f64::INFINITY, 0),
    };
    let anchor_error = run.anchor.map_or(f64::INFINITY, |a| (a.position - center).norm());
    Ok(GlueReport {
        status: run.status,
        vertices: edge.len(),
        samples,
        max_deviation_mm: max * 1e3,
        mean_deviation_mm: mean * 1e3,
        anchor_error_mm: anchor_error * 1e3,
        max_joint_speed: run.trace.max_speed,
        safety_violations: run.trace.safety_violations,
        bridge: run.bridge,
        wiring: run.wiring,
    })
}

pub fn run_glue_demo_file(path: &Path, seed: u64) -> Result<GlueReport, HarnessError> {
    run_glue_demo(&crate::planner::load_polyline(path)?, seed)
}

/// Wiring used by grasp runs, for comparison against glue runs.
pub fn grasp_wiring() -> Wiring {
    Wiring::lockstep()
}

// ---------------------------------------------------------- acceptance

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

pub const STATIC_SIGMA_TOLERANCE: f64 = 0.10;
pub const OCCLUSION_SIGMA_TOLERANCE: f64 = 0.15;
pub const MAX_GLUE_DEVIATION_MM: f64 = 5.0;

pub fn check_tracking(kind: ScenarioKind, m: &ScenarioMetrics) -> Check {
    let base = m.success_rate == 1.0 && m.reinit_count == 0;
    let (sigma_ok, want) = match kind {
        ScenarioKind::Static => within(m.sigma_xyz_mm, STATIC_SIGMA_XYZ * 1e3, STATIC_SIGMA_TOLERANCE),
        ScenarioKind::PartialOcclusion => within(m.sigma_xyz_mm, OCCLUSION_SIGMA_XYZ * 1e3, OCCLUSION_SIGMA_TOLERANCE),
        ScenarioKind::DynamicHandheld => (m.sigma_xyz_mm.is_none(), "N/A".to_string()),
    };
    Check {
        name: format!("tracking/{}", scenario_name(kind)),
        pass: base && sigma_ok,
        detail: format!(
            "success {:.4}, reinit {}, sigma_xyz {} mm (want {want})",
            m.success_rate,
            m.reinit_count,
            m.sigma_xyz_mm.map_or("N/A".into(), |s| format!("{s:.3}"))
        ),
    }
}

fn within(v: Option<f64>, target: f64, tol: f64) -> (bool, String) {
    (v.is_some_and(|v| (v - target).abs() <= tol * target), format!("{target:.2} ± {:.0}%", tol * 100.0))
}

pub fn check_grasp(r: &GraspReport) -> Check {
    let pass = r.positions.len() == 5
        && r.overall_success_count == 5
        && r.positions.iter().all(|p| p.lift_height >= 0.05 && p.safety_violations == 0);
    let lifts: Vec<String> = r.positions.iter().map(|p| format!("{:.3}", p.lift_height)).collect();
    Check { name: "grasp".into(), pass, detail: format!("{}/5 succeeded, lift [{}] m", r.overall_success_count, lifts.join(", ")) }
}

pub fn check_glue(r: &GlueReport) -> Check {
    let pass = r.status == RunStatus::Completed
        && r.max_deviation_mm <= MAX_GLUE_DEVIATION_MM
        && r.safety_violations == 0
        && r.wiring == grasp_wiring();
    Check {
        name: "glue".into(),
        pass,
        detail: format!("max deviation {:.3} mm, mean {:.3} mm over {} samples", r.max_deviation_mm, r.mean_deviation_mm, r.samples),
    }
}
