//! Serial-chain kinematics and trajectory planning.
//!
//! World frame: `x` forward, `y` left, `z` up, `z = 0` on the desk surface.
//! The default arm is a 7-joint right arm whose zero configuration points
//! straight forward; the gripper approach axis is the tool frame's `+z`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4};
use thiserror::Error;

use crate::se3::{geodesic_deg, Pose, Quat, Vec3};
use crate::sim::ObjectSpec;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("joint vector has {got} values, chain has {expected} joints")]
    WrongLength { expected: usize, got: usize },
    #[error("target unreachable: residual {pos_residual:.4} m / {rot_residual_deg:.2} deg after {iterations} iterations")]
    Unreachable { pos_residual: f64, rot_residual_deg: f64, iterations: usize, best: JointVector },
    #[error("waypoint {index} of stage {stage} unreachable")]
    WaypointUnreachable { stage: String, index: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("time {t} outside plan [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

/// Joint angles in radians, one per chain joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Rotation axis in the joint frame (unit length).
    pub axis: Vec3,
    /// Translation from the previous joint frame to this one.
    pub origin_offset: Vec3,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Joint {
    pub fn new(name: impl Into<String>, axis: Vec3, origin_offset: Vec3, theta_min: f64, theta_max: f64) -> Result<Self, PlanError> {
        let name = name.into();
        let n = axis.norm();
        if !(n > 1e-9 && n.is_finite()) {
            return Err(PlanError::InvalidChain(format!("joint {name}: zero axis")));
        }
        if !theta_min.is_finite() || !theta_max.is_finite() || theta_min >= theta_max {
            return Err(PlanError::InvalidChain(format!("joint {name}: limits [{theta_min}, {theta_max}]")));
        }
        if !origin_offset.iter().all(|v| v.is_finite()) {
            return Err(PlanError::InvalidChain(format!("joint {name}: offset not finite")));
        }
        Ok(Joint { name, axis: axis / n, origin_offset, theta_min, theta_max })
    }

    pub fn range(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    pub fn clamp(&self, theta: f64) -> f64 {
        theta.clamp(self.theta_min, self.theta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joints: Vec<Joint>,
    pub base_pose: Pose,
    /// Last joint frame to tool (palm) frame.
    pub tool: Pose,
    /// Configuration the robot starts in.
    pub rest: JointVector,
}

/// Minimum joints for full 6-DoF end-effector control.
pub const ARM_MIN_JOINTS: usize = 6;

impl KinematicChain {
    pub fn new(joints: Vec<Joint>, base_pose: Pose, tool: Pose) -> Result<Self, PlanError> {
        if joints.is_empty() {
            return Err(PlanError::InvalidChain("no joints".into()));
        }
        let rest = JointVector(joints.iter().map(|j| j.clamp(0.0)).collect());
        Ok(KinematicChain { joints, base_pose, tool, rest })
    }

    pub fn with_rest(mut self, rest: JointVector) -> Result<Self, PlanError> {
        self.check_len(&rest)?;
        self.rest = self.clamp(&rest);
        Ok(self)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.joints.iter().map(|j| (j.theta_min, j.theta_max)).collect()
    }

    pub fn require_arm(&self) -> Result<(), PlanError> {
        if self.dof() < ARM_MIN_JOINTS {
            return Err(PlanError::InvalidChain(format!("arm chain needs >= {ARM_MIN_JOINTS} joints, has {}", self.dof())));
        }
        Ok(())
    }

    pub fn check_len(&self, theta: &JointVector) -> Result<(), PlanError> {
        if theta.len() != self.dof() {
            return Err(PlanError::WrongLength { expected: self.dof(), got: theta.len() });
        }
        Ok(())
    }

    pub fn clamp(&self, theta: &JointVector) -> JointVector {
        JointVector(self.joints.iter().zip(&theta.0).map(|(j, t)| j.clamp(*t)).collect())
    }

    pub fn within_limits(&self, theta: &JointVector) -> bool {
        self.joints.iter().zip(&theta.0).all(|(j, t)| (j.theta_min..=j.theta_max).contains(t))
    }

    /// Sum of link lengths from the base to the tool point.
    pub fn max_reach(&self) -> f64 {
        self.joints.iter().skip(1).map(|j| j.origin_offset.norm()).sum::<f64>() + self.tool.position.norm()
    }

    /// 7-joint right arm: shoulder pitch/roll/yaw, elbow, wrist
    /// roll/pitch/yaw, with 0.40 m upper arm, 0.38 m forearm and a 0.10 m
    /// palm. Shoulder at (0.15, -0.12, 0.40) in the world frame.
    #[allow(clippy::approx_constant)]
    pub fn right_arm() -> Self {
        let j = |name: &str, axis: Vec3, off: Vec3, lo: f64, hi: f64| Joint::new(name, axis, off, lo, hi).expect("static joint table");
        let z = Vec3::zeros();
        let joints = vec![
            j("shoulder_pitch", Vec3::y(), z, -3.0892, 2.6704),
            j("shoulder_roll", Vec3::z(), z, -2.2515, 1.5882),
            j("shoulder_yaw", Vec3::x(), z, -2.618, 2.618),
            j("elbow", Vec3::y(), Vec3::new(0.40, 0.0, 0.0), -1.0472, 2.0944),
            j("wrist_roll", Vec3::x(), z, -1.9722, 1.9722),
            j("wrist_pitch", Vec3::y(), Vec3::new(0.38, 0.0, 0.0), -1.6144, 1.6144),
            j("wrist_yaw", Vec3::z(), z, -1.6144, 1.6144),
        ];
        let base = Pose::from_translation(0.15, -0.12, 0.40);
        let tool = Pose::new(Vec3::new(0.10, 0.0, 0.0), Quat::from_axis_angle(&Vec3::y(), std::f64::consts::FRAC_PI_2));
        KinematicChain::new(joints, base, tool)
            .and_then(|c| c.with_rest(JointVector(vec![-1.08, 0.0, 0.0, 1.96, 0.0, 0.69, 0.0])))
            .expect("static chain")
    }

    /// Parses the plain-text chain format:
    ///
    /// ```text
    /// # comment
    /// base  x y z  qw qx qy qz
    /// joint name  ax ay az  ox oy oz  theta_min theta_max
    /// tool  x y z  qw qx qy qz
    /// rest  theta_1 ... theta_n
    /// ```
    ///
    /// `joint` lines are in chain order; `base`, `tool` and `rest` are optional.
    pub fn parse(text: &str, origin: &str) -> Result<Self, PlanError> {
        let err = |line: usize, reason: String| PlanError::Parse { path: origin.to_string(), line, reason };
        let mut joints = Vec::new();
        let mut base = Pose::IDENTITY;
        let mut tool = Pose::IDENTITY;
        let mut rest = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap_or_default();
            let rest_tokens: Vec<&str> = parts.collect();
            let numbers = |tokens: &[&str]| -> Result<Vec<f64>, PlanError> {
                tokens.iter().map(|t| t.parse::<f64>().map_err(|e| err(line_no, format!("bad number {t:?}: {e}")))).collect()
            };
            match kind {
                "base" | "tool" => {
                    let v = numbers(&rest_tokens)?;
                    if v.len() != 7 {
                        return Err(err(line_no, format!("{kind} needs 7 numbers, got {}", v.len())));
                    }
                    let p = Pose::new(Vec3::new(v[0], v[1], v[2]), Quat::new(v[3], v[4], v[5], v[6]));
                    if kind == "base" {
                        base = p
                    } else {
                        tool = p
                    }
                }
                "joint" => {
                    let Some((name, tail)) = rest_tokens.split_first() else {
                        return Err(err(line_no, "joint needs a name".into()));
                    };
                    let v = numbers(tail)?;
                    if v.len() != 8 {
                        return Err(err(line_no, format!("joint needs 8 numbers, got {}", v.len())));
                    }
                    let joint = Joint::new(*name, Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]), v[6], v[7])
                        .map_err(|e| err(line_no, e.to_string()))?;
                    joints.push(joint);
                }
                "rest" => rest = Some((line_no, numbers(&rest_tokens)?)),
                other => return Err(err(line_no, format!("unknown record {other:?}"))),
            }
        }
        let chain = KinematicChain::new(joints, base, tool).map_err(|e| err(0, e.to_string()))?;
        match rest {
            Some((line_no, r)) => chain.with_rest(JointVector(r)).map_err(|e| err(line_no, e.to_string())),
            None => Ok(chain),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = std::fs::read_to_string(path).map_err(|e| PlanError::Parse {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

impl fmt::Display for KinematicChain {
    /// Writes the chain in the format [`KinematicChain::parse`] reads.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pose = |p: &Pose| {
            let q = p.orientation.to_array();
            format!("{} {} {}  {} {} {} {}", p.position.x, p.position.y, p.position.z, q[0], q[1], q[2], q[3])
        };
        writeln!(f, "base  {}", pose(&self.base_pose))?;
        for j in &self.joints {
            writeln!(
                f,
                "joint {}  {} {} {}  {} {} {}  {} {}",
                j.name, j.axis.x, j.axis.y, j.axis.z, j.origin_offset.x, j.origin_offset.y, j.origin_offset.z, j.theta_min, j.theta_max
            )?;
        }
        writeln!(f, "tool  {}", pose(&self.tool))?;
        let rest: Vec<String> = self.rest.0.iter().map(|v| v.to_string()).collect();
        writeln!(f, "rest  {}", rest.join(" "))
    }
}

/// World-frame joint anchors and axes plus the tool pose.
struct ChainFrames {
    anchors: Vec<Vec3>,
    axes: Vec<Vec3>,
    tool: Pose,
}

fn chain_frames(chain: &KinematicChain, theta: &[f64]) -> ChainFrames {
    let mut t = chain.base_pose;
    let mut anchors = Vec::with_capacity(theta.len());
    let mut axes = Vec::with_capacity(theta.len());
    for (j, &q) in chain.joints.iter().zip(theta) {
        t = t.compose(&Pose::from_translation(j.origin_offset.x, j.origin_offset.y, j.origin_offset.z));
        anchors.push(t.position);
        axes.push(t.orientation.rotate(&j.axis));
        t = t.compose(&Pose::from_rotation(Quat::from_axis_angle(&j.axis, q)));
    }
    ChainFrames { anchors, axes, tool: t.compose(&chain.tool) }
}

/// End-effector (tool) pose in the world frame.
pub fn forward_kinematics(chain: &KinematicChain, theta: &JointVector) -> Result<Pose, PlanError> {
    chain.check_len(theta)?;
    Ok(chain_frames(chain, &theta.0).tool)
}

/// Same result as [`forward_kinematics`], computed as a product of 4×4
/// homogeneous matrices with Rodrigues rotations.
pub fn forward_kinematics_matrix(chain: &KinematicChain, theta: &JointVector) -> Result<Matrix4<f64>, PlanError> {
    chain.check_len(theta)?;
    let homogeneous = |p: &Pose| {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.orientation.to_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.position);
        m
    };
    let mut m = homogeneous(&chain.base_pose);
    for (j, &q) in chain.joints.iter().zip(&theta.0) {
        let mut step = Matrix4::identity();
        step.fixed_view_mut::<3, 1>(0, 3).copy_from(&j.origin_offset);
        let k = j.axis;
        let kx = nalgebra::Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let r = nalgebra::Matrix3::identity() + kx * q.sin() + kx * kx * (1.0 - q.cos());
        step.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m *= step;
    }
    Ok(m * homogeneous(&chain.tool))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iterations: usize,
    /// meters
    pub pos_tolerance: f64,
    /// degrees
    pub rot_tolerance_deg: f64,
    /// Per-iteration cap on the joint step norm, radians.
    pub max_step: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig { damping: 0.05, max_iterations: 200, pos_tolerance: 1e-3, rot_tolerance_deg: 2.0, max_step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub joints: JointVector,
    pub pos_residual: f64,
    pub rot_residual_deg: f64,
    pub iterations: usize,
}

pub fn ik_solve(chain: &KinematicChain, target: &Pose, seed: &JointVector) -> Result<JointVector, PlanError> {
    ik_solve_with(chain, target, seed, &IkConfig::default()).map(|s| s.joints)
}

/// Damped least-squares IK: `Δθ = Jᵀ (J Jᵀ + λ² I)⁻¹ e` on the stacked
/// position / rotation-vector error, clamping to joint limits every step.
pub fn ik_solve_with(chain: &KinematicChain, target: &Pose, seed: &JointVector, cfg: &IkConfig) -> Result<IkSolution, PlanError> {
    chain.check_len(seed)?;
    if !target.is_finite() {
        return Err(PlanError::InvalidPath("target pose not finite".into()));
    }
    let n = chain.dof();
    let mut theta = chain.clamp(seed);
    let lambda_sq = cfg.damping * cfg.damping;
    let mut iterations = 0;
    loop {
        let frames = chain_frames(chain, &theta.0);
        let e_pos = target.position - frames.tool.position;
        let e_rot = target.orientation.multiply(&frames.tool.orientation.inverse()).to_rotation_vector();
        let pos_residual = e_pos.norm();
        let rot_residual_deg = e_rot.norm().to_degrees();
        if pos_residual <= cfg.pos_tolerance && rot_residual_deg <= cfg.rot_tolerance_deg {
            return Ok(IkSolution { joints: theta, pos_residual, rot_residual_deg, iterations });
        }
        if iterations >= cfg.max_iterations {
            return Err(PlanError::Unreachable { pos_residual, rot_residual_deg, iterations, best: theta });
        }
        let mut jac = DMatrix::<f64>::zeros(6, n);
        for i in 0..n {
            let lin = frames.axes[i].cross(&(frames.tool.position - frames.anchors[i]));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
                jac[(r + 3, i)] = frames.axes[i][r];
            }
        }
        let err = DVector::from_column_slice(&[e_pos.x, e_pos.y, e_pos.z, e_rot.x, e_rot.y, e_rot.z]);
        let jjt = &jac * jac.transpose() + DMatrix::<f64>::identity(6, 6) * lambda_sq;
        let Some(y) = jjt.cholesky().map(|c| c.solve(&err)) else {
            return Err(PlanError::Unreachable { pos_residual, rot_residual_deg, iterations, best: theta });
        };
        let mut step = jac.transpose() * y;
        let norm = step.norm();
        if norm > cfg.max_step {
            step *= cfg.max_step / norm;
        }
        for (i, j) in chain.joints.iter().enumerate() {
            theta.0[i] = j.clamp(theta.0[i] + step[i]);
        }
        iterations += 1;
    }
}

/// `3u² − 2u³`, the cubic with zero slope at both ends.
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    /// Tool pose in the world frame.
    pub target: Pose,
    /// 0 open, 1 closed.
    pub gripper: f64,
    /// Seconds to travel here from the previous waypoint.
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageName {
    PreGraspLift,
    Approach,
    Descent,
    GripperClose,
    Lift,
    Release,
    GlueSegment(usize),
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageName::GlueSegment(i) => write!(f, "GlueSegment{i}"),
            other => write!(f, "{other:?}"),
        }
    }
}

/// The six grasp stages in execution order.
pub const GRASP_STAGES: [StageName; 6] =
    [StageName::PreGraspLift, StageName::Approach, StageName::Descent, StageName::GripperClose, StageName::Lift, StageName::Release];

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: StageName,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlan {
    pub start: Pose,
    pub start_gripper: f64,
    pub stages: Vec<Stage>,
    /// IK solution for every waypoint, chained from the chain's rest pose.
    pub joint_waypoints: Vec<JointVector>,
}

impl TrajectoryPlan {
    pub fn duration(&self) -> f64 {
        self.waypoints().map(|(_, w)| w.duration).sum()
    }

    /// Waypoints in order, tagged with their stage.
    pub fn waypoints(&self) -> impl Iterator<Item = (StageName, &Waypoint)> {
        self.stages.iter().flat_map(|s| s.waypoints.iter().map(move |w| (s.name, w)))
    }

    pub fn stage_names(&self) -> Vec<StageName> {
        self.stages.iter().map(|s| s.name).collect()
    }

    /// Stage being executed at time `t` (the last stage once `t` passes the end).
    pub fn stage_at(&self, t: f64) -> Option<StageName> {
        let mut acc = 0.0;
        let mut last = None;
        for (name, w) in self.waypoints() {
            acc += w.duration;
            last = Some(name);
            if t < acc {
                return last;
            }
        }
        last
    }

    /// Start time of the first waypoint of `name`.
    pub fn stage_start(&self, name: StageName) -> Option<f64> {
        let mut acc = 0.0;
        for (n, w) in self.waypoints() {
            if n == name {
                return Some(acc);
            }
            acc += w.duration;
        }
        None
    }
}

/// Tool pose and gripper command at time `t`, blending each segment with
/// [`smoothstep`]: linear in position and gripper, shortest-arc slerp in
/// orientation.
pub fn interpolate(plan: &TrajectoryPlan, t: f64) -> Result<(Pose, f64), PlanError> {
    let duration = plan.duration();
    if !(0.0..=duration).contains(&t) {
        return Err(PlanError::TimeOutOfRange { t, duration });
    }
    let mut from = (plan.start, plan.start_gripper);
    let mut t0 = 0.0;
    let count = plan.waypoints().count();
    for (i, (_, w)) in plan.waypoints().enumerate() {
        let t1 = t0 + w.duration;
        if t <= t1 || i + 1 == count {
            let u = ((t - t0) / w.duration).clamp(0.0, 1.0);
            return Ok(blend(&from, w, smoothstep(u)));
        }
        from = (w.target, w.gripper);
        t0 = t1;
    }
    Ok(from)
}

fn blend(from: &(Pose, f64), to: &Waypoint, s: f64) -> (Pose, f64) {
    let (a, ga) = from;
    if s <= 0.0 {
        return (*a, *ga);
    }
    if s >= 1.0 {
        return (to.target, to.gripper);
    }
    let position = a.position + (to.target.position - a.position) * s;
    let orientation = a.orientation.slerp(&to.target.orientation, s);
    (Pose::new(position, orientation), ga + (to.gripper - ga) * s)
}

/// Maps each joint into `[0, 1]` over its limit range, clamping.
pub fn normalize_joints(theta: &JointVector, chain: &KinematicChain) -> Vec<f64> {
    chain.joints.iter().zip(&theta.0).map(|(j, t)| ((t - j.theta_min) / j.range()).clamp(0.0, 1.0)).collect()
}

/// Gripper approach axis pointing straight down.
pub fn tool_down() -> Quat {
    Quat::from_axis_angle(&Vec3::y(), std::f64::consts::PI)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspParams {
    /// Staging height above the object top, meters.
    pub staging_height: f64,
    /// Horizontal offset of the staging point toward the robot, meters.
    pub staging_setback: f64,
    /// Approach clearance above the object top, meters.
    pub approach_clearance: f64,
    pub lift_height: f64,
    /// Seconds per stage.
    pub stage_duration: f64,
}

impl Default for GraspParams {
    fn default() -> Self {
        GraspParams { staging_height: 0.15, staging_setback: 0.05, approach_clearance: 0.10, lift_height: 0.10, stage_duration: 2.0 }
    }
}

pub fn plan_grasp(object_pose: &Pose, object: &ObjectSpec, chain: &KinematicChain) -> Result<TrajectoryPlan, PlanError> {
    plan_grasp_with(object_pose, object, chain, &GraspParams::default())
}

/// Six-stage top-down grasp of an upright cylinder whose pose origin is its
/// centroid. Only the object position is used, so the plan does not depend
/// on rotation about the symmetry axis.
pub fn plan_grasp_with(
    object_pose: &Pose,
    object: &ObjectSpec,
    chain: &KinematicChain,
    p: &GraspParams,
) -> Result<TrajectoryPlan, PlanError> {
    chain.require_arm()?;
    if !object_pose.is_finite() {
        return Err(PlanError::InvalidPath("object pose not finite".into()));
    }
    let c = object_pose.position;
    let top = c.z + 0.5 * object.height;
    let q = tool_down();
    let at = |x: f64, y: f64, z: f64| Pose::new(Vec3::new(x, y, z), q);
    let grasp = at(c.x, c.y, c.z);
    let lifted = at(c.x, c.y, c.z + p.lift_height);
    let d = p.stage_duration;
    let wp = |target: Pose, gripper: f64| Waypoint { target, gripper, duration: d };
    let stages = vec![
        Stage { name: StageName::PreGraspLift, waypoints: vec![wp(at(c.x - p.staging_setback, c.y, top + p.staging_height), 0.0)] },
        Stage { name: StageName::Approach, waypoints: vec![wp(at(c.x, c.y, top + p.approach_clearance), 0.0)] },
        Stage { name: StageName::Descent, waypoints: vec![wp(grasp, 0.0)] },
        Stage { name: StageName::GripperClose, waypoints: vec![wp(grasp, 1.0)] },
        Stage { name: StageName::Lift, waypoints: vec![wp(lifted, 1.0)] },
        Stage { name: StageName::Release, waypoints: vec![wp(lifted, 0.0)] },
    ];
    finish_plan(chain, 0.0, stages)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlueParams {
    /// Tool speed along the edge, m/s.
    pub speed: f64,
    /// Floor on each segment's duration, seconds.
    pub min_segment_duration: f64,
    /// Duration of the move from the start pose to the first vertex.
    pub approach_duration: f64,
    pub tool_orientation: Quat,
}

impl Default for GlueParams {
    fn default() -> Self {
        GlueParams { speed: 0.04, min_segment_duration: 1.5, approach_duration: 3.0, tool_orientation: tool_down() }
    }
}

pub fn plan_glue_path(edge: &[Vec3], standoff: f64, chain: &KinematicChain) -> Result<TrajectoryPlan, PlanError> {
    plan_glue_path_with(edge, standoff, chain, &GlueParams::default())
}

/// One waypoint per edge vertex, offset by `standoff` against the tool
/// approach axis, with a constant tool orientation and the gripper closed on
/// the applicator throughout.
pub fn plan_glue_path_with(edge: &[Vec3], standoff: f64, chain: &KinematicChain, p: &GlueParams) -> Result<TrajectoryPlan, PlanError> {
    chain.require_arm()?;
    if edge.len() < 2 {
        return Err(PlanError::InvalidPath(format!("edge needs >= 2 vertices, got {}", edge.len())));
    }
    if !edge.iter().all(|v| v.iter().all(|c| c.is_finite())) || !standoff.is_finite() {
        return Err(PlanError::InvalidPath("non-finite vertex or standoff".into()));
    }
    let offset = offset_polyline(edge, standoff, &p.tool_orientation);
    let mut stages = Vec::with_capacity(offset.len());
    for (i, v) in offset.iter().enumerate() {
        let duration = if i == 0 { p.approach_duration } else { ((v - offset[i - 1]).norm() / p.speed).max(p.min_segment_duration) };
        stages.push(Stage {
            name: StageName::GlueSegment(i),
            waypoints: vec![Waypoint { target: Pose::new(*v, p.tool_orientation), gripper: 1.0, duration }],
        });
    }
    finish_plan(chain, 1.0, stages)
}

/// Edge vertices shifted by `standoff` opposite the tool approach axis.
pub fn offset_polyline(edge: &[Vec3], standoff: f64, tool_orientation: &Quat) -> Vec<Vec3> {
    let back = -tool_orientation.rotate(&Vec3::z()) * standoff;
    edge.iter().map(|v| v + back).collect()
}

/// Distance from `p` to the closest point of a polyline.
pub fn distance_to_polyline(p: &Vec3, polyline: &[Vec3]) -> f64 {
    if polyline.len() == 1 {
        return (p - polyline[0]).norm();
    }
    polyline
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let ab = b - a;
            let len_sq = ab.norm_squared();
            let s = if len_sq > 0.0 { ((p - a).dot(&ab) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
            (p - (a + ab * s)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

fn finish_plan(chain: &KinematicChain, start_gripper: f64, stages: Vec<Stage>) -> Result<TrajectoryPlan, PlanError> {
    let start = forward_kinematics(chain, &chain.rest)?;
    let mut seed = chain.rest.clone();
    let mut joint_waypoints = Vec::new();
    for stage in &stages {
        for (index, w) in stage.waypoints.iter().enumerate() {
            let sol = ik_solve(chain, &w.target, &seed)
                .or_else(|_| ik_solve(chain, &w.target, &chain.rest))
                .map_err(|_| PlanError::WaypointUnreachable { stage: stage.name.to_string(), index })?;
            seed = sol.clone();
            joint_waypoints.push(sol);
        }
    }
    Ok(TrajectoryPlan { start, start_gripper, stages, joint_waypoints })
}

/// Reads a vertex list: one `x y z` triple per line, `#` comments allowed.
pub fn parse_polyline(text: &str, origin: &str) -> Result<Vec<Vec3>, PlanError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Result<Vec<f64>, _> =
            line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).map(str::parse).collect();
        match v {
            Ok(v) if v.len() == 3 && v.iter().all(|c| c.is_finite()) => out.push(Vec3::new(v[0], v[1], v[2])),
            _ => return Err(PlanError::Parse { path: origin.into(), line: i + 1, reason: format!("expected `x y z`, got {line:?}") }),
        }
    }
    Ok(out)
}

pub fn load_polyline(path: &Path) -> Result<Vec<Vec3>, PlanError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PlanError::Parse { path: path.display().to_string(), line: 0, reason: e.to_string() })?;
    parse_polyline(&text, &path.display().to_string())
}

/// Orientation residual helper for callers checking IK output.
pub fn pose_residual(a: &Pose, b: &Pose) -> (f64, f64) {
    ((a.position - b.position).norm(), geodesic_deg(&a.orientation, &b.orientation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_link() -> KinematicChain {
        let joints = vec![
            Joint::new("a", Vec3::z(), Vec3::zeros(), -3.0, 3.0).unwrap(),
            Joint::new("b", Vec3::z(), Vec3::new(0.3, 0.0, 0.0), -3.0, 3.0).unwrap(),
        ];
        KinematicChain::new(joints, Pose::IDENTITY, Pose::from_translation(0.3, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn two_link_fk() {
        let c = two_link();
        let p = forward_kinematics(&c, &JointVector(vec![0.0, 0.0])).unwrap();
        assert!((p.position - Vec3::new(0.6, 0.0, 0.0)).norm() < 1e-12);
        let p = forward_kinematics(&c, &JointVector(vec![FRAC_PI_2, 0.0])).unwrap();
        assert!((p.position - Vec3::new(0.0, 0.6, 0.0)).norm() < 1e-12);
        assert!(matches!(forward_kinematics(&c, &JointVector(vec![0.0])), Err(PlanError::WrongLength { .. })));
    }

    #[test]
    fn fixed_point_ik() {
        let c = KinematicChain::right_arm();
        let theta = JointVector(vec![0.5, 0.1, -0.2, 1.4, 0.3, 0.4, -0.1]);
        let target = forward_kinematics(&c, &theta).unwrap();
        let sol = ik_solve_with(&c, &target, &theta, &IkConfig::default()).unwrap();
        assert!(sol.pos_residual <= 1e-6);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn out_of_reach_is_unreachable() {
        let c = KinematicChain::right_arm();
        let far = Pose::new(c.base_pose.position + Vec3::new(c.max_reach() + 0.2, 0.0, 0.0), tool_down());
        assert!(matches!(ik_solve(&c, &far, &c.rest), Err(PlanError::Unreachable { .. })));
    }

    #[test]
    fn smoothstep_values() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
        assert_eq!(smoothstep(0.25), 0.15625);
    }

    #[test]
    fn normalize_examples() {
        let c = KinematicChain::right_arm();
        let lo = JointVector(c.joints.iter().map(|j| j.theta_min).collect());
        assert!(normalize_joints(&lo, &c).iter().all(|v| *v == 0.0));
        let mid = JointVector(c.joints.iter().map(|j| 0.5 * (j.theta_min + j.theta_max)).collect());
        assert!(normalize_joints(&mid, &c).iter().all(|v| (v - 0.5).abs() < 1e-15));
        let hi = JointVector(c.joints.iter().map(|j| j.theta_max + 1.0).collect());
        assert!(normalize_joints(&hi, &c).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn chain_text_round_trip() {
        let c = KinematicChain::right_arm();
        let parsed = KinematicChain::parse(&c.to_string(), "mem").unwrap();
        assert_eq!(parsed.dof(), 7);
        let theta = JointVector(vec![0.3, -0.2, 0.1, 1.0, 0.2, -0.3, 0.4]);
        let a = forward_kinematics(&c, &theta).unwrap();
        let b = forward_kinematics(&parsed, &theta).unwrap();
        assert!((a.position - b.position).norm() < 1e-12);
        assert_eq!(parsed.rest, c.rest);
    }

    #[test]
    fn chain_parse_errors() {
        assert!(matches!(KinematicChain::parse("joint a 0 0 1 0 0 0 1 -1\n", "x"), Err(PlanError::Parse { line: 1, .. })));
        assert!(matches!(KinematicChain::parse("wheel 1 2 3\n", "x"), Err(PlanError::Parse { line: 1, .. })));
        assert!(KinematicChain::parse("# empty\n", "x").is_err());
    }

    #[test]
    fn polyline_parse() {
        let v = parse_polyline("# window\n0 0 0\n0.1, 0.0, 0.0\n\n", "x").unwrap();
        assert_eq!(v.len(), 2);
        assert!(matches!(parse_polyline("1 2\n", "x"), Err(PlanError::Parse { line: 1, .. })));
    }

    #[test]
    fn polyline_distance() {
        let pl = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)];
        assert!((distance_to_polyline(&Vec3::new(0.5, 0.2, 0.0), &pl) - 0.2).abs() < 1e-12);
        assert!((distance_to_polyline(&Vec3::new(1.3, 0.5, 0.0), &pl) - 0.3).abs() < 1e-12);
        assert!((distance_to_polyline(&Vec3::new(-1.0, 0.0, 0.0), &pl) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_chain_rejected_for_planning() {
        let o = ObjectSpec::bottle();
        assert!(matches!(plan_grasp(&Pose::from_translation(0.7, 0.0, 0.11), &o, &two_link()), Err(PlanError::InvalidChain(_))));
    }
}
