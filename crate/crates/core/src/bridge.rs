//! Joint-command wire format, the receiving bridge and the simulated robot.
//!
//! Datagram layout, little-endian, fixed field order:
//!
//! | offset     | size | field                                   |
//! |------------|------|-----------------------------------------|
//! | 0          | 4    | magic `"G1JC"`                          |
//! | 4          | 1    | version (`1`)                           |
//! | 5          | 1    | channel: 0 arm, 1 left hand, 2 right hand |
//! | 6          | 4    | seq, u32                                |
//! | 10         | 1    | joint_count `n`                         |
//! | 11         | 4·n  | normalized targets, f32 in `[0, 1]`     |
//! | 11 + 4·n   | 4    | kp, f32                                 |
//! | 15 + 4·n   | 4    | kd, f32                                 |
//!
//! A packet is `19 + 4·n` bytes.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::planner::{forward_kinematics, JointVector, KinematicChain, StageName};
use crate::se3::{Pose, Vec3};
use crate::sim::ObjectSpec;

pub const MAGIC: [u8; 4] = *b"G1JC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 19;
pub const DEFAULT_KP: f32 = 60.0;
pub const DEFAULT_KD: f32 = 1.5;
pub const DEFAULT_BRIDGE_ADDR: &str = "127.0.0.1:8078";

/// rad/s
pub const VELOCITY_LIMIT: f64 = 2.0;
pub const SUBSTEP: f64 = 1.0 / 240.0;
/// Palm to object axis, meters.
pub const CAPTURE_RADIUS: f64 = 0.03;
/// Closure units per second.
pub const GRIPPER_SLEW: f64 = 2.0;
pub const ATTACH_CLOSURE: f64 = 0.8;
/// Lift above rest that counts as a successful grasp, meters.
pub const LIFT_SUCCESS: f64 = 0.05;
pub const HAND_JOINTS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Channel {
    Arm = 0,
    LeftHand = 1,
    RightHand = 2,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Arm, Channel::LeftHand, Channel::RightHand];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Channel::Arm),
            1 => Some(Channel::LeftHand),
            2 => Some(Channel::RightHand),
            _ => None,
        }
    }

    pub fn topic(self) -> &'static str {
        match self {
            Channel::Arm => "rt/arm_sdk",
            Channel::LeftHand => "rt/dex3/left/cmd",
            Channel::RightHand => "rt/dex3/right/cmd",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointCommandPacket {
    pub channel: Channel,
    pub seq: u32,
    pub normalized: Vec<f32>,
    pub kp: f32,
    pub kd: f32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("length mismatch: expected {expected} bytes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("channel {0} out of range")]
    BadChannel(u8),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{0} joints exceed the 255-joint field")]
    TooManyJoints(usize),
}

/// Serializes a packet. Targets are clamped to `[0, 1]`; NaN becomes 0.
pub fn encode_packet(p: &JointCommandPacket) -> Result<Vec<u8>, CodecError> {
    let n = p.normalized.len();
    let count = u8::try_from(n).map_err(|_| CodecError::TooManyJoints(n))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(p.channel as u8);
    out.extend_from_slice(&p.seq.to_le_bytes());
    out.push(count);
    for v in &p.normalized {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&p.kp.to_le_bytes());
    out.extend_from_slice(&p.kd.to_le_bytes());
    Ok(out)
}

/// Parses a datagram. Targets outside `[0, 1]` are returned as sent; the
/// bridge clamps them.
pub fn decode_packet(b: &[u8]) -> Result<JointCommandPacket, CodecError> {
    if b.len() < 4 {
        return Err(CodecError::LengthMismatch { expected: HEADER_LEN, got: b.len() });
    }
    let magic: [u8; 4] = b[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    if b.len() < 11 {
        return Err(CodecError::LengthMismatch { expected: HEADER_LEN, got: b.len() });
    }
    if b[4] != VERSION {
        return Err(CodecError::UnsupportedVersion(b[4]));
    }
    let channel = Channel::from_u8(b[5]).ok_or(CodecError::BadChannel(b[5]))?;
    let seq = u32::from_le_bytes(b[6..10].try_into().expect("4 bytes"));
    let n = b[10] as usize;
    let expected = HEADER_LEN + 4 * n;
    if b.len() != expected {
        return Err(CodecError::LengthMismatch { expected, got: b.len() });
    }
    let f = |at: usize| f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"));
    let normalized: Vec<f32> = (0..n).map(|i| f(11 + 4 * i)).collect();
    if normalized.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite("normalized target"));
    }
    let kp = f(11 + 4 * n);
    let kd = f(15 + 4 * n);
    if !kp.is_finite() {
        return Err(CodecError::NonFinite("kp"));
    }
    if !kd.is_finite() {
        return Err(CodecError::NonFinite("kd"));
    }
    Ok(JointCommandPacket { channel, seq, normalized, kp, kd })
}

/// `θ = θ_min + θ̄(θ_max − θ_min)`, clamped into the limits. NaN maps to `θ_min`.
pub fn denormalize(normalized: &[f64], limits: &[(f64, f64)]) -> JointVector {
    JointVector(
        normalized.iter().zip(limits).map(|(v, (lo, hi))| if v.is_nan() { *lo } else { (lo + v * (hi - lo)).clamp(*lo, *hi) }).collect(),
    )
}

/// Simplified hand: every finger joint flexes over `[0, 1.5]` rad, 0 open.
pub fn hand_limits() -> Vec<(f64, f64)> {
    vec![(0.0, 1.5); HAND_JOINTS]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitTable {
    pub arm: Vec<(f64, f64)>,
    pub left_hand: Vec<(f64, f64)>,
    pub right_hand: Vec<(f64, f64)>,
}

impl LimitTable {
    pub fn for_chain(chain: &KinematicChain) -> Self {
        LimitTable { arm: chain.limits(), left_hand: hand_limits(), right_hand: hand_limits() }
    }

    pub fn channel(&self, c: Channel) -> &[(f64, f64)] {
        match c {
            Channel::Arm => &self.arm,
            Channel::LeftHand => &self.left_hand,
            Channel::RightHand => &self.right_hand,
        }
    }
}

/// Denormalized, clamped targets for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCommand {
    pub channel: Channel,
    pub seq: u32,
    pub targets: Vec<f64>,
    pub kp: f64,
    pub kd: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rejection {
    #[error("malformed: {0}")]
    Malformed(#[from] CodecError),
    #[error("{channel:?} expects {expected} joints, got {got}")]
    WrongJointCount { channel: Channel, expected: usize, got: usize },
    #[error("stale seq {seq} (last {last})")]
    Stale { seq: u32, last: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct BridgeStats {
    pub applied: u64,
    pub dropped_stale: u64,
    pub malformed: u64,
}

/// Receiving side: validation, staleness filtering and denormalization.
#[derive(Debug, Clone)]
pub struct Bridge {
    limits: LimitTable,
    last_seq: [Option<u32>; 3],
    stats: BridgeStats,
}

impl Bridge {
    pub fn new(limits: LimitTable) -> Self {
        Bridge { limits, last_seq: [None; 3], stats: BridgeStats::default() }
    }

    pub fn stats(&self) -> BridgeStats {
        self.stats
    }

    pub fn handle(&mut self, datagram: &[u8]) -> Result<ChannelCommand, Rejection> {
        let result = self.accept(datagram);
        match &result {
            Ok(_) => self.stats.applied += 1,
            Err(Rejection::Stale { .. }) => self.stats.dropped_stale += 1,
            Err(_) => self.stats.malformed += 1,
        }
        result
    }

    fn accept(&mut self, datagram: &[u8]) -> Result<ChannelCommand, Rejection> {
        let p = decode_packet(datagram)?;
        let limits = self.limits.channel(p.channel);
        if p.normalized.len() != limits.len() {
            return Err(Rejection::WrongJointCount { channel: p.channel, expected: limits.len(), got: p.normalized.len() });
        }
        let slot = &mut self.last_seq[p.channel.index()];
        if let Some(last) = *slot {
            if p.seq <= last {
                return Err(Rejection::Stale { seq: p.seq, last });
            }
        }
        *slot = Some(p.seq);
        let normalized: Vec<f64> = p.normalized.iter().map(|v| f64::from(*v)).collect();
        Ok(ChannelCommand {
            channel: p.channel,
            seq: p.seq,
            targets: denormalize(&normalized, limits).0,
            kp: f64::from(p.kp),
            kd: f64::from(p.kd),
        })
    }
}

/// Sending side: per-channel sequence numbers and packet assembly.
#[derive(Debug, Clone, Default)]
pub struct Commander {
    next_seq: [u32; 3],
    pub kp: f32,
    pub kd: f32,
}

impl Commander {
    pub fn new() -> Self {
        Commander { next_seq: [1; 3], kp: DEFAULT_KP, kd: DEFAULT_KD }
    }

    pub fn packet(&mut self, channel: Channel, normalized: &[f64]) -> Result<Vec<u8>, CodecError> {
        let seq = self.next_seq[channel.index()];
        self.next_seq[channel.index()] = seq.wrapping_add(1);
        encode_packet(&JointCommandPacket {
            channel,
            seq,
            normalized: normalized.iter().map(|v| *v as f32).collect(),
            kp: self.kp,
            kd: self.kd,
        })
    }

    /// Uniform closure command for a hand.
    pub fn hand(&mut self, channel: Channel, closure: f64) -> Result<Vec<u8>, CodecError> {
        self.packet(channel, &[closure; HAND_JOINTS])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub position: f64,
    pub velocity: f64,
    pub target: f64,
    pub kp: f64,
    pub kd: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

/// A graspable object resting in the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: String,
    pub spec: ObjectSpec,
    /// Centroid pose in the world frame.
    pub pose: Pose,
    pub rest_pose: Pose,
    /// Tool-frame pose of the object while attached.
    pub grip: Option<Pose>,
}

impl SceneObject {
    pub fn new(id: impl Into<String>, spec: ObjectSpec, pose: Pose) -> Self {
        SceneObject { id: id.into(), spec, pose, rest_pose: pose, grip: None }
    }

    pub fn attached(&self) -> bool {
        self.grip.is_some()
    }

    /// Whether `palm` is within the capture radius of the symmetry axis,
    /// inside the object's height span.
    pub fn captures(&self, palm: &Vec3) -> bool {
        let axis = self.pose.orientation.rotate(&Vec3::y());
        let d = palm - self.pose.position;
        let along = d.dot(&axis);
        let radial = (d - axis * along).norm();
        radial <= CAPTURE_RADIUS && along.abs() <= 0.5 * self.spec.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub time: f64,
    pub joints: Vec<JointState>,
    pub gripper_closure: f64,
    pub gripper_target: f64,
    pub left_hand: Vec<f64>,
    pub right_hand: Vec<f64>,
    pub object: Option<SceneObject>,
}

impl RobotState {
    pub fn new(chain: &KinematicChain, object: Option<SceneObject>) -> Self {
        let joints = chain
            .joints
            .iter()
            .zip(&chain.rest.0)
            .map(|(j, q)| JointState {
                position: *q,
                velocity: 0.0,
                target: *q,
                kp: f64::from(DEFAULT_KP),
                kd: f64::from(DEFAULT_KD),
                theta_min: j.theta_min,
                theta_max: j.theta_max,
            })
            .collect();
        RobotState {
            time: 0.0,
            joints,
            gripper_closure: 0.0,
            gripper_target: 0.0,
            left_hand: vec![0.0; HAND_JOINTS],
            right_hand: vec![0.0; HAND_JOINTS],
            object,
        }
    }

    pub fn positions(&self) -> JointVector {
        JointVector(self.joints.iter().map(|j| j.position).collect())
    }

    pub fn apply(&mut self, cmd: &ChannelCommand) {
        match cmd.channel {
            Channel::Arm => {
                for (j, t) in self.joints.iter_mut().zip(&cmd.targets) {
                    j.target = t.clamp(j.theta_min, j.theta_max);
                    j.kp = cmd.kp;
                    j.kd = cmd.kd;
                }
            }
            Channel::LeftHand => self.left_hand = cmd.targets.clone(),
            Channel::RightHand => {
                let lim = hand_limits();
                let closure: f64 =
                    cmd.targets.iter().zip(&lim).map(|(t, (lo, hi))| (t - lo) / (hi - lo)).sum::<f64>() / cmd.targets.len().max(1) as f64;
                self.gripper_target = closure.clamp(0.0, 1.0);
                self.right_hand = cmd.targets.clone();
            }
        }
    }

    /// Joint speed and limit containment.
    pub fn safe(&self) -> bool {
        self.joints.iter().all(|j| j.velocity.abs() <= VELOCITY_LIMIT && (j.theta_min..=j.theta_max).contains(&j.position))
    }
}

/// Advances the robot by `dt`, in equal substeps no longer than [`SUBSTEP`].
pub fn robot_step(chain: &KinematicChain, state: &RobotState, dt: f64) -> RobotState {
    let mut s = state.clone();
    let n = (dt / SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    for _ in 0..n {
        substep(chain, &mut s, h);
    }
    s
}

fn substep(chain: &KinematicChain, s: &mut RobotState, h: f64) {
    for j in &mut s.joints {
        let a = j.kp * (j.target - j.position) - j.kd * j.velocity;
        j.velocity = (j.velocity + a * h).clamp(-VELOCITY_LIMIT, VELOCITY_LIMIT);
        j.position += j.velocity * h;
        if j.position < j.theta_min || j.position > j.theta_max {
            j.position = j.position.clamp(j.theta_min, j.theta_max);
            j.velocity = 0.0;
        }
    }
    let before = s.gripper_closure;
    let step = GRIPPER_SLEW * h;
    s.gripper_closure += (s.gripper_target - s.gripper_closure).clamp(-step, step);
    s.time += h;

    if s.object.is_none() {
        return;
    }
    let tool = forward_kinematics(chain, &s.positions()).expect("state matches chain");
    let Some(obj) = s.object.as_mut() else { return };
    match obj.grip {
        None if before < ATTACH_CLOSURE && s.gripper_closure >= ATTACH_CLOSURE && obj.captures(&tool.position) => {
            obj.grip = Some(tool.inverse().compose(&obj.pose));
        }
        Some(_) if s.gripper_closure < ATTACH_CLOSURE => {
            obj.grip = None;
            obj.pose.position.z = obj.rest_pose.position.z;
        }
        _ => {}
    }
    if let Some(grip) = obj.grip {
        obj.pose = tool.compose(&grip);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub time: f64,
    pub stage: Option<StageName>,
    pub attached: bool,
    pub object_z: f64,
    pub gripper_closure: f64,
    pub tool_position: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraspTrace {
    pub object_rest_z: f64,
    pub samples: Vec<TraceSample>,
    /// Substeps that broke the speed or limit envelope.
    pub safety_violations: u64,
    pub substeps: u64,
    pub max_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspOutcome {
    pub success: bool,
    pub lift_height: f64,
}

/// Success iff the object was attached during `Lift` and rose more than
/// [`LIFT_SUCCESS`] above rest before `Release`.
pub fn grasp_outcome(trace: &GraspTrace) -> GraspOutcome {
    let before_release = trace.samples.iter().take_while(|s| s.stage != Some(StageName::Release));
    let lift_height = before_release.map(|s| s.object_z - trace.object_rest_z).fold(0.0, f64::max);
    let attached_in_lift = trace.samples.iter().any(|s| s.stage == Some(StageName::Lift) && s.attached);
    GraspOutcome { success: attached_in_lift && lift_height > LIFT_SUCCESS, lift_height }
}

/// Robot state plus envelope bookkeeping at substep resolution.
#[derive(Debug, Clone)]
pub struct RobotSim {
    pub chain: KinematicChain,
    pub state: RobotState,
    pub safety_violations: u64,
    pub substeps: u64,
    pub max_speed: f64,
}

impl RobotSim {
    pub fn new(chain: KinematicChain, object: Option<SceneObject>) -> Self {
        let state = RobotState::new(&chain, object);
        RobotSim { chain, state, safety_violations: 0, substeps: 0, max_speed: 0.0 }
    }

    pub fn step(&mut self, dt: f64) {
        let n = (dt / SUBSTEP).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            substep(&self.chain, &mut self.state, h);
            self.substeps += 1;
            for j in &self.state.joints {
                self.max_speed = self.max_speed.max(j.velocity.abs());
            }
            if !self.state.safe() {
                self.safety_violations += 1;
            }
        }
    }

    pub fn tool_pose(&self) -> Pose {
        forward_kinematics(&self.chain, &self.state.positions()).expect("state matches chain")
    }

    pub fn sample(&self, stage: Option<StageName>) -> TraceSample {
        trace_sample(&self.chain, &self.state, stage)
    }
}

pub fn trace_sample(chain: &KinematicChain, state: &RobotState, stage: Option<StageName>) -> TraceSample {
    TraceSample {
        time: state.time,
        stage,
        attached: state.object.as_ref().is_some_and(SceneObject::attached),
        object_z: state.object.as_ref().map_or(0.0, |o| o.pose.position.z),
        gripper_closure: state.gripper_closure,
        tool_position: forward_kinematics(chain, &state.positions()).expect("state matches chain").position,
    }
}

/// Latest command per channel, replaced atomically by the receive loop and
/// read by the stepping loop.
#[derive(Debug, Clone, Default)]
pub struct TargetTable(Arc<Mutex<[Option<Arc<ChannelCommand>>; 3]>>);

impl TargetTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn replace(&self, cmd: ChannelCommand) {
        let i = cmd.channel.index();
        self.0.lock().expect("target table poisoned")[i] = Some(Arc::new(cmd));
    }

    pub fn snapshot(&self) -> [Option<Arc<ChannelCommand>>; 3] {
        self.0.lock().expect("target table poisoned").clone()
    }
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("socket: {0}")]
    Io(#[from] std::io::Error),
}

pub struct BridgeHandle {
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
    thread: Option<JoinHandle<BridgeStats>>,
}

impl BridgeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the receive loop and returns its counters.
    pub fn stop(mut self) -> BridgeStats {
        self.stop.store(true, Ordering::SeqCst);
        self.thread.take().and_then(|t| t.join().ok()).unwrap_or_default()
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Receives datagrams on `socket` and publishes accepted commands to `table`.
pub fn bridge_loop(socket: UdpSocket, limits: LimitTable, table: TargetTable) -> Result<BridgeHandle, BridgeError> {
    socket.set_read_timeout(Some(Duration::from_millis(20)))?;
    let addr = socket.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::Builder::new().name("bridge".into()).spawn(move || {
        let mut bridge = Bridge::new(limits);
        let mut buf = [0u8; 2048];
        while !flag.load(Ordering::SeqCst) {
            match socket.recv_from(&mut buf) {
                Ok((n, _)) => match bridge.handle(&buf[..n]) {
                    Ok(cmd) => table.replace(cmd),
                    Err(e) => log::debug!("bridge drop: {e}"),
                },
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(e) => log::warn!("bridge recv: {e}"),
            }
        }
        let s = bridge.stats();
        log::info!("bridge stopped: applied {} stale {} malformed {}", s.applied, s.dropped_stale, s.malformed);
        s
    })?;
    Ok(BridgeHandle { stop, addr, thread: Some(thread) })
}

pub fn bind_bridge(addr: &str, limits: LimitTable, table: TargetTable) -> Result<BridgeHandle, BridgeError> {
    let socket = UdpSocket::bind(addr).map_err(|source| BridgeError::Bind { addr: addr.to_string(), source })?;
    bridge_loop(socket, limits, table)
}

#[derive(Clone)]
pub struct RobotWatch(Arc<Mutex<Option<RobotState>>>);

impl RobotWatch {
    pub fn state(&self) -> Option<RobotState> {
        self.0.lock().expect("robot state poisoned").clone()
    }
}

pub struct RobotHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<RobotSim>>,
    shared: Arc<Mutex<Option<RobotState>>>,
}

impl RobotHandle {
    /// Most recent state published by the stepping loop.
    pub fn state(&self) -> Option<RobotState> {
        self.shared.lock().expect("robot state poisoned").clone()
    }

    /// Reader for the published state, usable from other threads.
    pub fn watch(&self) -> RobotWatch {
        RobotWatch(self.shared.clone())
    }

    pub fn stop(mut self) -> Option<RobotSim> {
        self.stop.store(true, Ordering::SeqCst);
        self.thread.take().and_then(|t| t.join().ok())
    }
}

impl Drop for RobotHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Steps `sim` in real time at `rate_hz`, applying the newest command per
/// channel before every step.
pub fn robot_loop(mut sim: RobotSim, table: TargetTable, rate_hz: f64) -> std::io::Result<RobotHandle> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let shared = Arc::new(Mutex::new(Some(sim.state.clone())));
    let out = shared.clone();
    let period = Duration::from_secs_f64(1.0 / rate_hz);
    let thread = std::thread::Builder::new().name("robot".into()).spawn(move || {
        let mut applied = [0u32; 3];
        let start = Instant::now();
        let mut tick: u32 = 0;
        while !flag.load(Ordering::SeqCst) {
            for cmd in table.snapshot().iter().flatten() {
                let i = cmd.channel.index();
                if cmd.seq != applied[i] {
                    sim.state.apply(cmd);
                    applied[i] = cmd.seq;
                }
            }
            sim.step(period.as_secs_f64());
            *out.lock().expect("robot state poisoned") = Some(sim.state.clone());
            tick += 1;
            if let Some(wait) = (start + period * tick).checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        sim
    })?;
    Ok(RobotHandle { stop, thread: Some(thread), shared })
}
