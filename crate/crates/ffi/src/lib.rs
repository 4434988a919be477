//! C ABI over `manip-core`.
//!
//! Every fallible function returns a [`ManipStatus`] and writes results
//! through caller-provided out-pointers. Handles are opaque and must be
//! released with their matching `*_free` function.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use manip_core::bridge::{self, Bridge, Channel, CodecError, JointCommandPacket, LimitTable, RobotSim};
use manip_core::harness::{pipeline_scenario, Perception, Rig};
use manip_core::planner::{self, JointVector, KinematicChain, PlanError};
use manip_core::se3::{self, Pose, Quat, Vec3};
use manip_core::sim::ObjectSpec;
use manip_core::stream;
use manip_core::tracker::Phase;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManipStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    BadMagic = 4,
    UnsupportedVersion = 5,
    LengthMismatch = 6,
    BadChannel = 7,
    NonFinite = 8,
    TooManyJoints = 9,
    Rejected = 10,
    Unreachable = 11,
    ParseError = 12,
    NotFound = 13,
    Panic = 14,
}

/// Tracker phase as reported by [`manip_perception_frame`] and
/// [`manip_report_object`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManipPhase {
    Uninitialized = 0,
    Tracking = 1,
    Lost = 2,
}

impl From<Phase> for ManipPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Uninitialized => ManipPhase::Uninitialized,
            Phase::Tracking => ManipPhase::Tracking,
            Phase::Lost => ManipPhase::Lost,
        }
    }
}

/// Position in meters, unit quaternion stored `w, x, y, z`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipPose {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
}

impl From<Pose> for ManipPose {
    fn from(p: Pose) -> Self {
        let [qw, qx, qy, qz] = p.orientation.to_array();
        ManipPose { px: p.position.x, py: p.position.y, pz: p.position.z, qw, qx, qy, qz }
    }
}

impl ManipPose {
    fn to_pose(self) -> Result<Pose, ManipStatus> {
        let v = [self.px, self.py, self.pz, self.qw, self.qx, self.qy, self.qz];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ManipStatus::NonFinite);
        }
        let n = (self.qw * self.qw + self.qx * self.qx + self.qy * self.qy + self.qz * self.qz).sqrt();
        if n < 1e-9 {
            return Err(ManipStatus::InvalidArgument);
        }
        Ok(Pose::new(Vec3::new(self.px, self.py, self.pz), Quat::new(self.qw, self.qx, self.qy, self.qz)))
    }
}

/// Kinematic chain handle.
pub struct ManipChain(KinematicChain);

/// Simulated robot behind a command bridge.
pub struct ManipRobot {
    bridge: Bridge,
    sim: RobotSim,
}

/// Simulated camera, detector and tracker for one object.
pub struct ManipPerception {
    inner: Perception,
    rig: Rig,
}

fn guard(f: impl FnOnce() -> Result<(), ManipStatus>) -> ManipStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ManipStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => ManipStatus::Panic,
    }
}

fn out<'a, T>(p: *mut T) -> Result<&'a mut T, ManipStatus> {
    unsafe { p.as_mut() }.ok_or(ManipStatus::NullPointer)
}

fn input<'a, T>(p: *const T) -> Result<&'a T, ManipStatus> {
    unsafe { p.as_ref() }.ok_or(ManipStatus::NullPointer)
}

fn slice_in<'a, T>(p: *const T, n: usize) -> Result<&'a [T], ManipStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(ManipStatus::NullPointer);
    }
    Ok(unsafe { slice::from_raw_parts(p, n) })
}

fn slice_out<'a, T>(p: *mut T, n: usize) -> Result<&'a mut [T], ManipStatus> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(ManipStatus::NullPointer);
    }
    Ok(unsafe { slice::from_raw_parts_mut(p, n) })
}

impl From<CodecError> for ManipStatus {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::BadMagic(_) => ManipStatus::BadMagic,
            CodecError::UnsupportedVersion(_) => ManipStatus::UnsupportedVersion,
            CodecError::LengthMismatch { .. } => ManipStatus::LengthMismatch,
            CodecError::BadChannel(_) => ManipStatus::BadChannel,
            CodecError::NonFinite(_) => ManipStatus::NonFinite,
            CodecError::TooManyJoints(_) => ManipStatus::TooManyJoints,
        }
    }
}

impl From<PlanError> for ManipStatus {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::WrongLength { .. } => ManipStatus::InvalidArgument,
            PlanError::Unreachable { .. } | PlanError::WaypointUnreachable { .. } => ManipStatus::Unreachable,
            PlanError::Parse { .. } => ManipStatus::ParseError,
            _ => ManipStatus::InvalidArgument,
        }
    }
}

/// Static, NUL-terminated description of `status`.
#[no_mangle]
pub extern "C" fn manip_status_str(status: ManipStatus) -> *const c_char {
    let s: &'static CStr = match status {
        ManipStatus::Ok => c"ok",
        ManipStatus::NullPointer => c"null pointer",
        ManipStatus::InvalidArgument => c"invalid argument",
        ManipStatus::BufferTooSmall => c"buffer too small",
        ManipStatus::BadMagic => c"bad magic",
        ManipStatus::UnsupportedVersion => c"unsupported version",
        ManipStatus::LengthMismatch => c"length mismatch",
        ManipStatus::BadChannel => c"bad channel",
        ManipStatus::NonFinite => c"non-finite value",
        ManipStatus::TooManyJoints => c"too many joints",
        ManipStatus::Rejected => c"command rejected",
        ManipStatus::Unreachable => c"target unreachable",
        ManipStatus::ParseError => c"parse error",
        ManipStatus::NotFound => c"not found",
        ManipStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Rotation angle between the orientations of `a` and `b`, degrees.
///
/// # Safety
/// `a`, `b` and `out_deg` must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn manip_geodesic_deg(a: *const ManipPose, b: *const ManipPose, out_deg: *mut f64) -> ManipStatus {
    guard(|| {
        let a = input(a)?.to_pose()?;
        let b = input(b)?.to_pose()?;
        *out(out_deg)? = se3::geodesic_deg(&a.orientation, &b.orientation);
        Ok(())
    })
}

/// `out = a ∘ b`.
///
/// # Safety
/// All pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn manip_pose_compose(a: *const ManipPose, b: *const ManipPose, out_pose: *mut ManipPose) -> ManipStatus {
    guard(|| {
        let a = input(a)?.to_pose()?;
        let b = input(b)?.to_pose()?;
        *out(out_pose)? = a.compose(&b).into();
        Ok(())
    })
}

/// # Safety
/// All pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn manip_pose_inverse(p: *const ManipPose, out_pose: *mut ManipPose) -> ManipStatus {
    guard(|| {
        *out(out_pose)? = input(p)?.to_pose()?.inverse().into();
        Ok(())
    })
}

/// Size of an encoded packet carrying `n_joints` values.
#[no_mangle]
pub extern "C" fn manip_packet_size(n_joints: usize) -> usize {
    bridge::HEADER_LEN + 4 * n_joints
}

/// Encodes a joint-command datagram into `buf`. Values are clamped to
/// `[0, 1]`.
///
/// # Safety
/// `values` must hold `n` floats; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn manip_packet_encode(
    channel: u8,
    seq: u32,
    values: *const f32,
    n: usize,
    kp: f32,
    kd: f32,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> ManipStatus {
    guard(|| {
        let channel = Channel::from_u8(channel).ok_or(ManipStatus::BadChannel)?;
        let packet = JointCommandPacket { channel, seq, normalized: slice_in(values, n)?.to_vec(), kp, kd };
        let bytes = bridge::encode_packet(&packet)?;
        let len = out(out_len)?;
        *len = bytes.len();
        if cap < bytes.len() {
            return Err(ManipStatus::BufferTooSmall);
        }
        slice_out(buf, bytes.len())?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// Decodes a datagram. `*out_n` receives the joint count; when it exceeds
/// `cap` the values are not written and `BufferTooSmall` is returned.
///
/// # Safety
/// `buf` must hold `len` bytes; `values` must hold `cap` floats; scalar
/// out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn manip_packet_decode(
    buf: *const u8,
    len: usize,
    out_channel: *mut u8,
    out_seq: *mut u32,
    values: *mut f32,
    cap: usize,
    out_n: *mut usize,
    out_kp: *mut f32,
    out_kd: *mut f32,
) -> ManipStatus {
    guard(|| {
        let p = bridge::decode_packet(slice_in(buf, len)?)?;
        *out(out_n)? = p.normalized.len();
        if p.normalized.len() > cap {
            return Err(ManipStatus::BufferTooSmall);
        }
        slice_out(values, p.normalized.len())?.copy_from_slice(&p.normalized);
        *out(out_channel)? = p.channel as u8;
        *out(out_seq)? = p.seq;
        *out(out_kp)? = p.kp;
        *out(out_kd)? = p.kd;
        Ok(())
    })
}

/// The default seven-joint right arm.
#[no_mangle]
pub extern "C" fn manip_chain_right_arm() -> *mut ManipChain {
    Box::into_raw(Box::new(ManipChain(KinematicChain::right_arm())))
}

/// Loads a chain from its text format. Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated string or null.
#[no_mangle]
pub unsafe extern "C" fn manip_chain_load(path: *const c_char) -> *mut ManipChain {
    if path.is_null() {
        return std::ptr::null_mut();
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        return std::ptr::null_mut();
    };
    match catch_unwind(|| KinematicChain::load(std::path::Path::new(path))) {
        Ok(Ok(c)) => Box::into_raw(Box::new(ManipChain(c))),
        _ => std::ptr::null_mut(),
    }
}

/// # Safety
/// `chain` must come from a `manip_chain_*` constructor and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn manip_chain_free(chain: *mut ManipChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of joints, or 0 for a null handle.
///
/// # Safety
/// `chain` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn manip_chain_dof(chain: *const ManipChain) -> usize {
    chain.as_ref().map_or(0, |c| c.0.dof())
}

fn joints<'a>(chain: &KinematicChain, p: *const f64, n: usize) -> Result<&'a [f64], ManipStatus> {
    if n != chain.dof() {
        return Err(ManipStatus::InvalidArgument);
    }
    slice_in(p, n)
}

/// Maps joint angles to `[0, 1]` by joint limits.
///
/// # Safety
/// `theta` and `out_u` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn manip_chain_normalize(chain: *const ManipChain, theta: *const f64, n: usize, out_u: *mut f64) -> ManipStatus {
    guard(|| {
        let c = &input(chain)?.0;
        let theta = JointVector(joints(c, theta, n)?.to_vec());
        slice_out(out_u, n)?.copy_from_slice(&planner::normalize_joints(&theta, c));
        Ok(())
    })
}

/// Inverse of [`manip_chain_normalize`]; inputs are clamped to `[0, 1]`.
///
/// # Safety
/// `u` and `out_theta` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn manip_chain_denormalize(chain: *const ManipChain, u: *const f64, n: usize, out_theta: *mut f64) -> ManipStatus {
    guard(|| {
        let c = &input(chain)?.0;
        let u = joints(c, u, n)?;
        slice_out(out_theta, n)?.copy_from_slice(&bridge::denormalize(u, &c.limits()).0);
        Ok(())
    })
}

/// Tool pose in the world frame.
///
/// # Safety
/// `theta` must hold `n` doubles; `out_pose` must be valid.
#[no_mangle]
pub unsafe extern "C" fn manip_chain_fk(chain: *const ManipChain, theta: *const f64, n: usize, out_pose: *mut ManipPose) -> ManipStatus {
    guard(|| {
        let c = &input(chain)?.0;
        let theta = JointVector(joints(c, theta, n)?.to_vec());
        *out(out_pose)? = planner::forward_kinematics(c, &theta)?.into();
        Ok(())
    })
}

/// Damped least-squares IK from `seed`. On `Unreachable` the closest
/// configuration found is still written to `out_theta`.
///
/// # Safety
/// `seed` and `out_theta` must hold `n` doubles; `target` must be valid.
#[no_mangle]
pub unsafe extern "C" fn manip_chain_ik(
    chain: *const ManipChain,
    target: *const ManipPose,
    seed: *const f64,
    n: usize,
    out_theta: *mut f64,
) -> ManipStatus {
    guard(|| {
        let c = &input(chain)?.0;
        let target = input(target)?.to_pose()?;
        let seed = JointVector(joints(c, seed, n)?.to_vec());
        let dst = slice_out(out_theta, n)?;
        match planner::ik_solve(c, &target, &seed) {
            Ok(sol) => {
                dst.copy_from_slice(&sol.0);
                Ok(())
            }
            Err(PlanError::Unreachable { best, .. }) => {
                dst.copy_from_slice(&best.0);
                Err(ManipStatus::Unreachable)
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Robot at the chain's rest pose with no scene object.
///
/// # Safety
/// `chain` must be a live handle or null; the robot keeps its own copy.
#[no_mangle]
pub unsafe extern "C" fn manip_robot_new(chain: *const ManipChain) -> *mut ManipRobot {
    let Some(c) = chain.as_ref() else {
        return std::ptr::null_mut();
    };
    let chain = c.0.clone();
    let bridge = Bridge::new(LimitTable::for_chain(&chain));
    Box::into_raw(Box::new(ManipRobot { bridge, sim: RobotSim::new(chain, None) }))
}

/// # Safety
/// `robot` must come from [`manip_robot_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn manip_robot_free(robot: *mut ManipRobot) {
    if !robot.is_null() {
        drop(Box::from_raw(robot));
    }
}

/// Passes a datagram through the bridge. Malformed, stale and wrong-size
/// packets return `Rejected` and leave the targets unchanged.
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn manip_robot_command(robot: *mut ManipRobot, buf: *const u8, len: usize) -> ManipStatus {
    guard(|| {
        let r = out(robot)?;
        let cmd = r.bridge.handle(slice_in(buf, len)?).map_err(|_| ManipStatus::Rejected)?;
        r.sim.state.apply(&cmd);
        Ok(())
    })
}

/// Advances the simulation by `dt` seconds.
///
/// # Safety
/// `robot` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn manip_robot_step(robot: *mut ManipRobot, dt: f64) -> ManipStatus {
    guard(|| {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(ManipStatus::InvalidArgument);
        }
        out(robot)?.sim.step(dt);
        Ok(())
    })
}

/// Current arm joint positions.
///
/// # Safety
/// `out_theta` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn manip_robot_positions(robot: *const ManipRobot, out_theta: *mut f64, n: usize) -> ManipStatus {
    guard(|| {
        let r = input(robot)?;
        let pos = r.sim.state.positions();
        if n != pos.0.len() {
            return Err(ManipStatus::InvalidArgument);
        }
        slice_out(out_theta, n)?.copy_from_slice(&pos.0);
        Ok(())
    })
}

/// Safety-envelope violations counted so far.
///
/// # Safety
/// `robot` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn manip_robot_violations(robot: *const ManipRobot) -> u64 {
    robot.as_ref().map_or(0, |r| r.sim.safety_violations)
}

/// Simulated camera and tracker observing a bottle, with the default
/// camera rig. `seed` fixes the noise stream.
#[no_mangle]
pub extern "C" fn manip_perception_new(seed: u64) -> *mut ManipPerception {
    let rig = Rig::default();
    match catch_unwind(|| Perception::new(pipeline_scenario(seed), ObjectSpec::bottle(), "bottle-0", rig)) {
        Ok(Ok(inner)) => Box::into_raw(Box::new(ManipPerception { inner, rig })),
        _ => std::ptr::null_mut(),
    }
}

/// # Safety
/// `p` must come from [`manip_perception_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn manip_perception_free(p: *mut ManipPerception) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Observes the object at world pose `object_world` for frame `frame`.
/// `*out_phase` is always written; `*out_world` only while tracking, with
/// `*out_has_pose` telling which.
///
/// # Safety
/// All pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn manip_perception_frame(
    p: *mut ManipPerception,
    frame: u64,
    object_world: *const ManipPose,
    out_phase: *mut ManipPhase,
    out_has_pose: *mut bool,
    out_world: *mut ManipPose,
) -> ManipStatus {
    guard(|| {
        let p = out(p)?;
        let world = input(object_world)?.to_pose()?;
        let report = p.inner.frame(frame, frame as f64 / 30.0, &world).map_err(|_| ManipStatus::InvalidArgument)?;
        let track = &report.objects[0];
        *out(out_phase)? = track.state.into();
        let has = out(out_has_pose)?;
        *has = track.pose.is_some();
        if let Some(cam) = track.pose {
            *out(out_world)? = p.rig.to_world(&cam).into();
        }
        Ok(())
    })
}

/// Finds object `id` in a serialized pose report.
///
/// # Safety
/// `buf` must hold `len` bytes; `id` must be NUL-terminated; out-pointers
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn manip_report_object(
    buf: *const u8,
    len: usize,
    id: *const c_char,
    out_phase: *mut ManipPhase,
    out_has_pose: *mut bool,
    out_pose: *mut ManipPose,
) -> ManipStatus {
    guard(|| {
        if id.is_null() {
            return Err(ManipStatus::NullPointer);
        }
        let id = CStr::from_ptr(id).to_str().map_err(|_| ManipStatus::InvalidArgument)?;
        let report = stream::parse_report(slice_in(buf, len)?).map_err(|_| ManipStatus::ParseError)?;
        let track = report.object(id).ok_or(ManipStatus::NotFound)?;
        *out(out_phase)? = track.state.into();
        *out(out_has_pose)? = track.pose.is_some();
        if let Some(p) = track.pose {
            *out(out_pose)? = p.into();
        }
        Ok(())
    })
}
