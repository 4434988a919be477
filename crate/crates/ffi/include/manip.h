#ifndef MANIP_H
#define MANIP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum ManipStatus {
  MANIP_STATUS_OK = 0,
  MANIP_STATUS_NULL_POINTER = 1,
  MANIP_STATUS_INVALID_ARGUMENT = 2,
  MANIP_STATUS_BUFFER_TOO_SMALL = 3,
  MANIP_STATUS_BAD_MAGIC = 4,
  MANIP_STATUS_UNSUPPORTED_VERSION = 5,
  MANIP_STATUS_LENGTH_MISMATCH = 6,
  MANIP_STATUS_BAD_CHANNEL = 7,
  MANIP_STATUS_NON_FINITE = 8,
  MANIP_STATUS_TOO_MANY_JOINTS = 9,
  MANIP_STATUS_REJECTED = 10,
  MANIP_STATUS_UNREACHABLE = 11,
  MANIP_STATUS_PARSE_ERROR = 12,
  MANIP_STATUS_NOT_FOUND = 13,
  MANIP_STATUS_PANIC = 14,
} ManipStatus;

// Tracker phase as reported by [`manip_perception_frame`] and
// [`manip_report_object`].
typedef enum ManipPhase {
  MANIP_PHASE_UNINITIALIZED = 0,
  MANIP_PHASE_TRACKING = 1,
  MANIP_PHASE_LOST = 2,
} ManipPhase;

// Kinematic chain handle.
typedef struct ManipChain ManipChain;

// Simulated camera, detector and tracker for one object.
typedef struct ManipPerception ManipPerception;

// Simulated robot behind a command bridge.
typedef struct ManipRobot ManipRobot;

// Position in meters, unit quaternion stored `w, x, y, z`.
typedef struct ManipPose {
  double px;
  double py;
  double pz;
  double qw;
  double qx;
  double qy;
  double qz;
} ManipPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static, NUL-terminated description of `status`.
const char *manip_status_str(enum ManipStatus status);

// Rotation angle between the orientations of `a` and `b`, degrees.
//
// # Safety
// `a`, `b` and `out_deg` must be valid pointers or null.
enum ManipStatus manip_geodesic_deg(const struct ManipPose *a,
                                    const struct ManipPose *b,
                                    double *out_deg);

// `out = a ∘ b`.
//
// # Safety
// All pointers must be valid or null.
enum ManipStatus manip_pose_compose(const struct ManipPose *a,
                                    const struct ManipPose *b,
                                    struct ManipPose *out_pose);

// # Safety
// All pointers must be valid or null.
enum ManipStatus manip_pose_inverse(const struct ManipPose *p, struct ManipPose *out_pose);

// Size of an encoded packet carrying `n_joints` values.
size_t manip_packet_size(size_t n_joints);

// Encodes a joint-command datagram into `buf`. Values are clamped to
// `[0, 1]`.
//
// # Safety
// `values` must hold `n` floats; `buf` must hold `cap` bytes.
enum ManipStatus manip_packet_encode(uint8_t channel,
                                     uint32_t seq,
                                     const float *values,
                                     size_t n,
                                     float kp,
                                     float kd,
                                     uint8_t *buf,
                                     size_t cap,
                                     size_t *out_len);

// Decodes a datagram. `*out_n` receives the joint count; when it exceeds
// `cap` the values are not written and `BufferTooSmall` is returned.
//
// # Safety
// `buf` must hold `len` bytes; `values` must hold `cap` floats; scalar
// out-pointers must be valid.
enum ManipStatus manip_packet_decode(const uint8_t *buf,
                                     size_t len,
                                     uint8_t *out_channel,
                                     uint32_t *out_seq,
                                     float *values,
                                     size_t cap,
                                     size_t *out_n,
                                     float *out_kp,
                                     float *out_kd);

// The default seven-joint right arm.
struct ManipChain *manip_chain_right_arm(void);

// Loads a chain from its text format. Returns null on failure.
//
// # Safety
// `path` must be a NUL-terminated string or null.
struct ManipChain *manip_chain_load(const char *path);

// # Safety
// `chain` must come from a `manip_chain_*` constructor and not be freed yet.
void manip_chain_free(struct ManipChain *chain);

// Number of joints, or 0 for a null handle.
//
// # Safety
// `chain` must be a live handle or null.
size_t manip_chain_dof(const struct ManipChain *chain);

// Maps joint angles to `[0, 1]` by joint limits.
//
// # Safety
// `theta` and `out_u` must each hold `n` doubles.
enum ManipStatus manip_chain_normalize(const struct ManipChain *chain,
                                       const double *theta,
                                       size_t n,
                                       double *out_u);

// Inverse of [`manip_chain_normalize`]; inputs are clamped to `[0, 1]`.
//
// # Safety
// `u` and `out_theta` must each hold `n` doubles.
enum ManipStatus manip_chain_denormalize(const struct ManipChain *chain,
                                         const double *u,
                                         size_t n,
                                         double *out_theta);

// Tool pose in the world frame.
//
// # Safety
// `theta` must hold `n` doubles; `out_pose` must be valid.
enum ManipStatus manip_chain_fk(const struct ManipChain *chain,
                                const double *theta,
                                size_t n,
                                struct ManipPose *out_pose);

// Damped least-squares IK from `seed`. On `Unreachable` the closest
// configuration found is still written to `out_theta`.
//
// # Safety
// `seed` and `out_theta` must hold `n` doubles; `target` must be valid.
enum ManipStatus manip_chain_ik(const struct ManipChain *chain,
                                const struct ManipPose *target,
                                const double *seed,
                                size_t n,
                                double *out_theta);

// Robot at the chain's rest pose with no scene object.
//
// # Safety
// `chain` must be a live handle or null; the robot keeps its own copy.
struct ManipRobot *manip_robot_new(const struct ManipChain *chain);

// # Safety
// `robot` must come from [`manip_robot_new`] and not be freed yet.
void manip_robot_free(struct ManipRobot *robot);

// Passes a datagram through the bridge. Malformed, stale and wrong-size
// packets return `Rejected` and leave the targets unchanged.
//
// # Safety
// `buf` must hold `len` bytes.
enum ManipStatus manip_robot_command(struct ManipRobot *robot, const uint8_t *buf, size_t len);

// Advances the simulation by `dt` seconds.
//
// # Safety
// `robot` must be a live handle or null.
enum ManipStatus manip_robot_step(struct ManipRobot *robot, double dt);

// Current arm joint positions.
//
// # Safety
// `out_theta` must hold `n` doubles.
enum ManipStatus manip_robot_positions(const struct ManipRobot *robot, double *out_theta, size_t n);

// Safety-envelope violations counted so far.
//
// # Safety
// `robot` must be a live handle or null.
uint64_t manip_robot_violations(const struct ManipRobot *robot);

// Simulated camera and tracker observing a bottle, with the default
// camera rig. `seed` fixes the noise stream.
struct ManipPerception *manip_perception_new(uint64_t seed);

// # Safety
// `p` must come from [`manip_perception_new`] and not be freed yet.
void manip_perception_free(struct ManipPerception *p);

// Observes the object at world pose `object_world` for frame `frame`.
// `*out_phase` is always written; `*out_world` only while tracking, with
// `*out_has_pose` telling which.
//
// # Safety
// All pointers must be valid or null.
enum ManipStatus manip_perception_frame(struct ManipPerception *p,
                                        uint64_t frame,
                                        const struct ManipPose *object_world,
                                        enum ManipPhase *out_phase,
                                        bool *out_has_pose,
                                        struct ManipPose *out_world);

// Finds object `id` in a serialized pose report.
//
// # Safety
// `buf` must hold `len` bytes; `id` must be NUL-terminated; out-pointers
// must be valid.
enum ManipStatus manip_report_object(const uint8_t *buf,
                                     size_t len,
                                     const char *id,
                                     enum ManipPhase *out_phase,
                                     bool *out_has_pose,
                                     struct ManipPose *out_pose);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANIP_H */
