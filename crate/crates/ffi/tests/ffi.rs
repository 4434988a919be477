use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use manip_ffi::*;

fn pose(p: [f64; 3], q: [f64; 4]) -> ManipPose {
    ManipPose { px: p[0], py: p[1], pz: p[2], qw: q[0], qx: q[1], qy: q[2], qz: q[3] }
}

const IDENTITY: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

#[test]
fn status_strings_are_distinct() {
    let all = [
        ManipStatus::Ok,
        ManipStatus::NullPointer,
        ManipStatus::InvalidArgument,
        ManipStatus::BufferTooSmall,
        ManipStatus::BadMagic,
        ManipStatus::UnsupportedVersion,
        ManipStatus::LengthMismatch,
        ManipStatus::BadChannel,
        ManipStatus::NonFinite,
        ManipStatus::TooManyJoints,
        ManipStatus::Rejected,
        ManipStatus::Unreachable,
        ManipStatus::ParseError,
        ManipStatus::NotFound,
        ManipStatus::Panic,
    ];
    let mut seen = std::collections::HashSet::new();
    for s in all {
        let text = unsafe { CStr::from_ptr(manip_status_str(s)) }.to_str().unwrap();
        assert!(seen.insert(text));
    }
}

#[test]
fn geodesic_of_quarter_turn() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let a = pose([0.0; 3], IDENTITY);
    let b = pose([1.0, 2.0, 3.0], [h, 0.0, 0.0, h]);
    let mut deg = 0.0;
    assert_eq!(unsafe { manip_geodesic_deg(&a, &b, &mut deg) }, ManipStatus::Ok);
    assert!((deg - 90.0).abs() < 1e-9);
    assert_eq!(unsafe { manip_geodesic_deg(ptr::null(), &b, &mut deg) }, ManipStatus::NullPointer);
    let bad = pose([f64::NAN, 0.0, 0.0], IDENTITY);
    assert_eq!(unsafe { manip_geodesic_deg(&bad, &b, &mut deg) }, ManipStatus::NonFinite);
}

#[test]
fn compose_with_inverse_is_identity() {
    let q = [0.9, 0.1, -0.3, 0.2];
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a = pose([0.3, -0.2, 0.5], q.map(|x| x / n));
    let mut inv = pose([0.0; 3], IDENTITY);
    let mut id = inv;
    unsafe {
        assert_eq!(manip_pose_inverse(&a, &mut inv), ManipStatus::Ok);
        assert_eq!(manip_pose_compose(&a, &inv, &mut id), ManipStatus::Ok);
    }
    assert!(id.px.abs() < 1e-12 && id.py.abs() < 1e-12 && id.pz.abs() < 1e-12);
    assert!((id.qw.abs() - 1.0).abs() < 1e-12);
}

#[test]
fn packet_round_trip_and_errors() {
    let values = [0.0f32, 0.25, 0.5, 1.0];
    let mut buf = [0u8; 64];
    let mut len = 0usize;
    let s = unsafe { manip_packet_encode(2, 77, values.as_ptr(), 4, 60.0, 1.5, buf.as_mut_ptr(), buf.len(), &mut len) };
    assert_eq!(s, ManipStatus::Ok);
    assert_eq!(len, manip_packet_size(4));
    assert_eq!(len, 35);

    let (mut ch, mut seq, mut n, mut kp, mut kd) = (0u8, 0u32, 0usize, 0f32, 0f32);
    let mut got = [0f32; 8];
    let s = unsafe { manip_packet_decode(buf.as_ptr(), len, &mut ch, &mut seq, got.as_mut_ptr(), got.len(), &mut n, &mut kp, &mut kd) };
    assert_eq!(s, ManipStatus::Ok);
    assert_eq!((ch, seq, n, kp, kd), (2, 77, 4, 60.0, 1.5));
    assert_eq!(&got[..4], &values);

    let s = unsafe { manip_packet_decode(buf.as_ptr(), len, &mut ch, &mut seq, got.as_mut_ptr(), 2, &mut n, &mut kp, &mut kd) };
    assert_eq!(s, ManipStatus::BufferTooSmall);
    assert_eq!(n, 4);
    let s = unsafe { manip_packet_decode(buf.as_ptr(), len - 1, &mut ch, &mut seq, got.as_mut_ptr(), 8, &mut n, &mut kp, &mut kd) };
    assert_eq!(s, ManipStatus::LengthMismatch);
    buf[0] = b'X';
    let s = unsafe { manip_packet_decode(buf.as_ptr(), len, &mut ch, &mut seq, got.as_mut_ptr(), 8, &mut n, &mut kp, &mut kd) };
    assert_eq!(s, ManipStatus::BadMagic);

    let s = unsafe { manip_packet_encode(9, 1, values.as_ptr(), 4, 60.0, 1.5, buf.as_mut_ptr(), buf.len(), &mut len) };
    assert_eq!(s, ManipStatus::BadChannel);
    let s = unsafe { manip_packet_encode(0, 1, values.as_ptr(), 4, 60.0, 1.5, buf.as_mut_ptr(), 10, &mut len) };
    assert_eq!(s, ManipStatus::BufferTooSmall);
    assert_eq!(len, 35);
}

#[test]
fn chain_fk_ik_and_normalization() {
    let chain = manip_chain_right_arm();
    let n = unsafe { manip_chain_dof(chain) };
    assert_eq!(n, 7);
    let seed = [-1.08, 0.0, 0.0, 1.96, 0.0, 0.69, 0.0];
    let theta = [-1.0, 0.1, 0.2, 1.7, -0.1, 0.5, 0.1];
    let mut target = pose([0.0; 3], IDENTITY);
    let mut sol = [0.0; 7];
    let mut back = [0.0; 7];
    unsafe {
        assert_eq!(manip_chain_fk(chain, theta.as_ptr(), n, &mut target), ManipStatus::Ok);
        assert_eq!(manip_chain_ik(chain, &target, seed.as_ptr(), n, sol.as_mut_ptr()), ManipStatus::Ok);
        let mut reached = target;
        manip_chain_fk(chain, sol.as_ptr(), n, &mut reached);
        let d = ((reached.px - target.px).powi(2) + (reached.py - target.py).powi(2) + (reached.pz - target.pz).powi(2)).sqrt();
        assert!(d < 1e-3);

        let mut u = [0.0; 7];
        assert_eq!(manip_chain_normalize(chain, theta.as_ptr(), n, u.as_mut_ptr()), ManipStatus::Ok);
        assert!(u.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(manip_chain_denormalize(chain, u.as_ptr(), n, back.as_mut_ptr()), ManipStatus::Ok);
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(manip_chain_fk(chain, theta.as_ptr(), 6, &mut target), ManipStatus::InvalidArgument);

        let far = pose([3.0, 0.0, 0.5], IDENTITY);
        assert_eq!(manip_chain_ik(chain, &far, seed.as_ptr(), n, sol.as_mut_ptr()), ManipStatus::Unreachable);
        manip_chain_free(chain);
        manip_chain_free(ptr::null_mut());
    }
}

#[test]
fn chain_load_rejects_missing_file() {
    let path = c"/nonexistent/chain.txt";
    assert!(unsafe { manip_chain_load(path.as_ptr()) }.is_null());
    assert!(unsafe { manip_chain_load(ptr::null()) }.is_null());
}

#[test]
fn robot_follows_commands() {
    let chain = manip_chain_right_arm();
    let robot = unsafe { manip_robot_new(chain) };
    assert!(!robot.is_null());
    let mut theta = [0.0; 7];
    let target = [-0.9, 0.1, 0.0, 1.6, 0.0, 0.4, 0.0];
    let mut u = [0.0; 7];
    unsafe {
        manip_chain_normalize(chain, target.as_ptr(), 7, u.as_mut_ptr());
        let uf = u.map(|x| x as f32);
        let mut buf = [0u8; 64];
        let mut len = 0;
        manip_packet_encode(0, 1, uf.as_ptr(), 7, 60.0, 1.5, buf.as_mut_ptr(), buf.len(), &mut len);
        assert_eq!(manip_robot_command(robot, buf.as_ptr(), len), ManipStatus::Ok);
        assert_eq!(manip_robot_command(robot, buf.as_ptr(), len), ManipStatus::Rejected);
        assert_eq!(manip_robot_command(robot, b"junk".as_ptr(), 4), ManipStatus::Rejected);
        for _ in 0..300 {
            assert_eq!(manip_robot_step(robot, 1.0 / 30.0), ManipStatus::Ok);
        }
        assert_eq!(manip_robot_step(robot, f64::NAN), ManipStatus::InvalidArgument);
        assert_eq!(manip_robot_positions(robot, theta.as_mut_ptr(), 7), ManipStatus::Ok);
        assert_eq!(manip_robot_violations(robot), 0);
        manip_robot_free(robot);
        manip_chain_free(chain);
    }
    for (a, b) in theta.iter().zip(&target) {
        assert!((a - b).abs() < 1e-3, "{theta:?}");
    }
}

#[test]
fn perception_tracks_static_bottle() {
    let p = manip_perception_new(7);
    assert!(!p.is_null());
    let q = std::f64::consts::FRAC_PI_4;
    let world = pose([0.7, 0.0, 0.11], [q.cos(), q.sin(), 0.0, 0.0]);
    let mut phase = ManipPhase::Uninitialized;
    let mut has = false;
    let mut est = world;
    for f in 0..30 {
        assert_eq!(unsafe { manip_perception_frame(p, f, &world, &mut phase, &mut has, &mut est) }, ManipStatus::Ok);
    }
    unsafe { manip_perception_free(p) };
    assert_eq!(phase, ManipPhase::Tracking);
    assert!(has);
    let d = ((est.px - 0.7).powi(2) + est.py.powi(2) + (est.pz - 0.11).powi(2)).sqrt();
    assert!(d < 0.01, "{est:?}");
}

#[test]
fn report_lookup() {
    let json = br#"{"timestamp":1.0,"frame":30,"objects":[
        {"id":"bottle-0","class_label":"bottle","state":"TRACKING","position":[0.1,0.2,0.7],"quaternion":[1,0,0,0],"confidence":0.9},
        {"id":"cup-1","class_label":"cup","state":"LOST","confidence":0.0}]}"#;
    let mut phase = ManipPhase::Uninitialized;
    let mut has = false;
    let mut p = pose([0.0; 3], IDENTITY);
    unsafe {
        assert_eq!(manip_report_object(json.as_ptr(), json.len(), c"bottle-0".as_ptr(), &mut phase, &mut has, &mut p), ManipStatus::Ok);
        assert_eq!((phase, has), (ManipPhase::Tracking, true));
        assert_eq!((p.px, p.py, p.pz), (0.1, 0.2, 0.7));
        assert_eq!(manip_report_object(json.as_ptr(), json.len(), c"cup-1".as_ptr(), &mut phase, &mut has, &mut p), ManipStatus::Ok);
        assert_eq!((phase, has), (ManipPhase::Lost, false));
        assert_eq!(manip_report_object(json.as_ptr(), json.len(), c"mug".as_ptr(), &mut phase, &mut has, &mut p), ManipStatus::NotFound);
        assert_eq!(manip_report_object(b"{".as_ptr(), 1, c"mug".as_ptr(), &mut phase, &mut has, &mut p), ManipStatus::ParseError);
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libmanip_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include "manip.h"
#include <stdio.h>
int main(void) {
    ManipPose a = {0, 0, 0, 1, 0, 0, 0};
    ManipPose b = {0, 0, 0, 0.70710678118654752, 0, 0.70710678118654752, 0};
    double deg = 0;
    if (manip_geodesic_deg(&a, &b, &deg) != MANIP_STATUS_OK) return 1;
    float v[7] = {0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f};
    unsigned char buf[64];
    size_t len = 0;
    if (manip_packet_encode(0, 1, v, 7, 60.0f, 1.5f, buf, sizeof buf, &len) != MANIP_STATUS_OK) return 2;
    ManipChain *c = manip_chain_right_arm();
    ManipRobot *r = manip_robot_new(c);
    if (manip_robot_command(r, buf, len) != MANIP_STATUS_OK) return 3;
    manip_robot_step(r, 0.1);
    manip_robot_free(r);
    manip_chain_free(c);
    printf("%.3f %zu %s\n", deg, len, manip_status_str(MANIP_STATUS_BAD_MAGIC));
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("probe");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "90.000 47 bad magic\n");
}
