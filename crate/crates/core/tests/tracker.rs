use manip_core::se3::{Pose, Quat, Vec3};
use manip_core::sim::{Detection, EstimateResult};
use manip_core::tracker::*;
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
enum Outcome {
    Fail,
    Move { dpos: f64, drot_deg: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Input {
    gap: u64,
    detected: bool,
    outcome: Outcome,
}

fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        1 => Just(Outcome::Fail),
        4 => (prop::sample::select(vec![0.0, 0.01, 0.149, 0.151, 0.3]), prop::sample::select(vec![0.0, 10.0, 89.0, 91.0, 170.0]))
            .prop_map(|(dpos, drot_deg)| Outcome::Move { dpos, drot_deg }),
    ]
}

fn input() -> impl Strategy<Value = Input> {
    (prop_oneof![8 => Just(1u64), 1 => 2u64..40, 1 => 85u64..95], prop::bool::weighted(0.3), outcome())
        .prop_map(|(gap, detected, outcome)| Input { gap, detected, outcome })
}

fn det(frame: u64) -> Detection {
    Detection { frame, bbox: [300.0, 180.0, 340.0, 300.0], confidence: 0.9, class_label: "bottle".into() }
}

fn moved(prior: &Pose, dpos: f64, drot_deg: f64) -> Pose {
    let q = prior.orientation.multiply(&Quat::from_axis_angle(&Vec3::z(), drot_deg.to_radians()));
    Pose::new(prior.position + Vec3::new(dpos, 0.0, 0.0), q)
}

/// Straight-line restatement of the tracking rules, independent of the
/// implementation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum P {
    Uninit,
    Track,
    Lost,
}

struct Model {
    phase: P,
    fails: u32,
    last_det: Option<u64>,
    reinits: u32,
}

impl Model {
    fn step(&mut self, frame: u64, detected: bool, outcome: Outcome) -> (P, Option<LostReason>) {
        if detected {
            self.last_det = Some(frame);
        }
        match self.phase {
            P::Uninit | P::Lost => {
                if detected && !matches!(outcome, Outcome::Fail) {
                    if self.phase == P::Lost {
                        self.reinits += 1;
                    }
                    self.phase = P::Track;
                    self.fails = 0;
                }
                (self.phase, None)
            }
            P::Track => {
                let reason = if frame - self.last_det.unwrap() > 90 {
                    Some(LostReason::DetectionTimeout)
                } else {
                    match outcome {
                        Outcome::Fail => {
                            self.fails += 1;
                            (self.fails == 3).then_some(LostReason::ConsecutiveFailures)
                        }
                        Outcome::Move { dpos, .. } if dpos > 0.15 => Some(LostReason::PositionJump),
                        Outcome::Move { drot_deg, .. } if drot_deg > 90.0 => Some(LostReason::RotationJump),
                        Outcome::Move { .. } => {
                            self.fails = 0;
                            None
                        }
                    }
                };
                if reason.is_some() {
                    self.phase = P::Lost;
                    self.fails = 0;
                }
                (self.phase, reason)
            }
        }
    }
}

fn phase(p: Phase) -> P {
    match p {
        Phase::Uninitialized => P::Uninit,
        Phase::Tracking => P::Track,
        Phase::Lost => P::Lost,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn tracker_matches_reference_model(inputs in prop::collection::vec(input(), 1..300)) {
        let mut t = Tracker::new(TrackerThresholds::default()).unwrap();
        let mut m = Model { phase: P::Uninit, fails: 0, last_det: None, reinits: 0 };
        let start = Pose::from_translation(0.0, 0.0, 0.7);
        let mut frame = 0u64;
        for inp in inputs {
            frame += inp.gap;
            let before = t.phase();
            let d = det(frame);
            let out = t
                .step(frame, inp.detected.then_some(&d), |req| match (inp.outcome, req) {
                    (Outcome::Fail, r) => EstimateResult::failed(r.mode()),
                    (Outcome::Move { .. }, r @ EstimateRequest::Register { .. }) => EstimateResult::ok(r.mode(), start),
                    (Outcome::Move { dpos, drot_deg }, r @ EstimateRequest::Track { prior }) => {
                        EstimateResult::ok(r.mode(), moved(prior, dpos, drot_deg))
                    }
                })
                .unwrap();
            let (want, reason) = m.step(frame, inp.detected, inp.outcome);
            prop_assert_eq!(phase(t.phase()), want);
            prop_assert_eq!(out.lost_reason, reason);
            prop_assert_eq!(t.state().reinit_count, m.reinits);
            match out.transition {
                None => prop_assert_eq!(before, t.phase()),
                Some(tr) => {
                    prop_assert!(matches!(
                        tr,
                        (Phase::Uninitialized, Phase::Tracking) | (Phase::Tracking, Phase::Lost) | (Phase::Lost, Phase::Tracking)
                    ));
                    prop_assert_eq!(tr, (before, t.phase()));
                }
            }
            if out.pose.is_some() {
                prop_assert_eq!(t.phase(), Phase::Tracking);
            }
            if t.phase() != Phase::Tracking {
                prop_assert!(out.pose.is_none());
            }
        }
    }
}

#[test]
fn lost_tracker_recovers_on_next_detection() {
    let mut t = Tracker::new(TrackerThresholds::default()).unwrap();
    let p = Pose::from_translation(0.0, 0.0, 0.7);
    t.step(0, Some(&det(0)), |r| EstimateResult::ok(r.mode(), p)).unwrap();
    for f in 1..=3 {
        t.step(f, None, |r| EstimateResult::failed(r.mode())).unwrap();
    }
    assert_eq!(t.phase(), Phase::Lost);
    let out = t.step(4, None, |_| unreachable!("no estimate without a detection")).unwrap();
    assert_eq!(out.transition, None);
    let out = t.step(5, Some(&det(5)), |r| {
        assert_eq!(r.mode(), manip_core::sim::EstimateMode::Registration);
        EstimateResult::ok(r.mode(), p)
    });
    assert_eq!(out.unwrap().transition, Some((Phase::Lost, Phase::Tracking)));
    assert_eq!(t.state().reinit_count, 1);
}
