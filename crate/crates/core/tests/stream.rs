use std::time::Duration;

use manip_core::se3::Pose;
use manip_core::stream::*;
use manip_core::tracker::Phase;

fn report(frame: u64) -> PoseReport {
    PoseReport {
        timestamp: frame as f64 / 30.0,
        frame,
        objects: vec![ObjectTrack {
            id: "bottle-0".into(),
            class_label: "bottle".into(),
            state: Phase::Tracking,
            pose: Some(Pose::from_translation(0.0, 0.001 * frame as f64, 0.7)),
            confidence: 0.9,
        }],
    }
}

#[test]
fn report_round_trip_is_exact() {
    for f in [0, 1, 29, 1_000_000] {
        let r = report(f);
        assert_eq!(parse_report(&serialize_report(&r)).unwrap(), r);
    }
}

#[test]
fn http_stream_is_monotone_and_goes_stale() {
    let cell = SnapshotCell::new();
    let publisher = publisher_loop(cell.clone(), 30.0, |t| Some(report(t))).unwrap();
    let server = PoseServer::bind("127.0.0.1:0", cell).unwrap();
    let mut raw = HttpFetcher::new(server.url(), Duration::from_millis(200));
    let mut poller = Poller::connect(HttpFetcher::new(server.url(), Duration::from_millis(200))).unwrap();
    let mut timer = RateTimer::new(60.0).unwrap();
    let mut last = 0;
    let mut fresh = 0;
    while timer.elapsed() < Duration::from_secs(2) {
        timer.wait();
        if let Some(body) = raw.fetch().unwrap() {
            let f = parse_report(&body).unwrap().frame;
            assert!(f >= last, "frame {f} after {last}");
            last = f;
        }
        let ev = poller.poll();
        assert!(!ev.stale);
        fresh += ev.fresh as u32;
    }
    let published = publisher.stop();
    assert!((58..=62).contains(&published), "{published}");
    assert!(fresh > 50);
    server.shutdown();

    let mut stale = false;
    for _ in 0..STALE_AFTER_FAILURES {
        let ev = poller.poll();
        assert!(ev.report.is_some());
        stale = ev.stale;
    }
    assert!(stale);
}

#[test]
fn empty_server_reports_unavailable() {
    let server = PoseServer::bind("127.0.0.1:0", SnapshotCell::new()).unwrap();
    let mut poller = Poller::connect(HttpFetcher::new(server.url(), Duration::from_millis(200))).unwrap();
    let ev = poller.poll();
    assert_eq!(ev, PollEvent { report: None, fresh: false, stale: false });
    server.shutdown();
}

#[test]
fn poller_thread_delivers_events() {
    let cell = SnapshotCell::new();
    cell.publish(&report(5));
    let server = PoseServer::bind("127.0.0.1:0", cell.clone()).unwrap();
    let (rx, handle) = poller_loop(&server.url(), 50.0).unwrap();
    let first = rx.recv_timeout(Duration::from_secs(2)).unwrap();
    assert_eq!(first.report.unwrap().frame, 5);
    cell.publish(&report(6));
    let mut saw = false;
    for _ in 0..50 {
        if rx.recv_timeout(Duration::from_secs(1)).unwrap().report.is_some_and(|r| r.frame == 6) {
            saw = true;
            break;
        }
    }
    assert!(saw);
    handle.stop();
    server.shutdown();
}
