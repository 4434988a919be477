//! Latest-value pose stream.
//!
//! The producer keeps one snapshot of the most recent [`PoseReport`] and
//! serves it at `GET /pose`. Consumers poll at a fixed rate and keep the last
//! good report when a poll fails. The same snapshot cell backs both the HTTP
//! server and the in-process transport used by the lock-step simulation.
//!
//! Wire schema (field order is fixed):
//!
//! ```text
//! {"timestamp": number, "frame": integer,
//!  "objects": [{"id": string, "class_label": string,
//!               "state": "UNINITIALIZED" | "TRACKING" | "LOST",
//!               "position": [x, y, z],          // TRACKING only
//!               "quaternion": [w, x, y, z],     // TRACKING only
//!               "confidence": number}]}
//! ```

use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{Pose, Quat, Vec3};
use crate::tracker::Phase;

pub const DEFAULT_POSE_ADDR: &str = "127.0.0.1:8077";
pub const POSE_PATH: &str = "/pose";
/// Consecutive failed polls after which the consumer flags its view stale.
pub const STALE_AFTER_FAILURES: u32 = 3;
/// Accepted deviation of a wire quaternion from unit norm.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("schema error at `{field}`: {reason}")]
    Schema { field: String, reason: String },
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("endpoint {0} unreachable")]
    Unreachable(String),
    #[error("fetch failed: {0}")]
    Fetch(String),
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("server runtime: {0}")]
    Runtime(String),
}

/// One tracked object in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub id: String,
    pub class_label: String,
    pub state: Phase,
    /// Present iff `state == Tracking`.
    pub pose: Option<Pose>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseReport {
    /// Seconds on the producer clock.
    pub timestamp: f64,
    pub frame: u64,
    pub objects: Vec<ObjectTrack>,
}

impl PoseReport {
    pub fn empty() -> Self {
        PoseReport { timestamp: 0.0, frame: 0, objects: Vec::new() }
    }

    pub fn object(&self, id: &str) -> Option<&ObjectTrack> {
        self.objects.iter().find(|o| o.id == id)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireReport {
    timestamp: f64,
    frame: u64,
    objects: Vec<WireTrack>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "UPPERCASE")]
enum WireState {
    Uninitialized,
    Tracking,
    Lost,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTrack {
    id: String,
    class_label: String,
    state: WireState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quaternion: Option<[f64; 4]>,
    confidence: f64,
}

impl From<Phase> for WireState {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Uninitialized => WireState::Uninitialized,
            Phase::Tracking => WireState::Tracking,
            Phase::Lost => WireState::Lost,
        }
    }
}

impl From<WireState> for Phase {
    fn from(s: WireState) -> Self {
        match s {
            WireState::Uninitialized => Phase::Uninitialized,
            WireState::Tracking => Phase::Tracking,
            WireState::Lost => Phase::Lost,
        }
    }
}

/// UTF-8 JSON in the fixed schema. Floats use shortest round-trip formatting,
/// so every `f64` survives a parse bit-exactly.
pub fn serialize_report(r: &PoseReport) -> Vec<u8> {
    let wire = WireReport {
        timestamp: r.timestamp,
        frame: r.frame,
        objects: r
            .objects
            .iter()
            .map(|o| {
                let pose = if o.state == Phase::Tracking { o.pose } else { None };
                WireTrack {
                    id: o.id.clone(),
                    class_label: o.class_label.clone(),
                    state: o.state.into(),
                    position: pose.map(|p| [p.position.x, p.position.y, p.position.z]),
                    quaternion: pose.map(|p| p.orientation.to_array()),
                    confidence: o.confidence,
                }
            })
            .collect(),
    };
    serde_json::to_vec(&wire).expect("report serialization cannot fail")
}

pub fn parse_report(b: &[u8]) -> Result<PoseReport, ReportError> {
    let mut de = serde_json::Deserializer::from_slice(b);
    let wire: WireReport = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => {
                let msg = inner.to_string();
                // missing fields report the parent path; name the field itself
                let field = match (msg.strip_prefix("missing field `"), path.as_str()) {
                    (Some(rest), p) => {
                        let name = rest.split('`').next().unwrap_or_default();
                        if p == "." || p.is_empty() {
                            name.to_string()
                        } else {
                            format!("{p}.{name}")
                        }
                    }
                    _ => path,
                };
                ReportError::Schema { field, reason: msg }
            }
            _ => ReportError::Malformed(inner.to_string()),
        }
    })?;
    de.end().map_err(|e| ReportError::Malformed(e.to_string()))?;

    let schema = |field: String, reason: &str| ReportError::Schema { field, reason: reason.to_string() };
    if !wire.timestamp.is_finite() {
        return Err(schema("timestamp".into(), "must be finite"));
    }
    let mut objects = Vec::with_capacity(wire.objects.len());
    for (i, o) in wire.objects.into_iter().enumerate() {
        let at = |f: &str| format!("objects[{i}].{f}");
        if !(0.0..=1.0).contains(&o.confidence) {
            return Err(schema(at("confidence"), "must lie in [0, 1]"));
        }
        let state = Phase::from(o.state);
        let pose = match (state, o.position, o.quaternion) {
            (Phase::Tracking, Some(p), Some(q)) => {
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(schema(at("position"), "must be finite"));
                }
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !n.is_finite() || (n - 1.0).abs() > QUAT_NORM_TOLERANCE {
                    return Err(schema(at("quaternion"), "not unit-norm"));
                }
                let orientation = if (n - 1.0).abs() <= 1e-12 {
                    Quat::from_unit_unchecked(q[0], q[1], q[2], q[3])
                } else {
                    Quat::new(q[0], q[1], q[2], q[3])
                };
                Some(Pose::new(Vec3::new(p[0], p[1], p[2]), orientation))
            }
            (Phase::Tracking, None, _) => return Err(schema(at("position"), "required when TRACKING")),
            (Phase::Tracking, _, None) => return Err(schema(at("quaternion"), "required when TRACKING")),
            (_, Some(_), _) => return Err(schema(at("position"), "only allowed when TRACKING")),
            (_, _, Some(_)) => return Err(schema(at("quaternion"), "only allowed when TRACKING")),
            (_, None, None) => None,
        };
        objects.push(ObjectTrack { id: o.id, class_label: o.class_label, state, pose, confidence: o.confidence });
    }
    Ok(PoseReport { timestamp: wire.timestamp, frame: wire.frame, objects })
}

/// A complete published report with its serialized body.
#[derive(Debug)]
pub struct Snapshot {
    pub frame: u64,
    pub body: Vec<u8>,
}

/// Single-writer, many-reader latest value. Readers get an `Arc` to a whole
/// snapshot; the writer swaps the pointer, so a reader never sees a partial
/// update.
#[derive(Debug, Clone, Default)]
pub struct SnapshotCell {
    inner: Arc<RwLock<Option<Arc<Snapshot>>>>,
    published: Arc<AtomicU64>,
}

impl SnapshotCell {
    pub fn new() -> Self {
        Self::default()
    }

    /// Publishes `report`. Reports older than the current one are refused.
    pub fn publish(&self, report: &PoseReport) -> bool {
        let snap = Arc::new(Snapshot { frame: report.frame, body: serialize_report(report) });
        let mut slot = self.inner.write().unwrap_or_else(|e| e.into_inner());
        if slot.as_ref().is_some_and(|cur| cur.frame > report.frame) {
            return false;
        }
        *slot = Some(snap);
        drop(slot);
        self.published.fetch_add(1, Ordering::Relaxed);
        true
    }

    pub fn latest(&self) -> Option<Arc<Snapshot>> {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn published_count(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }
}

/// Fixed-rate ticker on absolute deadlines, so lateness does not accumulate.
#[derive(Debug)]
pub struct RateTimer {
    start: Instant,
    period: Duration,
    tick: u64,
}

impl RateTimer {
    pub fn new(rate_hz: f64) -> Result<Self, StreamError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(StreamError::BadRate(rate_hz));
        }
        Ok(RateTimer { start: Instant::now(), period: Duration::from_secs_f64(1.0 / rate_hz), tick: 0 })
    }

    /// Sleeps until the next deadline and returns its tick index.
    pub fn wait(&mut self) -> u64 {
        let deadline = self.start + self.period.mul_f64(self.tick as f64);
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
        let t = self.tick;
        self.tick += 1;
        t
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}

/// Handle to a wall-clock publisher thread.
pub struct PublisherHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<u64>>,
}

impl PublisherHandle {
    /// Stops the loop and returns how many snapshots it published.
    pub fn stop(mut self) -> u64 {
        self.stop.store(true, Ordering::SeqCst);
        self.thread.take().map(|t| t.join().unwrap_or(0)).unwrap_or(0)
    }
}

impl Drop for PublisherHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Publishes `source(tick)` into `cell` at `rate_hz` on the wall clock until
/// stopped. A `None` from the source skips that tick.
pub fn publisher_loop<F>(cell: SnapshotCell, rate_hz: f64, mut source: F) -> Result<PublisherHandle, StreamError>
where
    F: FnMut(u64) -> Option<PoseReport> + Send + 'static,
{
    let mut timer = RateTimer::new(rate_hz)?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name("pose-publisher".into())
        .spawn(move || {
            let mut published = 0;
            while !flag.load(Ordering::SeqCst) {
                let tick = timer.wait();
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Some(r) = source(tick) {
                    if cell.publish(&r) {
                        published += 1;
                    }
                }
            }
            published
        })
        .map_err(|e| StreamError::Runtime(e.to_string()))?;
    Ok(PublisherHandle { stop, thread: Some(thread) })
}

/// HTTP server exposing a [`SnapshotCell`] at [`POSE_PATH`].
pub struct PoseServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl PoseServer {
    /// Binds synchronously so address errors surface here, then serves on a
    /// background runtime.
    pub fn bind(addr: &str, cell: SnapshotCell) -> Result<Self, StreamError> {
        let listener = TcpListener::bind(addr).map_err(|source| StreamError::Bind { addr: addr.to_string(), source })?;
        listener.set_nonblocking(true).map_err(|source| StreamError::Bind { addr: addr.to_string(), source })?;
        let local = listener.local_addr().map_err(|source| StreamError::Bind { addr: addr.to_string(), source })?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| StreamError::Runtime(e.to_string()))?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("pose-server".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            log::error!("pose server listener: {e}");
                            return;
                        }
                    };
                    let app = axum::Router::new().route(POSE_PATH, axum::routing::get(serve_pose)).with_state(cell);
                    let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                        let _ = rx.await;
                    });
                    if let Err(e) = serve.await {
                        log::error!("pose server: {e}");
                    }
                });
            })
            .map_err(|e| StreamError::Runtime(e.to_string()))?;
        log::info!("pose stream serving http://{local}{POSE_PATH}");
        Ok(PoseServer { addr: local, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}{}", self.addr, POSE_PATH)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for PoseServer {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn serve_pose(axum::extract::State(cell): axum::extract::State<SnapshotCell>) -> axum::response::Response {
    use axum::http::{header, StatusCode};
    use axum::response::IntoResponse;
    match cell.latest() {
        Some(s) => ([(header::CONTENT_TYPE, "application/json")], s.body.clone()).into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, "no report published yet").into_response(),
    }
}

/// Source of serialized reports for a [`Poller`].
pub trait ReportFetcher {
    /// `Ok(None)` means the producer is up but has not published yet.
    fn fetch(&mut self) -> Result<Option<Vec<u8>>, StreamError>;
}

/// Reads straight from a snapshot cell (lock-step simulation).
#[derive(Debug, Clone)]
pub struct CellFetcher(pub SnapshotCell);

impl ReportFetcher for CellFetcher {
    fn fetch(&mut self) -> Result<Option<Vec<u8>>, StreamError> {
        Ok(self.0.latest().map(|s| s.body.clone()))
    }
}

/// HTTP GET against a pose endpoint.
pub struct HttpFetcher {
    agent: ureq::Agent,
    url: String,
}

impl HttpFetcher {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpFetcher { agent, url: url.into() }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ReportFetcher for HttpFetcher {
    fn fetch(&mut self) -> Result<Option<Vec<u8>>, StreamError> {
        match self.agent.get(&self.url).call() {
            Ok(mut resp) => resp.body_mut().read_to_vec().map(Some).map_err(|e| StreamError::Fetch(e.to_string())),
            Err(ureq::Error::StatusCode(503)) => Ok(None),
            Err(e) => Err(StreamError::Fetch(e.to_string())),
        }
    }
}

/// What a consumer sees on one poll.
#[derive(Debug, Clone, PartialEq)]
pub struct PollEvent {
    /// Latest good report (possibly retained from an earlier poll).
    pub report: Option<PoseReport>,
    /// True when this poll returned a new, valid report.
    pub fresh: bool,
    /// True after [`STALE_AFTER_FAILURES`] consecutive failed polls.
    pub stale: bool,
}

/// Consumer side of the stream: keeps the last good report and a staleness
/// flag.
pub struct Poller<F: ReportFetcher> {
    fetcher: F,
    last: Option<PoseReport>,
    consecutive_failures: u32,
}

impl<F: ReportFetcher> Poller<F> {
    /// Probes the endpoint once; an unreachable producer is an error here.
    pub fn connect(mut fetcher: F) -> Result<Self, StreamError> {
        let first = fetcher.fetch().map_err(|e| StreamError::Unreachable(e.to_string()))?;
        let last = first.and_then(|b| parse_report(&b).ok());
        Ok(Poller { fetcher, last, consecutive_failures: 0 })
    }

    pub fn poll(&mut self) -> PollEvent {
        let fetched = match self.fetcher.fetch() {
            Ok(Some(body)) => parse_report(&body).map_err(|e| log::warn!("bad pose report: {e}")).ok(),
            Ok(None) => {
                self.consecutive_failures = 0;
                return PollEvent { report: self.last.clone(), fresh: false, stale: false };
            }
            Err(e) => {
                log::debug!("poll failed: {e}");
                None
            }
        };
        match fetched {
            Some(r) => {
                self.consecutive_failures = 0;
                // a late response must never move the consumer backwards
                let regress = self.last.as_ref().is_some_and(|l| r.frame < l.frame);
                if !regress {
                    self.last = Some(r);
                }
                PollEvent { report: self.last.clone(), fresh: !regress, stale: false }
            }
            None => {
                self.consecutive_failures += 1;
                PollEvent { report: self.last.clone(), fresh: false, stale: self.consecutive_failures >= STALE_AFTER_FAILURES }
            }
        }
    }

    pub fn latest(&self) -> Option<&PoseReport> {
        self.last.as_ref()
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }
}

/// Handle to a wall-clock poller thread.
pub struct PollerHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl PollerHandle {
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for PollerHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Polls `endpoint` at `rate_hz` on the wall clock, sending every event down
/// the returned channel. Fails if the endpoint is unreachable at startup.
pub fn poller_loop(endpoint: &str, rate_hz: f64) -> Result<(mpsc::Receiver<PollEvent>, PollerHandle), StreamError> {
    let mut timer = RateTimer::new(rate_hz)?;
    let period = Duration::from_secs_f64(1.0 / rate_hz);
    let mut poller = Poller::connect(HttpFetcher::new(endpoint, period.max(Duration::from_millis(20))))?;
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name("pose-poller".into())
        .spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                timer.wait();
                if tx.send(poller.poll()).is_err() {
                    break;
                }
            }
        })
        .map_err(|e| StreamError::Runtime(e.to_string()))?;
    Ok((rx, PollerHandle { stop, thread: Some(thread) }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracked(id: &str, pose: Pose) -> ObjectTrack {
        ObjectTrack { id: id.into(), class_label: "bottle".into(), state: Phase::Tracking, pose: Some(pose), confidence: 0.9 }
    }

    #[test]
    fn empty_report_bytes() {
        let s = serialize_report(&PoseReport::empty());
        assert_eq!(std::str::from_utf8(&s).unwrap(), r#"{"timestamp":0.0,"frame":0,"objects":[]}"#);
    }

    #[test]
    fn identity_pose_fields() {
        let r = PoseReport { timestamp: 0.5, frame: 15, objects: vec![tracked("bottle-0", Pose::IDENTITY)] };
        let s = String::from_utf8(serialize_report(&r)).unwrap();
        assert_eq!(
            s,
            r#"{"timestamp":0.5,"frame":15,"objects":[{"id":"bottle-0","class_label":"bottle","state":"TRACKING","position":[0.0,0.0,0.0],"quaternion":[1.0,0.0,0.0,0.0],"confidence":0.9}]}"#
        );
        assert_eq!(parse_report(s.as_bytes()).unwrap(), r);
    }

    #[test]
    fn lost_object_has_no_pose_fields() {
        let mut o = tracked("a", Pose::IDENTITY);
        o.state = Phase::Lost;
        o.pose = None;
        let r = PoseReport { timestamp: 1.0, frame: 30, objects: vec![o] };
        let s = String::from_utf8(serialize_report(&r)).unwrap();
        assert!(!s.contains("position") && s.contains("\"LOST\""));
        assert_eq!(parse_report(s.as_bytes()).unwrap(), r);
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let s = serialize_report(&PoseReport { timestamp: 0.5, frame: 15, objects: vec![tracked("a", Pose::IDENTITY)] });
        assert!(matches!(parse_report(&s[..s.len() - 7]), Err(ReportError::Malformed(_))));
        assert!(matches!(parse_report(b"{} trailing"), Err(ReportError::Malformed(_)) | Err(ReportError::Schema { .. })));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let missing = br#"{"timestamp":0.0,"objects":[]}"#;
        match parse_report(missing) {
            Err(ReportError::Schema { field, .. }) => assert_eq!(field, "frame"),
            other => panic!("{other:?}"),
        }
        let half = br#"{"timestamp":0.0,"frame":1,"objects":[{"id":"a","class_label":"b","state":"TRACKING","position":[0,0,0],"quaternion":[0.5,0,0,0],"confidence":1.0}]}"#;
        match parse_report(half) {
            Err(ReportError::Schema { field, .. }) => assert_eq!(field, "objects[0].quaternion"),
            other => panic!("{other:?}"),
        }
        let bad_state = br#"{"timestamp":0.0,"frame":1,"objects":[{"id":"a","class_label":"b","state":"FLYING","confidence":1.0}]}"#;
        match parse_report(bad_state) {
            Err(ReportError::Schema { field, .. }) => assert_eq!(field, "objects[0].state"),
            other => panic!("{other:?}"),
        }
        let no_pose = br#"{"timestamp":0.0,"frame":1,"objects":[{"id":"a","class_label":"b","state":"TRACKING","confidence":1.0}]}"#;
        assert!(matches!(parse_report(no_pose), Err(ReportError::Schema { .. })));
    }

    #[test]
    fn near_unit_quaternion_is_renormalized() {
        let body = br#"{"timestamp":0.0,"frame":1,"objects":[{"id":"a","class_label":"b","state":"TRACKING","position":[0,0,0],"quaternion":[1.0005,0,0,0],"confidence":1.0}]}"#;
        let r = parse_report(body).unwrap();
        assert_eq!(r.objects[0].pose.unwrap().orientation.to_array(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn serialization_is_stable() {
        let r = PoseReport { timestamp: 1.0 / 3.0, frame: 10, objects: vec![tracked("x", Pose::from_translation(0.1, 0.2, 0.3))] };
        assert_eq!(serialize_report(&r), serialize_report(&r));
    }

    #[test]
    fn cell_refuses_older_frames() {
        let cell = SnapshotCell::new();
        assert!(cell.latest().is_none());
        assert!(cell.publish(&PoseReport { frame: 5, ..PoseReport::empty() }));
        assert!(!cell.publish(&PoseReport { frame: 4, ..PoseReport::empty() }));
        assert!(cell.publish(&PoseReport { frame: 5, ..PoseReport::empty() }));
        assert_eq!(cell.latest().unwrap().frame, 5);
        assert_eq!(cell.published_count(), 2);
    }

    #[test]
    fn poller_flags_staleness_after_three_failures() {
        struct Flaky {
            cell: SnapshotCell,
            up: Arc<AtomicBool>,
        }
        impl ReportFetcher for Flaky {
            fn fetch(&mut self) -> Result<Option<Vec<u8>>, StreamError> {
                if self.up.load(Ordering::SeqCst) {
                    CellFetcher(self.cell.clone()).fetch()
                } else {
                    Err(StreamError::Fetch("down".into()))
                }
            }
        }
        let cell = SnapshotCell::new();
        cell.publish(&PoseReport { frame: 3, ..PoseReport::empty() });
        let up = Arc::new(AtomicBool::new(true));
        let mut p = Poller::connect(Flaky { cell: cell.clone(), up: up.clone() }).unwrap();
        assert!(p.poll().fresh);
        up.store(false, Ordering::SeqCst);
        let e1 = p.poll();
        let e2 = p.poll();
        let e3 = p.poll();
        assert!(!e1.stale && !e2.stale && e3.stale);
        assert_eq!(e3.report.unwrap().frame, 3);
        up.store(true, Ordering::SeqCst);
        let e = p.poll();
        assert!(!e.stale && e.fresh);
    }

    #[test]
    fn connect_fails_when_unreachable() {
        struct Down;
        impl ReportFetcher for Down {
            fn fetch(&mut self) -> Result<Option<Vec<u8>>, StreamError> {
                Err(StreamError::Fetch("refused".into()))
            }
        }
        assert!(matches!(Poller::connect(Down), Err(StreamError::Unreachable(_))));
    }

    #[test]
    fn bad_rate_rejected() {
        assert!(RateTimer::new(0.0).is_err());
        assert!(RateTimer::new(f64::NAN).is_err());
    }
}
