use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use manip_core::bridge::{bind_bridge, robot_loop, LimitTable, RobotSim, TargetTable};
use manip_core::harness::*;
use manip_core::planner::KinematicChain;
use manip_core::sim::{ObjectSpec, ScenarioConfig, ScenarioKind};
use manip_core::stream::{publisher_loop, PoseServer, SnapshotCell};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "manip", version, about = "Simulated perception-to-actuation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Static,
    Dynamic,
    Occlusion,
}

impl From<Scenario> for ScenarioKind {
    fn from(s: Scenario) -> Self {
        match s {
            Scenario::Static => ScenarioKind::Static,
            Scenario::Dynamic => ScenarioKind::DynamicHandheld,
            Scenario::Occlusion => ScenarioKind::PartialOcclusion,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one tracking scenario and print its metrics.
    Track {
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        #[arg(long)]
        frames: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario file (TOML); keys not given fall back to the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-frame JSONL log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Summary JSON written alongside stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Five-position grasp experiment.
    Grasp {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Use threads, HTTP and UDP on the wall clock instead of lock-step.
        #[arg(long)]
        live: bool,
    },
    /// Glue-path demo along a window edge.
    Glue {
        /// Polyline file, one `x y z` vertex per line, relative to the window centroid.
        #[arg(long)]
        edge: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Publish tracked poses of a static bottle over HTTP.
    Serve {
        #[arg(long, default_value_t = 8077)]
        port: u16,
        /// Seconds to run; runs until killed when omitted.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Listen for joint-command datagrams and drive the simulated robot.
    Bridge {
        #[arg(long, default_value_t = 8078)]
        port: u16,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Every tracking preset, the grasp experiment and the glue demo.
    All {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct Output<T: Serialize> {
    #[serde(flatten)]
    report: T,
    checks: Vec<Check>,
}

fn emit<T: Serialize>(report: T, checks: Vec<Check>) -> ExitCode {
    for c in &checks {
        log::info!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let ok = checks.iter().all(|c| c.pass);
    print!("{}", to_json(&Output { report, checks }));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn track(
    scenario: Option<Scenario>,
    frames: Option<u64>,
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: OutputPaths,
) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut cfg = match (&config, scenario) {
        (Some(path), flag) => {
            let cfg = ScenarioConfig::from_file(path)?;
            if let Some(s) = flag {
                if ScenarioKind::from(s) != cfg.kind {
                    return Err(format!("--scenario disagrees with kind in {}", path.display()).into());
                }
            }
            cfg
        }
        (None, Some(s)) => ScenarioConfig::preset(s.into()),
        (None, None) => return Err("one of --scenario or --config is required".into()),
    };
    if let Some(n) = frames {
        cfg.frame_count = n;
        for w in &mut cfg.occlusion_windows {
            w.end_frame = w.end_frame.min(n);
        }
        cfg.occlusion_windows.retain(|w| w.start_frame < w.end_frame);
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    let run = run_tracking_scenario(&cfg, &ObjectSpec::bottle(), &out)?;
    let preset = config.is_none() && frames.is_none();
    let checks = if preset { vec![check_tracking(cfg.kind, &run.metrics)] } else { vec![] };
    Ok(emit(run.summary, checks))
}

fn until(duration: Option<f64>) -> Option<Instant> {
    duration.map(|d| Instant::now() + Duration::from_secs_f64(d.max(0.0)))
}

fn wait(deadline: Option<Instant>) {
    match deadline {
        Some(t) => std::thread::sleep(t.saturating_duration_since(Instant::now())),
        None => loop {
            std::thread::park();
        },
    }
}

#[derive(Serialize)]
struct ServeReport {
    address: String,
    published: u64,
}

fn serve(port: u16, duration: Option<f64>, seed: u64) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let deadline = until(duration);
    let rig = Rig::default();
    let world = upright(bottle_on_desk(WORKSPACE_CENTER[0], WORKSPACE_CENTER[1]));
    let mut perception = Perception::new(pipeline_scenario(seed), ObjectSpec::bottle(), "bottle-0", rig)?;
    let cell = SnapshotCell::new();
    let publisher =
        publisher_loop(cell.clone(), COMMAND_RATE, move |tick| perception.frame(tick, tick as f64 / COMMAND_RATE, &world).ok())?;
    let server = PoseServer::bind(&format!("127.0.0.1:{port}"), cell)?;
    let address = server.url();
    log::info!("serving poses at {address}");
    wait(deadline);
    server.shutdown();
    let published = publisher.stop();
    Ok(emit(ServeReport { address, published }, vec![]))
}

#[derive(Serialize)]
struct BridgeReport {
    address: String,
    bridge: manip_core::bridge::BridgeStats,
    substeps: u64,
    max_joint_speed: f64,
    safety_violations: u64,
}

fn bridge(port: u16, duration: Option<f64>) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let deadline = until(duration);
    let chain = KinematicChain::right_arm();
    let table = TargetTable::new();
    let robot = robot_loop(RobotSim::new(chain.clone(), None), table.clone(), 240.0)?;
    let handle = bind_bridge(&format!("127.0.0.1:{port}"), LimitTable::for_chain(&chain), table)?;
    let address = handle.local_addr().to_string();
    log::info!("bridge listening on {address}");
    wait(deadline);
    let stats = handle.stop();
    let sim = robot.stop().ok_or("robot loop panicked")?;
    let check = Check {
        name: "safety".into(),
        pass: sim.safety_violations == 0,
        detail: format!("{} violations over {} substeps", sim.safety_violations, sim.substeps),
    };
    let report = BridgeReport {
        address,
        bridge: stats,
        substeps: sim.substeps,
        max_joint_speed: sim.max_speed,
        safety_violations: sim.safety_violations,
    };
    Ok(emit(report, vec![check]))
}

#[derive(Serialize)]
struct AllReport {
    tracking: Vec<TrackingSummary>,
    grasp: GraspReport,
    glue: GlueReport,
}

fn all(seed: u64) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut tracking = Vec::new();
    let mut checks = Vec::new();
    for kind in [ScenarioKind::Static, ScenarioKind::DynamicHandheld, ScenarioKind::PartialOcclusion] {
        let run = run_tracking_scenario(&ScenarioConfig::preset(kind), &ObjectSpec::bottle(), &OutputPaths::default())?;
        checks.push(check_tracking(kind, &run.metrics));
        tracking.push(run.summary);
    }
    let grasp = run_grasp_experiment(&default_positions(), seed)?;
    checks.push(check_grasp(&grasp));
    let glue = run_glue_demo(&default_window_edge(), seed)?;
    checks.push(check_glue(&glue));
    Ok(emit(AllReport { tracking, grasp, glue }, checks))
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Track { scenario, frames, seed, config, log, summary } => {
            track(scenario, frames, seed, config, OutputPaths { log, summary })
        }
        Command::Grasp { seed, live } => {
            let report = if live {
                let mut positions = Vec::new();
                for (i, (name, centroid)) in default_positions().into_iter().enumerate() {
                    positions.push(grasp_position(name, centroid, seed.wrapping_add(i as u64), true)?);
                }
                let overall_success_count = positions.iter().filter(|p| p.success).count();
                GraspReport { seed, positions, overall_success_count }
            } else {
                run_grasp_experiment(&default_positions(), seed)?
            };
            let check = check_grasp(&report);
            Ok(emit(report, vec![check]))
        }
        Command::Glue { edge, seed } => {
            let report = match edge {
                Some(path) => run_glue_demo_file(&path, seed)?,
                None => run_glue_demo(&default_window_edge(), seed)?,
            };
            let check = check_glue(&report);
            Ok(emit(report, vec![check]))
        }
        Command::Serve { port, duration, seed } => serve(port, duration, seed),
        Command::Bridge { port, duration } => bridge(port, duration),
        Command::All { seed } => all(seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
