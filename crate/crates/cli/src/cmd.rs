use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, OnceLock};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use tracing::{info, warn};
use vilas_core::broker::{latencies_from_log, read_run_log, BrokerConfig, DeployLoop, Protocol};
use vilas_core::clock::{SharedClock, SystemClock};
use vilas_core::devices::{DeviceAddrs, DeviceClient, DeviceStack, SharedWorld};
use vilas_core::eval::{fmt_ms, latency_stats, run_trials, EvalConfig, EvalReport};
use vilas_core::policyd::{LatencyProfile, PolicyKind, PolicyServer, PolicyServerConfig};
use vilas_core::recorder::{
    list_episodes, load_episode, EpisodeOutcome, ExportSchema, RecorderConfig, RecorderTask,
};
use vilas_core::sched::{run_periodic, Periodic};
use vilas_core::simworld::{ObjectConfig, SimConfig};
use vilas_core::teleop::{
    calibrate as fit_calibration, serve_bridge, BridgeHub, CellSource, LeaderCalibration, LeaderSource, ReplaySource,
    ScriptedSource, TeleopConfig, TeleopLoop, DEFAULT_MAX_STD,
};
use vilas_core::transport::ServerHandle;

use crate::{DeviceArgs, ObjectArg};

/// Set by Ctrl-C; long-running commands poll it.
fn stop_flag() -> &'static AtomicBool {
    static STOP: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    STOP.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
            warn!("no Ctrl-C handler: {e}");
        }
        flag
    })
}

fn wait_for_stop() {
    let stop = stop_flag();
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn sim_config(object: ObjectArg) -> SimConfig {
    let mut sim = SimConfig::default();
    if let ObjectArg::Cherry = object {
        sim.objects = ObjectConfig::cherries();
    }
    sim
}

pub fn devices(addrs: &DeviceArgs, seed: u64, objects: usize, object: ObjectArg, file: Option<&Path>) -> Result<()> {
    let sim = match file {
        Some(p) => SimConfig::from_json_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => sim_config(object),
    };
    let clock = SystemClock::shared();
    let world = SharedWorld::new(sim, clock)?;
    world.reset(seed, objects)?;
    let bind = DeviceAddrs {
        arm: addrs.arm.clone(),
        gripper: addrs.gripper.clone(),
        camera: addrs.camera.clone(),
    };
    let stack = DeviceStack::launch(world, &bind).context("binding device services")?;
    info!(
        arm = %stack.arm.local_addr(),
        gripper = %stack.gripper.local_addr(),
        camera = %stack.camera.local_addr(),
        "device services up; Ctrl-C to stop"
    );
    wait_for_stop();
    Ok(())
}

/// `--source scripted:<file> | bridge | replay:<episode>`.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[arg(long, default_value = "bridge")]
    pub source: String,
}

/// An opened leader source; keeps the bridge alive when there is one.
struct Leader {
    source: Box<dyn LeaderSource>,
    hub: Option<(Arc<BridgeHub>, ServerHandle)>,
}

fn open_source(args: &SourceArgs, devices: &DeviceArgs, clock: &SharedClock, bridge: &str) -> Result<Leader> {
    let spec = args.source.as_str();
    if let Some(file) = spec.strip_prefix("scripted:") {
        let s = ScriptedSource::from_file(Path::new(file)).with_context(|| format!("loading trajectory {file}"))?;
        return Ok(Leader { source: Box::new(s), hub: None });
    }
    if let Some(ep) = spec.strip_prefix("replay:") {
        let s = ReplaySource::from_episode(Path::new(ep)).with_context(|| format!("loading episode {ep}"))?;
        return Ok(Leader { source: Box::new(s), hub: None });
    }
    ensure!(spec == "bridge", "unknown source {spec:?} (scripted:<file>, bridge, replay:<episode>)");
    // the held leader vector starts at the follower's pose
    let mut client = DeviceClient::new(&devices.endpoints());
    let arm = client.arm_state().context("reading the follower pose")?;
    let grip = client.grip_state().context("reading the gripper")?;
    let mut initial = [0.0; 7];
    initial[..6].copy_from_slice(&arm.q);
    initial[6] = grip.g;
    let hub = BridgeHub::new(clock.clone(), devices.endpoints(), initial);
    let server = serve_bridge(bridge, hub.clone()).with_context(|| format!("binding bridge on {bridge}"))?;
    info!(addr = %server.local_addr(), "teleop bridge listening");
    Ok(Leader {
        source: Box::new(CellSource::new(hub.leader_cell())),
        hub: Some((hub, server)),
    })
}

fn teleop_config(rate: f64, calib: Option<&Path>) -> Result<TeleopConfig> {
    let mut cfg = TeleopConfig { rate_hz: rate, ..TeleopConfig::default() };
    if let Some(p) = calib {
        cfg.calibration = LeaderCalibration::load(p).with_context(|| format!("loading {}", p.display()))?;
    }
    Ok(cfg)
}

pub fn teleop(
    source: &SourceArgs,
    devices: &DeviceArgs,
    rate: f64,
    calib: Option<&Path>,
    bridge: &str,
    record_to: Option<PathBuf>,
    duration: Option<f64>,
) -> Result<()> {
    let clock = SystemClock::shared();
    let leader = open_source(source, devices, &clock, bridge)?;
    let mut tele = TeleopLoop::new(
        teleop_config(rate, calib)?,
        leader.source,
        DeviceClient::new(&devices.endpoints()),
        clock.clone(),
    );
    let mut recorder = None;
    if let Some(out) = record_to {
        let Some((hub, _)) = &leader.hub else {
            bail!("--record-to needs the bridge source (rec.start / rec.stop come from the console)");
        };
        let mut cfg = RecorderConfig::new(out, "");
        cfg.auto_start = false;
        cfg.single_episode = false;
        let (tx, rx) = mpsc::channel();
        let rec = RecorderTask::new(cfg, DeviceClient::new(&devices.endpoints()), tele.tap(), clock.clone())
            .with_control(rx);
        hub.attach_recorder(tx, &rec.status_cell());
        recorder = Some(rec);
    }
    if let Some((hub, _)) = &leader.hub {
        hub.attach_stall_flag(tele.stall_flag());
    }

    let duration = duration.map(Duration::from_secs_f64);
    {
        let mut tasks: Vec<&mut dyn Periodic> = vec![&mut tele];
        if let Some(r) = recorder.as_mut() {
            tasks.push(r);
        }
        run_periodic(&clock, &mut tasks, duration, stop_flag());
    }
    let s = tele.stats();
    println!(
        "teleop: {} commands in {:.1} s ({:.2} Hz), {} missed ticks, {} stalls, {} retries",
        s.commands, s.duration_s, s.achieved_rate_hz, s.missed_ticks, s.stall_events, s.retries
    );
    if let Some(r) = &recorder {
        for o in r.outcomes() {
            println!("{}", describe(o));
        }
    }
    if let Some(why) = &s.aborted {
        bail!("teleop aborted: {why}");
    }
    Ok(())
}

fn describe(o: &EpisodeOutcome) -> String {
    match o {
        EpisodeOutcome::Complete { path, frames } => format!("complete: {} ({frames} frames)", path.display()),
        EpisodeOutcome::Truncated { path, frames, reason } => {
            format!("truncated: {} ({frames} frames): {reason}", path.display())
        }
        EpisodeOutcome::Aborted { reason } => format!("aborted: {reason}"),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn record(
    prompt: &str,
    rate: f64,
    max_frames: u64,
    out: PathBuf,
    episode_id: Option<String>,
    source: &SourceArgs,
    devices: &DeviceArgs,
    calib: Option<&Path>,
    bridge: &str,
) -> Result<bool> {
    ensure!(rate > 0.0 && max_frames > 0, "rate and max-frames must be positive");
    let clock = SystemClock::shared();
    let leader = open_source(source, devices, &clock, bridge)?;
    let mut tele = TeleopLoop::new(
        teleop_config(vilas_core::teleop::TELEOP_RATE_HZ, calib)?,
        leader.source,
        DeviceClient::new(&devices.endpoints()),
        clock.clone(),
    );
    let mut cfg = RecorderConfig::new(out, prompt);
    cfg.rate_hz = rate;
    cfg.max_frames = max_frames;
    cfg.episode_id = episode_id;
    let mut rec = RecorderTask::new(cfg, DeviceClient::new(&devices.endpoints()), tele.tap(), clock.clone());
    if let Some((hub, _)) = &leader.hub {
        hub.attach_stall_flag(tele.stall_flag());
    }
    info!(max_frames, rate, "recording; Ctrl-C ends the episode early");
    run_periodic(&clock, &mut [&mut tele, &mut rec], None, stop_flag());
    let Some(outcome) = rec.outcomes().last() else {
        println!("no episode recorded");
        return Ok(false);
    };
    println!("{}", describe(outcome));
    Ok(outcome.is_complete())
}

pub fn calibrate(
    source: &SourceArgs,
    reference: &[f64],
    sign: Option<&[f64]>,
    samples: usize,
    bridge: &str,
    devices: &DeviceArgs,
    out: &Path,
) -> Result<()> {
    let reference: [f64; 7] = reference.try_into().context("--reference needs 7 values")?;
    let sign: [f64; 7] = match sign {
        Some(s) => s.try_into().context("--sign needs 7 values")?,
        None => [1.0; 7],
    };
    let clock = SystemClock::shared();
    let mut leader = open_source(source, devices, &clock, bridge)?;
    let period = vilas_core::clock::period_from_rate(vilas_core::teleop::TELEOP_RATE_HZ);
    let mut got = Vec::with_capacity(samples);
    let deadline = Instant::now() + period * samples as u32 + Duration::from_secs(30);
    info!(samples, "hold the leader still at the reference pose");
    while got.len() < samples {
        ensure!(Instant::now() < deadline, "leader produced only {} of {samples} samples", got.len());
        ensure!(!stop_flag().load(Ordering::SeqCst), "interrupted");
        if let Some(s) = leader.source.sample(clock.now()) {
            got.push(s.q);
        }
        clock.sleep(period);
    }
    let cal = fit_calibration(&got, &reference, sign, DEFAULT_MAX_STD)?;
    cal.save(out)?;
    println!("calibration written to {}: offset {:?}", out.display(), cal.offset);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn policyd(
    kind: PolicyKind,
    horizon: usize,
    protocols: &[Protocol],
    latency_mean: f64,
    latency_std: f64,
    seed: u64,
    ws_addr: String,
    mq_addr: String,
    world: String,
) -> Result<()> {
    ensure!(!protocols.is_empty(), "no protocols selected");
    let mut cfg = PolicyServerConfig::new(kind, horizon);
    cfg.latency = LatencyProfile::new(latency_mean, latency_std, seed)?;
    cfg.seed = seed;
    cfg.ws_bind = protocols.contains(&Protocol::Ws).then_some(ws_addr);
    cfg.mq_bind = protocols.contains(&Protocol::Mq).then_some(mq_addr);
    if cfg.kind == PolicyKind::Oracle {
        cfg.world_addr = Some(world);
    }
    let mut server = PolicyServer::launch(cfg, SystemClock::shared())?;
    for p in [Protocol::Ws, Protocol::Mq] {
        if let Some(a) = server.addr(p) {
            info!(protocol = %p, addr = %a, "policy server listening");
        }
    }
    wait_for_stop();
    server.shutdown();
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn deploy(
    protocol: Protocol,
    policy: Option<String>,
    horizon: usize,
    rate: f64,
    prompt: String,
    log: Option<&Path>,
    duration: Option<f64>,
    devices: &DeviceArgs,
) -> Result<()> {
    let addr = policy.unwrap_or_else(|| {
        let port = match protocol {
            Protocol::Ws => vilas_core::transport::ports::POLICY_WS,
            Protocol::Mq => vilas_core::transport::ports::POLICY_MQ,
        };
        format!("127.0.0.1:{port}")
    });
    let mut cfg = BrokerConfig::new(protocol, addr, horizon);
    cfg.control_rate_hz = rate;
    cfg.prompt = prompt;
    let mut lp = DeployLoop::new(cfg, DeviceClient::new(&devices.endpoints()), SystemClock::shared())?;
    if let Some(p) = log {
        lp.log_to(p)?;
    }
    let stop = stop_flag();
    let summary = lp.run(duration.map(Duration::from_secs_f64), &mut |_| {
        if stop.load(Ordering::SeqCst) {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    println!(
        "deploy: {} ticks, {} inference calls ({} failed) in {:.1} s",
        summary.ticks, summary.inference_calls, summary.failed_calls, summary.duration_s
    );
    if !summary.latencies_ms.is_empty() {
        print_stats(&summary.latencies_ms, horizon)?;
    }
    Ok(())
}

fn print_stats(latencies: &[f64], horizon: usize) -> Result<()> {
    let s = latency_stats(latencies, horizon)?;
    println!(
        "latency over {} calls: mean {} median {} std {} p95 {} | H={} per-step {}",
        s.samples,
        fmt_ms(s.mean_ms, 1),
        fmt_ms(s.median_ms, 1),
        fmt_ms(s.std_ms, 1),
        fmt_ms(s.p95_ms, 1),
        s.horizon,
        fmt_ms(s.per_step_ms, 2)
    );
    Ok(())
}

pub struct EvalArgs {
    pub policy_kind: PolicyKind,
    pub trials: u32,
    pub seed: u64,
    pub protocol: Protocol,
    pub horizon: usize,
    pub latency_mean: f64,
    pub latency_std: f64,
    pub parallel: usize,
    pub multi_any2: bool,
    pub object: ObjectArg,
    pub out: PathBuf,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = EvalConfig::new(a.policy_kind, a.protocol, a.horizon);
    cfg.trials = a.trials;
    cfg.base_seed = a.seed;
    cfg.latency = LatencyProfile::new(a.latency_mean, a.latency_std, a.seed)?;
    cfg.parallel = a.parallel.max(1);
    cfg.sim = sim_config(a.object);
    if let ObjectArg::Cherry = a.object {
        cfg.prompt = "pick up the cherries and put them in the box".into();
    }
    let started = Instant::now();
    let run = run_trials(&cfg)?;
    let report = EvalReport::build(&cfg, &run, a.multi_any2)?;
    let json = report.write(&a.out, &run.logs)?;
    print!("{}", report.table());
    println!(
        "{} trials in {:.1} s wall time; report at {}",
        report.trials,
        started.elapsed().as_secs_f64(),
        json.display()
    );
    Ok(())
}

pub fn stats(runlog: &Path, horizon: usize) -> Result<()> {
    let events = read_run_log(runlog).with_context(|| format!("reading {}", runlog.display()))?;
    let latencies = latencies_from_log(&events);
    ensure!(!latencies.is_empty(), "no successful inference calls in {}", runlog.display());
    print_stats(&latencies, horizon)
}

/// Episode directories, expanding any root that holds several.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if load_episode(p).is_ok() {
            out.push(p.clone());
        } else {
            let found = list_episodes(p)?;
            ensure!(!found.is_empty(), "{} holds no episodes", p.display());
            out.extend(found);
        }
    }
    Ok(out)
}

pub fn export(paths: &[PathBuf], schema: ExportSchema, out: &Path, allow_mixed: bool) -> Result<()> {
    let episodes = expand(paths)?;
    let manifest = vilas_core::recorder::export(&episodes, out, schema, allow_mixed)?;
    println!(
        "exported {} episodes ({} frames) to {}",
        manifest.episodes.len(),
        manifest.total_frames,
        out.display()
    );
    Ok(())
}

pub fn verify(root: &Path) -> Result<()> {
    let started = Instant::now();
    let dirs = list_episodes(root)?;
    let mut frames = 0;
    let mut bad = 0;
    for d in &dirs {
        match load_episode(d) {
            Ok(ep) => {
                frames += ep.frames.len();
                if ep.meta.truncated {
                    println!("truncated: {}", d.display());
                }
            }
            Err(e) => {
                bad += 1;
                println!("invalid: {}: {e}", d.display());
            }
        }
    }
    println!(
        "{} episodes, {frames} frames, {bad} invalid ({:.2} s)",
        dirs.len(),
        started.elapsed().as_secs_f64()
    );
    ensure!(bad == 0, "{bad} invalid episodes");
    Ok(())
}
