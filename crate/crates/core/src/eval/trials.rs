use std::ops::{ControlFlow, Range};
use std::sync::Arc;
use std::time::Duration;

use tracing::{info, warn};

use super::metrics::{TrialRecord, ATTEMPTS_PER_TRIAL};
use super::EvalError;
use crate::broker::{BrokerConfig, DeployLoop, Protocol, RunEvent, CONTROL_RATE_HZ};
use crate::clock::{SharedClock, VirtualClock};
use crate::devices::{DeviceAddrs, DeviceClient, DeviceStack, SharedWorld};
use crate::policyd::{check_horizon, LatencyProfile, OracleConfig, PolicyKind, PolicyServer, PolicyServerConfig};
use crate::simworld::{SimConfig, WorldState};

pub const ATTEMPT_TIMEOUT: Duration = Duration::from_secs(30);
pub const OBJECTS_PER_TRIAL: usize = 10;

/// Gripper and height thresholds that cut a run into attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttemptThresholds {
    /// Closure at or above which the gripper counts as closed.
    pub closed_g: f64,
    /// Tool height (m) above which a closed gripper counts as lifted.
    pub lift_z: f64,
    /// Closure at or below which the gripper counts as open again.
    pub open_g: f64,
    pub timeout: Duration,
}

impl Default for AttemptThresholds {
    fn default() -> Self {
        Self {
            closed_g: 0.3,
            lift_z: 0.05,
            open_g: 0.1,
            timeout: ATTEMPT_TIMEOUT,
        }
    }
}

/// Segments a run into attempts: close → lift → open ends one, as does the
/// timeout. An attempt succeeds when the deposit count grew during it.
#[derive(Debug, Clone)]
pub struct AttemptTracker {
    th: AttemptThresholds,
    max_attempts: usize,
    outcomes: Vec<bool>,
    start: Duration,
    deposits_at_start: u32,
    closed: bool,
    lifted: bool,
    last_t: Duration,
}

impl AttemptTracker {
    pub fn new(th: AttemptThresholds, max_attempts: usize, start: Duration, deposits: u32) -> Self {
        Self {
            th,
            max_attempts,
            outcomes: Vec::with_capacity(max_attempts),
            start,
            deposits_at_start: deposits,
            closed: false,
            lifted: false,
            last_t: start,
        }
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    pub fn done(&self) -> bool {
        self.outcomes.len() >= self.max_attempts
    }

    /// Time of the last attempt boundary (or of the last observation).
    pub fn last_time(&self) -> Duration {
        self.last_t
    }

    fn close_attempt(&mut self, t: Duration, deposits: u32) {
        self.outcomes.push(deposits > self.deposits_at_start);
        self.start = t;
        self.deposits_at_start = deposits;
        self.closed = false;
        self.lifted = false;
    }

    pub fn observe(&mut self, t: Duration, s: &WorldState) -> ControlFlow<()> {
        if self.done() {
            return ControlFlow::Break(());
        }
        self.last_t = t;
        let g = s.joints.g;
        if g >= self.th.closed_g {
            self.closed = true;
        }
        if self.closed && g >= self.th.closed_g && s.tcp.z > self.th.lift_z {
            self.lifted = true;
        }
        if g <= self.th.open_g && self.lifted {
            self.close_attempt(t, s.deposits);
        } else {
            if g <= self.th.open_g {
                // Opened without lifting: a fumble inside the same attempt.
                self.closed = false;
            }
            if t.saturating_sub(self.start) >= self.th.timeout {
                self.close_attempt(t, s.deposits);
            }
        }
        if self.done() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }

    /// Finish early (run ended): remaining attempts count as failures.
    pub fn into_outcomes(mut self) -> Vec<bool> {
        self.outcomes.resize(self.max_attempts, false);
        self.outcomes
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub policy: PolicyKind,
    pub protocol: Protocol,
    pub horizon: usize,
    pub trials: u32,
    /// Trial `i` resets the world with `base_seed + i`.
    pub base_seed: u64,
    pub n_objects: usize,
    pub latency: LatencyProfile,
    /// Seed of the random policy.
    pub policy_seed: u64,
    pub parallel: usize,
    pub thresholds: AttemptThresholds,
    pub sim: SimConfig,
    pub oracle: OracleConfig,
    pub prompt: String,
    pub control_rate_hz: f64,
}

impl EvalConfig {
    pub fn new(policy: PolicyKind, protocol: Protocol, horizon: usize) -> Self {
        Self {
            policy,
            protocol,
            horizon,
            trials: 50,
            base_seed: 7,
            n_objects: OBJECTS_PER_TRIAL,
            latency: LatencyProfile::zero(),
            policy_seed: 0,
            parallel: 1,
            thresholds: AttemptThresholds::default(),
            sim: SimConfig::default(),
            oracle: OracleConfig::default(),
            prompt: "pick up the grapes and put them in the box".into(),
            control_rate_hz: CONTROL_RATE_HZ,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        check_horizon(self.horizon).map_err(|e| EvalError::Invalid(e.to_string()))?;
        self.latency.validate().map_err(|e| EvalError::Invalid(e.to_string()))?;
        if self.trials == 0 {
            return Err(EvalError::Invalid("need at least one trial".into()));
        }
        if self.parallel == 0 {
            return Err(EvalError::Invalid("parallel must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalRun {
    pub records: Vec<TrialRecord>,
    /// Latencies of every successful inference call, trial order.
    pub latencies_ms: Vec<f64>,
    /// Run log of each trial, indexed like `records`.
    pub logs: Vec<Vec<RunEvent>>,
}

/// Trials start on this grid of simulated time so every timing phase
/// (simulator step, camera tick, control tick) is the same for a trial
/// whichever shard runs it.
const TRIAL_ALIGN: Duration = Duration::from_millis(6600);

fn align(t: Duration) -> Duration {
    let n = t.as_nanos().div_ceil(TRIAL_ALIGN.as_nanos());
    Duration::from_nanos((n * TRIAL_ALIGN.as_nanos()) as u64) + TRIAL_ALIGN
}

struct Stack {
    clock: SharedClock,
    devices: DeviceStack,
    server: PolicyServer,
}

impl Stack {
    fn launch(config: &EvalConfig, first_trial: u32) -> Result<Self, EvalError> {
        let clock: SharedClock = VirtualClock::shared();
        let world = SharedWorld::new(config.sim.clone(), clock.clone()).map_err(|e| EvalError::Setup(e.to_string()))?;
        let devices =
            DeviceStack::launch(world, &DeviceAddrs::ephemeral()).map_err(|e| EvalError::Setup(e.to_string()))?;
        let mut pc = PolicyServerConfig::new(config.policy.clone(), config.horizon)
            .ephemeral()
            .only(config.protocol);
        // Session k of this stack serves trial first_trial + k.
        pc.seed = config.policy_seed.wrapping_add(u64::from(first_trial));
        pc.latency = LatencyProfile {
            seed: config.latency.seed.wrapping_add(u64::from(first_trial)),
            ..config.latency
        };
        pc.world_addr = Some(devices.endpoints().arm);
        pc.sim = config.sim.clone();
        pc.oracle = config.oracle.clone();
        pc.control_rate_hz = config.control_rate_hz;
        let server = PolicyServer::launch(pc, clock.clone()).map_err(|e| EvalError::Setup(e.to_string()))?;
        Ok(Self { clock, devices, server })
    }

    fn run_trial(&mut self, config: &EvalConfig, trial_id: u32) -> (TrialRecord, Vec<f64>, Vec<RunEvent>) {
        let seed = config.base_seed.wrapping_add(u64::from(trial_id));
        let endpoints = self.devices.endpoints();
        let t_align = align(self.clock.now());
        self.clock.sleep_until(t_align);
        let mut devices = DeviceClient::new(&endpoints);
        if let Err(e) = devices.reset(seed, config.n_objects) {
            return (TrialRecord::aborted(trial_id, seed, 0.0, format!("reset: {e}")), vec![], vec![]);
        }
        let t0 = self.clock.now();
        let addr = self.server.addr(config.protocol).expect("protocol enabled");
        let mut bc = BrokerConfig::new(config.protocol, addr, config.horizon);
        bc.prompt = config.prompt.clone();
        bc.control_rate_hz = config.control_rate_hz;
        let mut deploy = match DeployLoop::new(bc, DeviceClient::new(&endpoints), self.clock.clone()) {
            Ok(d) => d,
            Err(e) => return (TrialRecord::aborted(trial_id, seed, 0.0, e.to_string()), vec![], vec![]),
        };
        let world = self.devices.world.clone();
        let mut tracker = AttemptTracker::new(config.thresholds, ATTEMPTS_PER_TRIAL, t0, world.snapshot().deposits);
        // The tracker always finishes within attempts × timeout; the cap
        // only guards against a loop that never dispatches.
        let cap = config.thresholds.timeout * (ATTEMPTS_PER_TRIAL as u32 + 1);
        let result = deploy.run(Some(cap), &mut |tick| tracker.observe(tick.t, &world.snapshot()));
        let log = deploy.events().to_vec();
        match result {
            Ok(summary) => {
                let end = if tracker.done() { tracker.last_time() } else { self.clock.now() };
                let wall = end.saturating_sub(t0).as_secs_f64();
                (TrialRecord::new(trial_id, seed, tracker.into_outcomes(), wall), summary.latencies_ms, log)
            }
            Err(e) => {
                warn!(trial_id, "trial aborted: {e}");
                let wall = self.clock.now().saturating_sub(t0).as_secs_f64();
                let lat = crate::broker::latencies_from_log(&log);
                (TrialRecord::aborted(trial_id, seed, wall, e.to_string()), lat, log)
            }
        }
    }
}

/// A finished trial with its call latencies and run log.
type TrialOutput = (TrialRecord, Vec<f64>, Vec<RunEvent>);

fn run_shard(config: &EvalConfig, ids: Range<u32>) -> Result<Vec<TrialOutput>, EvalError> {
    let mut stack = Stack::launch(config, ids.start)?;
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let r = stack.run_trial(config, id);
        info!(
            trial = id,
            outcomes = ?r.0.attempt_outcomes,
            aborted = r.0.aborted,
            "trial finished"
        );
        out.push(r);
    }
    stack.server.shutdown();
    Ok(out)
}

/// Run the trial protocol on in-process simulated stacks with simulated
/// time. Trials are split into `parallel` contiguous shards, each with its
/// own world, device services and policy server.
pub fn run_trials(config: &EvalConfig) -> Result<EvalRun, EvalError> {
    config.validate()?;
    let shards = config.parallel.min(config.trials as usize);
    let per = config.trials.div_ceil(shards as u32);
    let ranges: Vec<Range<u32>> = (0..shards as u32)
        .map(|s| (s * per).min(config.trials)..((s + 1) * per).min(config.trials))
        .filter(|r| !r.is_empty())
        .collect();
    let results: Vec<Result<Vec<_>, EvalError>> = if ranges.len() == 1 {
        vec![run_shard(config, ranges[0].clone())]
    } else {
        let config = Arc::new(config.clone());
        std::thread::scope(|s| {
            let handles: Vec<_> = ranges
                .iter()
                .cloned()
                .map(|r| {
                    let c = config.clone();
                    s.spawn(move || run_shard(&c, r))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(EvalError::Setup("shard panicked".into()))))
                .collect()
        })
    };
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    all.sort_by_key(|(rec, _, _)| rec.trial_id);
    let mut run = EvalRun::default();
    for (rec, lat, log) in all {
        run.records.push(rec);
        run.latencies_ms.extend(lat);
        run.logs.push(log);
    }
    Ok(run)
}
