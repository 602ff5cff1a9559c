mod cmd;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vilas_core::broker::Protocol;
use vilas_core::devices::DeviceEndpoints;
use vilas_core::policyd::PolicyKind;

#[derive(Debug, Parser)]
#[command(name = "vilas", version, about = "Simulated arm, teleop, recording, policy serving and evaluation")]
struct Cli {
    /// Log filter, e.g. `info` or `vilas_core=debug`.
    #[arg(long, global = true, env = "VILAS_LOG", default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

/// Device service addresses (connect side).
#[derive(Debug, Clone, Args)]
pub struct DeviceArgs {
    #[arg(long, env = "VILAS_ARM_ADDR", default_value = "127.0.0.1:5601")]
    pub arm: String,
    #[arg(long, env = "VILAS_GRIPPER_ADDR", default_value = "127.0.0.1:5602")]
    pub gripper: String,
    #[arg(long, env = "VILAS_CAMERA_ADDR", default_value = "127.0.0.1:5605")]
    pub camera: String,
}

impl DeviceArgs {
    pub fn endpoints(&self) -> DeviceEndpoints {
        DeviceEndpoints {
            arm: self.arm.clone(),
            gripper: self.gripper.clone(),
            camera: self.camera.clone(),
        }
    }
}

/// Simulated task variant.
#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ObjectArg {
    Grape,
    Cherry,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the simulated arm, gripper and cameras until interrupted.
    Devices {
        #[command(flatten)]
        addrs: DeviceArgs,
        /// Scatter seed for the initial scene.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        objects: usize,
        #[arg(long, value_enum, default_value = "grape")]
        object: ObjectArg,
        /// JSON simulator configuration replacing the defaults.
        #[arg(long)]
        sim_config: Option<PathBuf>,
    },
    /// Forward a leader source to the follower at the teleop rate.
    Teleop {
        #[command(flatten)]
        source: cmd::SourceArgs,
        #[command(flatten)]
        devices: DeviceArgs,
        #[arg(long, default_value_t = 83.3)]
        rate: f64,
        /// Leader calibration file (identity when absent).
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Bridge WebSocket address (bridge source).
        #[arg(long, env = "VILAS_BRIDGE_ADDR", default_value = "127.0.0.1:5604")]
        bridge: String,
        /// Let the bridge's rec.start / rec.stop record episodes here.
        #[arg(long)]
        record_to: Option<PathBuf>,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Teleoperate and record one episode; exits 0 only if it completes.
    Record {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 30.0)]
        rate: f64,
        #[arg(long, default_value_t = 1200)]
        max_frames: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episode_id: Option<String>,
        #[command(flatten)]
        source: cmd::SourceArgs,
        #[command(flatten)]
        devices: DeviceArgs,
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long, env = "VILAS_BRIDGE_ADDR", default_value = "127.0.0.1:5604")]
        bridge: String,
    },
    /// Derive a leader calibration from a still leader held at a reference pose.
    Calibrate {
        #[command(flatten)]
        source: cmd::SourceArgs,
        /// Reference follower pose, 7 comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 7, allow_negative_numbers = true)]
        reference: Vec<f64>,
        /// Per-joint direction, 7 comma-separated ±1 values.
        #[arg(long, value_delimiter = ',', num_args = 7, allow_negative_numbers = true)]
        sign: Option<Vec<f64>>,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, env = "VILAS_BRIDGE_ADDR", default_value = "127.0.0.1:5604")]
        bridge: String,
        #[command(flatten)]
        devices: DeviceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a mock policy over WebSocket and/or framed TCP.
    Policyd {
        #[arg(long, default_value = "zeros")]
        kind: PolicyKind,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long, value_delimiter = ',', default_value = "ws,mq")]
        protocols: Vec<Protocol>,
        #[arg(long, default_value_t = 0.0)]
        latency_mean: f64,
        #[arg(long, default_value_t = 0.0)]
        latency_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "VILAS_POLICY_WS_ADDR", default_value = "127.0.0.1:5606")]
        ws_addr: String,
        #[arg(long, env = "VILAS_POLICY_MQ_ADDR", default_value = "127.0.0.1:5603")]
        mq_addr: String,
        /// Arm service to read world state from (oracle).
        #[arg(long, env = "VILAS_ARM_ADDR", default_value = "127.0.0.1:5601")]
        world: String,
    },
    /// Run the chunked control loop against a policy server.
    Deploy {
        #[arg(long, default_value = "ws")]
        protocol: Protocol,
        /// Policy server address; defaults to the protocol's port.
        #[arg(long, env = "VILAS_POLICY_ADDR")]
        policy: Option<String>,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
        #[arg(long, default_value = "put the grapes in the box")]
        prompt: String,
        /// JSON-lines run log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        duration: Option<f64>,
        #[command(flatten)]
        devices: DeviceArgs,
    },
    /// Run the trial protocol in simulated time and write a report.
    Eval {
        #[arg(long, default_value = "oracle")]
        policy_kind: PolicyKind,
        #[arg(long, default_value_t = 50)]
        trials: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "ws")]
        protocol: Protocol,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long, default_value_t = 0.0)]
        latency_mean: f64,
        #[arg(long, default_value_t = 0.0)]
        latency_std: f64,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Also report the any-two-of-three reading of multi grasp.
        #[arg(long)]
        multi_any2: bool,
        #[arg(long, value_enum, default_value = "grape")]
        object: ObjectArg,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Latency statistics of a deploy run log.
    Stats {
        runlog: PathBuf,
        #[arg(long)]
        horizon: usize,
    },
    /// Export episodes as the native layout or as flat tables.
    Export {
        /// Episode directories, or roots containing them.
        #[arg(required = true)]
        episodes: Vec<PathBuf>,
        #[arg(long, default_value = "table")]
        schema: vilas_core::recorder::ExportSchema,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Load and check every episode under a root.
    Verify { root: PathBuf },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log_level))
        .with_writer(std::io::stderr)
        .init();

    match cli.command {
        Command::Devices { addrs, seed, objects, object, sim_config } => {
            cmd::devices(&addrs, seed, objects, object, sim_config.as_deref())
        }
        Command::Teleop { source, devices, rate, calib, bridge, record_to, duration } => {
            cmd::teleop(&source, &devices, rate, calib.as_deref(), &bridge, record_to, duration)
        }
        Command::Record { prompt, rate, max_frames, out, episode_id, source, devices, calib, bridge } => {
            let complete = cmd::record(
                &prompt,
                rate,
                max_frames,
                out,
                episode_id,
                &source,
                &devices,
                calib.as_deref(),
                &bridge,
            )?;
            if !complete {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Calibrate { source, reference, sign, samples, bridge, devices, out } => {
            cmd::calibrate(&source, &reference, sign.as_deref(), samples, &bridge, &devices, &out)
        }
        Command::Policyd {
            kind,
            horizon,
            protocols,
            latency_mean,
            latency_std,
            seed,
            ws_addr,
            mq_addr,
            world,
        } => cmd::policyd(kind, horizon, &protocols, latency_mean, latency_std, seed, ws_addr, mq_addr, world),
        Command::Deploy { protocol, policy, horizon, rate, prompt, log, duration, devices } => {
            cmd::deploy(protocol, policy, horizon, rate, prompt, log.as_deref(), duration, &devices)
        }
        Command::Eval {
            policy_kind,
            trials,
            seed,
            protocol,
            horizon,
            latency_mean,
            latency_std,
            parallel,
            multi_any2,
            object,
            out,
        } => cmd::eval(cmd::EvalArgs {
            policy_kind,
            trials,
            seed,
            protocol,
            horizon,
            latency_mean,
            latency_std,
            parallel,
            multi_any2,
            object,
            out,
        }),
        Command::Stats { runlog, horizon } => cmd::stats(&runlog, horizon),
        Command::Export { episodes, schema, out, allow_mixed } => cmd::export(&episodes, schema, &out, allow_mixed),
        Command::Verify { root } => cmd::verify(&root),
    }
}
