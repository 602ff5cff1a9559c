//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::mpsc;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use vilas_core::broker::ActionChunk;
use vilas_core::clock::{SharedClock, VirtualClock};
use vilas_core::devices::{DeviceAddrs, DeviceClient, DeviceStack, SharedWorld};
use vilas_core::recorder::{EpisodeOutcome, RecorderConfig, RecorderTask};
use vilas_core::sched::{run_periodic, Periodic};
use vilas_core::simworld::SimConfig;
use vilas_core::teleop::{LeaderSource, ScriptedSource, TeleopConfig, TeleopLoop, Waypoint};
use vilas_core::transport::encode;

pub fn virtual_clock() -> SharedClock {
    VirtualClock::shared()
}

pub fn devices(clock: &SharedClock) -> DeviceStack {
    let world = SharedWorld::new(SimConfig::default(), clock.clone()).unwrap();
    DeviceStack::launch(world, &DeviceAddrs::ephemeral()).unwrap()
}

pub fn run_for(clock: &SharedClock, tasks: &mut [&mut dyn Periodic], secs: f64) {
    run_periodic(clock, tasks, Some(Duration::from_secs_f64(secs)), &AtomicBool::new(false));
}

/// Joint-space sines around a comfortable pose.
pub fn sine_source(seconds: f64) -> ScriptedSource {
    ScriptedSource::sines([0.0, 0.6, -1.2, -0.9, 0.0, 0.0, 0.0], 0.15, 5.0, seconds, 0.05)
}

/// Joint 0 rising at `slope` rad/s from zero, everything else fixed.
pub fn ramp_source(slope: f64, seconds: f64) -> ScriptedSource {
    let base = [0.0, 0.6, -1.2, -0.9, 0.0, 0.0, 0.0];
    let mut end = base;
    end[0] = slope * seconds;
    ScriptedSource::new(vec![Waypoint { t_s: 0.0, q: base }, Waypoint { t_s: seconds, q: end }]).unwrap()
}

pub struct Session {
    pub outcome: EpisodeOutcome,
    pub teleop_commands: u64,
}

/// Teleop plus recorder on one stack until the recorder has `max_frames`
/// (or `limit_s` passes).
#[allow(clippy::too_many_arguments)]
pub fn record_session(
    clock: &SharedClock,
    stack: &DeviceStack,
    out: &Path,
    id: &str,
    source: Box<dyn LeaderSource>,
    rate_hz: f64,
    max_frames: u64,
    limit_s: f64,
) -> Session {
    let mut tele = TeleopLoop::new(
        TeleopConfig::default(),
        source,
        DeviceClient::new(&stack.endpoints()),
        clock.clone(),
    );
    let mut cfg = RecorderConfig::new(out, "put the grapes in the box");
    cfg.rate_hz = rate_hz;
    cfg.max_frames = max_frames;
    cfg.episode_id = Some(id.to_owned());
    let mut rec = RecorderTask::new(cfg, DeviceClient::new(&stack.endpoints()), tele.tap(), clock.clone());
    run_for(clock, &mut [&mut tele, &mut rec], limit_s);
    Session {
        outcome: rec.outcomes().last().cloned().expect("episode finalized"),
        teleop_commands: tele.stats().commands,
    }
}

pub fn record_scripted(out: &Path, id: &str, source: ScriptedSource, seconds: f64) -> EpisodeOutcome {
    let clock = virtual_clock();
    let stack = devices(&clock);
    record_session(&clock, &stack, out, id, Box::new(source), 30.0, 1200, seconds + 1.0).outcome
}

fn chunk_reply(payload: &[u8]) -> vilas_core::transport::Envelope {
    let id = serde_json::from_slice::<serde_json::Value>(payload).unwrap()["id"].as_u64();
    ActionChunk::new(vec![[0.0; 7]; 16]).to_envelope(id)
}

/// Raw framed-TCP policy endpoint that forwards the first `n` request
/// payloads exactly as they arrived and answers each with a 16-row chunk.
/// Written against the wire format only.
pub fn capture_mq(n: usize) -> (String, mpsc::Receiver<Vec<u8>>) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let (mut s, _) = l.accept().unwrap();
        for _ in 0..n {
            let mut len = [0u8; 4];
            s.read_exact(&mut len).unwrap();
            let mut payload = vec![0u8; u32::from_be_bytes(len) as usize];
            s.read_exact(&mut payload).unwrap();
            let reply = chunk_reply(&payload);
            tx.send(payload).unwrap();
            s.write_all(&encode(&reply).unwrap()).unwrap();
        }
    });
    (addr, rx)
}

/// WebSocket counterpart of [`capture_mq`].
pub fn capture_ws(n: usize) -> (String, mpsc::Receiver<Vec<u8>>) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let (s, _) = l.accept().unwrap();
        let mut ws = tungstenite::accept(s).unwrap();
        for _ in 0..n {
            let tungstenite::Message::Binary(payload) = ws.read().unwrap() else {
                panic!("expected a binary message");
            };
            let reply = chunk_reply(&payload);
            tx.send(payload).unwrap();
            ws.send(tungstenite::Message::Binary(reply.to_payload().unwrap())).unwrap();
        }
        let _ = ws.read();
    });
    (addr, rx)
}
