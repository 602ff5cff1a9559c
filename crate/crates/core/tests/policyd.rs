mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Duration;

use common::*;
use proptest::prelude::*;
use vilas_core::broker::{observation_envelope, ActionChunk, BrokerConfig, DeployLoop, PolicyAdapter, Protocol};
use vilas_core::devices::imaging::encode_png;
use vilas_core::devices::{DeviceClient, Observation};
use vilas_core::eval::{run_trials, EvalConfig};
use vilas_core::policyd::policies::{instantiate, resample_zoh, ReplayPolicy, RANDOM_STEP};
use vilas_core::policyd::{LatencyProfile, PolicyError, PolicyKind, PolicyServer, PolicyServerConfig};
use vilas_core::recorder::{EpisodeMeta, EpisodeWriter, FrameRecord};
use vilas_core::simworld::ArmModel;
use vilas_core::transport::{encode, Envelope, FrameDecoder};

fn observation(joints: [f64; 7]) -> Observation {
    Observation {
        joints,
        prompt: "pick up the grapes".into(),
        ..Default::default()
    }
}

fn server(kind: PolicyKind, horizon: usize) -> PolicyServer {
    PolicyServer::launch(PolicyServerConfig::new(kind, horizon).ephemeral(), virtual_clock()).unwrap()
}

fn infer(a: &mut PolicyAdapter, obs: &Observation, id: u64, horizon: usize) -> ActionChunk {
    let reply = a
        .call(observation_envelope(obs, id).unwrap(), Duration::from_secs(5))
        .unwrap();
    ActionChunk::from_envelope(&reply, horizon).unwrap()
}

#[test]
fn zeros_policy_serves_h_by_7_zeros_on_both_protocols() {
    for h in [16, 50] {
        let s = server(PolicyKind::Zeros, h);
        for p in [Protocol::Ws, Protocol::Mq] {
            let mut a = PolicyAdapter::connect(p, &s.addr(p).unwrap(), Duration::from_secs(1)).unwrap();
            let c = infer(&mut a, &observation([0.3; 7]), 1, h);
            assert_eq!(c.actions, vec![[0.0; 7]; h]);
        }
    }
}

#[test]
fn only_the_two_serving_horizons_are_accepted() {
    for h in [0, 1, 15, 32, 51] {
        let err = PolicyServer::launch(PolicyServerConfig::new(PolicyKind::Zeros, h).ephemeral(), virtual_clock())
            .unwrap_err();
        assert!(matches!(err, PolicyError::Config(_)), "{h}");
    }
    let err = PolicyServer::launch(PolicyServerConfig::new(PolicyKind::Oracle, 50).ephemeral(), virtual_clock())
        .unwrap_err();
    assert!(err.to_string().contains("world"));
}

/// Nearest-rank percentile and mean, written out without the crate.
fn mean_and_p95(v: &[f64]) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rank = 0;
    while (rank as f64) < 0.95 * s.len() as f64 {
        rank += 1;
    }
    (v.iter().sum::<f64>() / v.len() as f64, s[rank - 1])
}

#[test]
fn injected_latency_is_what_the_client_measures() {
    let clock = virtual_clock();
    let mut cfg = PolicyServerConfig::new(PolicyKind::Zeros, 50).ephemeral();
    cfg.latency = LatencyProfile::new(73.8, 0.4, 11).unwrap();
    let s = PolicyServer::launch(cfg, clock.clone()).unwrap();
    let mut a = PolicyAdapter::connect(Protocol::Mq, &s.addr(Protocol::Mq).unwrap(), Duration::from_secs(1)).unwrap();
    let obs = observation([0.0; 7]);
    let measured: Vec<f64> = (1..=1000)
        .map(|id| {
            let t0 = clock.now();
            infer(&mut a, &obs, id, 50);
            (clock.now() - t0).as_secs_f64() * 1e3
        })
        .collect();
    let injected = s.injected_ms();
    assert_eq!(injected.len(), 1000);
    let (m_mean, m_p95) = mean_and_p95(&measured);
    let (i_mean, i_p95) = mean_and_p95(&injected);
    assert!((m_mean - i_mean).abs() <= 0.1, "{m_mean} vs {i_mean}");
    assert!((m_p95 - i_p95).abs() <= 0.2, "{m_p95} vs {i_p95}");
    // and the injected stream itself has the configured shape
    let std = (injected.iter().map(|v| (v - i_mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
    assert!((i_mean - 73.8).abs() < 0.05 && (std - 0.4).abs() < 0.05, "{i_mean} {std}");
}

#[test]
fn same_seed_gives_the_same_chunks_on_either_protocol() {
    let mut cfg = PolicyServerConfig::new(PolicyKind::Random, 16).ephemeral();
    cfg.seed = 99;
    let s = PolicyServer::launch(cfg, virtual_clock()).unwrap();
    let obs = [observation([0.1, 0.5, -1.0, -0.8, 0.0, 0.2, 0.3]), observation([0.0; 7])];
    let run = |p: Protocol| {
        let mut a = PolicyAdapter::connect(p, &s.addr(p).unwrap(), Duration::from_secs(1)).unwrap();
        (1..=6)
            .map(|id| infer(&mut a, &obs[id as usize % 2], id, 16).actions)
            .collect::<Vec<_>>()
    };
    let ws = run(Protocol::Ws);
    let mq = run(Protocol::Mq);
    assert_eq!(ws, mq);
    // the second session on a listener is seeded differently
    assert_ne!(run(Protocol::Mq), mq);
}

#[test]
fn pipelined_requests_are_answered_in_order() {
    let s = server(PolicyKind::Random, 16);
    let mut sock = TcpStream::connect(s.addr(Protocol::Mq).unwrap()).unwrap();
    let mut burst = Vec::new();
    for id in 1..=8u64 {
        burst.extend(encode(&observation_envelope(&observation([0.0; 7]), id).unwrap()).unwrap());
    }
    sock.write_all(&burst).unwrap();
    sock.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut dec = FrameDecoder::new();
    let mut ids = Vec::new();
    let mut buf = [0u8; 65536];
    while ids.len() < 8 {
        let n = sock.read(&mut buf).unwrap();
        assert!(n > 0, "server closed early");
        dec.push(&buf[..n]);
        while let Some(env) = dec.next_envelope().unwrap() {
            ActionChunk::from_envelope(&env, 16).unwrap();
            ids.push(env.id.unwrap());
        }
    }
    assert_eq!(ids, (1..=8).collect::<Vec<_>>());
}

#[test]
fn malformed_observations_are_refused() {
    let s = server(PolicyKind::Zeros, 16);
    for p in [Protocol::Ws, Protocol::Mq] {
        let mut a = PolicyAdapter::connect(p, &s.addr(p).unwrap(), Duration::from_secs(1)).unwrap();
        let no_joints = Envelope::new("policy.infer").with("prompt", "x").with_id(1);
        let err = a.call(no_joints, Duration::from_secs(2)).unwrap_err();
        assert_eq!(err.remote_code(), Some("bad-observation"));
        let short = Envelope::new("policy.infer")
            .with("joints", serde_json::json!([0.0, 0.0]))
            .with_id(2);
        assert_eq!(a.call(short, Duration::from_secs(2)).unwrap_err().remote_code(), Some("bad-observation"));
        let err = a.call(Envelope::new("policy.train").with_id(3), Duration::from_secs(2)).unwrap_err();
        assert_eq!(err.remote_code(), Some("unknown-type"));
        // the session survives refused requests
        assert_eq!(infer(&mut a, &observation([0.0; 7]), 4, 16).actions.len(), 16);
    }
}

fn joint_state() -> impl Strategy<Value = [f64; 7]> {
    let lim = ArmModel::default().joint_limits;
    (
        lim[0][0]..lim[0][1],
        lim[1][0]..lim[1][1],
        lim[2][0]..lim[2][1],
        lim[3][0]..lim[3][1],
        lim[4][0]..lim[4][1],
        lim[5][0]..lim[5][1],
        0.0..=1.0,
    )
        .prop_map(|(a, b, c, d, e, f, g)| [a, b, c, d, e, f, g])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_kind_answers_with_exactly_h_rows(
        joints in joint_state(),
        seed in any::<u64>(),
        h in prop::sample::select(vec![16usize, 50]),
        calls in 1usize..4,
    ) {
        let lim = ArmModel::default().joint_limits;
        let recorded: Vec<[f64; 7]> = (0..37).map(|i| [i as f64 * 0.01; 7]).collect();
        let mut policies = [instantiate(&PolicyKind::Zeros, seed, 20.0, None).unwrap(),
            instantiate(&PolicyKind::Random, seed, 20.0, None).unwrap(),
            Box::new(ReplayPolicy::from_actions(&recorded, 30.0, 20.0).unwrap())];
        let obs = observation(joints);
        for (kind, p) in policies.iter_mut().enumerate() {
            for _ in 0..calls {
                let rows = p.infer(&obs, h).unwrap();
                prop_assert_eq!(rows.len(), h);
                prop_assert!(rows.iter().flatten().all(|v| v.is_finite()));
                if kind == 1 {
                    let mut prev = joints;
                    for r in &rows {
                        for j in 0..7 {
                            prop_assert!((r[j] - prev[j]).abs() <= RANDOM_STEP + 1e-12);
                        }
                        for j in 0..6 {
                            prop_assert!(r[j] >= lim[j][0] && r[j] <= lim[j][1]);
                        }
                        prop_assert!((0.0..=1.0).contains(&r[6]));
                        prev = *r;
                    }
                }
            }
        }
    }
}

#[test]
fn replay_resamples_by_zero_order_hold() {
    // 40 s at 30 Hz onto a 20 Hz grid: step j starts at j/20 s, and the
    // newest frame not after that is frame floor(1.5 j)
    let recorded: Vec<[f64; 7]> = (0..1200).map(|i| [i as f64; 7]).collect();
    let steps = resample_zoh(&recorded, 30.0, 20.0);
    assert_eq!(steps.len(), 800);
    for (j, s) in steps.iter().enumerate() {
        assert_eq!(s[0], ((3 * j) / 2) as f64);
    }
    let mut p = ReplayPolicy::from_actions(&recorded, 30.0, 20.0).unwrap();
    let obs = observation([0.0; 7]);
    let mut served = Vec::new();
    for _ in 0..17 {
        served.extend(vilas_core::policyd::policies::Policy::infer(&mut p, &obs, 50).unwrap());
    }
    assert_eq!(served[..800], steps[..]);
    // exhausted: the last resampled row (frame 1198) repeats
    assert!(served[800..].iter().all(|r| *r == recorded[1198]));
}

/// Drive the oracle on a fresh world with `seed`, then write what it
/// commanded as a 30 Hz episode (sample-and-hold of the 20 Hz actions).
fn record_oracle_episode(root: &Path, seed: u64, seconds: f64) -> PathBuf {
    let clock = virtual_clock();
    let stack = devices(&clock);
    DeviceClient::new(&stack.endpoints()).reset(seed, 10).unwrap();
    let mut pc = PolicyServerConfig::new(PolicyKind::Oracle, 50).ephemeral().only(Protocol::Mq);
    pc.world_addr = Some(stack.endpoints().arm);
    let server = PolicyServer::launch(pc, clock.clone()).unwrap();
    let t0 = clock.now();
    let mut d = DeployLoop::new(
        BrokerConfig::new(Protocol::Mq, server.addr(Protocol::Mq).unwrap(), 50),
        DeviceClient::new(&stack.endpoints()),
        clock.clone(),
    )
    .unwrap();
    let mut ticks = Vec::new();
    d.run(Some(Duration::from_secs_f64(seconds)), &mut |t| {
        ticks.push(((t.t - t0).as_secs_f64(), t.action));
        ControlFlow::Continue(())
    })
    .unwrap();
    assert!(stack.world.snapshot().deposits >= 1, "oracle run deposited nothing");

    let png = encode_png(&image::RgbImage::new(224, 224)).unwrap();
    let mut w = EpisodeWriter::create(root, "oracle").unwrap();
    let frames = (seconds * 30.0) as u64;
    for i in 0..frames {
        let t = i as f64 / 30.0;
        let action = ticks.iter().rev().find(|(tt, _)| *tt <= t + 1e-9).unwrap().1;
        let f = FrameRecord {
            index: i,
            t_ms: t * 1e3,
            image_t_ms: t * 1e3,
            state: action,
            action,
            prompt: "pick up the grapes".into(),
        };
        w.append(&f, &png, &png).unwrap();
    }
    let mut meta = EpisodeMeta::new("oracle", "pick up the grapes", 30.0);
    meta.seed = Some(seed);
    w.finish(meta).unwrap()
}

#[test]
fn replaying_an_oracle_episode_grasps_again() {
    let dir = tempfile::tempdir().unwrap();
    let seed = 21;
    let ep = record_oracle_episode(dir.path(), seed, 30.0);
    let mut cfg = EvalConfig::new(PolicyKind::Replay(ep), Protocol::Mq, 50);
    cfg.trials = 1;
    cfg.base_seed = seed;
    let run = run_trials(&cfg).unwrap();
    let r = &run.records[0];
    assert!(!r.aborted);
    assert!(r.grasp_count >= 1, "{r:?}");
}
