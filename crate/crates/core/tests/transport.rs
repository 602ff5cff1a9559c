use std::io::{Read, Write};
use std::net::TcpListener;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use vilas_core::transport::{
    encode, frame_payload, serve, serve_ws, stateless, Connection, Envelope, FrameDecoder, TransportError,
    WsConnection,
};

const T: Duration = Duration::from_secs(2);

fn echo() -> std::sync::Arc<dyn vilas_core::transport::Service> {
    stateless(|req: &Envelope| {
        Ok(match req.t.as_str() {
            "ping" => Envelope::new("pong"),
            _ => Envelope {
                t: format!("{}.echo", req.t),
                id: None,
                body: req.body.clone(),
            },
        })
    })
}

#[test]
fn ping_gets_pong_with_the_same_id() {
    let server = serve("127.0.0.1:0", "echo", echo()).unwrap();
    let mut c = Connection::connect(&server.addr_string(), T).unwrap();
    let reply = c.request_with_id(Envelope::new("ping").with_id(41), T).unwrap();
    assert_eq!(reply.t, "pong");
    assert_eq!(reply.id, Some(41));
}

#[test]
fn thousand_sequential_requests_stay_in_order() {
    let server = serve("127.0.0.1:0", "echo", echo()).unwrap();
    let mut c = Connection::connect(&server.addr_string(), T).unwrap();
    for i in 1..=1000u64 {
        let r = c.request(Envelope::new("n").with("i", i), T).unwrap();
        assert_eq!(r.id, Some(i));
        assert_eq!(r.get("i"), Some(&json!(i)));
    }
    assert_eq!(c.last_id(), 1000);
}

#[test]
fn request_after_server_closes_errors_instead_of_hanging() {
    let mut server = serve("127.0.0.1:0", "echo", echo()).unwrap();
    let addr = server.addr_string();
    let mut c = Connection::connect(&addr, T).unwrap();
    c.request(Envelope::new("ping"), T).unwrap();
    server.shutdown();
    let t0 = Instant::now();
    let err = c.request(Envelope::new("ping"), T).unwrap_err();
    assert!(
        matches!(err, TransportError::Closed | TransportError::Io(_) | TransportError::Timeout),
        "{err:?}"
    );
    assert!(t0.elapsed() <= T + Duration::from_millis(500));
    assert!(c.is_broken());
}

#[test]
fn ids_must_increase() {
    let server = serve("127.0.0.1:0", "echo", echo()).unwrap();
    let mut c = Connection::connect(&server.addr_string(), T).unwrap();
    c.request_with_id(Envelope::new("ping").with_id(5), T).unwrap();
    let err = c.request_with_id(Envelope::new("ping").with_id(5), T).unwrap_err();
    assert!(matches!(err, TransportError::Protocol(_)));
}

/// A peer that answers every request twice with the same id: the second
/// copy arrives while the client waits for its next id.
#[test]
fn duplicate_reply_id_is_detected() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let peer = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut dec = FrameDecoder::new();
        let mut buf = [0u8; 4096];
        loop {
            let n = match s.read(&mut buf) {
                Ok(0) | Err(_) => return,
                Ok(n) => n,
            };
            dec.push(&buf[..n]);
            while let Ok(Some(req)) = dec.next_envelope() {
                let mut reply = Envelope::new("pong");
                reply.id = req.id;
                let bytes = encode(&reply).unwrap();
                let _ = s.write_all(&bytes);
                let _ = s.write_all(&bytes);
            }
        }
    });
    let mut c = Connection::connect(&addr, T).unwrap();
    c.request(Envelope::new("ping"), T).unwrap();
    let err = c.request(Envelope::new("ping"), T).unwrap_err();
    assert!(
        matches!(err, TransportError::IdMismatch { expected: 2, got: Some(1) }),
        "{err:?}"
    );
    assert!(c.is_broken());
    drop(c);
    peer.join().unwrap();
}

#[test]
fn websocket_flavour_matches_tcp_payloads() {
    let tcp = serve("127.0.0.1:0", "echo", echo()).unwrap();
    let ws = serve_ws("127.0.0.1:0", "echo-ws", echo()).unwrap();
    let mut a = Connection::connect(&tcp.addr_string(), T).unwrap();
    let mut b = WsConnection::connect(&ws.addr_string(), T).unwrap();
    for i in 1..=50u64 {
        let req = Envelope::new("x").with("v", i as f64 * 0.1).with_id(i);
        let ra = a.request_with_id(req.clone(), T).unwrap();
        let rb = b.request_with_id(req, T).unwrap();
        assert_eq!(ra.to_payload().unwrap(), rb.to_payload().unwrap());
    }
}

fn key() -> impl Strategy<Value = String> {
    "[a-z_]{1,8}".prop_filter("reserved", |k| k != "t" && k != "id")
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(|v| json!(v)),
        (-1e12f64..1e12).prop_map(|v| json!(v)),
        "\\PC{0,24}".prop_map(Value::String),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(3, 24, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
            prop::collection::btree_map(key(), inner, 0..4).prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn envelope() -> impl Strategy<Value = Envelope> {
    (
        "[a-z]{1,6}(\\.[a-z]{1,6})?",
        proptest::option::of(any::<u64>()),
        prop::collection::btree_map(key(), value(), 0..5),
    )
        .prop_map(|(t, id, body)| Envelope {
            t,
            id,
            body: body.into_iter().collect::<Map<_, _>>(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn decode_inverts_encode(env in envelope()) {
        let bytes = encode(&env).unwrap();
        let mut d = FrameDecoder::new();
        d.push(&bytes);
        prop_assert_eq!(d.next_envelope().unwrap(), Some(env));
        prop_assert_eq!(d.pending(), 0);
    }

    /// 128 cases × 80 envelopes: > 10⁴ envelopes through random partitions.
    #[test]
    fn any_partition_decodes_identically(envs in prop::collection::vec(envelope(), 80), seed in any::<u64>()) {
        let stream: Vec<u8> = envs.iter().flat_map(|e| encode(e).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < stream.len() {
            let n = rng.gen_range(1..=64.min(stream.len() - pos));
            d.push(&stream[pos..pos + n]);
            pos += n;
            while let Some(e) = d.next_envelope().unwrap() {
                out.push(e);
            }
        }
        prop_assert_eq!(out, envs);
    }
}

#[test]
fn framing_header_is_big_endian_length() {
    let p = br#"{"t":"ping"}"#;
    let f = frame_payload(p).unwrap();
    assert_eq!(&f[..4], &[0, 0, 0, 12]);
    assert_eq!(&f[4..], p);
}
