use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use vilas_core::broker::ActionChunk;
use vilas_core::devices::imaging::{encode_png, resize_bilinear};
use vilas_core::simworld::{forward_kinematics, render, ArmModel, CameraId, SimConfig, World};
use vilas_core::transport::{encode, Envelope, FrameDecoder};

fn framing(c: &mut Criterion) {
    let mut g = c.benchmark_group("framing");
    for h in [16usize, 50] {
        let env = ActionChunk::new(vec![[0.123456789, -0.5, 1.25, -0.75, 0.001, 2.5, 0.5]; h]).to_envelope(Some(7));
        let bytes = encode(&env).unwrap();
        g.throughput(Throughput::Bytes(bytes.len() as u64));
        g.bench_with_input(BenchmarkId::new("encode_chunk", h), &env, |b, env| b.iter(|| encode(black_box(env)).unwrap()));
        g.bench_with_input(BenchmarkId::new("decode_chunk", h), &bytes, |b, bytes| {
            b.iter(|| {
                let mut dec = FrameDecoder::new();
                dec.push(black_box(bytes));
                dec.next_envelope().unwrap().unwrap()
            })
        });
    }
    let small = Envelope::new("arm.command").with("q_target", serde_json::json!([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])).with_id(1);
    g.bench_function("roundtrip_arm_command", |b| {
        b.iter(|| {
            let bytes = encode(black_box(&small)).unwrap();
            let mut dec = FrameDecoder::new();
            dec.push(&bytes);
            dec.next_envelope().unwrap().unwrap()
        })
    });
    g.finish();
}

fn imaging(c: &mut Criterion) {
    let cfg = SimConfig::default();
    let world = World::new(cfg.clone()).unwrap();
    let state = world.state().clone();
    let mut g = c.benchmark_group("imaging");
    g.sample_size(30);
    for cam in [CameraId::Base, CameraId::Wrist] {
        g.bench_function(BenchmarkId::new("render", cam.name()), |b| b.iter(|| render(&cfg, black_box(&state), cam)));
    }
    let native = render(&cfg, &state, CameraId::Base);
    let size = cfg.camera.output_size;
    g.bench_function("resize_to_output", |b| b.iter(|| resize_bilinear(black_box(&native), size, size)));
    let small = resize_bilinear(&native, size, size);
    g.bench_function("encode_png", |b| b.iter(|| encode_png(black_box(&small)).unwrap()));
    g.finish();
}

fn kinematics(c: &mut Criterion) {
    let arm = ArmModel::default();
    let q = [0.3, -0.4, 0.7, -0.3, 0.0, 0.1];
    c.bench_function("forward_kinematics", |b| b.iter(|| forward_kinematics(black_box(&arm), black_box(&q)).unwrap()));
}

criterion_group!(benches, framing, imaging, kinematics);
criterion_main!(benches);
