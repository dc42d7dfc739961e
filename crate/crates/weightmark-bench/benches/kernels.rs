//! Hot-path benchmarks at the shapes the experiments actually use:
//! a 576-dim host (3x3x64 kernels) carrying 256 bits, and the two-conv
//! network from the pinned protocol.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use weightmark::attacks::prune_random;
use weightmark::codec::{decode_dm, quantize_dm, QuantizerConfig};
use weightmark::nn::{LayerSpec, Network};
use weightmark::{
    DecoderKind, FlattenedHost, Prng, ProjectionKey, WatermarkMessage, WatermarkRegularizer,
};

const HOST_DIM: usize = 576;
const PAYLOAD: usize = 256;

fn host(seed: u64) -> FlattenedHost {
    FlattenedHost::new(Prng::seed_from_u64(seed).normal_vec(HOST_DIM))
}

fn regularizer(decoder: DecoderKind) -> WatermarkRegularizer {
    let key = ProjectionKey::generate(1, PAYLOAD, HOST_DIM);
    let message = WatermarkMessage::random(2, PAYLOAD);
    WatermarkRegularizer::new(key, message, decoder).unwrap()
}

fn protocol_network() -> Network {
    let specs = vec![
        LayerSpec::Conv2d { id: "conv1".into(), kernel: 3, in_channels: 3, filters: 64 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { id: "conv2".into(), kernel: 3, in_channels: 64, filters: 256 },
        LayerSpec::Relu,
        LayerSpec::AvgPoolGlobal,
        LayerSpec::Dense { id: "fc".into(), inputs: 256, outputs: 4 },
        LayerSpec::SoftmaxHead,
    ];
    Network::new((4, 4, 3), specs, 3).unwrap()
}

fn bench_codec(c: &mut Criterion) {
    let cfg = QuantizerConfig::new(1.0);
    let xs = Prng::seed_from_u64(4).normal_vec(4096);
    c.bench_function("codec/quantize_decode_4096", |b| {
        b.iter(|| {
            let mut flips = 0usize;
            for (i, &x) in xs.iter().enumerate() {
                let bit = i % 2 == 0;
                let q = quantize_dm(black_box(10.0 * x), bit, &cfg);
                flips += (decode_dm(q, &cfg) != bit) as usize;
            }
            flips
        })
    });
}

fn bench_key(c: &mut Criterion) {
    c.bench_function("key/generate_256x576", |b| {
        b.iter(|| ProjectionKey::generate(black_box(1), PAYLOAD, HOST_DIM))
    });
}

fn bench_regularizer(c: &mut Criterion) {
    let w = host(5);
    let ss = regularizer(DecoderKind::Ss { gamma: 10.0 });
    let stdm = regularizer(DecoderKind::Stdm { alpha: 10.0, beta: 10.0 });
    c.bench_function("regularizer/projections_256x576", |b| {
        b.iter(|| ss.projections(black_box(&w)).unwrap())
    });
    c.bench_function("regularizer/ss_loss_and_gradient", |b| {
        b.iter(|| ss.loss_and_gradient(black_box(&w)).unwrap())
    });
    c.bench_function("regularizer/stdm_loss_and_gradient", |b| {
        b.iter(|| stdm.loss_and_gradient(black_box(&w)).unwrap())
    });
    c.bench_function("regularizer/extract_256_bits", |b| {
        b.iter(|| ss.extract(black_box(&w)).unwrap())
    });
}

fn bench_network(c: &mut Criterion) {
    let net = protocol_network();
    let mut rng = Prng::seed_from_u64(6);
    let x = rng.normal_vec(net.input_len());
    let mut ws = net.workspace();
    c.bench_function("network/forward_4x4x3", |b| {
        b.iter(|| {
            let out = net.forward_into(black_box(&x), &mut ws).unwrap();
            out[0]
        })
    });

    let batch: Vec<usize> = (0..32).collect();
    let xs = rng.normal_vec(net.input_len() * 32);
    let labels: Vec<usize> = (0..32).map(|i| i % 4).collect();
    let mut grads = net.zero_grads();
    c.bench_function("network/batch_gradient_32", |b| {
        b.iter(|| {
            net.batch_gradient(black_box(&xs), &labels, &batch, &mut ws, &mut grads).unwrap()
        })
    });
}

fn bench_prune(c: &mut Criterion) {
    let net = protocol_network();
    c.bench_function("attacks/prune_random_conv2_30pct", |b| {
        b.iter(|| prune_random(black_box(&net), "conv2", 0.3, 9).unwrap())
    });
}

fn tuned() -> Criterion {
    Criterion::default()
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(2))
        .sample_size(30)
}

criterion_group! {
    name = kernels;
    config = tuned();
    targets = bench_codec, bench_key, bench_regularizer, bench_network, bench_prune
}
criterion_main!(kernels);
