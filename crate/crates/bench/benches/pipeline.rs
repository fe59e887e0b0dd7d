use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use faultsage::explain::explain_graph;
use faultsage::infodyn::{discretize, transfer_entropy};
use faultsage::sage::{infer, loss_gradients, GraphInput};
use faultsage::{discover, synth_instance, ExplainConfig, FaultClass, ModelConfig, SageParams, SynthParams, TeConfig};

fn instance() -> faultsage::WaveformInstance {
    synth_instance(&SynthParams::default(), FaultClass::ABG).unwrap()
}

fn information(c: &mut Criterion) {
    let inst = instance();
    let te = TeConfig::default();
    let src = discretize(&inst.channels[0], te.bins);
    let dst = discretize(&inst.channels[3], te.bins);
    c.bench_function("transfer_entropy T=6001 bins=8", |b| {
        b.iter(|| transfer_entropy(black_box(&src), black_box(&dst), 1, 1).unwrap())
    });
    c.bench_function("discover one instance T=6001", |b| {
        b.iter(|| discover(black_box(&inst), &te).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let g = discover(&instance(), &TeConfig::default()).unwrap();
    let cfg = ModelConfig::default();
    let params = SageParams::init(&cfg).unwrap();
    let input = GraphInput::new(&g, &cfg).unwrap();
    c.bench_function("sage infer 6001/256/128", |b| b.iter(|| infer(&params, black_box(&input)).unwrap()));
    c.bench_function("sage loss and gradients 6001/256/128", |b| {
        b.iter(|| loss_gradients(&params, black_box(&input), g.label.index()).unwrap())
    });
    c.bench_function("explain one graph (IG + GNNExplainer)", |b| {
        b.iter(|| explain_graph(black_box(&g), &params, &cfg, &ExplainConfig::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(5));
    targets = information, model
}
criterion_main!(benches);
