//! Parallel vs sequential throughput on the data-parallel surfaces:
//! synthetic clip generation and frozen-model evaluation. With the
//! `parallel` feature disabled both variants run the same sequential code.

use cfsc_core::config::{Modality, ModelConfig, OptimConfig, RunConfig, TopologySpec};
use cfsc_core::data::synth::{synth_dataset, SynthConfig};
use cfsc_core::data::Split;
use cfsc_core::exec::ExecMode;
use cfsc_core::model::Model;
use cfsc_core::train::evaluate;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn bench_config() -> RunConfig {
    let mut model = ModelConfig::defaults(Modality::Joint);
    model.topology = TopologySpec::Named("body18".into());
    model.channels = vec![8, 8, 16, 16];
    model.strides = vec![1, 1, 2, 1];
    model.kt_block = 5;
    model.taps = vec![2, 4];
    model.kt = 3;
    model.num_classes = 7;
    model.target_t = 64;
    RunConfig {
        model,
        optim: OptimConfig::default(),
    }
}

fn synth_config() -> SynthConfig {
    SynthConfig {
        seed: 11,
        classes: 7,
        train_per_class: 8,
        val_per_class: 4,
        t_min: 40,
        t_max: 64,
        target_t: 64,
        ..SynthConfig::default()
    }
}

fn bench_synth(c: &mut Criterion) {
    let cfg = synth_config();
    let mut group = c.benchmark_group("synth_dataset");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(synth_dataset(&cfg, ExecMode::Sequential).unwrap()))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(synth_dataset(&cfg, ExecMode::Parallel).unwrap()))
    });
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let cfg = bench_config();
    let dataset = synth_dataset(&synth_config(), ExecMode::Parallel).unwrap();
    let model = Model::new(cfg.model.clone(), 5).unwrap();
    let mut group = c.benchmark_group("evaluate_val_split");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(evaluate(&model, &dataset, Split::Val, ExecMode::Sequential).unwrap()))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(evaluate(&model, &dataset, Split::Val, ExecMode::Parallel).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_synth, bench_evaluate);
criterion_main!(benches);
