use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use coremech::graph::{count_esds, count_paths, trajectory_entropy};
use coremech::patchlab::{sweep_layers, PatchMode, PositionPolicy, Readout};
use coremech::querygen::{generate_dataset, ExportConfig};
use coremech::sampler::sample_trajectory;
use coremech_bench::{model_and_prompt, scenario_graph, wide_graph};

fn counting(c: &mut Criterion) {
    let mut group = c.benchmark_group("counting");
    for layers in [10, 40, 160] {
        let g = wide_graph(layers);
        group.bench_with_input(BenchmarkId::new("paths", layers), &g, |b, g| b.iter(|| count_paths(black_box(g))));
        group.bench_with_input(BenchmarkId::new("esds", layers), &g, |b, g| b.iter(|| count_esds(black_box(g))));
        group.bench_with_input(BenchmarkId::new("entropy", layers), &g, |b, g| {
            b.iter(|| trajectory_entropy(black_box(g)))
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let g = scenario_graph();
    let mut seed = 0u64;
    c.bench_function("sample_trajectory", |b| {
        b.iter(|| {
            seed += 1;
            sample_trajectory(&g, black_box(seed))
        })
    });
}

fn dataset(c: &mut Criterion) {
    let g = scenario_graph();
    let mut group = c.benchmark_group("generate_dataset");
    group.sample_size(10);
    for traj in [100, 1000] {
        let config = ExportConfig::new(traj, 7);
        group.bench_with_input(BenchmarkId::from_parameter(traj), &config, |b, config| {
            b.iter(|| generate_dataset(&g, config).unwrap())
        });
    }
    group.finish();
}

fn patching(c: &mut Criterion) {
    let (model, prompt) = model_and_prompt(4);
    let readout = Readout::from_letters(&model.tokenizer, "A", "B").unwrap();
    c.bench_function("forward", |b| b.iter(|| model.forward_text(black_box(&prompt)).unwrap()));

    let mut group = c.benchmark_group("sweep_layers");
    group.sample_size(10);
    for mode in [PatchMode::Direct, PatchMode::Causal] {
        group.bench_function(mode.to_string(), |b| {
            b.iter(|| sweep_layers(&model, &prompt, &prompt, mode, PositionPolicy::Last, readout, "bench").unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, counting, sampling, dataset, patching);
criterion_main!(benches);
