use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use riverbed::diagnostics::{inversion_rmses, ObservationPlan};
use riverbed::generate::{generate_dataset, GenerationSpec};
use riverbed::inversion::InversionOptions;
use riverbed::rng::{standard_normals, Stream};
use riverbed::rom::sve::{batch_gradient, init_sve, SveArchitecture};
use riverbed::Execution;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn generation(c: &mut Criterion) {
    let spec = GenerationSpec::default();
    let mut group = c.benchmark_group("generate_64_records");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_dataset(&spec, 64, black_box(1), exec).unwrap())
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let (ds, _) = generate_dataset(&GenerationSpec::default(), 64, 2, Execution::Parallel).unwrap();
    let idx: Vec<usize> = (0..64).collect();
    let arch = SveArchitecture::default();
    let model = init_sve(&ds, &arch, &idx, 0).unwrap();
    let batch = model.batch(&ds, &idx);
    let xi = DMatrix::from_vec(arch.latent_dim, 64, standard_normals(3, Stream::Latent, arch.latent_dim * 64));
    let mut group = c.benchmark_group("sve_batch_gradient_64");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradient(&model, black_box(&batch), &xi, exec))
        });
    }
    group.finish();
}

fn inversions(c: &mut Criterion) {
    let (ds, _) = generate_dataset(&GenerationSpec::default(), 32, 4, Execution::Parallel).unwrap();
    let idx: Vec<usize> = (0..32).collect();
    let arch = SveArchitecture { encoder_widths: vec![128], decoder_widths: vec![128], ..Default::default() };
    let model = init_sve(&ds, &arch, &idx, 0).unwrap();
    let opts = InversionOptions { max_iterations: 3, uq_samples: 32, ..InversionOptions::default() };
    let plan = ObservationPlan { points: Some(200), ..ObservationPlan::default() };
    let mut group = c.benchmark_group("invert_8_records");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| inversion_rmses(&model, &ds, black_box(&idx[..8]), &plan, &opts, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, generation, gradient, inversions);
criterion_main!(benches);
