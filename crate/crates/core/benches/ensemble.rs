use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use somgen_core::bench::{calibrate, cmd_evaluate, cmd_generate, Generators, RunConfig};
use somgen_core::flags::{classify_flags, validate_randomness, RandomnessConfig};
use somgen_core::rng::realization_seed;
use somgen_core::{Execution, SomName};

const STRATEGIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn realize_and_check(c: &mut Criterion) {
    let gens = Generators::default();
    let config = RandomnessConfig::default();
    let mut group = c.benchmark_group("flags_realize_check_64");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(64, |i| {
                    let class = (i % 8 + 1) as u32;
                    let im = gens
                        .realize(SomName::Flags, Some(class), realization_seed(7, i as u64))
                        .unwrap();
                    let rec = classify_flags(&im, gens.flags.templates()).unwrap();
                    validate_randomness(&im, &rec, &config).unwrap().pass
                })
            })
        });
    }
    group.finish();
}

fn evaluate_ensemble(c: &mut Criterion) {
    let gens = Generators::default();
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        som: SomName::Voronoi,
        n: 16,
        calibration_size: Some(80),
        ..RunConfig::default()
    };
    cmd_generate(&config, &gens, dir.path(), Execution::Parallel).unwrap();
    let cal = calibrate(&config, &gens, Execution::Parallel).unwrap();
    let mut group = c.benchmark_group("voronoi_evaluate_16");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                cmd_evaluate(dir.path(), SomName::Voronoi, &cal, &config, &gens, exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, realize_and_check, evaluate_ensemble);
criterion_main!(benches);
