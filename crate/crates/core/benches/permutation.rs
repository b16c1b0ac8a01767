//! Sequential vs parallel execution of the data-parallel hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kcc_core::causality::{test_design, Method, PermutationConfig, TestConfig};
use kcc_core::embedding::DesignSource;
use kcc_core::kernel::{low_rank_centered_gram, KernelSpec};
use kcc_core::synth::{generate, SynthConfig};
use kcc_core::Execution;

fn modes() -> [(&'static str, Execution); 2] {
    [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ]
}

fn bench_permutations(c: &mut Criterion) {
    let cfg = SynthConfig {
        dims: 5,
        ..SynthConfig::new(500, 1)
    };
    let panel = generate(&cfg, Execution::Sequential)
        .unwrap()
        .standardize()
        .unwrap();
    let design = panel.design("X", "Y1", &["Y2", "Y3", "Y4"], 1).unwrap();
    let mut group = c.benchmark_group("permutation_test");
    group.sample_size(10);
    for method in [Method::Cc, Method::Kcc] {
        for (name, exec) in modes() {
            let test = TestConfig {
                permutations: Some(PermutationConfig::new(99, 7)),
                exec,
                ..TestConfig::new(method)
            };
            group.bench_with_input(BenchmarkId::new(method.as_str(), name), &test, |b, t| {
                b.iter(|| test_design(&design, t).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_factor(c: &mut Criterion) {
    let cfg = SynthConfig {
        dims: 20,
        ..SynthConfig::new(2000, 2)
    };
    let panel = generate(&cfg, Execution::Sequential)
        .unwrap()
        .standardize()
        .unwrap();
    let design = panel.design("X", "Y1", &[], 1).unwrap();
    let spec = KernelSpec {
        max_rank: Some(100),
        ..KernelSpec::recommended()
    };
    let mut group = c.benchmark_group("incomplete_cholesky");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| low_rank_centered_gram(&design.y, "Y1", &spec, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_permutations, bench_factor);
criterion_main!(benches);
