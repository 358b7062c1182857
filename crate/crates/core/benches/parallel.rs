use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gtgib_core::enhancer::{verify_hit_bound, HitBoundConfig};
use gtgib_core::numerics::{Rng, Tape, Tensor};
use gtgib_core::synth::{generate_synthetic, SyntheticSpec};
use gtgib_core::theory::verify_all;
use gtgib_core::train::{Experiment, Trainer};
use gtgib_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn random_matrix(rows: usize, cols: usize, r: &mut Rng) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.normal()).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_forward_backward");
    let mut r = Rng::new(0, 0);
    for n in [64, 256] {
        let (a, b) = (random_matrix(n, n, &mut r), random_matrix(n, n, &mut r));
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| {
                    let mut t = Tape::new(exec);
                    let (va, vb) = (t.variable(a.clone()), t.variable(b.clone()));
                    let m = t.matmul(va, vb);
                    let s = t.sum(m);
                    t.backward(s)
                })
            });
        }
    }
    group.finish();
}

fn hit_bound(c: &mut Criterion) {
    let mut group = c.benchmark_group("hit_bound_2000_trials");
    let cfg = HitBoundConfig { trials: 2000, ..Default::default() };
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| verify_hit_bound(&cfg, exec).unwrap()));
    }
    group.finish();
}

fn theory(c: &mut Criterion) {
    let mut group = c.benchmark_group("theory_sweeps_200");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| verify_all(200, 0, exec).unwrap()));
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("synthetic_training_epoch");
    group.sample_size(10);
    let (g, _) = generate_synthetic(&SyntheticSpec::default()).unwrap();
    for (name, threads) in [("sequential", 1), ("parallel", 4)] {
        let mut exp = Experiment::default();
        exp.model.dim = 32;
        exp.model.time_dim = 16;
        exp.train.threads = threads;
        let mut trainer = Trainer::new(&g, exp).unwrap();
        group.bench_function(name, |b| b.iter(|| trainer.train_epoch(0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, matmul, hit_bound, theory, training_epoch);
criterion_main!(benches);
