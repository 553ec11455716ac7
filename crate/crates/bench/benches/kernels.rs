use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpfa_core::tensor::{Tape, Tensor};
use mpfa_core::train::{metric_ap, metric_auc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul_backward");
    for n in [32, 172] {
        let a = random(400, n, &mut rng);
        let w = random(n, n, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let (av, wv) = (tape.var(a.clone()), tape.var(w.clone()));
                let y = tape.matmul(av, wv).unwrap();
                let y = tape.tanh(y);
                let loss = tape.sum(y);
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..20_000).map(|i| (i % 2) as u8).collect();
    c.bench_function("metric_ap_20k", |b| b.iter(|| metric_ap(&scores, &labels).unwrap()));
    c.bench_function("metric_auc_20k", |b| b.iter(|| metric_auc(&scores, &labels).unwrap()));
}

criterion_group!(benches, matmul, metrics);
criterion_main!(benches);
