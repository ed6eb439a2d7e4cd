use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use drought_core::features::{build_windows, fit_normalization, SampleSet, WindowConfig};
use drought_core::models::Mode;
use drought_core::synthdata::SynthConfig;
use drought_core::{coarsen, pr_auc, ClassWeights, Model, ModelKind, ModelSpec, ScoredPredictions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_pr_auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 30_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.2))).collect();
    let p = ScoredPredictions::new(scores, labels).unwrap();
    c.bench_function("pr_auc_30k", |b| b.iter(|| pr_auc(&p).unwrap()));
}

fn bench_networks(c: &mut Criterion) {
    let (w, f, batch) = (6, 34, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<Vec<f64>> = (0..batch).map(|_| (0..w * f).map(|_| rng.gen()).collect()).collect();
    let windows: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let labels: Vec<u8> = (0..batch).map(|i| (i % 5 == 0) as u8).collect();
    let weights = ClassWeights { w_pos: 2.5, w_neg: 0.625 };

    let mut group = c.benchmark_group("batch128");
    for kind in ModelKind::ALL {
        let mut spec = ModelSpec::new(kind, vec![32, 16]);
        spec.batchnorm = kind.is_neural();
        let model = Model::init(&spec, w, f).unwrap();
        group.bench_with_input(BenchmarkId::new("forward", kind), &model, |b, m| {
            b.iter(|| m.logits_for(&windows).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", kind), &model, |b, m| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            b.iter(|| m.objective_and_gradient(&windows, &labels, &weights, Mode::Train, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn bench_grid(c: &mut Criterion) {
    let grid = SynthConfig::default().generate().unwrap();
    let mut group = c.benchmark_group("grid");
    group.sample_size(10);
    for factor in [2, 5] {
        group.bench_with_input(BenchmarkId::new("coarsen", factor), &factor, |b, &k| {
            b.iter(|| coarsen(&grid, k).unwrap())
        });
    }
    let stats = fit_normalization(&grid, grid.time_range()).unwrap();
    let cfg = WindowConfig::default();
    group.bench_function("build_windows", |b| {
        b.iter_batched(
            || (),
            |_| SampleSet::collect(build_windows(&grid, &stats, &cfg).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_pr_auc, bench_networks, bench_grid);
criterion_main!(benches);
