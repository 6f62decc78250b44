use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssrf_core::constraints::{pair_moments, PairStrategy};
use ssrf_core::par::Execution;
use ssrf_core::simulate::{CovarianceModel, SimulationPlan};
use ssrf_core::{KernelFamily, KernelSpec, QuadratureConfig, SampleData};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn uniform(n: usize) -> SampleData {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let coords = (0..2 * n).map(|_| rng.random::<f64>()).collect();
    SampleData::new(2, coords, vec![0.0; n]).unwrap()
}

fn pair_sums(c: &mut Criterion) {
    let spec = KernelSpec::new(KernelFamily::Triangular);
    let mut group = c.benchmark_group("pair_moments");
    for n in [1000, 4000] {
        let data = uniform(n);
        let h = 3.0 / (n as f64).sqrt();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &data, |b, data| {
                b.iter(|| pair_moments(data, &[h, 1.5 * h], &spec, PairStrategy::Direct, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn replicates(c: &mut Criterion) {
    let plan = SimulationPlan {
        n: 200,
        lower: vec![0.0, 0.0],
        upper: vec![5.0, 5.0],
        model: CovarianceModel::Exponential {
            sigma2: 1.0,
            range: 0.5,
        },
        mean: 0.0,
        replicates: 16,
        seed: 1,
    };
    let q = QuadratureConfig::default();
    let mut group = c.benchmark_group("simulate_replicates");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| plan.run(&q, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, pair_sums, replicates);
criterion_main!(benches);
