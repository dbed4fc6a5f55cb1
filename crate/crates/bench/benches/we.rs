use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use we_bench::three_well_fixture;
use we_core::coarse::build_coarse_exact;
use we_core::we::select;
use we_core::{Distribution, SelectionPolicy, WeSampler};

fn policies() -> [SelectionPolicy; 3] {
    [
        SelectionPolicy::Adaptive {
            total: 150.0,
            floor: 1.0,
        },
        SelectionPolicy::Traditional { per_bin_target: 5.0 },
        SelectionPolicy::Naive,
    ]
}

fn selection(c: &mut Criterion) {
    let fx = three_well_fixture(30);
    let mut group = c.benchmark_group("selection");
    for policy in policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        group.bench_function(BenchmarkId::from_parameter(policy.name()), |b| {
            b.iter(|| select(&fx.init, &policy, &fx.bins, Some(fx.coarse.variances.row(0)), &mut rng).unwrap())
        });
    }
    group.finish();
}

fn replicate(c: &mut Criterion) {
    let fx = three_well_fixture(30);
    let mut group = c.benchmark_group("replicate_n30");
    for policy in policies() {
        let sampler = WeSampler::new(&fx.kernel, &fx.bins, policy, Some(&fx.coarse.variances)).unwrap();
        let mut rep = 0;
        group.bench_function(BenchmarkId::from_parameter(policy.name()), |b| {
            b.iter(|| {
                rep += 1;
                sampler.run(&fx.init, &fx.observable, 30, 7, rep).unwrap()
            })
        });
    }
    group.finish();
}

fn coarse_model(c: &mut Criterion) {
    let fx = three_well_fixture(30);
    let zeta = Distribution::uniform(fx.kernel.size());
    c.bench_function("coarse_exact", |b| {
        b.iter(|| build_coarse_exact(&fx.kernel, &fx.bins, &zeta, &fx.observable).unwrap())
    });
    c.bench_function("stationary_90", |b| b.iter(|| fx.kernel.stationary().unwrap()));
}

criterion_group!(benches, selection, replicate, coarse_model);
criterion_main!(benches);
