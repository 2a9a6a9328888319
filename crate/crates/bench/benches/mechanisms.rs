use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dxtext::randomizers::{perturb_baseline, MhParams};
use dxtext::samplers::sample_mv_laplace;
use dxtext::sensitivity::build_profile;
use dxtext::{
    MechanismConfig, MultivariateLaplaceParam, Randomizer, RngStream, WordId, WordMechanism,
};
use dxtext_bench::uniform_store;

fn nearest_word(c: &mut Criterion) {
    let mut group = c.benchmark_group("nearest_word");
    for n in [1_000, 10_000] {
        let store = uniform_store(n, 50, 1);
        let point = vec![0.1; 50];
        group.bench_with_input(BenchmarkId::from_parameter(n), &store, |b, s| {
            b.iter(|| s.nearest_word(black_box(&point)).unwrap())
        });
    }
    group.finish();
}

fn noise(c: &mut Criterion) {
    let param = MultivariateLaplaceParam::new(300, 5.0).unwrap();
    let mut rng = RngStream::new(2, 0);
    c.bench_function("mv_laplace_d300", |b| {
        b.iter(|| sample_mv_laplace(&mut rng, &param))
    });
}

fn baseline(c: &mut Criterion) {
    let store = uniform_store(5_000, 50, 3);
    let mut rng = RngStream::new(4, 0);
    c.bench_function("perturb_baseline_5k_d50", |b| {
        b.iter(|| perturb_baseline(&mut rng, &store, black_box(WordId(17)), 5.0).unwrap())
    });
}

fn profile(c: &mut Criterion) {
    let store = uniform_store(1_000, 20, 5);
    c.bench_function("build_profile_1k", |b| {
        b.iter(|| build_profile(&store, black_box(1.0)).unwrap())
    });
}

fn density_chain(c: &mut Criterion) {
    let store = uniform_store(500, 10, 6);
    let config = MechanismConfig::Density {
        epsilon: 2.0,
        sigma: None,
        mh: MhParams {
            burn_in: 100,
            thin: 10,
            proposal_step: None,
        },
    };
    let mech = Randomizer::new(&store, &config).unwrap();
    let mut rng = RngStream::new(7, 0);
    c.bench_function("density_chain_110_steps", |b| {
        b.iter(|| mech.perturb(&mut rng, WordId(3)).unwrap())
    });
}

criterion_group!(
    benches,
    nearest_word,
    noise,
    baseline,
    profile,
    density_chain
);
criterion_main!(benches);
