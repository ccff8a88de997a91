use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use offload_bench::{population, two_aps};
use offload_core::{
    grid_search_spb, ne_bonus_only, ne_iterative, ne_spb_suboptimal, ne_two_ap,
    optimal_spb_suboptimal, run_comparison, Algorithm3Options, ComparisonOptions, CostRegime,
    GridOptions, IterativeOptions, MnoParams, NeSolver, Offer, Scheme,
};
use std::hint::black_box;

fn followers(c: &mut Criterion) {
    let profiles = two_aps();
    let offer = Offer::new(1.0, 3.0).unwrap();
    c.bench_function("two-ap closed form", |b| {
        b.iter(|| ne_two_ap(black_box(&profiles), offer).unwrap())
    });
    c.bench_function("two-ap iterative", |b| {
        b.iter(|| {
            ne_iterative(
                black_box(&profiles),
                offer,
                Scheme::SalaryPlusBonus,
                &IterativeOptions::default(),
            )
            .unwrap()
        })
    });

    let mut group = c.benchmark_group("population");
    for n in [10, 100, 1000] {
        let profiles = population(n, CostRegime::Low);
        let offer = Offer::new(0.5, 20.0).unwrap();
        group.bench_with_input(BenchmarkId::new("algorithm3", n), &profiles, |b, p| {
            b.iter(|| ne_spb_suboptimal(p, offer, Algorithm3Options::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("bonus-only", n), &profiles, |b, p| {
            b.iter(|| ne_bonus_only(p, 20.0).unwrap())
        });
    }
    group.finish();
}

fn leaders(c: &mut Criterion) {
    let params = MnoParams::new(50.0).unwrap();
    let profiles = two_aps();
    let opts = GridOptions {
        p_steps: 41,
        b_steps: 41,
        solver: NeSolver::TwoApCases,
        ..GridOptions::default()
    };
    c.bench_function("grid search 41x41", |b| {
        b.iter(|| grid_search_spb(black_box(&profiles), params, &opts).unwrap())
    });
    let profiles = population(100, CostRegime::Low);
    c.bench_function("suboptimal leader n=100", |b| {
        b.iter(|| optimal_spb_suboptimal(black_box(&profiles), params, Default::default()).unwrap())
    });
}

fn comparison(c: &mut Criterion) {
    let mut group = c.benchmark_group("comparison");
    group.sample_size(10);
    group.bench_function("n=100 runs=10", |b| {
        b.iter(|| {
            run_comparison(
                100,
                &CostRegime::ALL,
                &[10.0, 30.0, 50.0],
                10,
                1,
                &ComparisonOptions::default(),
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, followers, leaders, comparison);
criterion_main!(benches);
