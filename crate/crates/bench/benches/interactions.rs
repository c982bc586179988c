use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lstree::{
    design_matrix, detect_interactions, detect_interactions_direct, random_tree, solve_lstree, CharacteristicTable,
    DistanceMode, ParseTree,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn instance(d: usize, seed: u64) -> (ParseTree, CharacteristicTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = random_tree(d, 0.0, &mut rng);
    let table = CharacteristicTable::from_values(
        d,
        tree.nodes().iter().map(|n| (n.subset.clone(), rng.random_range(-1.0..1.0))),
    );
    (tree, table)
}

fn recursion(c: &mut Criterion) {
    let mut group = c.benchmark_group("detect_interactions");
    for d in [10, 25, 50, 100, 200] {
        let (tree, table) = instance(d, d as u64);
        let x = design_matrix(&tree);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| detect_interactions(black_box(&table), &tree, &x, DistanceMode::Both).unwrap())
        });
    }
    group.finish();
}

fn direct(c: &mut Criterion) {
    let mut group = c.benchmark_group("detect_interactions_direct");
    group.sample_size(10);
    for d in [10, 25, 50] {
        let (tree, table) = instance(d, d as u64);
        let x = design_matrix(&tree);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| detect_interactions_direct(black_box(&table), &tree, &x, DistanceMode::Both).unwrap())
        });
    }
    group.finish();
}

fn values(c: &mut Criterion) {
    let (tree, table) = instance(100, 7);
    let x = design_matrix(&tree);
    c.bench_function("solve_lstree/100", |b| b.iter(|| solve_lstree(black_box(&table), &x, None).unwrap()));
    c.bench_function("design_matrix/100", |b| b.iter(|| design_matrix(black_box(&tree))));
}

criterion_group!(benches, recursion, direct, values);
criterion_main!(benches);
