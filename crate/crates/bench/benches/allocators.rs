use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use flexmarket::allocators::{fair_play_run, find_cheapest_slot, volume_max_solve, FairnessPolicy, SolverOptions};
use flexmarket::Request;
use flexmarket_bench::instance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cheapest_slot(c: &mut Criterion) {
    let (state, requests) = instance(200, 1);
    c.bench_function("find_cheapest_slot/200", |b| {
        b.iter(|| {
            for r in &requests {
                black_box(find_cheapest_slot(r, &state));
            }
        })
    });
}

fn fair_play(c: &mut Criterion) {
    for n in [50, 200] {
        let (state, requests) = instance(n, 2);
        c.bench_function(&format!("fair_play_run/{n}"), |b| {
            b.iter_batched(
                || (state.clone(), ChaCha8Rng::seed_from_u64(3)),
                |(mut s, mut rng)| {
                    let refs: Vec<&Request> = requests.iter().collect();
                    fair_play_run(&mut s, &refs, &BTreeMap::new(), &FairnessPolicy::default(), &mut rng).unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
}

fn global(c: &mut Criterion) {
    let mut group = c.benchmark_group("volume_max_solve");
    group.sample_size(10);
    for n in [20, 200] {
        let (state, requests) = instance(n, 4);
        let refs: Vec<&Request> = requests.iter().collect();
        group.bench_function(n.to_string(), |b| {
            b.iter(|| volume_max_solve(&state, &refs, &SolverOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, cheapest_slot, fair_play, global);
criterion_main!(benches);
