use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng;

use ike_core::index::exhaustive_topk;
use ike_core::index::float::dot_topk;
use ike_core::rng::{stream, Domain};
use ike_core::synth::uniform;
use ike_core::{match_count, PackedCodes};

const N: usize = 20_000;

fn random_codes(n: usize, t: usize, n_b: u8, seed: u64) -> PackedCodes {
    let mut rng = stream(seed, Domain::Experiment, 0);
    let mut codes = PackedCodes::empty(t, n_b).unwrap();
    let mut idx = vec![0u32; t];
    for _ in 0..n {
        idx.iter_mut().for_each(|v| *v = rng.random_range(0..1u32 << n_b));
        codes.push(&idx).unwrap();
    }
    codes
}

fn pairwise(c: &mut Criterion) {
    let mut g = c.benchmark_group("match_count");
    for n_b in [1u8, 2, 4, 8] {
        let codes = random_codes(2, 4096, n_b, n_b as u64);
        g.bench_with_input(BenchmarkId::new("t4096", n_b), &codes, |b, codes| {
            b.iter(|| match_count(black_box(codes.code(0)), black_box(codes.code(1)), 4096, n_b).unwrap())
        });
    }
    g.finish();
}

fn scan(c: &mut Criterion) {
    let d = 1024;
    let mut g = c.benchmark_group("exhaustive_scan");
    g.throughput(Throughput::Elements(N as u64));
    g.sample_size(20);
    for n_b in [1u8, 2, 4, 8] {
        let codes = random_codes(N, d, n_b, 10 + n_b as u64);
        let query = random_codes(1, d, n_b, 99);
        g.bench_with_input(BenchmarkId::new("ike_t1024", n_b), &codes, |b, codes| {
            b.iter(|| exhaustive_topk(codes, query.code(0), 10).unwrap())
        });
    }
    let floats = uniform(N, d, 1).unwrap();
    let q = uniform(1, d, 2).unwrap();
    g.bench_function("f32_dot_d1024", |b| b.iter(|| dot_topk(&floats, q.row(0), 10).unwrap()));
    g.finish();
}

criterion_group!(benches, pairwise, scan);
criterion_main!(benches);
