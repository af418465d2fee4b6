//! Criterion benchmarks for `ike-core` live under `benches/`.
