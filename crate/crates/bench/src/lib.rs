//! Criterion benchmarks for `combsim-core` live under `benches/`.
