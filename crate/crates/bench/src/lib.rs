//! Criterion benchmarks for the kore kernels live under `benches/`.
