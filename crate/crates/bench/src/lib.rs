//! Criterion benchmarks for the per-round and per-task kernels; see `benches/`.
