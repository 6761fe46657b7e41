//! Criterion benchmarks for the hot paths of `rlvr-core`; see `benches/`.
