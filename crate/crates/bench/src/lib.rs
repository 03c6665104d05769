//! Criterion benchmarks for the landscape hot paths; see `benches/`.
