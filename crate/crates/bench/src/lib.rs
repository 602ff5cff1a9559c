//! Criterion benchmarks for the stack's hot paths; see `benches/`.
