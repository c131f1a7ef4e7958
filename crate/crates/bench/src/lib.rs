//! Criterion benchmarks for the steering pipeline; see `benches/`.
