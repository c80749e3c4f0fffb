//! Criterion benchmarks for the update rules and full training iterations.
//! See `benches/`.
