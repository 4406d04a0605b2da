//! Criterion benchmarks for the `sercct` pipeline live in `benches/`.
