//! Benchmarks for the teso pipeline live in `benches/`.
