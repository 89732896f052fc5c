//! Criterion benchmarks for the hot paths of `ggan-core`; see `benches/`.
