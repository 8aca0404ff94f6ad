//! Criterion benchmarks for the explanation pipeline live in `benches/`.
