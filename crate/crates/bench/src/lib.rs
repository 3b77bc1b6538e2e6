//! Criterion benchmarks for redlab; see `benches/`.
