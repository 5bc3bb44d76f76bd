//! Criterion benchmarks for the thermoscope pipeline; see `benches/`.
