//! Criterion benchmarks for the spectral, sweep and training kernels; see `benches/`.
