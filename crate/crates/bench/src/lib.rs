//! Microbenchmark-only crate; see `benches/kernels.rs`.
