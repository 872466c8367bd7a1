//! Benchmark-only crate; see `benches/core_ops.rs`.
//!
//! Measures single-iteration optimizer throughput on the experiment-scale
//! instance and the cost of building weight matrices (Metropolis weights
//! plus the Jacobi eigendecomposition behind the spectral summary).
