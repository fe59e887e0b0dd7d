//! Criterion benchmarks for the hot paths: transfer entropy, per-instance
//! discovery, a SAGE forward/backward pass and one full explanation.
//!
//! ```text
//! cargo bench -p faultsage-bench
//! ```
