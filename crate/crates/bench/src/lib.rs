//! Criterion benchmarks for `dimred-core`; see `benches/core.rs`.
