//! Benchmark-only crate; see `benches/protocols.rs`.
