//! Benchmark crate; see `benches/feeder_solve.rs`.
