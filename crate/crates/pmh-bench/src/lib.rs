//! Benchmark-only crate; the timed code lives in `benches/pipeline.rs`.
//! Run with `cargo bench -p pmh-bench`.
