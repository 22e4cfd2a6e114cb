//! Criterion benchmarks for `doa-core`; see `benches/pipeline.rs`.
