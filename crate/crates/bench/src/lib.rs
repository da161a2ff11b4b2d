//! Benchmarks live in `benches/`; run them with `cargo bench -p d3po-bench`.
