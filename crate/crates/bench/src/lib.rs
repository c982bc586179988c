//! Benchmarks for the interaction recursion live in `benches/`.
