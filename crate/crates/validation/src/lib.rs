//! Holds the `acceptance` test target. Run it with
//! `cargo test -p lama-validation --test acceptance`; set `LAMA_BENCH_DATA`
//! to a directory containing `manifest.json` to include the benchmark
//! criteria.
