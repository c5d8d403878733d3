//! Acceptance suite for the retrieval engine; see `tests/acceptance.rs`.
//!
//! Run with `cargo test -p mervin-acceptance --test acceptance`. Each
//! criterion prints one `PASS` or `FAIL` line; the target fails if any does.
