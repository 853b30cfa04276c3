//! End-to-end acceptance checks. Run with `cargo test -p nqk-validation --test acceptance`.
