//! Library surface of the `sax` command-line harness: config loading,
//! experiment matrices, and built-in presets. The binary in `main.rs` is a
//! thin dispatcher over these.

pub mod config;
pub mod matrix;
pub mod presets;
