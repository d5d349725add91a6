//! Deterministic desk-scale serving simulator for retrieval-augmented
//! agent workloads, coupled to a real graph ANN index.
//!
//! The crate provides: vector datasets with an exact-scan oracle, a layered
//! small-world index with stepwise search and maturity tracking, seeded
//! workload generation, an iteration-level engine simulator with a
//! block-granular prefix KV cache, multi-metric priority scheduling, and an
//! orchestrator that ties retrieval back into the serving loop.

pub mod ann;
pub mod engine;
pub mod error;
pub mod fileio;
pub mod metrics;
pub mod orchestrator;
pub mod scheduler;
pub mod seeding;
pub mod workload;

pub use error::{Result, SaxError};
