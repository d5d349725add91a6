//! Approximate nearest neighbor search: datasets, the exact-scan oracle,
//! the graph index, and stepwise search with maturity tracking.

pub mod dataset;
pub mod hnsw;
pub mod search;

pub use dataset::{distance, recall, Dataset};
pub use hnsw::{build_index, BuildParams, HnswIndex};
pub use search::{
    ema_update, maturity_point, results_at_step, rq, search_init, search_natural, search_step,
    SearchParams, SearchState, SearchTrace, StepRecord,
};
