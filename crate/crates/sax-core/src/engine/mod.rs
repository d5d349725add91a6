//! The serving-engine model: a block-granular KV cache plus an
//! iteration-level batched execution simulator with a linear cost model.

pub mod kv;
pub mod sim;

pub use kv::KvCacheModel;
pub use sim::{
    EngineConfig, EngineSim, IterationOutcome, IterationReport, SeqPhase, SequenceState, SimClock,
};
