//! Hierarchical building/room/instance scene graphs from recorded RGB-D
//! observation sequences.
//!
//! Structural segments are grouped into rooms first; mask observations are
//! then partitioned by room and fused independently per room, which lets the
//! fusion stage run in parallel.

pub mod error;
pub mod evalbench;
pub mod fusion;
pub mod geometry;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod query;
pub mod roomseg;
pub mod semantics;
pub mod sequence;
pub mod synth;

pub use error::{Error, Result};
