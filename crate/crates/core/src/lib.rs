//! Video resequencing over a frame relation graph.
//!
//! Frames are embedded ([`features`], [`metric`]), connected into a complete
//! weighted graph ([`graph`]), and walked from a user-chosen start by a
//! two-layer candidate filter with optical-flow motion constraints
//! ([`flow`], [`sdpf`]). [`eval`] scores the resulting orderings and
//! [`pipeline`] wires the stages together for the CLI and HTTP service.

pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod graph;
pub mod media_io;
pub mod metric;
pub mod pipeline;
pub mod sdpf;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
