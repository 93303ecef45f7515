//! Self-delimiting recurrent networks.
//!
//! A network built from a [`topology::SlimTopology`] runs episodes through the
//! event-driven [`engine::Engine`]: only active neurons and the connections
//! they actually feed are ever touched, and the connections used form the
//! executed program, a [`engine::Trace`]. On top of that sit a Levin-style
//! program search ([`search`]), a probability model over weight programs that
//! shifts towards past solutions ([`bias`]) and per-connection task lists that
//! keep re-validation local when several tasks share one network ([`tracker`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bias;
pub mod dense;
pub mod engine;
pub mod par;
pub mod search;
pub mod tasks;
pub mod topology;
pub mod tracker;
pub mod weights;

pub use bias::{BiasMode, BiasModel, ValueSet};
pub use engine::{spread, Engine, EpisodeResult, Trace};
pub use search::{universal_search, SearchOutcome};
pub use tasks::{evaluate, Environment, TaskSpec};
pub use topology::{ConnId, NeuronId, SlimTopology, TopologyBuilder};
pub use tracker::TaskRegistry;
pub use weights::{WeightAssignment, WeightOracle};
