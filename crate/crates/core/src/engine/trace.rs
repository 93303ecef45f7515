//! Execution traces: the self-delimiting program a run actually executed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::topology::{ConnId, NeuronId};
use crate::weights::WeightOracle;

/// First activation-carrying use of a connection within one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FirstUse {
    pub conn: ConnId,
    pub episode: u32,
    pub step: u32,
}

/// `uses` is n(c); `yes`/`no` count uses whose target did / did not fire next step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounts {
    pub uses: u64,
    pub yes: u64,
    pub no: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Per-episode first uses, episodes concatenated in order.
    pub first_uses: Vec<FirstUse>,
    /// Usage and Hebbian counters summed over all episodes.
    pub counts: BTreeMap<ConnId, UsageCounts>,
    /// Neurons that emitted activation at least once, ascending.
    pub active: Vec<NeuronId>,
    pub time: f64,
    pub halted: bool,
    /// Neurons possibly left non-zero by the last episode.
    pub frontier: Vec<NeuronId>,
}

impl Trace {
    pub fn uses(&self, c: ConnId) -> u64 {
        self.counts.get(&c).map_or(0, |u| u.uses)
    }

    /// Distinct connections, in order of first use.
    pub fn connections(&self) -> Vec<ConnId> {
        let mut seen = std::collections::HashSet::new();
        self.first_uses.iter().map(|f| f.conn).filter(|c| seen.insert(*c)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.first_uses.is_empty()
    }
}

/// A trace with the within-step order of first uses fixed to connection order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CanonicalTrace {
    pub entries: Vec<FirstUse>,
}

impl CanonicalTrace {
    /// The `(connection, value)` sequence this trace executed under `weights`.
    pub fn program(&self, weights: &impl WeightOracle) -> Vec<(ConnId, f64)> {
        self.entries.iter().map(|f| (f.conn, weights.query(f.conn).unwrap_or(0.0))).collect()
    }
}

/// Sorts first uses by `(episode, step, connection)`. Two traces that differ
/// only in the order updates were applied within a step map to the same form.
pub fn canonical_trace(trace: &Trace) -> CanonicalTrace {
    let mut entries = trace.first_uses.clone();
    entries.sort_by_key(|f| (f.episode, f.step, f.conn));
    CanonicalTrace { entries }
}
