//! Static network structure: neurons, winner-take-all subsets, outgoing
//! connection lists and their costs.
//!
//! A [`SlimTopology`] is immutable once built. Connections are stored in one
//! array sorted by `(src, dst)`, so the outgoing list of a neuron is a
//! contiguous range and [`ConnId`] order is the canonical enumeration order
//! used by the engine, the search and trace canonicalization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trace;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One-based neuron index. Ids `1..=n_x` are inputs, the next `n_y` are outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeuronId(pub u32);

impl NeuronId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn from_index(i: usize) -> Self {
        NeuronId(i as u32 + 1)
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// Position of a connection in the canonical `(src, dst)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConnId(pub u32);

impl ConnId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combinator {
    Additive,
    Multiplicative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    Input,
    Output,
    Hidden,
    Halt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    #[default]
    Unit,
    Euclidean,
    Manhattan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronSpec {
    pub id: NeuronId,
    pub kind: NeuronKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combinator: Option<Combinator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witas: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionSpec {
    pub src: NeuronId,
    pub dst: NeuronId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementEntry {
    pub id: NeuronId,
    pub xyz: [f64; 3],
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Serializable description of a network, as found in topology files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub n_x: u32,
    pub n_y: u32,
    pub halt: NeuronId,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub readout: Vec<NeuronId>,
    pub neurons: Vec<NeuronSpec>,
    #[serde(default)]
    pub connections: Vec<ConnectionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Vec<PlacementEntry>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoInputs,
    TooFewNeurons { n: usize, n_x: u32, n_y: u32 },
    NeuronOrder { position: usize, id: NeuronId },
    KindMismatch { id: NeuronId, expected: NeuronKind, found: NeuronKind },
    InputWithCombinator(NeuronId),
    MissingCombinator(NeuronId),
    InputInWitas(NeuronId),
    HaltOutOfRange(NeuronId),
    HaltIsInput(NeuronId),
    BadThreshold(f64),
    UnknownNeuron { src: NeuronId, dst: NeuronId },
    InputHasIncoming { src: NeuronId, dst: NeuronId },
    DuplicateConnection { src: NeuronId, dst: NeuronId },
    NonPositiveCost { src: NeuronId, dst: NeuronId, cost: f64 },
    UnknownReadout(NeuronId),
    PlacementIncomplete { missing: usize },
    PlacementInvalid(NeuronId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NoInputs => write!(f, "network needs at least one input (the reward channel)"),
            TooFewNeurons { n, n_x, n_y } => {
                write!(f, "{n} neurons cannot hold {n_x} inputs, {n_y} outputs and a halt neuron")
            }
            NeuronOrder { position, id } => {
                write!(f, "neuron at position {position} has id {id}, ids must be 1..=n in order")
            }
            KindMismatch { id, expected, found } => {
                write!(f, "{id} declared {found:?} but its index makes it {expected:?}")
            }
            InputWithCombinator(id) => write!(f, "input {id} must not have a combinator"),
            MissingCombinator(id) => write!(f, "non-input {id} needs a combinator"),
            InputInWitas(id) => write!(f, "input {id} cannot belong to a WITAS"),
            HaltOutOfRange(id) => write!(f, "halt neuron {id} does not exist"),
            HaltIsInput(id) => write!(f, "halt neuron {id} is an input"),
            BadThreshold(t) => write!(f, "threshold {t} must be finite and positive"),
            UnknownNeuron { src, dst } => write!(f, "connection {src}->{dst} names an unknown neuron"),
            InputHasIncoming { src, dst } => {
                write!(f, "input has incoming edge: {src}->{dst}")
            }
            DuplicateConnection { src, dst } => write!(f, "duplicate connection {src}->{dst}"),
            NonPositiveCost { src, dst, cost } => {
                write!(f, "connection {src}->{dst} has non-positive cost {cost}")
            }
            UnknownReadout(id) => write!(f, "readout neuron {id} does not exist"),
            PlacementIncomplete { missing } => write!(f, "placement misses {missing} neurons"),
            PlacementInvalid(id) => write!(f, "placement of {id} is duplicated, unknown or not finite"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    Invalid(ValidationReport),
    #[error("metric {0:?} needs a placement")]
    MissingPlacement(CostMetric),
    #[error("unknown connection {0:?}")]
    UnknownConnection(ConnId),
    #[error("no connection {0}->{1}")]
    NoSuchConnection(NeuronId, NeuronId),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TopologySpec {
    fn expected_kind(&self, id: NeuronId) -> NeuronKind {
        if id.0 <= self.n_x {
            NeuronKind::Input
        } else if id == self.halt {
            NeuronKind::Halt
        } else if id.0 <= self.n_x + self.n_y {
            NeuronKind::Output
        } else {
            NeuronKind::Hidden
        }
    }

    /// Checks every structural constraint and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        let mut out = Vec::new();
        let n = self.neurons.len();
        if self.n_x == 0 {
            out.push(Violation::NoInputs);
        }
        if n < (self.n_x + self.n_y) as usize || n <= self.n_x as usize {
            out.push(Violation::TooFewNeurons { n, n_x: self.n_x, n_y: self.n_y });
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            out.push(Violation::BadThreshold(self.threshold));
        }
        if self.halt.0 == 0 || self.halt.0 as usize > n {
            out.push(Violation::HaltOutOfRange(self.halt));
        } else if self.halt.0 <= self.n_x {
            out.push(Violation::HaltIsInput(self.halt));
        }

        for (pos, spec) in self.neurons.iter().enumerate() {
            if spec.id.0 as usize != pos + 1 {
                out.push(Violation::NeuronOrder { position: pos, id: spec.id });
                continue;
            }
            let expected = self.expected_kind(spec.id);
            if expected != spec.kind {
                out.push(Violation::KindMismatch { id: spec.id, expected, found: spec.kind });
            }
            let is_input = spec.id.0 <= self.n_x;
            match (is_input, spec.combinator) {
                (true, Some(_)) => out.push(Violation::InputWithCombinator(spec.id)),
                (false, None) => out.push(Violation::MissingCombinator(spec.id)),
                _ => {}
            }
            if is_input && spec.witas.is_some() {
                out.push(Violation::InputInWitas(spec.id));
            }
        }

        let known = |id: NeuronId| id.0 >= 1 && id.0 as usize <= n;
        let mut seen = HashSet::new();
        for c in &self.connections {
            if !known(c.src) || !known(c.dst) {
                out.push(Violation::UnknownNeuron { src: c.src, dst: c.dst });
                continue;
            }
            if c.dst.0 <= self.n_x {
                out.push(Violation::InputHasIncoming { src: c.src, dst: c.dst });
            }
            if !seen.insert((c.src, c.dst)) {
                out.push(Violation::DuplicateConnection { src: c.src, dst: c.dst });
            }
            if let Some(cost) = c.cost {
                if !(cost.is_finite() && cost > 0.0) {
                    out.push(Violation::NonPositiveCost { src: c.src, dst: c.dst, cost });
                }
            }
        }
        for &r in &self.readout {
            if !known(r) {
                out.push(Violation::UnknownReadout(r));
            }
        }
        if let Some(placement) = &self.placement {
            let mut placed = HashSet::new();
            for p in placement {
                if !known(p.id) || !placed.insert(p.id) || p.xyz.iter().any(|v| !v.is_finite()) {
                    out.push(Violation::PlacementInvalid(p.id));
                }
            }
            let missing = (1..=n as u32).filter(|&i| !placed.contains(&NeuronId(i))).count();
            if missing > 0 {
                out.push(Violation::PlacementIncomplete { missing });
            }
        }
        ValidationReport { violations: out }
    }
}

/// Stand-alone form of [`TopologySpec::validate`].
pub fn validate_topology(spec: &TopologySpec) -> ValidationReport {
    spec.validate()
}

/// Distance between two points under `metric`; `Unit` ignores the points.
pub fn wire_length(a: [f64; 3], b: [f64; 3], metric: CostMetric) -> f64 {
    match metric {
        CostMetric::Unit => 1.0,
        CostMetric::Euclidean => {
            let d: f64 = (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum();
            d.sqrt()
        }
        CostMetric::Manhattan => (0..3).map(|i| (a[i] - b[i]).abs()).sum(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Connection {
    pub src: NeuronId,
    pub dst: NeuronId,
    pub cost: f64,
}

const NO_WITAS: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct SlimTopology {
    spec: TopologySpec,
    n_x: u32,
    n_y: u32,
    halt: NeuronId,
    threshold: f64,
    combinators: Vec<Combinator>,
    witas_group: Vec<u32>,
    witas_rank: Vec<u32>,
    witas_members: Vec<Vec<NeuronId>>,
    conns: Vec<Connection>,
    out_start: Vec<u32>,
    placement: Option<Vec<[f64; 3]>>,
}

impl SlimTopology {
    /// Validates `spec` and fills in missing connection costs from `metric`.
    pub fn from_spec(mut spec: TopologySpec, metric: CostMetric) -> Result<Self, TopologyError> {
        let report = spec.validate();
        if !report.is_valid() {
            return Err(TopologyError::Invalid(report));
        }
        let n = spec.neurons.len();
        let placement = spec.placement.as_ref().map(|entries| {
            let mut coords = vec![[0.0; 3]; n];
            for p in entries {
                coords[p.id.index()] = p.xyz;
            }
            coords
        });

        let mut bad_costs = Vec::new();
        for c in spec.connections.iter_mut() {
            if c.cost.is_none() {
                let cost = match (metric, &placement) {
                    (CostMetric::Unit, _) => 1.0,
                    (m, Some(coords)) => wire_length(coords[c.src.index()], coords[c.dst.index()], m),
                    (m, None) => return Err(TopologyError::MissingPlacement(m)),
                };
                if !(cost > 0.0) {
                    bad_costs.push(Violation::NonPositiveCost { src: c.src, dst: c.dst, cost });
                }
                c.cost = Some(cost);
            }
        }
        if !bad_costs.is_empty() {
            return Err(TopologyError::Invalid(ValidationReport { violations: bad_costs }));
        }

        let mut conns: Vec<Connection> = spec
            .connections
            .iter()
            .map(|c| Connection { src: c.src, dst: c.dst, cost: c.cost.unwrap_or(1.0) })
            .collect();
        conns.sort_by_key(|c| (c.src, c.dst));
        let mut out_start = vec![0u32; n + 1];
        for c in &conns {
            out_start[c.src.index() + 1] += 1;
        }
        for i in 0..n {
            out_start[i + 1] += out_start[i];
        }

        let combinators = spec.neurons.iter().map(|s| s.combinator.unwrap_or(Combinator::Additive)).collect();

        // groups keyed by declared id; members in ascending neuron order
        let mut groups: BTreeMap<u32, Vec<NeuronId>> = BTreeMap::new();
        for s in &spec.neurons {
            if let Some(g) = s.witas {
                groups.entry(g).or_default().push(s.id);
            }
        }
        let mut witas_group = vec![NO_WITAS; n];
        let mut witas_rank = vec![0; n];
        let mut witas_members = Vec::with_capacity(groups.len());
        for (gi, (_, members)) in groups.into_iter().enumerate() {
            for (rank, m) in members.iter().enumerate() {
                witas_group[m.index()] = gi as u32;
                witas_rank[m.index()] = rank as u32;
            }
            witas_members.push(members);
        }

        Ok(SlimTopology {
            n_x: spec.n_x,
            n_y: spec.n_y,
            halt: spec.halt,
            threshold: spec.threshold,
            combinators,
            witas_group,
            witas_rank,
            witas_members,
            conns,
            out_start,
            placement,
            spec,
        })
    }

    pub fn from_toml_str(s: &str, metric: CostMetric) -> Result<Self, TopologyError> {
        let spec: TopologySpec = toml::from_str(s).map_err(|e| TopologyError::Parse(e.to_string()))?;
        Self::from_spec(spec, metric)
    }

    pub fn load(path: impl AsRef<Path>, metric: CostMetric) -> Result<Self, TopologyError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, metric)
    }

    /// The description this topology was built from, with every cost resolved.
    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.spec).expect("topology spec serializes")
    }

    pub fn n_neurons(&self) -> usize {
        self.combinators.len()
    }

    pub fn n_connections(&self) -> usize {
        self.conns.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_x as usize
    }

    pub fn n_outputs(&self) -> usize {
        self.n_y as usize
    }

    pub fn halt(&self) -> NeuronId {
        self.halt
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn readout(&self) -> &[NeuronId] {
        &self.spec.readout
    }

    #[inline]
    pub fn is_input(&self, k: usize) -> bool {
        k < self.n_x as usize
    }

    #[inline]
    pub fn combinator(&self, k: usize) -> Combinator {
        self.combinators[k]
    }

    /// WITAS group index and rank of neuron `k` (zero-based index).
    #[inline]
    pub fn witas(&self, k: usize) -> Option<(usize, u32)> {
        let g = self.witas_group[k];
        (g != NO_WITAS).then(|| (g as usize, self.witas_rank[k]))
    }

    pub fn witas_groups(&self) -> &[Vec<NeuronId>] {
        &self.witas_members
    }

    #[inline]
    pub fn connection(&self, c: ConnId) -> &Connection {
        &self.conns[c.index()]
    }

    pub fn connections(&self) -> &[Connection] {
        &self.conns
    }

    /// Outgoing connections of neuron `k` (zero-based), sorted by destination.
    #[inline]
    pub fn out_range(&self, k: usize) -> Range<usize> {
        self.out_start[k] as usize..self.out_start[k + 1] as usize
    }

    pub fn out(&self, src: NeuronId) -> impl Iterator<Item = ConnId> {
        self.out_range(src.index()).map(|i| ConnId(i as u32))
    }

    pub fn find(&self, src: NeuronId, dst: NeuronId) -> Option<ConnId> {
        if src.0 == 0 || src.index() >= self.n_neurons() {
            return None;
        }
        let r = self.out_range(src.index());
        self.conns[r.clone()].binary_search_by_key(&dst, |c| c.dst).ok().map(|i| ConnId((r.start + i) as u32))
    }

    pub fn require(&self, src: NeuronId, dst: NeuronId) -> Result<ConnId, TopologyError> {
        self.find(src, dst).ok_or(TopologyError::NoSuchConnection(src, dst))
    }

    pub fn placement(&self, k: NeuronId) -> Option<[f64; 3]> {
        self.placement.as_ref().map(|p| p[k.index()])
    }

    /// Length of connection `c` under `metric`, independent of its stored cost.
    pub fn wire_cost(&self, c: ConnId, metric: CostMetric) -> Result<f64, TopologyError> {
        let conn = self.conns.get(c.index()).ok_or(TopologyError::UnknownConnection(c))?;
        if metric == CostMetric::Unit {
            return Ok(1.0);
        }
        let coords = self.placement.as_ref().ok_or(TopologyError::MissingPlacement(metric))?;
        Ok(wire_length(coords[conn.src.index()], coords[conn.dst.index()], metric))
    }

    /// Usage-weighted total `sum cost * n(c)` over the connections of `trace`.
    pub fn total_wire_cost(&self, trace: &Trace) -> Result<f64, TopologyError> {
        let mut total = 0.0;
        for (&c, counts) in &trace.counts {
            let conn = self.conns.get(c.index()).ok_or(TopologyError::UnknownConnection(c))?;
            total += conn.cost * counts.uses as f64;
        }
        Ok(total)
    }
}

/// Programmatic construction of a [`TopologySpec`]. Neurons are numbered
/// inputs, outputs, then hidden; all non-inputs start additive and the halt
/// neuron defaults to the last one.
#[derive(Clone, Debug)]
pub struct TopologyBuilder {
    spec: TopologySpec,
}

impl TopologyBuilder {
    pub fn new(n_x: u32, n_y: u32, hidden: u32) -> Self {
        let n = n_x + n_y + hidden;
        let neurons = (1..=n)
            .map(|i| NeuronSpec {
                id: NeuronId(i),
                kind: NeuronKind::Hidden,
                combinator: (i > n_x).then_some(Combinator::Additive),
                witas: None,
            })
            .collect();
        TopologyBuilder {
            spec: TopologySpec {
                n_x,
                n_y,
                halt: NeuronId(n),
                threshold: DEFAULT_THRESHOLD,
                readout: Vec::new(),
                neurons,
                connections: Vec::new(),
                placement: None,
            },
        }
    }

    pub fn halt(mut self, id: u32) -> Self {
        self.spec.halt = NeuronId(id);
        self
    }

    pub fn threshold(mut self, threshold: f64) -> Self {
        self.spec.threshold = threshold;
        self
    }

    pub fn multiplicative(mut self, id: u32) -> Self {
        if let Some(s) = self.spec.neurons.get_mut(id as usize - 1) {
            s.combinator = Some(Combinator::Multiplicative);
        }
        self
    }

    pub fn witas(mut self, id: u32, group: u32) -> Self {
        if let Some(s) = self.spec.neurons.get_mut(id as usize - 1) {
            s.witas = Some(group);
        }
        self
    }

    pub fn readout(mut self, ids: &[u32]) -> Self {
        self.spec.readout = ids.iter().map(|&i| NeuronId(i)).collect();
        self
    }

    pub fn connect(mut self, src: u32, dst: u32) -> Self {
        self.spec.connections.push(ConnectionSpec { src: NeuronId(src), dst: NeuronId(dst), cost: None });
        self
    }

    pub fn connect_cost(mut self, src: u32, dst: u32, cost: f64) -> Self {
        self.spec.connections.push(ConnectionSpec { src: NeuronId(src), dst: NeuronId(dst), cost: Some(cost) });
        self
    }

    pub fn place(mut self, id: u32, xyz: [f64; 3]) -> Self {
        self.spec.placement.get_or_insert_with(Vec::new).push(PlacementEntry { id: NeuronId(id), xyz });
        self
    }

    pub fn spec(mut self) -> TopologySpec {
        let kinds: Vec<NeuronKind> = self.spec.neurons.iter().map(|s| self.spec.expected_kind(s.id)).collect();
        for (s, k) in self.spec.neurons.iter_mut().zip(kinds) {
            s.kind = k;
        }
        self.spec
    }

    pub fn build(self) -> Result<SlimTopology, TopologyError> {
        SlimTopology::from_spec(self.spec(), CostMetric::Unit)
    }

    pub fn build_with(self, metric: CostMetric) -> Result<SlimTopology, TopologyError> {
        SlimTopology::from_spec(self.spec(), metric)
    }
}
