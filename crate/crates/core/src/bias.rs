//! Probability model over weight programs.
//!
//! Each connection has a distribution over a finite value set (independent
//! mode), or each source neuron has a distribution over which one of its
//! outgoing connections carries `+1` while the others carry `-1` (joint
//! one-hot mode). A program's probability is the product of the
//! probabilities of its weights; after a problem is solved the distributions
//! shift towards the solution using the Hebbian counters of its trace.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trace;
use crate::topology::{ConnId, NeuronId, SlimTopology, TopologyError};
use crate::weights::{WeightAssignment, WeightOracle};

/// Smallest probability any value keeps after an update.
pub const PROBABILITY_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("value set must be non-empty, distinct, finite and exclude 0: {0:?}")]
    BadValues(Vec<f64>),
    #[error("value {0} is not in the value set")]
    UnknownValue(f64),
    #[error("program has probability zero")]
    ZeroProbability,
    #[error("connection {0:?} was not used")]
    NoUses(ConnId),
    #[error("solution gives no weight to used connection {0:?}")]
    MissingWeight(ConnId),
    #[error("learning rate must lie in [0, 1), got {0}")]
    BadEta(f64),
    #[error("joint one-hot mode needs the value set [-1, 1]")]
    JointNeedsSigns,
    #[error("bad snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ValueSet(Vec<f64>);

impl ValueSet {
    pub fn new(values: Vec<f64>) -> Result<Self, BiasError> {
        let ok = !values.is_empty()
            && values.iter().all(|v| v.is_finite() && *v != 0.0)
            && values.iter().enumerate().all(|(i, v)| !values[..i].contains(v));
        if ok {
            Ok(ValueSet(values))
        } else {
            Err(BiasError::BadValues(values))
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, v: f64) -> Option<usize> {
        self.0.iter().position(|&x| x == v)
    }

    fn is_signs(&self) -> bool {
        self.0 == [-1.0, 1.0]
    }
}

impl Default for ValueSet {
    fn default() -> Self {
        ValueSet(vec![-1.0, 1.0])
    }
}

impl TryFrom<Vec<f64>> for ValueSet {
    type Error = BiasError;
    fn try_from(v: Vec<f64>) -> Result<Self, BiasError> {
        ValueSet::new(v)
    }
}

impl From<ValueSet> for Vec<f64> {
    fn from(v: ValueSet) -> Vec<f64> {
        v.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    #[default]
    Independent,
    JointOnehot,
}

/// Hebbian direction of one connection: `(yes - no) / n`, in `[-1, 1]`.
pub fn compute_delta(trace: &Trace, c: ConnId) -> Result<f64, BiasError> {
    match trace.counts.get(&c) {
        Some(u) if u.uses > 0 => Ok((u.yes as f64 - u.no as f64) / u.uses as f64),
        _ => Err(BiasError::NoUses(c)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasModel {
    mode: BiasMode,
    values: ValueSet,
    eta: f64,
    /// Independent mode: `dists[c][j]` is `P^c(v_j)`.
    dists: Vec<Vec<f64>>,
    /// Joint mode: `joint[l][i]` is the probability that the `i`-th outgoing
    /// connection of neuron `l` is the one carrying `+1`.
    joint: Vec<Vec<f64>>,
}

impl BiasModel {
    pub fn uniform(topo: &SlimTopology, values: ValueSet, mode: BiasMode, eta: f64) -> Result<Self, BiasError> {
        if !(0.0..1.0).contains(&eta) {
            return Err(BiasError::BadEta(eta));
        }
        let m = values.len();
        let (dists, joint) = match mode {
            BiasMode::Independent => (vec![vec![1.0 / m as f64; m]; topo.n_connections()], Vec::new()),
            BiasMode::JointOnehot => {
                if !values.is_signs() {
                    return Err(BiasError::JointNeedsSigns);
                }
                let joint = (0..topo.n_neurons())
                    .map(|l| {
                        let d = topo.out_range(l).len();
                        vec![1.0 / d as f64; d]
                    })
                    .collect();
                (Vec::new(), joint)
            }
        };
        Ok(BiasModel { mode, values, eta, dists, joint })
    }

    pub fn mode(&self) -> BiasMode {
        self.mode
    }

    pub fn values(&self) -> &ValueSet {
        &self.values
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn set_eta(&mut self, eta: f64) -> Result<(), BiasError> {
        if !(0.0..1.0).contains(&eta) {
            return Err(BiasError::BadEta(eta));
        }
        self.eta = eta;
        Ok(())
    }

    /// `P^c` over the value set (independent mode).
    pub fn dist(&self, c: ConnId) -> &[f64] {
        &self.dists[c.index()]
    }

    /// Mutable access for building hand-made models.
    pub fn dist_mut(&mut self, c: ConnId) -> &mut [f64] {
        &mut self.dists[c.index()]
    }

    /// One-hot distribution over the outgoing connections of `src` (joint mode).
    pub fn joint(&self, src: NeuronId) -> &[f64] {
        &self.joint[src.index()]
    }

    pub fn joint_mut(&mut self, src: NeuronId) -> &mut [f64] {
        &mut self.joint[src.index()]
    }

    /// Values `c` may take given the already fixed `prefix`, with their
    /// conditional probabilities, most likely first (ties in value-set order).
    /// Values of probability zero are left out.
    pub fn branches<W: WeightOracle + ?Sized>(&self, topo: &SlimTopology, c: ConnId, prefix: &W) -> Vec<(f64, f64)> {
        let mut out: Vec<(usize, f64, f64)> = match self.mode {
            BiasMode::Independent => {
                self.dists[c.index()].iter().enumerate().map(|(j, &p)| (j, self.values.0[j], p)).collect()
            }
            BiasMode::JointOnehot => {
                let l = topo.connection(c).src.index();
                let range = topo.out_range(l);
                let probs = &self.joint[l];
                let mut hot_taken = false;
                let mut free = 0.0;
                for (i, cc) in range.clone().enumerate() {
                    match prefix.query(ConnId(cc as u32)) {
                        Some(v) if v > 0.0 => hot_taken = true,
                        Some(_) => {}
                        None => free += probs[i],
                    }
                }
                if hot_taken {
                    vec![(0, -1.0, 1.0)]
                } else {
                    let own = probs[c.index() - range.start];
                    let p_hot = if free > 0.0 { (own / free).min(1.0) } else { 0.0 };
                    vec![(0, -1.0, 1.0 - p_hot), (1, 1.0, p_hot)]
                }
            }
        };
        out.retain(|b| b.2 > 0.0);
        out.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(_, v, p)| (v, p)).collect()
    }

    /// Probability of `program`: the product of its weights' probabilities,
    /// or in joint mode the product over sources of the one-hot pattern
    /// restricted to the program's connections.
    pub fn program_probability(&self, topo: &SlimTopology, program: &WeightAssignment) -> Result<f64, BiasError> {
        match self.mode {
            BiasMode::Independent => {
                let mut p = 1.0;
                for (c, v) in program.iter() {
                    let j = self.values.index_of(v).ok_or(BiasError::UnknownValue(v))?;
                    p *= self.dists[c.index()][j];
                }
                Ok(p)
            }
            BiasMode::JointOnehot => {
                // per source: (probability of the hot one, number hot, mass of the cold ones)
                let mut per_src: std::collections::BTreeMap<usize, (f64, u32, f64)> = Default::default();
                for (c, v) in program.iter() {
                    if v != 1.0 && v != -1.0 {
                        return Err(BiasError::UnknownValue(v));
                    }
                    let l = topo.connection(c).src.index();
                    let pc = self.joint[l][c.index() - topo.out_range(l).start];
                    let e = per_src.entry(l).or_insert((0.0, 0, 0.0));
                    if v > 0.0 {
                        e.0 = pc;
                        e.1 += 1;
                    } else {
                        e.2 += pc;
                    }
                }
                let mut p = 1.0;
                for (_, (hot, n_hot, cold)) in per_src {
                    p *= match n_hot {
                        0 => (1.0 - cold).max(0.0),
                        1 => hot,
                        _ => 0.0,
                    };
                }
                Ok(p)
            }
        }
    }

    /// `-log2` of the program probability: its optimal code length in bits.
    pub fn description_length_bits(&self, topo: &SlimTopology, program: &WeightAssignment) -> Result<f64, BiasError> {
        let p = self.program_probability(topo, program)?;
        if p > 0.0 {
            Ok(-p.log2())
        } else {
            Err(BiasError::ZeroProbability)
        }
    }

    /// Shifts the model towards `solution` using the counters of its trace.
    ///
    /// Every outgoing connection of every source that appears in the trace is
    /// updated, in connection order, unless it was never used.
    pub fn adaptive_update(
        &mut self,
        topo: &SlimTopology,
        trace: &Trace,
        solution: &WeightAssignment,
    ) -> Result<(), BiasError> {
        let mut sources: Vec<usize> =
            trace.counts.iter().filter(|(_, u)| u.uses > 0).map(|(c, _)| topo.connection(*c).src.index()).collect();
        sources.dedup();
        match self.mode {
            BiasMode::Independent => {
                for l in sources {
                    for cc in topo.out_range(l) {
                        let c = ConnId(cc as u32);
                        if trace.uses(c) == 0 {
                            continue;
                        }
                        let delta = compute_delta(trace, c)?;
                        let w = solution.get(c).ok_or(BiasError::MissingWeight(c))?;
                        let j = self.values.index_of(w).ok_or(BiasError::UnknownValue(w))?;
                        hebbian_step(&mut self.dists[cc], j, delta, self.eta);
                    }
                }
            }
            BiasMode::JointOnehot => {
                for l in sources {
                    let range = topo.out_range(l);
                    let mut sum = 0.0;
                    let mut n = 0u32;
                    let mut hot = None;
                    for cc in range.clone() {
                        let c = ConnId(cc as u32);
                        if trace.uses(c) == 0 {
                            continue;
                        }
                        sum += compute_delta(trace, c)?;
                        n += 1;
                        if solution.get(c).ok_or(BiasError::MissingWeight(c))? > 0.0 {
                            hot = Some(cc - range.start);
                        }
                    }
                    let Some(i) = hot else { continue };
                    let mean = sum / n as f64;
                    let d = &mut self.joint[l];
                    d[i] *= 1.0 + self.eta * mean;
                    let total: f64 = d.iter().sum();
                    d.iter_mut().for_each(|p| *p /= total);
                    apply_floor(d);
                }
            }
        }
        Ok(())
    }

    pub fn to_snapshot(&self, topo: &SlimTopology) -> BiasSnapshot {
        let connections = match self.mode {
            BiasMode::Independent => topo
                .connections()
                .iter()
                .zip(&self.dists)
                .map(|(c, p)| ConnEntry { src: c.src, dst: c.dst, p: p.clone() })
                .collect(),
            BiasMode::JointOnehot => Vec::new(),
        };
        let sources = match self.mode {
            BiasMode::Independent => Vec::new(),
            BiasMode::JointOnehot => self
                .joint
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.is_empty())
                .map(|(l, p)| SourceEntry { src: NeuronId::from_index(l), p: p.clone() })
                .collect(),
        };
        BiasSnapshot { mode: self.mode, values: self.values.clone(), eta: self.eta, connections, sources }
    }

    pub fn from_snapshot(snap: &BiasSnapshot, topo: &SlimTopology) -> Result<Self, BiasError> {
        let mut model = BiasModel::uniform(topo, snap.values.clone(), snap.mode, snap.eta)?;
        let check = |p: &[f64], len: usize| {
            let sum: f64 = p.iter().sum();
            if p.len() != len || p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > 1e-9 {
                Err(BiasError::Snapshot(format!("distribution {p:?} is not a probability vector of length {len}")))
            } else {
                Ok(())
            }
        };
        for e in &snap.connections {
            let c = topo.require(e.src, e.dst)?;
            check(&e.p, model.values.len())?;
            model.dists[c.index()] = e.p.clone();
        }
        for e in &snap.sources {
            if e.src.0 == 0 || e.src.index() >= topo.n_neurons() {
                return Err(BiasError::Snapshot(format!("unknown source {}", e.src)));
            }
            check(&e.p, topo.out_range(e.src.index()).len())?;
            model.joint[e.src.index()] = e.p.clone();
        }
        Ok(model)
    }

    pub fn save(&self, topo: &SlimTopology, path: impl AsRef<Path>) -> Result<(), BiasError> {
        let text = serde_json::to_string_pretty(&self.to_snapshot(topo)).expect("snapshot serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(topo: &SlimTopology, path: impl AsRef<Path>) -> Result<Self, BiasError> {
        let text = std::fs::read_to_string(path)?;
        let snap: BiasSnapshot = serde_json::from_str(&text).map_err(|e| BiasError::Snapshot(e.to_string()))?;
        Self::from_snapshot(&snap, topo)
    }
}

/// Moves `p[j]` by `eta * delta` towards 1 (delta > 0) or 0 (delta < 0) and
/// rescales the other values to keep the sum at 1.
pub fn hebbian_step(p: &mut [f64], j: usize, delta: f64, eta: f64) {
    if p.len() < 2 || delta == 0.0 || eta == 0.0 {
        return;
    }
    let old = p[j];
    let new = if delta < 0.0 { old + eta * delta * old } else { old + eta * delta * (1.0 - old) };
    let rest_old: f64 = p.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, x)| x).sum();
    p[j] = new;
    if rest_old > 0.0 {
        let gamma = (1.0 - new) / rest_old;
        for (i, x) in p.iter_mut().enumerate() {
            if i != j {
                *x *= gamma;
            }
        }
    }
    apply_floor(p);
}

/// Raises every entry to at least [`PROBABILITY_FLOOR`], taking the mass from
/// the entries above it in proportion to their size, then normalizes.
pub fn apply_floor(p: &mut [f64]) {
    let n = p.len();
    if n == 0 || PROBABILITY_FLOOR * n as f64 >= 1.0 {
        return;
    }
    let mut pinned = vec![false; n];
    loop {
        let mut changed = false;
        for i in 0..n {
            if !pinned[i] && p[i] < PROBABILITY_FLOOR {
                pinned[i] = true;
                changed = true;
            }
        }
        let n_pinned = pinned.iter().filter(|&&b| b).count();
        let free_mass = 1.0 - PROBABILITY_FLOOR * n_pinned as f64;
        let free_sum: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| p[i]).sum();
        for i in 0..n {
            if pinned[i] {
                p[i] = PROBABILITY_FLOOR;
            } else if free_sum > 0.0 {
                p[i] *= free_mass / free_sum;
            }
        }
        if !changed {
            break;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnEntry {
    pub src: NeuronId,
    pub dst: NeuronId,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub src: NeuronId,
    pub p: Vec<f64>,
}

/// On-disk form: a probability table per connection (or per source).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSnapshot {
    pub mode: BiasMode,
    pub values: ValueSet,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub connections: Vec<ConnEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceEntry>,
}
