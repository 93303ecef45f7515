//! Weight programs and the on-demand weight oracle consulted by the engine.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{ConnId, NeuronId, SlimTopology, TopologyError};

/// Sparse partial map from connections to weight values. Iteration order is
/// definition order, which for search results is first-request order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightAssignment {
    map: IndexMap<ConnId, f64>,
}

impl WeightAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn get(&self, c: ConnId) -> Option<f64> {
        self.map.get(&c).copied()
    }

    /// Defines or redefines `c`. A redefinition keeps the original position.
    pub fn set(&mut self, c: ConnId, value: f64) {
        self.map.insert(c, value);
    }

    pub fn remove(&mut self, c: ConnId) -> Option<f64> {
        self.map.shift_remove(&c)
    }

    pub fn pop(&mut self) -> Option<(ConnId, f64)> {
        self.map.pop()
    }

    pub fn truncate(&mut self, len: usize) {
        self.map.truncate(len);
    }

    pub fn retain(&mut self, mut keep: impl FnMut(ConnId) -> bool) {
        self.map.retain(|&c, _| keep(c));
    }

    pub fn contains(&self, c: ConnId) -> bool {
        self.map.contains_key(&c)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConnId, f64)> + '_ {
        self.map.iter().map(|(&c, &v)| (c, v))
    }

    pub fn connections(&self) -> impl Iterator<Item = ConnId> + '_ {
        self.map.keys().copied()
    }

    /// Applies `delta` on top of `self`; a zero in `delta` removes the weight.
    pub fn apply(&mut self, delta: &WeightAssignment) {
        for (c, v) in delta.iter() {
            if v == 0.0 {
                self.remove(c);
            } else {
                self.set(c, v);
            }
        }
    }

    pub fn to_file(&self, topo: &SlimTopology) -> ProgramFile {
        ProgramFile {
            weights: self
                .iter()
                .map(|(c, value)| {
                    let conn = topo.connection(c);
                    WeightEntry { src: conn.src, dst: conn.dst, value }
                })
                .collect(),
        }
    }

    pub fn from_file(file: &ProgramFile, topo: &SlimTopology) -> Result<Self, TopologyError> {
        let mut w = WeightAssignment::new();
        for e in &file.weights {
            w.set(topo.require(e.src, e.dst)?, e.value);
        }
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>, topo: &SlimTopology) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)?;
        let file: ProgramFile = toml::from_str(&text).map_err(|e| TopologyError::Parse(e.to_string()))?;
        Self::from_file(&file, topo)
    }
}

impl FromIterator<(ConnId, f64)> for WeightAssignment {
    fn from_iter<I: IntoIterator<Item = (ConnId, f64)>>(iter: I) -> Self {
        WeightAssignment { map: iter.into_iter().collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub src: NeuronId,
    pub dst: NeuronId,
    pub value: f64,
}

/// On-disk program: `(connection, value)` pairs in definition order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgramFile {
    #[serde(default)]
    pub weights: Vec<WeightEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("weight request refused for connection {0:?}")]
pub struct Refusal(pub ConnId);

/// Source of weights for an episode.
///
/// `query` must not mutate. When it reports `None` the engine calls `request`
/// once, at the moment the connection is first about to carry activation; after
/// a successful request `query` must return the granted value.
pub trait WeightOracle {
    fn query(&self, c: ConnId) -> Option<f64>;
    fn request(&mut self, c: ConnId) -> Result<f64, Refusal>;
}

/// A fixed program refuses to grow.
impl WeightOracle for WeightAssignment {
    #[inline]
    fn query(&self, c: ConnId) -> Option<f64> {
        self.get(c)
    }

    fn request(&mut self, c: ConnId) -> Result<f64, Refusal> {
        Err(Refusal(c))
    }
}

/// Treats every undefined weight as zero, i.e. as an absent connection.
#[derive(Clone, Copy, Debug)]
pub struct ZeroFill<'a>(pub &'a WeightAssignment);

impl WeightOracle for ZeroFill<'_> {
    #[inline]
    fn query(&self, c: ConnId) -> Option<f64> {
        Some(self.0.get(c).unwrap_or(0.0))
    }

    fn request(&mut self, _c: ConnId) -> Result<f64, Refusal> {
        Ok(0.0)
    }
}

/// `top` shadows `base`; undefined in both reads as zero.
#[derive(Clone, Copy, Debug)]
pub struct Overlay<'a> {
    pub base: &'a WeightAssignment,
    pub top: &'a WeightAssignment,
}

impl WeightOracle for Overlay<'_> {
    #[inline]
    fn query(&self, c: ConnId) -> Option<f64> {
        Some(self.top.get(c).or_else(|| self.base.get(c)).unwrap_or(0.0))
    }

    fn request(&mut self, _c: ConnId) -> Result<f64, Refusal> {
        Ok(0.0)
    }
}

/// Grows the program on demand: undefined connections are handed to `grow`,
/// which may return a tentative value or refuse.
pub struct Growing<F> {
    pub defined: WeightAssignment,
    grow: F,
}

impl<F: FnMut(ConnId) -> Option<f64>> Growing<F> {
    pub fn new(defined: WeightAssignment, grow: F) -> Self {
        Growing { defined, grow }
    }
}

impl<F: FnMut(ConnId) -> Option<f64>> WeightOracle for Growing<F> {
    #[inline]
    fn query(&self, c: ConnId) -> Option<f64> {
        self.defined.get(c)
    }

    fn request(&mut self, c: ConnId) -> Result<f64, Refusal> {
        let v = (self.grow)(c).ok_or(Refusal(c))?;
        self.defined.set(c, v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_delta_removes_zeros() {
        let mut w: WeightAssignment = [(ConnId(0), 1.0), (ConnId(3), -1.0)].into_iter().collect();
        let delta: WeightAssignment = [(ConnId(3), 0.0), (ConnId(5), 1.0)].into_iter().collect();
        w.apply(&delta);
        assert_eq!(w.iter().collect::<Vec<_>>(), vec![(ConnId(0), 1.0), (ConnId(5), 1.0)]);
    }

    #[test]
    fn oracles() {
        let base: WeightAssignment = [(ConnId(1), 1.0)].into_iter().collect();
        let top: WeightAssignment = [(ConnId(1), -1.0), (ConnId(2), 1.0)].into_iter().collect();
        let o = Overlay { base: &base, top: &top };
        assert_eq!(o.query(ConnId(1)), Some(-1.0));
        assert_eq!(o.query(ConnId(7)), Some(0.0));
        assert_eq!(ZeroFill(&base).query(ConnId(2)), Some(0.0));

        let mut strict = base.clone();
        assert_eq!(strict.request(ConnId(2)), Err(Refusal(ConnId(2))));

        let mut g = Growing::new(WeightAssignment::new(), |c: ConnId| (c.0 < 2).then_some(1.0));
        assert_eq!(g.request(ConnId(0)), Ok(1.0));
        assert_eq!(g.query(ConnId(0)), Some(1.0));
        assert!(g.request(ConnId(4)).is_err());
    }
}
