//! Random sparse networks with a planted program, and the touch comparison
//! between event-driven and dense simulation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dense::dense_spread;
use crate::engine::{Engine, EngineError, EngineOptions};
use crate::tasks::{SequenceEnv, Tail};
use crate::topology::{SlimTopology, TopologyBuilder};
use crate::weights::{WeightAssignment, ZeroFill};

/// Average number of outgoing connections per neuron.
pub const FAN_OUT: usize = 8;

#[derive(Clone, Debug)]
pub struct PlantedNet {
    pub topo: SlimTopology,
    /// Weights of the planted chain; every other connection is undefined.
    pub program: WeightAssignment,
}

impl PlantedNet {
    /// The episode driving the chain: one pulse on input 1.
    pub fn env(&self) -> SequenceEnv {
        SequenceEnv::new(Vec::new(), vec![vec![1.0, 0.0]], Tail::Zero, false)
    }
}

/// Random network with `n_connections` connections (inputs `u1` and the
/// reward channel `u2`, one output, halt last) containing a chain of `chain`
/// connections from `u1` to the halt neuron, all weighted `+1`.
pub fn planted_chain(n_connections: usize, chain: usize, seed: u64) -> PlantedNet {
    let chain = chain.max(1);
    let sqrt = (n_connections as f64).sqrt().ceil() as usize;
    let n = (n_connections / FAN_OUT).max(sqrt + 2).max(chain + 4) as u32;
    let hidden = n - 3;
    let halt = n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut inner: Vec<u32> = (4..halt).collect();
    inner.shuffle(&mut rng);
    let mut path = vec![1u32];
    path.extend(&inner[..chain - 1]);
    path.push(halt);
    let planted: Vec<(u32, u32)> = path.windows(2).map(|p| (p[0], p[1])).collect();

    let mut pairs: HashSet<(u32, u32)> = planted.iter().copied().collect();
    let target = n_connections.max(planted.len());
    while pairs.len() < target {
        let src = rng.gen_range(1..=n);
        let dst = rng.gen_range(3..=n);
        if src != 2 {
            pairs.insert((src, dst));
        }
    }
    let mut sorted: Vec<(u32, u32)> = pairs.into_iter().collect();
    sorted.sort_unstable();
    let mut b = TopologyBuilder::new(2, 1, hidden);
    for &(s, d) in &sorted {
        b = b.connect(s, d);
    }
    let topo = b.build().expect("generated topology is valid");
    let program = planted
        .iter()
        .map(|&(s, d)| (topo.find(crate::NeuronId(s), crate::NeuronId(d)).expect("planted connection"), 1.0))
        .collect();
    PlantedNet { topo, program }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TouchReport {
    pub n_neurons: usize,
    pub n_connections: usize,
    pub used_fraction: f64,
    pub sparse_touches: u64,
    pub dense_touches: u64,
    /// Both simulations ended the same way at the same step.
    pub agree: bool,
}

/// Runs the planted episode event-driven and dense, counting touches.
pub fn compare_touches(net: &PlantedNet, t_lim: f64) -> Result<TouchReport, EngineError> {
    let opts = EngineOptions::default();
    let mut engine = Engine::with_options(&net.topo, opts);
    let sparse = engine.spread(&mut ZeroFill(&net.program), &mut net.env(), t_lim)?;
    let stats = engine.stats();
    let dense = dense_spread(&net.topo, &net.program, &mut net.env(), t_lim, opts.max_idle_steps)?;
    Ok(TouchReport {
        n_neurons: net.topo.n_neurons(),
        n_connections: net.topo.n_connections(),
        used_fraction: sparse.trace.counts.len() as f64 / net.topo.n_connections().max(1) as f64,
        sparse_touches: stats.conn_visits + stats.neuron_updates,
        dense_touches: dense.touches,
        agree: dense.end == sparse.end && dense.steps == sparse.steps && dense.time == sparse.trace.time,
    })
}
