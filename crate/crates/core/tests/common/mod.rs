//! Test-side helpers: random networks and a dense matrix reference model
//! written independently of the library's simulators.
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slimnn::topology::TopologyBuilder;
use slimnn::{ConnId, NeuronId, SlimTopology, WeightAssignment};

/// Everything needed to rebuild a random network by hand.
#[derive(Clone, Debug)]
pub struct NetDesc {
    pub n_x: usize,
    pub n_y: usize,
    pub n: usize,
    /// 1-based ids, as given to the builder.
    pub halt: usize,
    pub threshold: f64,
    pub multiplicative: BTreeSet<usize>,
    /// neuron -> declared group
    pub witas: BTreeMap<usize, u32>,
    /// (src, dst, cost), 1-based ids
    pub conns: Vec<(usize, usize, f64)>,
}

impl NetDesc {
    pub fn build(&self) -> SlimTopology {
        let hidden = (self.n - self.n_x - self.n_y) as u32;
        let mut b = TopologyBuilder::new(self.n_x as u32, self.n_y as u32, hidden)
            .halt(self.halt as u32)
            .threshold(self.threshold);
        for &k in &self.multiplicative {
            b = b.multiplicative(k as u32);
        }
        for (&k, &g) in &self.witas {
            b = b.witas(k as u32, g);
        }
        for &(s, d, c) in &self.conns {
            b = b.connect_cost(s as u32, d as u32, c);
        }
        b.build().expect("random network is valid")
    }
}

pub fn dyadic(rng: &mut ChaCha8Rng, choices: &[f64]) -> f64 {
    *choices.choose(rng).unwrap()
}

/// Random recurrent network with at most `max_neurons` neurons and
/// `max_conns` connections.
pub fn random_net(rng: &mut ChaCha8Rng, max_neurons: usize, max_conns: usize, witas: bool) -> NetDesc {
    let n_x = rng.gen_range(1..=3);
    let n_y = rng.gen_range(0..=2);
    let n = rng.gen_range((n_x + n_y + 1).max(4)..=max_neurons);
    let halt = n;
    let non_inputs: Vec<usize> = (n_x + 1..=n).collect();
    let multiplicative = non_inputs.iter().copied().filter(|_| rng.gen_bool(0.3)).collect();
    let mut groups = BTreeMap::new();
    if witas {
        let n_groups = rng.gen_range(1..=2);
        for k in &non_inputs {
            if rng.gen_bool(0.5) {
                groups.insert(*k, rng.gen_range(0..n_groups) as u32 + 10);
            }
        }
    }
    let mut pairs = BTreeSet::new();
    let target = rng.gen_range(1..=max_conns);
    let mut tries = 0;
    while pairs.len() < target && tries < 10 * max_conns {
        tries += 1;
        let s = rng.gen_range(1..=n);
        let d = *non_inputs.choose(rng).unwrap();
        pairs.insert((s, d));
    }
    let conns = pairs.into_iter().map(|(s, d)| (s, d, dyadic(rng, &[0.25, 0.5, 1.0, 1.5, 2.0]))).collect();
    NetDesc { n_x, n_y, n, halt, threshold: dyadic(rng, &[0.5, 1.0, 1.5]), multiplicative, witas: groups, conns }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One resolved neuron: (1-based id, net input, activation).
pub type Resolved = (usize, f64, f64);

#[derive(Clone, Debug, Default)]
pub struct OracleStep {
    /// Neurons that received at least one contribution, by id.
    pub resolved: Vec<Resolved>,
    /// Activations of all neurons after the step (index = id - 1).
    pub state: Vec<f64>,
    /// Time spent on connection uses in this step.
    pub cost: f64,
    pub used: BTreeSet<(usize, usize)>,
}

/// Dense matrix model. `w[src][dst]` holds the weight of a connection,
/// zero where there is none or it is undefined.
pub struct MatrixModel<'a> {
    pub desc: &'a NetDesc,
    pub w: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
}

impl<'a> MatrixModel<'a> {
    pub fn new(desc: &'a NetDesc, weights: &BTreeMap<(usize, usize), f64>) -> Self {
        let n = desc.n;
        let mut w = vec![vec![0.0; n + 1]; n + 1];
        let mut cost = vec![vec![0.0; n + 1]; n + 1];
        for &(s, d, c) in &desc.conns {
            w[s][d] = weights.get(&(s, d)).copied().unwrap_or(0.0);
            cost[s][d] = c;
        }
        MatrixModel { desc, w, cost }
    }

    /// One transition from `u` (index = id - 1) with inputs `x` already
    /// written into the first `n_x` entries.
    pub fn step(&self, u: &[f64]) -> OracleStep {
        let d = self.desc;
        let n = d.n;
        let mut out = OracleStep { state: vec![0.0; n], ..Default::default() };
        out.state[..d.n_x].copy_from_slice(&u[..d.n_x]);
        let mut raw: Vec<Option<f64>> = vec![None; n + 1];
        for k in d.n_x + 1..=n {
            let mult = d.multiplicative.contains(&k);
            for l in 1..=n {
                let term = u[l - 1] * self.w[l][k];
                if term == 0.0 {
                    continue;
                }
                out.cost += self.cost[l][k];
                out.used.insert((l, k));
                raw[k] = Some(match (raw[k], mult) {
                    (None, _) => term,
                    (Some(a), false) => a + term,
                    (Some(a), true) => a * term,
                });
            }
        }
        let theta = d.threshold;
        for k in d.n_x + 1..=n {
            if let (Some(r), None) = (raw[k], d.witas.get(&k)) {
                out.state[k - 1] = if r >= theta { 1.0 } else { 0.0 };
            }
        }
        let groups: BTreeSet<u32> = d.witas.values().copied().collect();
        for g in groups {
            let members: Vec<usize> = d.witas.iter().filter(|(_, &gg)| gg == g).map(|(&k, _)| k).collect();
            let mut winner: Option<(usize, f64)> = None;
            for &k in &members {
                if let Some(r) = raw[k] {
                    if winner.is_none_or(|(_, b)| r > b) {
                        winner = Some((k, r));
                    }
                }
            }
            if let Some((k, r)) = winner {
                if r >= theta {
                    out.state[k - 1] = 1.0;
                }
            }
        }
        for k in d.n_x + 1..=n {
            if let Some(r) = raw[k] {
                out.resolved.push((k, r, out.state[k - 1]));
            }
        }
        out
    }

    /// Runs `transitions` steps; `inputs(t)` gives x(t) for t = 1, 2, ...
    pub fn run(&self, inputs: impl Fn(u32) -> Vec<f64>, transitions: usize) -> Vec<OracleStep> {
        let mut u = vec![0.0; self.desc.n];
        let mut steps = Vec::with_capacity(transitions);
        for t in 1..=transitions as u32 {
            let x = inputs(t);
            u[..self.desc.n_x].copy_from_slice(&x);
            let s = self.step(&u);
            u = s.state.clone();
            steps.push(s);
        }
        steps
    }
}

/// Library weight assignment from id pairs.
pub fn to_assignment(topo: &SlimTopology, weights: &BTreeMap<(usize, usize), f64>) -> WeightAssignment {
    weights.iter().map(|(&(s, d), &v)| (topo.find(NeuronId(s as u32), NeuronId(d as u32)).unwrap(), v)).collect()
}

/// Every assignment of `values` to `conns` connections, in odometer order.
pub fn all_assignments(conns: usize, values: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..conns {
        out = out
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn full(values: &[f64]) -> WeightAssignment {
    values.iter().enumerate().map(|(c, &v)| (ConnId(c as u32), v)).collect()
}
