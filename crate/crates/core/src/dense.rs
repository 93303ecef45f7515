//! Dense reference simulation.
//!
//! Computes the same recurrence as the event-driven engine but the
//! straightforward way: every step visits every connection and every neuron.
//! Used to cross-check the engine and as the baseline of the touch benchmark.

use crate::engine::EpisodeEnd;
use crate::tasks::{EnvError, Environment};
use crate::topology::{Combinator, SlimTopology};
use crate::weights::WeightAssignment;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseRun {
    /// `activations[t - 1]` holds u(t + 1) for every neuron after step `t`.
    pub activations: Vec<Vec<f64>>,
    /// Net input of each non-input neuron that received any contribution.
    pub net_inputs: Vec<Vec<Option<f64>>>,
    pub end: EpisodeEnd,
    pub steps: u32,
    pub time: f64,
    /// Connection visits plus neuron updates.
    pub touches: u64,
}

/// Runs one episode; undefined weights are zero.
pub fn dense_spread(
    topo: &SlimTopology,
    weights: &WeightAssignment,
    env: &mut dyn Environment,
    t_lim: f64,
    max_idle_steps: u32,
) -> Result<DenseRun, EnvError> {
    let n = topo.n_neurons();
    let n_x = topo.n_inputs();
    let theta = topo.threshold();
    let conns = topo.connections();
    let w: Vec<f64> = (0..conns.len()).map(|c| weights.get(crate::ConnId(c as u32)).unwrap_or(0.0)).collect();
    let init = |k: usize| match topo.combinator(k) {
        Combinator::Additive => 0.0,
        Combinator::Multiplicative => 1.0,
    };

    let mut u = vec![0.0; n];
    let mut x = vec![0.0; n_x];
    let mut run = DenseRun {
        activations: Vec::new(),
        net_inputs: Vec::new(),
        end: EpisodeEnd::TimedOut,
        steps: 1,
        time: 0.0,
        touches: 0,
    };
    let mut idle = 0u32;
    env.reset();
    loop {
        let step = run.steps;
        x.iter_mut().for_each(|v| *v = 0.0);
        env.observe(step, &mut x)?;
        u[..n_x].copy_from_slice(&x);

        let mut acc: Vec<f64> = (0..n).map(init).collect();
        let mut touched = vec![false; n];
        let mut any_use = false;
        for (c, conn) in conns.iter().enumerate() {
            run.touches += 1;
            let (l, k) = (conn.src.index(), conn.dst.index());
            if u[l] != 0.0 && w[c] != 0.0 {
                let term = u[l] * w[c];
                match topo.combinator(k) {
                    Combinator::Additive => acc[k] += term,
                    Combinator::Multiplicative => acc[k] *= term,
                }
                touched[k] = true;
                any_use = true;
                run.time += conn.cost;
                if run.time > t_lim {
                    run.end = EpisodeEnd::TimedOut;
                    return Ok(run);
                }
            }
        }

        let mut next = vec![0.0; n];
        next[..n_x].copy_from_slice(&u[..n_x]);
        for k in n_x..n {
            run.touches += 1;
            if touched[k] && topo.witas(k).is_none() && acc[k] >= theta {
                next[k] = 1.0;
            }
        }
        for members in topo.witas_groups() {
            let mut best: Option<(f64, usize)> = None;
            for m in members {
                let k = m.index();
                if touched[k] && best.is_none_or(|(b, _)| acc[k] > b) {
                    best = Some((acc[k], k));
                }
            }
            if let Some((b, k)) = best {
                if b >= theta {
                    next[k] = 1.0;
                }
            }
        }
        run.net_inputs.push((0..n).map(|k| (k >= n_x && touched[k]).then_some(acc[k])).collect());
        u = next;
        run.activations.push(u.clone());

        env.act(step + 1, &u[n_x..n_x + topo.n_outputs()])?;
        run.time += env.step_cost();
        run.steps = step + 1;
        let quiet = !any_use && u[n_x..].iter().all(|&v| v == 0.0);
        if run.time > t_lim {
            run.end = EpisodeEnd::TimedOut;
            return Ok(run);
        }
        if u[topo.halt().index()] != 0.0 {
            run.end = EpisodeEnd::Halted;
            return Ok(run);
        }
        if quiet {
            idle += 1;
            if env.inputs_settled(step) || idle > max_idle_steps {
                run.end = EpisodeEnd::Stalled;
                return Ok(run);
            }
        } else {
            idle = 0;
        }
    }
}
