//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use common::{all_assignments, full, random_net, rng, to_assignment, MatrixModel};
use slimnn::bench::{compare_touches, planted_chain};
use slimnn::bias::{BiasMode, BiasModel, ValueSet, PROBABILITY_FLOOR};
use slimnn::engine::{canonical_trace, Engine, EngineOptions, EpisodeEnd, LogRecord, Trace, UsageCounts};
use slimnn::search::{adaptive_universal_search, Hooks, LeafEvent, LeafKind, PhaseBudget, Search};
use slimnn::tasks::{evaluate, Episode, SequenceEnv, Success, Tail, TaskSpec};
use slimnn::tracker::{CommitResult, RegistrySnapshot, TaskRegistry};
use slimnn::weights::ZeroFill;
use slimnn::{ConnId, NeuronId, SlimTopology, TopologyBuilder, WeightAssignment};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const TOL: f64 = 1e-12;

fn halt_task(evaluation_cost: f64) -> TaskSpec {
    TaskSpec {
        id: 0,
        description: Vec::new(),
        episodes: vec![Episode {
            inputs: vec![vec![1.0]],
            tail: Tail::Zero,
            success: Success::HaltWithOutputs { expected: Vec::new(), min_step: 0 },
        }],
        external_cost_per_step: 0.0,
        evaluation_cost,
    }
}

fn input_at(rows: &[Vec<f64>], tail: Tail, width: usize, t: u32) -> Vec<f64> {
    match rows.get(t as usize - 1) {
        Some(r) => r.clone(),
        None if tail == Tail::RepeatLast => rows.last().cloned().unwrap_or_else(|| vec![0.0; width]),
        None => vec![0.0; width],
    }
}

fn oracle_equivalence() -> Outcome {
    let mut networks = 0;
    let (mut with_witas, mut with_mult, mut halted) = (0, 0, 0);
    for seed in 0..150u64 {
        let mut r = rng(seed);
        let desc = random_net(&mut r, 16, 40, seed % 2 == 0);
        let topo = desc.build();
        let mut weights = BTreeMap::new();
        for &(s, d, _) in &desc.conns {
            weights.insert((s, d), common::dyadic(&mut r, &[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]));
        }
        let rows: Vec<Vec<f64>> = (0..r.gen_range(1..=4))
            .map(|_| (0..desc.n_x).map(|_| common::dyadic(&mut r, &[0.0, 1.0, 1.0, -1.0, 0.5])).collect())
            .collect();
        let tail = if r.gen_bool(0.5) { Tail::Zero } else { Tail::RepeatLast };

        let w = to_assignment(&topo, &weights);
        let mut engine = Engine::with_options(&topo, EngineOptions { record_log: true, ..Default::default() });
        let mut env = SequenceEnv::new(Vec::new(), rows.clone(), tail, false);
        let res = engine.spread(&mut ZeroFill(&w), &mut env, 150.0).map_err(|e| e.to_string())?;
        let rec = &engine.episodes()[0];
        let transitions = rec.outputs.len();

        let model = MatrixModel::new(&desc, &weights);
        let steps = model.run(|t| input_at(&rows, tail, desc.n_x, t), transitions);
        let mut logged: BTreeMap<u32, Vec<(usize, f64, f64)>> = BTreeMap::new();
        for l in engine.log() {
            if let LogRecord::Activation { step, neuron, net_input, activation } = *l {
                logged.entry(step).or_default().push((neuron.0 as usize, net_input, activation));
            }
        }
        let mut uses: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (i, s) in steps.iter().enumerate() {
            let t = i as u32 + 1;
            let mut got = logged.remove(&(t + 1)).unwrap_or_default();
            got.sort_by_key(|g| g.0);
            check!(got.len() == s.resolved.len(), "seed {seed} step {t}: resolved {:?} vs {:?}", got, s.resolved);
            for (a, b) in got.iter().zip(&s.resolved) {
                check!(
                    a.0 == b.0 && (a.1 - b.1).abs() <= TOL && a.2 == b.2,
                    "seed {seed} step {t}: engine {a:?} oracle {b:?}"
                );
            }
            let y = &s.state[desc.n_x..desc.n_x + desc.n_y];
            check!(rec.outputs[i] == y, "seed {seed} step {t}: outputs differ");
            let halt_on = s.state[desc.halt - 1] != 0.0;
            check!(!halt_on || i + 1 == transitions, "seed {seed}: oracle halts at {t} but engine went on");
            for u in &s.used {
                *uses.entry(*u).or_default() += 1;
            }
        }
        check!(logged.is_empty(), "seed {seed}: engine logged extra steps {:?}", logged.keys());
        let last_halt = steps.last().is_some_and(|s| s.state[desc.halt - 1] != 0.0);
        match rec.end {
            EpisodeEnd::Halted => check!(last_halt, "seed {seed}: engine halted, oracle did not"),
            EpisodeEnd::TimedOut => {}
            _ => {
                let last = steps.last().unwrap();
                check!(
                    !last_halt && last.used.is_empty() && last.state[desc.n_x..].iter().all(|&v| v == 0.0),
                    "seed {seed}: engine stalled on a live network"
                );
            }
        }
        if rec.end != EpisodeEnd::TimedOut {
            let time: f64 = steps.iter().map(|s| s.cost).sum();
            check!((time - rec.time).abs() <= TOL, "seed {seed}: time {} vs {time}", rec.time);
            let engine_uses: BTreeMap<(usize, usize), u64> = res
                .trace
                .counts
                .iter()
                .map(|(c, u)| {
                    let conn = topo.connection(*c);
                    ((conn.src.0 as usize, conn.dst.0 as usize), u.uses)
                })
                .collect();
            check!(engine_uses == uses, "seed {seed}: usage counts differ");
        }
        networks += 1;
        with_witas += usize::from(!desc.witas.is_empty());
        with_mult += usize::from(!desc.multiplicative.is_empty());
        halted += usize::from(rec.end == EpisodeEnd::Halted);
    }
    check!(with_witas >= 20 && networks - with_witas >= 20, "too few networks with/without WITAS");
    check!(with_mult >= 20, "too few networks with multiplicative units");
    Ok(format!("{networks} networks ({with_witas} with WITAS, {with_mult} multiplicative, {halted} halted)"))
}

fn is_proper_prefix(a: &[(ConnId, f64)], b: &[(ConnId, f64)]) -> bool {
    a.len() < b.len() && b[..a.len()] == *a
}

fn prefix_code() -> Outcome {
    let mut topologies = 0;
    let mut programs = 0;
    let values = [-1.0, 1.0];
    for seed in 1000..2000u64 {
        if topologies >= 25 {
            break;
        }
        let mut r = rng(seed);
        let desc = random_net(&mut r, 7, 6, seed % 3 == 0);
        let topo = desc.build();
        let rows = vec![vec![1.0; desc.n_x]];
        let mut halting: Vec<Vec<(ConnId, f64)>> = Vec::new();
        for a in all_assignments(topo.n_connections(), &values) {
            let w = full(&a);
            let mut env = SequenceEnv::new(Vec::new(), rows.clone(), Tail::RepeatLast, false);
            let res = slimnn::spread(&topo, &mut w.clone(), &mut env, 500.0).map_err(|e| e.to_string())?;
            if res.halted {
                let p = canonical_trace(&res.trace).program(&w);
                if !halting.contains(&p) {
                    halting.push(p);
                }
            }
        }
        if halting.is_empty() {
            continue;
        }
        let list = halting;
        for a in &list {
            for b in &list {
                check!(!is_proper_prefix(a, b), "seed {seed}: {a:?} is a proper prefix of {b:?}");
            }
        }
        topologies += 1;
        programs += list.len();
    }
    check!(topologies >= 20, "only {topologies} topologies with halting programs");
    Ok(format!("{topologies} topologies, {programs} distinct halting programs"))
}

fn reset_locality() -> Outcome {
    let mut touches = Vec::new();
    let mut detail = Vec::new();
    for size in [1_000usize, 10_000, 100_000] {
        let net = planted_chain(size, 10, 42);
        let mut engine = Engine::new(&net.topo);
        let res = engine.spread(&mut ZeroFill(&net.program), &mut net.env(), 1e9).map_err(|e| e.to_string())?;
        check!(res.halted, "planted chain did not halt at size {size}");
        let mut tentative = net.program.clone();
        let t = engine.restore_via_trace(&res.trace, &mut tentative);
        let bound = 2 * res.trace.first_uses.len() as u64 + res.trace.frontier.len() as u64;
        check!(t <= bound, "size {size}: {t} touches > bound {bound}");
        check!(engine.is_pristine() && tentative.is_empty(), "size {size}: state not restored");
        touches.push(t);
        detail.push(format!("{size}:{t}"));
    }
    check!(touches.windows(2).all(|w| w[0] == w[1]), "touches vary with size: {touches:?}");
    Ok(format!("restore touches per size {}", detail.join(" ")))
}

/// Small task network: data u1, reward u2, output u3, hidden, halt last.
fn levin_instance(seed: u64) -> (SlimTopology, BiasModel, TaskSpec) {
    let mut r = rng(seed);
    let hidden = r.gen_range(1..=3u32);
    let n = 3 + hidden;
    let mut pairs = BTreeSet::new();
    let m = r.gen_range(2..=5);
    while pairs.len() < m {
        let src = if r.gen_bool(0.4) { 1 } else { r.gen_range(3..=n) };
        pairs.insert((src, r.gen_range(3..=n)));
    }
    let mut b = TopologyBuilder::new(2, 1, hidden);
    for &(s, d) in &pairs {
        b = b.connect_cost(s, d, common::dyadic(&mut r, &[0.25, 0.5, 1.0, 2.0]));
    }
    let topo = b.build().unwrap();
    let mut bias = BiasModel::uniform(&topo, ValueSet::default(), BiasMode::Independent, 0.0).unwrap();
    for c in 0..topo.n_connections() {
        let q = common::dyadic(&mut r, &[0.25, 0.5, 0.75]);
        bias.dist_mut(ConnId(c as u32)).copy_from_slice(&[q, 1.0 - q]);
    }
    let episodes = (0..r.gen_range(1..=2))
        .map(|i| Episode {
            inputs: vec![vec![if i == 0 { 1.0 } else { 0.5 }]],
            tail: Tail::RepeatLast,
            success: Success::HaltWithOutputs { expected: vec![f64::from(r.gen_range(0..2u8))], min_step: 0 },
        })
        .collect();
    let task = TaskSpec {
        id: 0,
        description: Vec::new(),
        episodes,
        external_cost_per_step: 0.0,
        evaluation_cost: common::dyadic(&mut r, &[0.0, 0.5, 1.0]),
    };
    (topo, bias, task)
}

fn levin_budget() -> Outcome {
    let (mut solvable, mut unsolvable, mut accepted) = (0, 0, 0u64);
    let max_phase = 14;
    let horizon = 2f64.powi(max_phase as i32);
    for seed in 0..300u64 {
        let (topo, bias, task) = levin_instance(seed);
        let values = bias.values().values().to_vec();
        let mut best: Option<u32> = None;
        for a in all_assignments(topo.n_connections(), &values) {
            let w = full(&a);
            let e = evaluate(&topo, &w, &task, horizon).map_err(|e| e.to_string())?;
            if !e.solved {
                continue;
            }
            let mut p = 1.0;
            for c in e.trace.counts.keys() {
                let v = w.get(*c).unwrap();
                p *= bias.dist(*c)[values.iter().position(|&x| x == v).unwrap()];
            }
            let runtime = e.trace.time + task.evaluation_cost;
            let i = (1..=max_phase).find(|&i| runtime <= 2f64.powi(i as i32) * p);
            best = match (best, i) {
                (Some(b), Some(i)) => Some(b.min(i)),
                (b, i) => b.or(i),
            };
        }

        let mut violations = Vec::new();
        let mut observe = |ev: &LeafEvent<'_>| {
            if ev.kind == LeafKind::Accepted {
                accepted += 1;
                let budget = 2f64.powi(ev.phase as i32) * ev.probability;
                if ev.time + ev.evaluation_cost > budget {
                    violations.push((ev.phase, ev.time, ev.probability));
                }
            }
        };
        let limit = best.map_or(10, |b| b + 1);
        let out = Search::new(&topo, &bias, &task, limit)
            .run_with(&mut Hooks { accept: None, observe: Some(&mut observe) })
            .map_err(|e| e.to_string())?;
        check!(violations.is_empty(), "seed {seed}: accepted over budget {violations:?}");
        for row in &out.phases {
            check!(
                row.time_charged <= PhaseBudget { phase: row.phase }.factor() + TOL,
                "seed {seed}: phase {} charged {}",
                row.phase,
                row.time_charged
            );
        }
        match best {
            Some(b) => {
                let found = out.found.as_ref().map(|s| s.phase);
                check!(found == Some(b), "seed {seed}: exhaustive phase {b}, search {found:?}");
                let s = out.found.unwrap();
                check!(s.runtime <= 2f64.powi(b as i32) * s.probability, "seed {seed}: solution over budget");
                solvable += 1;
            }
            None => {
                check!(out.found.is_none(), "seed {seed}: search found a program exhaustive search missed");
                unsolvable += 1;
            }
        }
    }
    check!(solvable >= 30, "only {solvable} solvable instances");
    Ok(format!("{solvable} solvable and {unsolvable} unsolvable nets agree with exhaustive search; {accepted} accepted within budget"))
}

/// u1 -> h1 -> ... -> hL -> halt with a dead-end sink fed by every h.
fn planted_instance(seed: u64) -> (SlimTopology, BiasModel, TaskSpec, f64, f64) {
    let mut r = rng(seed);
    let len = r.gen_range(1..=4u32);
    // data u1, reward u2, h = 3..3+len, sink, halt
    let sink = 3 + len;
    let halt = sink + 1;
    let mut b = TopologyBuilder::new(2, 0, len + 2);
    let mut planted = Vec::new();
    let mut chain = vec![1];
    chain.extend(3..3 + len);
    chain.push(halt);
    for w in chain.windows(2) {
        let cost = common::dyadic(&mut r, &[0.5, 1.0, 2.0, 3.0]);
        b = b.connect_cost(w[0], w[1], cost);
        planted.push((w[0], w[1], 1.0, cost));
    }
    for h in 3..3 + len {
        let cost = common::dyadic(&mut r, &[0.5, 1.0]);
        b = b.connect_cost(h, sink, cost);
        planted.push((h, sink, -1.0, cost));
    }
    let topo = b.build().unwrap();
    let mut bias = BiasModel::uniform(&topo, ValueSet::default(), BiasMode::Independent, 0.0).unwrap();
    let mut p = 1.0;
    let mut tau = 0.0;
    for &(s, d, v, cost) in &planted {
        let c = topo.find(NeuronId(s), NeuronId(d)).unwrap();
        let q: f64 = r.gen_range(0.3..0.9);
        bias.dist_mut(c).copy_from_slice(&[1.0 - q, q]);
        p *= if v > 0.0 { q } else { 1.0 - q };
        tau += cost;
    }
    (topo, bias, halt_task(0.0), p, tau)
}

fn planted_completeness() -> Outcome {
    let mut detail = Vec::new();
    for seed in 0..12u64 {
        let (topo, bias, task, p, tau) = planted_instance(seed);
        let program: WeightAssignment = topo
            .connections()
            .iter()
            .enumerate()
            .map(|(c, conn)| (ConnId(c as u32), if conn.dst.0 as usize == topo.n_neurons() - 1 { -1.0 } else { 1.0 }))
            .collect();
        let e = evaluate(&topo, &program, &task, 1e9).map_err(|e| e.to_string())?;
        check!(e.solved && e.trace.time == tau, "seed {seed}: planted program does not solve in {tau}");
        let predicted = ((tau / p).log2().ceil() as u32).max(1);
        let out = Search::new(&topo, &bias, &task, predicted).run().map_err(|e| e.to_string())?;
        let found = out.found.map(|s| s.phase);
        check!(found.is_some_and(|i| i <= predicted), "seed {seed}: predicted phase {predicted}, got {found:?}");
        detail.push(format!("{}/{}", found.unwrap(), predicted));
    }
    Ok(format!("found/predicted phase: {}", detail.join(" ")))
}

fn chain(len: u32) -> SlimTopology {
    let mut b = TopologyBuilder::new(2, 0, len);
    let mut prev = 1;
    for h in 3..3 + len {
        b = b.connect(prev, h);
        prev = h;
    }
    b.build().unwrap()
}

fn bias_shift() -> Outcome {
    let topo = chain(5);
    let bias = BiasModel::uniform(&topo, ValueSet::default(), BiasMode::Independent, 0.0).unwrap();
    let task = halt_task(0.0);
    let problems = vec![task.clone(); 8];
    let (outcomes, model) = adaptive_universal_search(&topo, &bias, &problems, 0.5, 20).map_err(|e| e.to_string())?;
    check!(outcomes.len() == problems.len(), "sequence stopped early");
    let phases: Vec<u32> = outcomes.iter().map(|o| o.phase_reached).collect();
    check!(phases.windows(2).all(|w| w[1] <= w[0]), "phases increase: {phases:?}");
    check!(phases.last() < phases.first(), "no speedup: {phases:?}");
    let probs: Vec<f64> = outcomes.iter().map(|o| o.found.as_ref().unwrap().probability).collect();
    check!(probs.windows(2).all(|w| w[1] > w[0]), "solution probability not increasing");
    check!(model.eta() == 0.5, "eta not applied");

    // doubling the probability of the only solution moves it one phase earlier
    let mut r = rng(7);
    for _ in 0..2000 {
        let runtime: f64 = r.gen_range(0.1..1e4);
        let p: f64 = r.gen_range(1e-6..0.5);
        let i = PhaseBudget::admitting_phase(runtime, p, 200).unwrap();
        let j = PhaseBudget::admitting_phase(runtime, 2.0 * p, 200).unwrap();
        check!(j == i.saturating_sub(1).max(1), "runtime {runtime} p {p}: {i} -> {j}");
    }
    let mut searched = Vec::new();
    for q in [0.0625, 0.125, 0.25, 0.5] {
        let mut b = bias.clone();
        b.dist_mut(ConnId(0)).copy_from_slice(&[1.0 - q, q]);
        let out = Search::new(&topo, &b, &task, 30).run().map_err(|e| e.to_string())?;
        searched.push(out.found.unwrap().phase);
    }
    check!(searched.windows(2).all(|w| w[1] + 1 == w[0]), "phases under doubling: {searched:?}");
    Ok(format!("phase_reached {phases:?}; doubling phases {searched:?}"))
}

fn normalization() -> Outcome {
    let mut r = rng(99);
    let net = planted_chain(400, 5, 1);
    let topo = &net.topo;
    let mut indep =
        BiasModel::uniform(topo, ValueSet::new(vec![-1.0, -0.5, 0.5, 1.0]).unwrap(), BiasMode::Independent, 0.5)
            .unwrap();
    let mut joint = BiasModel::uniform(topo, ValueSet::default(), BiasMode::JointOnehot, 0.5).unwrap();
    let n_conn = topo.n_connections() as u32;
    let mut touched = BTreeSet::new();
    let mut touched_src = BTreeSet::new();
    for step in 0..10_000 {
        let model = if step % 2 == 0 { &mut indep } else { &mut joint };
        model.set_eta(r.gen_range(0.0..0.999)).unwrap();
        let mut trace = Trace::default();
        let mut solution = WeightAssignment::new();
        for _ in 0..r.gen_range(1..=12) {
            let c = ConnId(r.gen_range(0..n_conn));
            let uses = r.gen_range(1..=6u64);
            let yes = r.gen_range(0..=uses);
            trace.counts.insert(c, UsageCounts { uses, yes, no: uses - yes });
            let values = model.values().values();
            solution.set(c, values[r.gen_range(0..values.len())]);
            if step % 2 == 0 {
                touched.insert(c);
            } else {
                touched_src.insert(topo.connection(c).src);
            }
        }
        model.adaptive_update(topo, &trace, &solution).map_err(|e| e.to_string())?;
    }
    let dists =
        touched.iter().map(|&c| indep.dist(c).to_vec()).chain(touched_src.iter().map(|&k| joint.joint(k).to_vec()));
    let mut n = 0;
    for d in dists {
        let sum: f64 = d.iter().sum();
        check!((sum - 1.0).abs() <= TOL, "distribution sums to {sum}");
        check!(d.iter().all(|&p| (PROBABILITY_FLOOR..1.0).contains(&p)), "probability out of range: {d:?}");
        n += 1;
    }
    Ok(format!("{n} distributions normalized after 10^4 updates"))
}

struct TrackerNet {
    topo: SlimTopology,
    tasks: Vec<TaskSpec>,
}

const N_TASKS: u32 = 32;
const HUBS: u32 = 8;

// selectors u1..u32, reward u33, output u34, hubs u35..u42, halt u43
fn tracker_net() -> TrackerNet {
    let n_x = N_TASKS + 1;
    let y = n_x + 1;
    let hub = |m: u32| y + 1 + m;
    let halt = hub(HUBS);
    let mut b = TopologyBuilder::new(n_x, 1, HUBS + 1);
    for j in 0..N_TASKS {
        b = b.connect(j + 1, hub(j % HUBS)).connect(j + 1, hub((j + 1) % HUBS));
    }
    for m in 0..HUBS {
        b = b.connect(hub(m), y).connect(hub(m), halt);
    }
    let topo = b.build().unwrap();
    let mut r = rng(5);
    let tasks = (0..N_TASKS)
        .map(|j| TaskSpec {
            id: j,
            description: Vec::new(),
            episodes: vec![Episode {
                inputs: vec![(0..N_TASKS).map(|i| f64::from(u8::from(i == j))).collect()],
                tail: Tail::RepeatLast,
                success: Success::HaltWithOutputs { expected: vec![f64::from(r.gen_range(0..2u8))], min_step: 0 },
            }],
            external_cost_per_step: 0.0,
            evaluation_cost: 0.0,
        })
        .collect();
    TrackerNet { topo, tasks }
}

fn used_set(t: &Trace) -> BTreeSet<ConnId> {
    t.counts.iter().filter(|(_, u)| u.uses > 0).map(|(c, _)| *c).collect()
}

/// Everything but the evaluation counter.
fn registry_state(reg: &TaskRegistry, topo: &SlimTopology) -> (RegistrySnapshot, Vec<Trace>) {
    (reg.to_snapshot(topo), reg.task_ids().map(|id| reg.trace(id).unwrap().clone()).collect())
}

fn tracker_safety() -> Outcome {
    let TrackerNet { topo, tasks } = tracker_net();
    let t_lim = 100.0;
    let mut reg = TaskRegistry::new(t_lim);
    let id = |k: u32| NeuronId(k);
    let y = N_TASKS + 2;
    let hub = |m: u32| y + 1 + m;
    let halt = hub(HUBS);
    let (mut commits, mut rollbacks, mut local_commits) = (0, 0, 0);
    let mut max_affected = 0;
    for task in &tasks {
        let j = task.id;
        let want = match &task.episodes[0].success {
            Success::HaltWithOutputs { expected, .. } => expected[0],
            _ => unreachable!(),
        };
        for m in [j % HUBS, (j + 1) % HUBS] {
            let mut delta = WeightAssignment::new();
            delta.set(topo.find(id(j + 1), id(hub(m))).unwrap(), 1.0);
            let to_y = topo.find(id(hub(m)), id(y)).unwrap();
            let value = if want > 0.0 { 1.0 } else { -1.0 };
            if reg.weights().get(to_y) != Some(value) {
                delta.set(to_y, value);
            }
            let to_halt = topo.find(id(hub(m)), id(halt)).unwrap();
            if reg.weights().get(to_halt).is_none() {
                delta.set(to_halt, 1.0);
            }

            let before = registry_state(&reg, &topo);
            let registered = reg.task_ids().count();
            let affected = reg.affected_tasks(&topo, delta.connections());
            let evals_before = reg.evaluations();
            let result = reg.commit_or_rollback(&topo, &delta, Some(task)).map_err(|e| e.to_string())?;
            let reevaluated: BTreeSet<u32> = result.reevaluated().iter().copied().collect();
            check!(reevaluated == affected, "task {j}: re-evaluated {reevaluated:?}, affected {affected:?}");
            let new_ran = u64::from(
                result.committed() || matches!(&result, CommitResult::RolledBack { failed, .. } if *failed == [j]),
            );
            check!(
                reg.evaluations() - evals_before == affected.len() as u64 + new_ran,
                "task {j}: evaluation count differs from |affected|"
            );
            max_affected = max_affected.max(affected.len());
            if !result.committed() {
                check!(registry_state(&reg, &topo) == before, "task {j}: rollback left the registry changed");
                rollbacks += 1;
                continue;
            }
            commits += 1;
            if affected.len() < registered {
                local_commits += 1;
            }
            // full oracle: every registered task still solved, unaffected ones unchanged
            for t in reg.tasks() {
                let e = evaluate(&topo, reg.weights(), t, t_lim).map_err(|e| e.to_string())?;
                check!(e.solved, "task {} broken after committing task {j}", t.id);
                let stored = reg.trace(t.id).unwrap();
                check!(used_set(stored) == used_set(&e.trace), "stale list for task {}", t.id);
                if t.id != j && !affected.contains(&t.id) {
                    check!(*stored == e.trace, "task {} changed behavior outside the affected set", t.id);
                }
            }
            reg.check_consistency()?;
            break;
        }
    }
    check!(commits >= 16, "only {commits} commits");
    check!(rollbacks >= 1, "no rollback was provoked");
    check!(local_commits >= 1, "no commit stayed local");
    Ok(format!("{commits} commits, {rollbacks} rollbacks, largest affected set {max_affected} of {N_TASKS} tasks"))
}

fn sparse_speed() -> Outcome {
    let mut detail = Vec::new();
    for seed in 0..3 {
        let net = planted_chain(10_000, 10, seed);
        let r = compare_touches(&net, 1e9).map_err(|e| e.to_string())?;
        check!(r.agree, "seed {seed}: sparse and dense runs disagree");
        check!(r.used_fraction < 0.01, "seed {seed}: used fraction {}", r.used_fraction);
        let ratio = r.sparse_touches as f64 / r.dense_touches as f64;
        check!(ratio < 0.05, "seed {seed}: sparse/dense = {ratio}");
        detail.push(format!("{:.5}", ratio));
    }
    Ok(format!("sparse/dense touch ratio {}", detail.join(" ")))
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "oracle equivalence", limit: Duration::from_secs(10), run: oracle_equivalence },
        Criterion { name: "prefix-code property", limit: Duration::from_secs(30), run: prefix_code },
        Criterion { name: "reset locality", limit: Duration::from_secs(10), run: reset_locality },
        Criterion { name: "budget soundness", limit: Duration::from_secs(60), run: levin_budget },
        Criterion { name: "planted-solution completeness", limit: Duration::from_secs(120), run: planted_completeness },
        Criterion { name: "bias-shift speedup", limit: Duration::from_secs(60), run: bias_shift },
        Criterion { name: "normalization", limit: Duration::from_secs(5), run: normalization },
        Criterion { name: "tracker safety and locality", limit: Duration::from_secs(60), run: tracker_safety },
        Criterion { name: "sparse-speed sanity", limit: Duration::from_secs(30), run: sparse_speed },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > c.limit => Err(format!("{d}; took {elapsed:.2?}, limit {:?}", c.limit)),
            o => o,
        };
        match outcome {
            Ok(d) => println!("criterion {} {}: PASS ({elapsed:.2?}) {d}", i + 1, c.name),
            Err(e) => {
                failed += 1;
                println!("criterion {} {}: FAIL ({elapsed:.2?}) {e}", i + 1, c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
