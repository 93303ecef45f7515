//! Event-driven activation spreading.
//!
//! [`Engine`] runs episodes on a [`SlimTopology`]: only neurons with non-zero
//! activation are visited, only their outgoing connections are considered, and
//! only connections that actually carry activation enter the [`Trace`]. All
//! per-neuron and per-connection state lives in arrays allocated once per
//! topology; an episode leaves behind dirt only on the neurons and connections
//! it touched, so resetting costs no more than running.
//!
//! The engine is a resumable machine. [`Engine::advance`] stops whenever a
//! connection about to carry activation has no weight yet, so a caller can
//! decide the weight online. While a [`SavePoint`] is open, every mutation is
//! logged and [`Engine::restore`] rolls the machine back, which is what the
//! depth-first program search is built on.

mod trace;
mod trail;

use std::fmt;
use std::mem;

use serde::Serialize;
use thiserror::Error;

use crate::tasks::{EnvError, Environment};
use crate::topology::{Combinator, ConnId, NeuronId, SlimTopology};
use crate::weights::{WeightAssignment, WeightOracle};

pub use trace::{canonical_trace, CanonicalTrace, FirstUse, Trace, UsageCounts};
pub use trail::SavePoint;
use trail::{Registers, Trail, Undo};

/// Order in which the active neurons of a step are scanned. Any order yields
/// the same activations; only the order of first uses within a step differs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    #[default]
    Fifo,
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineOptions {
    pub schedule: Schedule,
    pub record_log: bool,
    /// Consecutive steps without any connection use and without active
    /// non-input neurons after which an episode is declared stalled.
    pub max_idle_steps: u32,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { schedule: Schedule::Fifo, record_log: false, max_idle_steps: 1024 }
    }
}

/// Why [`Engine::advance`] returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Advance {
    /// The connection is about to carry activation but has no weight.
    NeedWeight(ConnId),
    Halted,
    /// Time exceeded the limit; the interrupted step is discarded.
    TimedOut,
    /// Nothing can change any more and the halt neuron is off.
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    Halted,
    TimedOut,
    Stalled,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Cursor {
    Idle,
    StepStart,
    Scan { pos: u32, conn: u32 },
    Done(Advance),
}

const NEW_SOURCE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub end: EpisodeEnd,
    /// Last completed step; `t_end` when halted.
    pub steps: u32,
    /// `outputs[i]` is y(i + 2).
    pub outputs: Vec<Vec<f64>>,
    pub readout: Vec<f64>,
    /// Run time accumulated up to the end of this episode.
    pub time: f64,
}

impl EpisodeRecord {
    pub fn halted(&self) -> bool {
        self.end == EpisodeEnd::Halted
    }

    /// Output vector at step `t` (t >= 2), if the episode got that far.
    pub fn output_at(&self, t: u32) -> Option<&[f64]> {
        (t >= 2).then(|| self.outputs.get(t as usize - 2).map(Vec::as_slice)).flatten()
    }

    pub fn final_output(&self) -> Option<&[f64]> {
        self.outputs.last().map(Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub trace: Trace,
    pub outputs: Vec<Vec<f64>>,
    pub result_readout: Vec<f64>,
    pub halted: bool,
    pub steps: u32,
    pub end: EpisodeEnd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogRecord {
    Activation { step: u32, neuron: NeuronId, net_input: f64, activation: f64 },
    Contribution { step: u32, src: NeuronId, dst: NeuronId, contribution: f64 },
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LogRecord::Activation { step, neuron, net_input, activation } => {
                write!(f, "A,{step},{},{net_input},{activation}", neuron.0)
            }
            LogRecord::Contribution { step, src, dst, contribution } => {
                write!(f, "C,{step},{},{},{contribution}", src.0, dst.0)
            }
        }
    }
}

/// Work counters, cumulative over the engine's life.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub conn_visits: u64,
    pub neuron_updates: u64,
    pub restore_touches: u64,
}

impl EngineStats {
    pub fn touches(&self) -> u64 {
        self.conn_visits + self.neuron_updates
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("program prefix exhausted at connection {0:?}")]
    PrefixExhausted(ConnId),
    #[error("oracle granted a weight for {0:?} but still reports it undefined")]
    OracleInconsistent(ConnId),
    #[error("time limit must be a non-negative number, got {0}")]
    BadLimit(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub struct Engine<'t> {
    topo: &'t SlimTopology,
    opts: EngineOptions,
    now: Vec<f64>,
    acc: Vec<f64>,
    used: Vec<bool>,
    mark: Vec<u32>,
    witas_best: Vec<(f64, u32, u32)>,
    witas_seen: Vec<bool>,
    witas_touched: Vec<u32>,
    x: Vec<f64>,
    old: Vec<u32>,
    new: Vec<u32>,
    inputs_on: Vec<u32>,
    step_uses: Vec<u32>,
    first_uses: Vec<FirstUse>,
    counters: Vec<(ConnId, UsageCounts)>,
    active: Vec<u32>,
    outputs: Vec<Vec<f64>>,
    episodes: Vec<EpisodeRecord>,
    log: Vec<LogRecord>,
    regs: Registers,
    trail: Trail,
    stats: EngineStats,
}

impl<'t> Engine<'t> {
    pub fn new(topo: &'t SlimTopology) -> Self {
        Self::with_options(topo, EngineOptions::default())
    }

    pub fn with_options(topo: &'t SlimTopology, opts: EngineOptions) -> Self {
        let n = topo.n_neurons();
        let acc = (0..n).map(|k| initial_acc(topo, k)).collect();
        let groups = topo.witas_groups().len();
        Engine {
            topo,
            opts,
            now: vec![0.0; n],
            acc,
            used: vec![false; n],
            mark: vec![0; topo.n_connections()],
            witas_best: vec![(0.0, 0, 0); groups],
            witas_seen: vec![false; groups],
            witas_touched: Vec::new(),
            x: vec![0.0; topo.n_inputs()],
            old: Vec::new(),
            new: Vec::new(),
            inputs_on: Vec::new(),
            step_uses: Vec::new(),
            first_uses: Vec::new(),
            counters: Vec::new(),
            active: Vec::new(),
            outputs: Vec::new(),
            episodes: Vec::new(),
            log: Vec::new(),
            regs: Registers {
                cursor: Cursor::Idle,
                step: 0,
                episode: 0,
                episode_first_use: 0,
                idle_steps: 0,
                time: 0.0,
                t_lim: 0.0,
            },
            trail: Trail::default(),
            stats: EngineStats::default(),
        }
    }

    pub fn topology(&self) -> &'t SlimTopology {
        self.topo
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = EngineStats::default();
    }

    pub fn time(&self) -> f64 {
        self.regs.time
    }

    pub fn t_lim(&self) -> f64 {
        self.regs.t_lim
    }

    pub fn set_t_lim(&mut self, t_lim: f64) {
        self.regs.t_lim = t_lim;
    }

    pub fn step(&self) -> u32 {
        self.regs.step
    }

    /// Index of the episode in progress (or last ended) within the run.
    pub fn episode(&self) -> u32 {
        self.regs.episode
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn activation(&self, k: NeuronId) -> f64 {
        self.now[k.index()]
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<LogRecord> {
        mem::take(&mut self.log)
    }

    /// Connections used so far in the run, in first-use order.
    pub fn first_uses(&self) -> &[FirstUse] {
        &self.first_uses
    }

    // ---- logged mutation helpers -------------------------------------------

    #[inline]
    fn set_now(&mut self, k: u32, v: f64) {
        self.trail.push(Undo::Now(k, self.now[k as usize]));
        self.now[k as usize] = v;
    }

    #[inline]
    fn set_acc(&mut self, k: u32, v: f64) {
        self.trail.push(Undo::Acc(k, self.acc[k as usize]));
        self.acc[k as usize] = v;
    }

    #[inline]
    fn set_used(&mut self, k: u32, v: bool) {
        self.trail.push(Undo::Used(k, self.used[k as usize]));
        self.used[k as usize] = v;
    }

    #[inline]
    fn set_mark(&mut self, c: u32, v: u32) {
        self.trail.push(Undo::Mark(c, self.mark[c as usize]));
        self.mark[c as usize] = v;
    }

    #[inline]
    fn bump(&mut self, slot: u32, f: impl FnOnce(&mut UsageCounts)) {
        let entry = &mut self.counters[slot as usize].1;
        self.trail.push(Undo::Counter(slot, *entry));
        f(entry);
    }

    fn take_list(&mut self, which: ListKind) -> Vec<u32> {
        let list = match which {
            ListKind::Old => &mut self.old,
            ListKind::New => &mut self.new,
            ListKind::InputsOn => &mut self.inputs_on,
            ListKind::StepUses => &mut self.step_uses,
        };
        if self.trail.active() {
            let prev = mem::take(list);
            let copy = prev.clone();
            self.trail.push(match which {
                ListKind::Old => Undo::ReplaceOld(prev),
                ListKind::New => Undo::ReplaceNew(prev),
                ListKind::InputsOn => Undo::ReplaceInputsOn(prev),
                ListKind::StepUses => Undo::ReplaceStepUses(prev),
            });
            copy
        } else {
            mem::take(list)
        }
    }

    fn undo(&mut self, u: Undo) {
        match u {
            Undo::Now(k, v) => self.now[k as usize] = v,
            Undo::Acc(k, v) => self.acc[k as usize] = v,
            Undo::Used(k, v) => self.used[k as usize] = v,
            Undo::Mark(c, v) => self.mark[c as usize] = v,
            Undo::Counter(s, v) => self.counters[s as usize].1 = v,
            Undo::PushOld => {
                self.old.pop();
            }
            Undo::PushNew => {
                self.new.pop();
            }
            Undo::PushInputsOn => {
                self.inputs_on.pop();
            }
            Undo::PushStepUse => {
                self.step_uses.pop();
            }
            Undo::PushFirstUse => {
                self.first_uses.pop();
            }
            Undo::PushCounter => {
                self.counters.pop();
            }
            Undo::PushActive => {
                self.active.pop();
            }
            Undo::PushOutput => {
                self.outputs.pop();
            }
            Undo::PushEpisode => {
                self.episodes.pop();
            }
            Undo::PushLog => {
                self.log.pop();
            }
            Undo::ReplaceOld(v) => self.old = v,
            Undo::ReplaceNew(v) => self.new = v,
            Undo::ReplaceInputsOn(v) => self.inputs_on = v,
            Undo::ReplaceStepUses(v) => self.step_uses = v,
            Undo::ReplaceOutputs(v) => self.outputs = v,
        }
    }

    // ---- save points ---------------------------------------------------------

    /// Opens a save point; mutations are logged until it is released.
    pub fn save(&mut self) -> SavePoint {
        self.trail.open += 1;
        SavePoint { trail_len: self.trail.entries.len(), regs: self.regs }
    }

    /// Rolls the machine back to `sp`, which stays open.
    pub fn restore(&mut self, sp: &SavePoint) {
        while self.trail.entries.len() > sp.trail_len {
            let u = self.trail.entries.pop().expect("trail entry");
            self.undo(u);
        }
        self.regs = sp.regs;
    }

    /// Closes the innermost save point without rolling back.
    pub fn release(&mut self, _sp: SavePoint) {
        debug_assert!(self.trail.open > 0);
        self.trail.open -= 1;
        if self.trail.open == 0 {
            self.trail.entries.clear();
        }
    }

    pub fn trail_len(&self) -> usize {
        self.trail.entries.len()
    }

    /// Brings a deterministic environment to the state it had when the current
    /// step was observed, by resetting it and replaying the recorded outputs.
    pub fn replay_env(&self, env: &mut dyn Environment) -> Result<(), EnvError> {
        env.reset();
        let mut x = vec![0.0; self.topo.n_inputs()];
        for s in 1..self.regs.step {
            x.iter_mut().for_each(|v| *v = 0.0);
            env.observe(s, &mut x)?;
            env.act(s + 1, &self.outputs[s as usize - 1])?;
        }
        if matches!(self.regs.cursor, Cursor::Scan { .. } | Cursor::Done(_)) {
            x.iter_mut().for_each(|v| *v = 0.0);
            env.observe(self.regs.step, &mut x)?;
        }
        Ok(())
    }

    // ---- run lifecycle -------------------------------------------------------

    /// Clears whatever a previous run left behind and starts a new one.
    pub fn start_run(&mut self, t_lim: f64) -> Result<(), EngineError> {
        if !(t_lim >= 0.0) {
            return Err(EngineError::BadLimit(t_lim));
        }
        assert!(!self.trail.active(), "start_run with an open save point");
        self.clean();
        self.first_uses.clear();
        self.counters.clear();
        self.active.clear();
        self.outputs.clear();
        self.episodes.clear();
        self.log.clear();
        self.regs = Registers {
            cursor: Cursor::Idle,
            step: 0,
            episode: 0,
            episode_first_use: 0,
            idle_steps: 0,
            time: 0.0,
            t_lim,
        };
        Ok(())
    }

    fn clean(&mut self) {
        if !matches!(self.regs.cursor, Cursor::Idle) {
            self.end_episode();
        }
        let mut touches = 0;
        for i in 0..self.old.len() {
            self.now[self.old[i] as usize] = 0.0;
            touches += 1;
        }
        for i in 0..self.inputs_on.len() {
            self.now[self.inputs_on[i] as usize] = 0.0;
            touches += 1;
        }
        self.old.clear();
        self.inputs_on.clear();
        self.stats.restore_touches += touches;
    }

    /// Starts the next episode of the run with a freshly reset environment.
    pub fn begin_episode(&mut self, env: &mut dyn Environment) {
        debug_assert!(matches!(self.regs.cursor, Cursor::Idle));
        // activations left by the previous episode
        let old = self.take_list(ListKind::Old);
        let inputs_on = self.take_list(ListKind::InputsOn);
        for &k in old.iter().chain(inputs_on.iter()) {
            if self.now[k as usize] != 0.0 {
                self.set_now(k, 0.0);
            }
            self.stats.restore_touches += 1;
        }
        env.reset();
        self.regs.episode = self.episodes.len() as u32;
        self.regs.episode_first_use = self.first_uses.len() as u32;
        self.regs.step = 1;
        self.regs.idle_steps = 0;
        self.regs.cursor = Cursor::StepStart;
    }

    /// Runs until the episode ends or a weight is needed.
    pub fn advance<W: WeightOracle + ?Sized>(
        &mut self,
        weights: &W,
        env: &mut dyn Environment,
    ) -> Result<Advance, EngineError> {
        loop {
            match self.regs.cursor {
                Cursor::Idle => panic!("advance called with no episode in progress"),
                Cursor::Done(a) => return Ok(a),
                Cursor::StepStart => self.step_start(env)?,
                Cursor::Scan { pos, conn } => {
                    if let Some(a) = self.scan(weights, pos, conn) {
                        return Ok(a);
                    }
                    self.finish_step(env)?;
                }
            }
        }
    }

    /// Drives the current episode to its end, asking `weights` for every
    /// missing weight. A refusal aborts the episode.
    pub fn run_episode<W: WeightOracle + ?Sized>(
        &mut self,
        weights: &mut W,
        env: &mut dyn Environment,
    ) -> Result<Advance, EngineError> {
        let mut last_request = None;
        loop {
            match self.advance(&*weights, env) {
                Ok(Advance::NeedWeight(c)) => {
                    if last_request == Some(c) {
                        return Err(EngineError::OracleInconsistent(c));
                    }
                    if weights.request(c).is_err() {
                        return Err(EngineError::PrefixExhausted(c));
                    }
                    last_request = Some(c);
                }
                other => return other,
            }
        }
    }

    fn step_start(&mut self, env: &mut dyn Environment) -> Result<(), EngineError> {
        self.x.iter_mut().for_each(|v| *v = 0.0);
        env.observe(self.regs.step, &mut self.x)?;
        if let Some(bad) = self.x.iter().find(|v| !v.is_finite()) {
            return Err(EnvError(format!("non-finite input {bad}")).into());
        }
        self.take_list(ListKind::InputsOn);
        for k in 0..self.topo.n_inputs() {
            let v = self.x[k];
            if self.now[k] != v {
                self.set_now(k as u32, v);
            }
            if v != 0.0 {
                self.old.push(k as u32);
                self.trail.push(Undo::PushOld);
                self.inputs_on.push(k as u32);
                self.trail.push(Undo::PushInputsOn);
                self.active.push(k as u32);
                self.trail.push(Undo::PushActive);
            }
        }
        self.regs.cursor = Cursor::Scan { pos: 0, conn: NEW_SOURCE };
        Ok(())
    }

    fn scan<W: WeightOracle + ?Sized>(&mut self, weights: &W, mut pos: u32, mut conn: u32) -> Option<Advance> {
        let topo = self.topo;
        let n_old = self.old.len() as u32;
        while pos < n_old {
            let l = match self.opts.schedule {
                Schedule::Fifo => self.old[pos as usize],
                Schedule::Reverse => self.old[(n_old - 1 - pos) as usize],
            } as usize;
            let ul = self.now[l];
            let range = topo.out_range(l);
            let mut c = if conn == NEW_SOURCE { range.start } else { conn as usize };
            while c < range.end {
                let Some(w) = weights.query(ConnId(c as u32)) else {
                    self.regs.cursor = Cursor::Scan { pos, conn: c as u32 };
                    return Some(Advance::NeedWeight(ConnId(c as u32)));
                };
                self.stats.conn_visits += 1;
                if w != 0.0 {
                    self.use_connection(c, l, ul * w);
                    if self.regs.time > self.regs.t_lim {
                        self.regs.cursor = Cursor::Done(Advance::TimedOut);
                        return Some(Advance::TimedOut);
                    }
                }
                c += 1;
            }
            pos += 1;
            conn = NEW_SOURCE;
        }
        None
    }

    #[inline]
    fn use_connection(&mut self, c: usize, l: usize, contribution: f64) {
        let conn = *self.topo.connection(ConnId(c as u32));
        let k = conn.dst.index() as u32;
        let m = self.mark[c];
        let slot = if m == 0 {
            let slot = self.counters.len() as u32;
            self.counters.push((ConnId(c as u32), UsageCounts::default()));
            self.trail.push(Undo::PushCounter);
            self.first_uses.push(FirstUse { conn: ConnId(c as u32), episode: self.regs.episode, step: self.regs.step });
            self.trail.push(Undo::PushFirstUse);
            self.set_mark(c as u32, slot + 1);
            slot
        } else {
            m - 1
        };
        self.bump(slot, |u| u.uses += 1);
        self.step_uses.push(slot);
        self.trail.push(Undo::PushStepUse);
        let acc = self.acc[k as usize];
        match self.topo.combinator(k as usize) {
            Combinator::Additive => self.set_acc(k, acc + contribution),
            Combinator::Multiplicative => self.set_acc(k, acc * contribution),
        }
        if !self.used[k as usize] {
            self.set_used(k, true);
            self.new.push(k);
            self.trail.push(Undo::PushNew);
        }
        self.regs.time += conn.cost;
        if self.opts.record_log {
            self.log.push(LogRecord::Contribution {
                step: self.regs.step,
                src: NeuronId::from_index(l),
                dst: conn.dst,
                contribution,
            });
            self.trail.push(Undo::PushLog);
        }
    }

    fn finish_step(&mut self, env: &mut dyn Environment) -> Result<(), EngineError> {
        let topo = self.topo;
        let theta = topo.threshold();
        let next_step = self.regs.step + 1;

        // neurons active in the step just scanned get recomputed or go quiet
        for i in 0..self.old.len() {
            let l = self.old[i];
            if !topo.is_input(l as usize) && self.now[l as usize] != 0.0 {
                self.set_now(l, 0.0);
            }
        }
        self.stats.neuron_updates += self.old.len() as u64;

        let mut any_witas = false;
        for i in 0..self.new.len() {
            let k = self.new[i];
            let raw = self.acc[k as usize];
            self.stats.neuron_updates += 1;
            match topo.witas(k as usize) {
                Some((g, rank)) => {
                    any_witas = true;
                    if !self.witas_seen[g] {
                        self.witas_seen[g] = true;
                        self.witas_touched.push(g as u32);
                        self.witas_best[g] = (raw, rank, k);
                    } else {
                        let best = self.witas_best[g];
                        if raw > best.0 || (raw == best.0 && rank < best.1) {
                            self.witas_best[g] = (raw, rank, k);
                        }
                    }
                }
                None => {
                    let v = if raw >= theta { 1.0 } else { 0.0 };
                    self.set_now(k, v);
                    self.log_activation(next_step, k, raw, v);
                }
            }
        }
        if any_witas {
            for i in 0..self.new.len() {
                let k = self.new[i];
                if let Some((g, _)) = topo.witas(k as usize) {
                    let (best, _, winner) = self.witas_best[g];
                    let v = if winner == k && best >= theta { 1.0 } else { 0.0 };
                    self.set_now(k, v);
                    let raw = self.acc[k as usize];
                    self.log_activation(next_step, k, raw, v);
                }
            }
            for g in self.witas_touched.drain(..) {
                self.witas_seen[g as usize] = false;
            }
        }

        for i in 0..self.new.len() {
            let k = self.new[i];
            self.set_used(k, false);
            self.set_acc(k, initial_acc(topo, k as usize));
        }

        let used_any = !self.step_uses.is_empty();
        for i in 0..self.step_uses.len() {
            let slot = self.step_uses[i];
            let dst = topo.connection(self.counters[slot as usize].0).dst;
            if self.now[dst.index()] != 0.0 {
                self.bump(slot, |u| u.yes += 1);
            } else {
                self.bump(slot, |u| u.no += 1);
            }
        }
        self.take_list(ListKind::StepUses);

        let fresh = self.take_list(ListKind::New);
        let survivors: Vec<u32> = fresh.iter().copied().filter(|&k| self.now[k as usize] != 0.0).collect();
        for &k in &survivors {
            self.active.push(k);
            self.trail.push(Undo::PushActive);
        }
        let _previous = self.take_list(ListKind::Old);
        self.old = survivors;

        let n_x = topo.n_inputs();
        let y = self.now[n_x..n_x + topo.n_outputs()].to_vec();
        env.act(next_step, &y)?;
        self.outputs.push(y);
        self.trail.push(Undo::PushOutput);
        self.regs.time += env.step_cost();
        let observed = self.regs.step;
        self.regs.step = next_step;

        self.regs.cursor = if self.regs.time > self.regs.t_lim {
            Cursor::Done(Advance::TimedOut)
        } else if self.now[topo.halt().index()] != 0.0 {
            Cursor::Done(Advance::Halted)
        } else if !used_any && self.old.is_empty() {
            self.regs.idle_steps += 1;
            if env.inputs_settled(observed) || self.regs.idle_steps > self.opts.max_idle_steps {
                Cursor::Done(Advance::Stalled)
            } else {
                Cursor::StepStart
            }
        } else {
            self.regs.idle_steps = 0;
            Cursor::StepStart
        };
        Ok(())
    }

    #[inline]
    fn log_activation(&mut self, step: u32, k: u32, net_input: f64, activation: f64) {
        if self.opts.record_log {
            self.log.push(LogRecord::Activation {
                step,
                neuron: NeuronId::from_index(k as usize),
                net_input,
                activation,
            });
            self.trail.push(Undo::PushLog);
        }
    }

    /// Closes the current episode: restores the accumulators of a step cut
    /// short, clears the connection marks and records the episode.
    pub fn end_episode(&mut self) -> EpisodeRecord {
        let end = match self.regs.cursor {
            Cursor::Done(Advance::Halted) => EpisodeEnd::Halted,
            Cursor::Done(Advance::TimedOut) => EpisodeEnd::TimedOut,
            Cursor::Done(Advance::Stalled) => EpisodeEnd::Stalled,
            _ => EpisodeEnd::Aborted,
        };
        let topo = self.topo;
        let residual = self.take_list(ListKind::New);
        for &k in &residual {
            self.set_used(k, false);
            self.set_acc(k, initial_acc(topo, k as usize));
            self.stats.restore_touches += 1;
        }
        // uses of a step that never resolved did not trigger their targets
        let pending = self.take_list(ListKind::StepUses);
        for &slot in &pending {
            self.bump(slot, |u| u.no += 1);
        }
        for i in self.regs.episode_first_use as usize..self.first_uses.len() {
            let c = self.first_uses[i].conn.0;
            self.set_mark(c, 0);
            self.stats.restore_touches += 1;
        }
        let readout = topo.readout().iter().map(|r| self.now[r.index()]).collect();
        let outputs = if self.trail.active() {
            let copy = self.outputs.clone();
            let prev = mem::take(&mut self.outputs);
            self.trail.push(Undo::ReplaceOutputs(prev));
            copy
        } else {
            mem::take(&mut self.outputs)
        };
        let record = EpisodeRecord { end, steps: self.regs.step, outputs, readout, time: self.regs.time };
        self.episodes.push(record.clone());
        self.trail.push(Undo::PushEpisode);
        self.regs.cursor = Cursor::Idle;
        record
    }

    /// Summarizes the run. The activations of the last episode's frontier stay
    /// set until [`Engine::restore_via_trace`] or the next run.
    pub fn finish(&self) -> Trace {
        let mut counts = std::collections::BTreeMap::new();
        for (c, u) in &self.counters {
            let e: &mut UsageCounts = counts.entry(*c).or_default();
            e.uses += u.uses;
            e.yes += u.yes;
            e.no += u.no;
        }
        let mut active = self.active.clone();
        active.sort_unstable();
        active.dedup();
        let mut frontier: Vec<u32> = self.old.iter().chain(self.inputs_on.iter()).copied().collect();
        frontier.sort_unstable();
        frontier.dedup();
        Trace {
            first_uses: self.first_uses.clone(),
            counts,
            active: active.into_iter().map(|k| NeuronId::from_index(k as usize)).collect(),
            time: self.regs.time,
            halted: !self.episodes.is_empty() && self.episodes.iter().all(EpisodeRecord::halted),
            frontier: frontier.into_iter().map(|k| NeuronId::from_index(k as usize)).collect(),
        }
    }

    /// Returns the network to its initial state by walking only the trace:
    /// frontier activations are zeroed and every tentative weight the trace
    /// used is removed from `tentative`. Returns the number of touches.
    pub fn restore_via_trace(&mut self, trace: &Trace, tentative: &mut WeightAssignment) -> u64 {
        let mut touches = 0u64;
        for n in &trace.frontier {
            self.now[n.index()] = 0.0;
            touches += 1;
        }
        self.old.clear();
        self.inputs_on.clear();
        if !trace.first_uses.is_empty() && !tentative.is_empty() {
            let used: std::collections::HashSet<ConnId> = trace.first_uses.iter().map(|f| f.conn).collect();
            touches += trace.first_uses.len() as u64;
            tentative.retain(|c| !used.contains(&c));
        }
        self.stats.restore_touches += touches;
        touches
    }

    /// True if every neuron and connection is back in its initial state.
    pub fn is_pristine(&self) -> bool {
        let topo = self.topo;
        self.now.iter().all(|&v| v == 0.0)
            && self.used.iter().all(|&u| !u)
            && self.mark.iter().all(|&m| m == 0)
            && (0..topo.n_neurons()).all(|k| self.acc[k] == initial_acc(topo, k))
    }

    /// One complete episode (Procedure "Spread"): fresh run, one environment.
    pub fn spread<W: WeightOracle + ?Sized>(
        &mut self,
        weights: &mut W,
        env: &mut dyn Environment,
        t_lim: f64,
    ) -> Result<EpisodeResult, EngineError> {
        self.start_run(t_lim)?;
        self.begin_episode(env);
        let outcome = self.run_episode(weights, env);
        let record = self.end_episode();
        outcome?;
        let trace = self.finish();
        Ok(EpisodeResult {
            halted: record.halted(),
            steps: record.steps,
            end: record.end,
            outputs: record.outputs,
            result_readout: record.readout,
            trace,
        })
    }
}

#[derive(Clone, Copy)]
enum ListKind {
    Old,
    New,
    InputsOn,
    StepUses,
}

#[inline]
fn initial_acc(topo: &SlimTopology, k: usize) -> f64 {
    match topo.combinator(k) {
        Combinator::Additive => 0.0,
        Combinator::Multiplicative => 1.0,
    }
}

/// Runs one episode on a fresh engine.
pub fn spread<W: WeightOracle + ?Sized>(
    topo: &SlimTopology,
    weights: &mut W,
    env: &mut dyn Environment,
    t_lim: f64,
) -> Result<EpisodeResult, EngineError> {
    Engine::new(topo).spread(weights, env, t_lim)
}
