//! Universal program search over weight programs.
//!
//! Phase `i` tests, depth first, every program whose runtime fits into
//! `2^i * P(program)`. Programs grow online: when the engine is about to send
//! activation through a connection that has no weight yet, the search
//! branches over the value set, most likely value first. A branch dies as
//! soon as its time exceeds `2^i` times the probability of the prefix fixed
//! so far, since extensions are never more likely. Backtracking rolls the
//! engine back through its save points instead of re-running from scratch.

mod adaptive;

use serde::Serialize;
use thiserror::Error;

use crate::bias::{BiasError, BiasModel};
use crate::engine::{Advance, Engine, EngineError, SavePoint, Trace};
use crate::par;
use crate::tasks::{evaluate, SequenceEnv, TaskSpec};
use crate::topology::{ConnId, SlimTopology};
use crate::weights::{Refusal, WeightAssignment, WeightOracle};

pub use adaptive::{adaptive_search_with, adaptive_universal_search};

/// Largest phase accepted; `2^MAX_PHASE` is still a finite `f64`.
pub const MAX_PHASE: u32 = 1000;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error("max_phase {0} exceeds {MAX_PHASE}")]
    PhaseTooLarge(u32),
}

/// Budget of phase `i`: a program of probability `p` may run for `2^i * p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseBudget {
    pub phase: u32,
}

impl PhaseBudget {
    pub fn factor(self) -> f64 {
        2f64.powi(self.phase as i32)
    }

    pub fn budget(self, probability: f64) -> f64 {
        self.factor() * probability
    }

    pub fn admits(self, runtime: f64, probability: f64) -> bool {
        runtime <= self.budget(probability)
    }

    /// First phase `>= 1` whose budget admits `runtime` at `probability`.
    pub fn admitting_phase(runtime: f64, probability: f64, max_phase: u32) -> Option<u32> {
        (1..=max_phase).find(|&i| PhaseBudget { phase: i }.admits(runtime, probability))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseRow {
    pub phase: u32,
    pub programs_tested: u64,
    pub time_charged: f64,
    pub found: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Weights fixed by the search, in first-request order.
    pub program: WeightAssignment,
    pub trace: Trace,
    pub probability: f64,
    /// Run time plus the task's evaluation cost.
    pub runtime: f64,
    pub phase: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub found: Option<Solution>,
    pub phase_reached: u32,
    pub programs_tested: u64,
    pub total_time_charged: f64,
    pub phases: Vec<PhaseRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// The branch ran out of budget.
    TimedOut,
    /// Some episode ended without meeting its success predicate.
    Failed,
    /// Solved, but over budget, not verified, or refused by the caller.
    Rejected,
    Accepted,
}

/// One tested program, reported to [`Hooks::observe`].
#[derive(Debug)]
pub struct LeafEvent<'e> {
    pub phase: u32,
    pub kind: LeafKind,
    pub prefix: &'e WeightAssignment,
    /// Product of the branch probabilities along the path.
    pub probability: f64,
    pub time: f64,
    pub evaluation_cost: f64,
}

/// A verified candidate offered to [`Hooks::accept`].
#[derive(Debug)]
pub struct Candidate<'c> {
    pub phase: u32,
    pub prefix: &'c WeightAssignment,
    pub trace: &'c Trace,
    pub probability: f64,
    pub runtime: f64,
}

/// Optional callbacks. Searches with hooks always run sequentially.
#[derive(Default)]
pub struct Hooks<'h> {
    pub accept: Option<&'h mut dyn FnMut(&Candidate<'_>) -> bool>,
    pub observe: Option<&'h mut dyn FnMut(&LeafEvent<'_>)>,
}

impl Hooks<'_> {
    fn is_empty(&self) -> bool {
        self.accept.is_none() && self.observe.is_none()
    }
}

/// Weights fixed so far: the search prefix over an optional fixed base.
/// Connections defined in neither are growth points.
#[derive(Clone, Copy)]
pub struct SearchOracle<'a> {
    pub base: Option<&'a WeightAssignment>,
    pub prefix: &'a WeightAssignment,
}

impl WeightOracle for SearchOracle<'_> {
    #[inline]
    fn query(&self, c: ConnId) -> Option<f64> {
        self.prefix.get(c).or_else(|| self.base.and_then(|b| b.get(c)))
    }

    fn request(&mut self, c: ConnId) -> Result<f64, Refusal> {
        Err(Refusal(c))
    }
}

/// Re-runs `task` on a fresh engine; true iff solved within `budget`.
pub fn verify_solution(topo: &SlimTopology, program: &WeightAssignment, task: &TaskSpec, budget: f64) -> bool {
    budget >= 0.0 && matches!(evaluate(topo, program, task, budget), Ok(e) if e.solved)
}

/// Configured search for one task.
pub struct Search<'a> {
    topo: &'a SlimTopology,
    bias: &'a BiasModel,
    task: &'a TaskSpec,
    base: Option<&'a WeightAssignment>,
    max_phase: u32,
    workers: usize,
}

impl<'a> Search<'a> {
    pub fn new(topo: &'a SlimTopology, bias: &'a BiasModel, task: &'a TaskSpec, max_phase: u32) -> Self {
        Search { topo, bias, task, base: None, max_phase, workers: 1 }
    }

    /// Weights already present in the network; the search only fills gaps.
    pub fn base(mut self, base: &'a WeightAssignment) -> Self {
        self.base = Some(base);
        self
    }

    /// Root branches are explored concurrently when `workers > 1`.
    /// The outcome is the same as with one worker.
    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn run(&self) -> Result<SearchOutcome, SearchError> {
        self.run_with(&mut Hooks::default())
    }

    pub fn run_with(&self, hooks: &mut Hooks<'_>) -> Result<SearchOutcome, SearchError> {
        if self.max_phase > MAX_PHASE {
            return Err(SearchError::PhaseTooLarge(self.max_phase));
        }
        let parallel = self.workers > 1 && par::available() && hooks.is_empty();
        let mut outcome = SearchOutcome {
            found: None,
            phase_reached: 0,
            programs_tested: 0,
            total_time_charged: 0.0,
            phases: Vec::new(),
        };
        for phase in 1..=self.max_phase {
            let r = if parallel { self.phase_parallel(phase)? } else { self.phase_sequential(phase, hooks)? };
            outcome.phase_reached = phase;
            outcome.programs_tested += r.tested;
            outcome.total_time_charged += r.charged;
            outcome.phases.push(PhaseRow {
                phase,
                programs_tested: r.tested,
                time_charged: r.charged,
                found: r.found.is_some(),
            });
            if r.found.is_some() {
                outcome.found = r.found;
                break;
            }
        }
        Ok(outcome)
    }

    fn phase_sequential(&self, phase: u32, hooks: &mut Hooks<'_>) -> Result<PhaseResult, SearchError> {
        let mut run = PhaseRun::new(self, phase, WeightAssignment::new(), 1.0, 0.0);
        run.run(hooks, false)?;
        Ok(run.into_result())
    }

    fn phase_parallel(&self, phase: u32) -> Result<PhaseResult, SearchError> {
        let mut probe = PhaseRun::new(self, phase, WeightAssignment::new(), 1.0, 0.0);
        let root = match probe.run(&mut Hooks::default(), true)? {
            Stop::Root(c, branches) => (c, branches),
            _ => return Ok(probe.into_result()),
        };
        let root_time = probe.engine.time();
        let factor = probe.factor;
        let mut total = probe.into_result();
        let (conn, branches) = root;
        // branches are sorted by probability, so the viable ones form a prefix
        let viable: Vec<(f64, f64)> = branches.into_iter().take_while(|&(_, q)| root_time <= factor * q).collect();
        let results = par::map(&viable, true, |&(v, q)| -> Result<PhaseResult, SearchError> {
            let mut prefix = WeightAssignment::new();
            prefix.set(conn, v);
            let mut run = PhaseRun::new(self, phase, prefix, q, root_time);
            run.run(&mut Hooks::default(), false)?;
            Ok(run.into_result())
        });
        for r in results {
            let r = r?;
            total.tested += r.tested;
            total.charged += r.charged;
            if r.found.is_some() {
                total.found = r.found;
                break;
            }
        }
        Ok(total)
    }
}

/// One run of [`universal_search`]'s loop with default options.
pub fn universal_search(
    topo: &SlimTopology,
    bias: &BiasModel,
    task: &TaskSpec,
    max_phase: u32,
) -> Result<SearchOutcome, SearchError> {
    Search::new(topo, bias, task, max_phase).run()
}

struct PhaseResult {
    tested: u64,
    charged: f64,
    found: Option<Solution>,
}

struct Frame {
    sp: SavePoint,
    conn: ConnId,
    branches: Vec<(f64, f64)>,
    next: usize,
    prob: f64,
    prefix_len: usize,
}

enum Stop {
    Exhausted,
    Found,
    Root(ConnId, Vec<(f64, f64)>),
}

struct PhaseRun<'s, 'a> {
    search: &'s Search<'a>,
    phase: u32,
    factor: f64,
    engine: Engine<'a>,
    envs: Vec<SequenceEnv>,
    prefix: WeightAssignment,
    prob: f64,
    stack: Vec<Frame>,
    tested: u64,
    charged: f64,
    seg_start: f64,
    found: Option<Solution>,
}

impl<'s, 'a> PhaseRun<'s, 'a> {
    fn new(search: &'s Search<'a>, phase: u32, prefix: WeightAssignment, prob: f64, seg_start: f64) -> Self {
        PhaseRun {
            search,
            phase,
            factor: PhaseBudget { phase }.factor(),
            engine: Engine::new(search.topo),
            envs: search.task.envs(),
            prefix,
            prob,
            stack: Vec::new(),
            tested: 0,
            charged: 0.0,
            seg_start,
            found: None,
        }
    }

    fn into_result(self) -> PhaseResult {
        PhaseResult { tested: self.tested, charged: self.charged, found: self.found }
    }

    fn oracle(&self) -> SearchOracle<'_> {
        SearchOracle { base: self.search.base, prefix: &self.prefix }
    }

    fn run(&mut self, hooks: &mut Hooks<'_>, stop_at_root: bool) -> Result<Stop, SearchError> {
        let task = self.search.task;
        if task.episodes.is_empty() {
            return Ok(Stop::Exhausted);
        }
        self.engine.start_run(self.factor * self.prob)?;
        self.engine.begin_episode(&mut self.envs[0]);
        loop {
            let ep = self.engine.episodes().len();
            let oracle = SearchOracle { base: self.search.base, prefix: &self.prefix };
            let adv = self.engine.advance(&oracle, &mut self.envs[ep])?;
            match adv {
                Advance::NeedWeight(c) => {
                    let branches = self.search.bias.branches(self.search.topo, c, &self.oracle());
                    self.charge(self.engine.time());
                    if stop_at_root && self.stack.is_empty() {
                        return Ok(Stop::Root(c, branches));
                    }
                    let sp = self.engine.save();
                    self.stack.push(Frame {
                        sp,
                        conn: c,
                        branches,
                        next: usize::MAX,
                        prob: self.prob,
                        prefix_len: self.prefix.len(),
                    });
                    if !self.backtrack(true)? {
                        return Ok(Stop::Exhausted);
                    }
                }
                Advance::Halted | Advance::Stalled => {
                    let rec = self.engine.end_episode();
                    let ok = task.episodes[ep].success.check(&rec);
                    if ok && ep + 1 < task.episodes.len() {
                        self.engine.begin_episode(&mut self.envs[ep + 1]);
                        continue;
                    }
                    self.charge(self.engine.time());
                    self.tested += 1;
                    let kind = if ok { self.try_accept(hooks)? } else { LeafKind::Failed };
                    self.emit(hooks, kind);
                    if kind == LeafKind::Accepted {
                        self.unwind();
                        return Ok(Stop::Found);
                    }
                    if !self.backtrack(false)? {
                        return Ok(Stop::Exhausted);
                    }
                }
                Advance::TimedOut => {
                    self.charge(self.engine.time().min(self.engine.t_lim()));
                    self.tested += 1;
                    self.emit(hooks, LeafKind::TimedOut);
                    if !self.backtrack(false)? {
                        return Ok(Stop::Exhausted);
                    }
                }
            }
        }
    }

    fn charge(&mut self, until: f64) {
        self.charged += (until - self.seg_start).max(0.0);
        self.seg_start = until;
    }

    fn emit(&mut self, hooks: &mut Hooks<'_>, kind: LeafKind) {
        if let Some(obs) = hooks.observe.as_mut() {
            obs(&LeafEvent {
                phase: self.phase,
                kind,
                prefix: &self.prefix,
                probability: self.prob,
                time: self.engine.time(),
                evaluation_cost: self.search.task.evaluation_cost,
            });
        }
    }

    /// Moves to the next viable branch of the deepest open frame, popping
    /// exhausted frames. Returns false once the whole tree is done.
    fn backtrack(&mut self, fresh: bool) -> Result<bool, SearchError> {
        let mut fresh = fresh;
        loop {
            let Some(top) = self.stack.last_mut() else { return Ok(false) };
            self.engine.restore(&top.sp);
            self.prefix.truncate(top.prefix_len);
            top.next = top.next.wrapping_add(1);
            if let Some(&(v, q)) = top.branches.get(top.next) {
                let p = top.prob * q;
                let conn = top.conn;
                if self.engine.time() <= self.factor * p {
                    self.prefix.set(conn, v);
                    self.prob = p;
                    self.engine.set_t_lim(self.factor * p);
                    self.seg_start = self.engine.time();
                    if !fresh {
                        let ep = self.engine.episodes().len();
                        self.engine.replay_env(&mut self.envs[ep]).map_err(EngineError::from)?;
                    }
                    return Ok(true);
                }
            }
            let f = self.stack.pop().expect("frame");
            self.engine.release(f.sp);
            fresh = false;
        }
    }

    fn unwind(&mut self) {
        while let Some(f) = self.stack.pop() {
            self.engine.release(f.sp);
        }
    }

    fn try_accept(&mut self, hooks: &mut Hooks<'_>) -> Result<LeafKind, SearchError> {
        let s = self.search;
        let probability = s.bias.program_probability(s.topo, &self.prefix)?;
        let budget = self.factor * probability;
        let runtime = self.engine.time() + s.task.evaluation_cost;
        if !(runtime <= budget) {
            return Ok(LeafKind::Rejected);
        }
        let mut program = s.base.cloned().unwrap_or_default();
        for (c, v) in self.prefix.iter() {
            program.set(c, v);
        }
        let eval = evaluate(s.topo, &program, s.task, budget - s.task.evaluation_cost)?;
        if !eval.solved {
            return Ok(LeafKind::Rejected);
        }
        if let Some(accept) = hooks.accept.as_mut() {
            let cand = Candidate { phase: self.phase, prefix: &self.prefix, trace: &eval.trace, probability, runtime };
            if !accept(&cand) {
                return Ok(LeafKind::Rejected);
            }
        }
        self.found =
            Some(Solution { program: self.prefix.clone(), trace: eval.trace, probability, runtime, phase: self.phase });
        Ok(LeafKind::Accepted)
    }
}
