//! Tasks, their environments and the built-in desk-scale suites.
//!
//! A task feeds every episode the same constant description vector (the task
//! index in binary), followed by the episode's data inputs and a reward
//! channel that always reads 0. Success is a pure predicate on the finished
//! episode; a task is solved when every episode halts and passes.

mod env;

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, EpisodeRecord, Trace};
use crate::par;
use crate::topology::SlimTopology;
use crate::weights::{WeightAssignment, WeightOracle, ZeroFill};

pub use env::{EnvError, Environment, SequenceEnv, Tail};

pub type TaskId = u32;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("unknown suite {0:?} (expected boolean_maps, sequence_copy or delayed_recall)")]
    UnknownSuite(String),
    #[error("bad suite parameters: {0}")]
    BadParams(String),
    #[error("task {id}: {msg}")]
    Invalid { id: TaskId, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pass/fail check on one finished episode. Every variant requires a halt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Success {
    /// Halts at a step `>= min_step` with `y(t_end) == expected`.
    HaltWithOutputs {
        expected: Vec<f64>,
        #[serde(default)]
        min_step: u32,
    },
    /// `y(at + i) == expected[i]` for every `i`.
    OutputSequence { at: u32, expected: Vec<Vec<f64>> },
    /// The readout neurons hold `expected` when the episode halts.
    Readout { expected: Vec<f64> },
}

impl Success {
    pub fn check(&self, rec: &EpisodeRecord) -> bool {
        if !rec.halted() {
            return false;
        }
        match self {
            Success::HaltWithOutputs { expected, min_step } => {
                rec.steps >= *min_step && rec.final_output() == Some(expected.as_slice())
            }
            Success::OutputSequence { at, expected } => {
                expected.iter().enumerate().all(|(i, y)| rec.output_at(at + i as u32) == Some(y.as_slice()))
            }
            Success::Readout { expected } => rec.readout == *expected,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Data inputs per step, starting at step 1.
    pub inputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub tail: Tail,
    pub success: Success,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    #[serde(default)]
    pub description: Vec<f64>,
    pub episodes: Vec<Episode>,
    #[serde(default)]
    pub external_cost_per_step: f64,
    /// Cost of verifying a candidate solution, charged by the search.
    #[serde(default)]
    pub evaluation_cost: f64,
}

impl TaskSpec {
    /// Fresh environment for episode `i`.
    pub fn env(&self, i: usize) -> SequenceEnv {
        let ep = &self.episodes[i];
        SequenceEnv::new(self.description.clone(), ep.inputs.clone(), ep.tail, true)
            .with_step_cost(self.external_cost_per_step)
    }

    pub fn envs(&self) -> Vec<SequenceEnv> {
        (0..self.episodes.len()).map(|i| self.env(i)).collect()
    }

    /// Number of input neurons the task expects: description, data, reward.
    pub fn input_width(&self) -> usize {
        let data = self.episodes.iter().flat_map(|e| e.inputs.iter().map(Vec::len)).max().unwrap_or(0);
        self.description.len() + data + 1
    }

    pub fn check(&self, topo: &SlimTopology) -> Result<(), TaskError> {
        let bad = |msg: String| Err(TaskError::Invalid { id: self.id, msg });
        if self.episodes.is_empty() {
            return bad("no episodes".into());
        }
        if self.input_width() != topo.n_inputs() {
            return bad(format!("needs {} inputs, network has {}", self.input_width(), topo.n_inputs()));
        }
        if !(self.external_cost_per_step >= 0.0 && self.evaluation_cost >= 0.0) {
            return bad("costs must be non-negative".into());
        }
        let n_y = topo.n_outputs();
        for ep in &self.episodes {
            let ok = match &ep.success {
                Success::HaltWithOutputs { expected, .. } => expected.len() == n_y,
                Success::OutputSequence { expected, .. } => expected.iter().all(|y| y.len() == n_y),
                Success::Readout { expected } => expected.len() == topo.readout().len(),
            };
            if !ok {
                return bad("expected outputs do not match the network's output count".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub solved: bool,
    /// Merged over the episodes that ran: first uses concatenated, counters summed.
    pub trace: Trace,
    pub episodes: Vec<EpisodeRecord>,
}

/// Runs `task` under `w`, undefined weights reading as zero. `t_lim` bounds
/// the total time of all episodes; running out of it means not solved.
pub fn evaluate(
    topo: &SlimTopology,
    w: &WeightAssignment,
    task: &TaskSpec,
    t_lim: f64,
) -> Result<Evaluation, EngineError> {
    let mut engine = Engine::new(topo);
    evaluate_with(&mut engine, &mut ZeroFill(w), task, t_lim)
}

/// [`evaluate`] on a caller-owned engine and oracle. Episodes stop at the
/// first one that fails.
pub fn evaluate_with<W: WeightOracle + ?Sized>(
    engine: &mut Engine<'_>,
    weights: &mut W,
    task: &TaskSpec,
    t_lim: f64,
) -> Result<Evaluation, EngineError> {
    engine.start_run(t_lim)?;
    let mut solved = !task.episodes.is_empty();
    for (i, ep) in task.episodes.iter().enumerate() {
        let mut env = task.env(i);
        engine.begin_episode(&mut env);
        let outcome = engine.run_episode(weights, &mut env);
        let rec = engine.end_episode();
        outcome?;
        if !ep.success.check(&rec) {
            solved = false;
            break;
        }
    }
    Ok(Evaluation { solved, trace: engine.finish(), episodes: engine.episodes().to_vec() })
}

/// Evaluates every task, in parallel when asked and available.
pub fn evaluate_all(
    topo: &SlimTopology,
    w: &WeightAssignment,
    tasks: &[TaskSpec],
    t_lim: f64,
    parallel: bool,
) -> Result<Vec<Evaluation>, EngineError> {
    par::map(tasks, parallel, |t| evaluate(topo, w, t, t_lim)).into_iter().collect()
}

// ---- built-in suites --------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteParams {
    /// boolean_maps: number of input bits.
    pub inputs: u32,
    /// sequence_copy: sequence length.
    pub length: u32,
    /// sequence_copy: steps between reading a bit and emitting it.
    pub lag: u32,
    /// delayed_recall: largest delay.
    pub max_delay: u32,
    /// Keep at most this many tasks, drawn with the suite seed.
    pub max_tasks: Option<usize>,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams { inputs: 2, length: 3, lag: 1, max_delay: 3, max_tasks: None }
    }
}

pub const SUITES: [&str; 3] = ["boolean_maps", "sequence_copy", "delayed_recall"];

/// Constant description: a marker bit followed by `index` in `bits` binary
/// digits, most significant first. The marker keeps task 0 visible.
pub fn task_description(index: u64, bits: u32) -> Vec<f64> {
    let mut d = Vec::with_capacity(bits as usize + 1);
    d.push(1.0);
    d.extend((0..bits).rev().map(|b| ((index >> b) & 1) as f64));
    d
}

fn bits_for(count: u64) -> u32 {
    (64 - count.saturating_sub(1).leading_zeros()).max(1)
}

fn bit(v: u64, i: u32) -> f64 {
    ((v >> i) & 1) as f64
}

/// Family members to keep: all of them, or `max` drawn with `seed`, ascending.
fn pick(family: u64, max: Option<usize>, seed: u64) -> Vec<u64> {
    match max {
        Some(k) if (k as u64) < family => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<u64> = sample(&mut rng, family as usize, k).into_iter().map(|i| i as u64).collect();
            idx.sort_unstable();
            idx
        }
        _ => (0..family).collect(),
    }
}

pub fn builtin_suite(name: &str, params: &SuiteParams, seed: u64) -> Result<Vec<TaskSpec>, TaskError> {
    let bad = |m: &str| Err(TaskError::BadParams(m.to_string()));
    match name {
        "boolean_maps" => {
            let n = params.inputs;
            if !(1..=5).contains(&n) {
                return bad("boolean_maps needs 1..=5 inputs");
            }
            let rows = 1u64 << n;
            let family = 1u64 << rows;
            let bits = bits_for(family);
            Ok(pick(family, params.max_tasks, seed)
                .into_iter()
                .map(|f| TaskSpec {
                    id: f as TaskId,
                    description: task_description(f, bits),
                    episodes: (0..rows)
                        .map(|x| Episode {
                            inputs: vec![(0..n).map(|j| bit(x, j)).collect()],
                            tail: Tail::RepeatLast,
                            success: Success::HaltWithOutputs { expected: vec![bit(f, x as u32)], min_step: 2 },
                        })
                        .collect(),
                    external_cost_per_step: 0.0,
                    evaluation_cost: 0.0,
                })
                .collect())
        }
        "sequence_copy" => {
            let len = params.length;
            if !(1..=20).contains(&len) || params.lag == 0 {
                return bad("sequence_copy needs length 1..=20 and lag >= 1");
            }
            let family = 1u64 << len;
            let bits = bits_for(family);
            let max = params.max_tasks.or(Some(64));
            Ok(pick(family, max, seed)
                .into_iter()
                .map(|s| {
                    let seq: Vec<Vec<f64>> = (0..len).map(|t| vec![bit(s, t)]).collect();
                    TaskSpec {
                        id: s as TaskId,
                        description: task_description(s, bits),
                        episodes: vec![Episode {
                            inputs: seq.clone(),
                            tail: Tail::Zero,
                            success: Success::OutputSequence { at: 1 + params.lag, expected: seq },
                        }],
                        external_cost_per_step: 0.0,
                        evaluation_cost: 0.0,
                    }
                })
                .collect())
        }
        "delayed_recall" => {
            let d_max = params.max_delay;
            if d_max == 0 {
                return bad("delayed_recall needs max_delay >= 1");
            }
            let family = d_max as u64;
            let bits = bits_for(family);
            Ok(pick(family, params.max_tasks, seed)
                .into_iter()
                .map(|i| {
                    let delay = i as u32 + 1;
                    TaskSpec {
                        id: i as TaskId,
                        description: task_description(i, bits),
                        episodes: [0.0, 1.0]
                            .into_iter()
                            .map(|b| Episode {
                                inputs: vec![vec![b]],
                                tail: Tail::Zero,
                                success: Success::HaltWithOutputs { expected: vec![b], min_step: delay + 1 },
                            })
                            .collect(),
                        external_cost_per_step: 0.0,
                        evaluation_cost: 0.0,
                    }
                })
                .collect())
        }
        other => Err(TaskError::UnknownSuite(other.to_string())),
    }
}

/// Task file: a built-in suite, explicit tasks, or both (suite first).
/// `select` picks and orders tasks by id; ids may repeat.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: SuiteParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<Vec<TaskId>>,
}

impl TaskFile {
    pub fn from_toml_str(s: &str) -> Result<Self, TaskError> {
        toml::from_str(s).map_err(|e| TaskError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaskError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<Vec<TaskSpec>, TaskError> {
        let mut all = match &self.suite {
            Some(name) => builtin_suite(name, &self.params, self.seed)?,
            None => Vec::new(),
        };
        all.extend(self.tasks.iter().cloned());
        match &self.select {
            None => Ok(all),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    all.iter()
                        .find(|t| t.id == *id)
                        .cloned()
                        .ok_or_else(|| TaskError::BadParams(format!("no task with id {id}")))
                })
                .collect(),
        }
    }
}
