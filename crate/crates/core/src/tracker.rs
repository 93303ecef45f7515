//! Per-connection task lists for incremental multi-task learning.
//!
//! Every registered task has a stored solution trace. `L^c` lists the tasks
//! whose trace uses connection `c`; only those can notice a change of `c`'s
//! weight. A connection that has no weight yet is different: giving it one can
//! affect any task in which its source neuron fires, so the registry also
//! keeps, per neuron, the tasks whose traces activate it. Commits re-evaluate
//! exactly the affected tasks and are undone if any of them breaks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::bias::BiasModel;
use crate::engine::{EngineError, Trace};
use crate::par;
use crate::search::{Candidate, Hooks, Search, SearchError};
use crate::tasks::{evaluate, Evaluation, TaskId, TaskSpec};
use crate::topology::{ConnId, NeuronId, SlimTopology};
use crate::weights::{WeightAssignment, WeightEntry};

#[derive(Clone, Debug, PartialEq)]
pub enum CommitResult {
    Committed { reevaluated: Vec<TaskId>, generation: u64 },
    RolledBack { reevaluated: Vec<TaskId>, failed: Vec<TaskId> },
}

impl CommitResult {
    pub fn committed(&self) -> bool {
        matches!(self, CommitResult::Committed { .. })
    }

    /// Previously registered tasks that were re-evaluated.
    pub fn reevaluated(&self) -> &[TaskId] {
        match self {
            CommitResult::Committed { reevaluated, .. } | CommitResult::RolledBack { reevaluated, .. } => reevaluated,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRegistry {
    lists: BTreeMap<ConnId, Vec<TaskId>>,
    active: BTreeMap<NeuronId, Vec<TaskId>>,
    tasks: BTreeMap<TaskId, TaskSpec>,
    solutions: BTreeMap<TaskId, Trace>,
    weights: WeightAssignment,
    generation: u64,
    t_lim: f64,
    parallel: bool,
    evaluations: u64,
}

impl TaskRegistry {
    /// Empty registry over an initially weightless network. Tasks are
    /// evaluated with time limit `t_lim`.
    pub fn new(t_lim: f64) -> Self {
        Self::with_weights(WeightAssignment::new(), t_lim)
    }

    pub fn with_weights(weights: WeightAssignment, t_lim: f64) -> Self {
        TaskRegistry {
            lists: BTreeMap::new(),
            active: BTreeMap::new(),
            tasks: BTreeMap::new(),
            solutions: BTreeMap::new(),
            weights,
            generation: 0,
            t_lim,
            parallel: false,
            evaluations: 0,
        }
    }

    /// Re-evaluate affected tasks concurrently.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn weights(&self) -> &WeightAssignment {
        &self.weights
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn t_lim(&self) -> f64 {
        self.t_lim
    }

    /// Total task evaluations performed by commits so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.keys().copied()
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskSpec> {
        self.tasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn trace(&self, id: TaskId) -> Option<&Trace> {
        self.solutions.get(&id)
    }

    /// `L^c`, in insertion order.
    pub fn list(&self, c: ConnId) -> &[TaskId] {
        self.lists.get(&c).map_or(&[], Vec::as_slice)
    }

    /// Tasks whose solutions activate neuron `k`.
    pub fn active_list(&self, k: NeuronId) -> &[TaskId] {
        self.active.get(&k).map_or(&[], Vec::as_slice)
    }

    /// The current solution of `id`: the network weights its trace uses.
    pub fn solution(&self, id: TaskId) -> Option<WeightAssignment> {
        let trace = self.solutions.get(&id)?;
        Some(trace.counts.keys().filter_map(|&c| self.weights.get(c).map(|v| (c, v))).collect())
    }

    /// Tasks that may behave differently once the weights of `changed` change.
    ///
    /// For a connection that currently has a weight this is `L^c`. For one
    /// that does not, it is every task whose solution activates the source.
    pub fn affected_tasks(&self, topo: &SlimTopology, changed: impl IntoIterator<Item = ConnId>) -> BTreeSet<TaskId> {
        let mut out = BTreeSet::new();
        for c in changed {
            let defined = self.weights.get(c).is_some_and(|w| w != 0.0);
            let list = if defined { self.list(c) } else { self.active_list(topo.connection(c).src) };
            out.extend(list.iter().copied());
        }
        out
    }

    /// Applies `delta` tentatively (a zero removes a weight), re-evaluates
    /// every affected registered task and `new_task`, and keeps the change
    /// only if all of them are solved.
    pub fn commit_or_rollback(
        &mut self,
        topo: &SlimTopology,
        delta: &WeightAssignment,
        new_task: Option<&TaskSpec>,
    ) -> Result<CommitResult, EngineError> {
        let new_id = new_task.map(|t| t.id);
        let affected: Vec<TaskId> =
            self.affected_tasks(topo, delta.connections()).into_iter().filter(|id| Some(*id) != new_id).collect();
        let mut tentative = self.weights.clone();
        tentative.apply(delta);

        let specs: Vec<&TaskSpec> = affected.iter().map(|id| &self.tasks[id]).collect();
        let t_lim = self.t_lim;
        let evals: Vec<Evaluation> = par::map(&specs, self.parallel, |t| evaluate(topo, &tentative, t, t_lim))
            .into_iter()
            .collect::<Result<_, _>>()?;
        self.evaluations += evals.len() as u64;
        let failed: Vec<TaskId> = affected.iter().zip(&evals).filter(|(_, e)| !e.solved).map(|(id, _)| *id).collect();
        if !failed.is_empty() {
            return Ok(CommitResult::RolledBack { reevaluated: affected, failed });
        }
        let new_eval = match new_task {
            Some(t) => {
                self.evaluations += 1;
                let e = evaluate(topo, &tentative, t, t_lim)?;
                if !e.solved {
                    return Ok(CommitResult::RolledBack { reevaluated: affected, failed: vec![t.id] });
                }
                Some((t, e))
            }
            None => None,
        };

        self.weights = tentative;
        for (id, e) in affected.iter().zip(evals) {
            self.update_lists(*id, e.trace);
        }
        if let Some((t, e)) = new_eval {
            self.tasks.insert(t.id, t.clone());
            self.update_lists(t.id, e.trace);
        }
        self.generation += 1;
        Ok(CommitResult::Committed { reevaluated: affected, generation: self.generation })
    }

    /// Stores `trace` as the solution of `task` and brings every list in line
    /// with it: the task joins lists of newly used connections and leaves the
    /// lists of connections its solution no longer uses.
    pub fn update_lists(&mut self, task: TaskId, trace: Trace) {
        let old = self.solutions.remove(&task).unwrap_or_default();
        let used =
            |t: &Trace| -> BTreeSet<ConnId> { t.counts.iter().filter(|(_, u)| u.uses > 0).map(|(c, _)| *c).collect() };
        let (before, after) = (used(&old), used(&trace));
        for c in before.difference(&after) {
            remove_from(&mut self.lists, *c, task);
        }
        for c in after.difference(&before) {
            self.lists.entry(*c).or_default().push(task);
        }
        let before: BTreeSet<NeuronId> = old.active.iter().copied().collect();
        let after: BTreeSet<NeuronId> = trace.active.iter().copied().collect();
        for k in before.difference(&after) {
            remove_from(&mut self.active, *k, task);
        }
        for k in after.difference(&before) {
            self.active.entry(*k).or_default().push(task);
        }
        self.solutions.insert(task, trace);
    }

    /// Recomputes every list from the stored traces and compares.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut lists: BTreeMap<ConnId, BTreeSet<TaskId>> = BTreeMap::new();
        let mut active: BTreeMap<NeuronId, BTreeSet<TaskId>> = BTreeMap::new();
        for (&id, t) in &self.solutions {
            for (&c, u) in &t.counts {
                if u.uses > 0 {
                    lists.entry(c).or_default().insert(id);
                }
            }
            for &k in &t.active {
                active.entry(k).or_default().insert(id);
            }
        }
        if as_sets(&self.lists)? != lists {
            return Err("connection lists disagree with stored traces".into());
        }
        if as_sets(&self.active)? != active {
            return Err("activity lists disagree with stored traces".into());
        }
        Ok(())
    }

    pub fn to_snapshot(&self, topo: &SlimTopology) -> RegistrySnapshot {
        let entries = |w: &WeightAssignment| -> Vec<WeightEntry> {
            w.iter()
                .map(|(c, value)| {
                    let conn = topo.connection(c);
                    WeightEntry { src: conn.src, dst: conn.dst, value }
                })
                .collect()
        };
        RegistrySnapshot {
            generation: self.generation,
            lists: self
                .lists
                .iter()
                .map(|(&c, tasks)| {
                    let conn = topo.connection(c);
                    ListEntry { src: conn.src, dst: conn.dst, tasks: tasks.clone() }
                })
                .collect(),
            solutions: self
                .solutions
                .keys()
                .map(|&id| SolutionEntry { task: id, weights: entries(&self.solution(id).unwrap_or_default()) })
                .collect(),
            weights: entries(&self.weights),
        }
    }

    pub fn save(&self, topo: &SlimTopology, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.to_snapshot(topo)).expect("snapshot serializes");
        std::fs::write(path, text + "\n")
    }
}

fn as_sets<K: Ord + Copy>(m: &BTreeMap<K, Vec<TaskId>>) -> Result<BTreeMap<K, BTreeSet<TaskId>>, String> {
    m.iter()
        .map(|(k, v)| {
            let s: BTreeSet<TaskId> = v.iter().copied().collect();
            if s.len() != v.len() {
                Err(format!("duplicate entries in list {v:?}"))
            } else {
                Ok((*k, s))
            }
        })
        .collect()
}

fn remove_from<K: Ord + Copy>(map: &mut BTreeMap<K, Vec<TaskId>>, key: K, task: TaskId) {
    if let Some(list) = map.get_mut(&key) {
        list.retain(|&t| t != task);
        if list.is_empty() {
            map.remove(&key);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ListEntry {
    pub src: NeuronId,
    pub dst: NeuronId,
    pub tasks: Vec<TaskId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolutionEntry {
    pub task: TaskId,
    pub weights: Vec<WeightEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegistrySnapshot {
    pub generation: u64,
    pub lists: Vec<ListEntry>,
    pub solutions: Vec<SolutionEntry>,
    pub weights: Vec<WeightEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnResult {
    Committed,
    Unsolved,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearnRow {
    pub task_id: TaskId,
    pub phase_reached: u32,
    pub programs_tested: u64,
    /// Old tasks re-evaluated over all commit attempts for this task.
    pub reevaluations: u64,
    pub rollbacks: u64,
    pub result: LearnResult,
}

/// Learns `problems` one after another on a shared network. Each search
/// fills only weights the network lacks; a candidate is kept only if the
/// registry can commit it, otherwise the search moves on. After a commit the
/// bias shifts towards the task's solution.
pub fn learn_sequence(
    topo: &SlimTopology,
    registry: &mut TaskRegistry,
    bias: &mut BiasModel,
    problems: &[TaskSpec],
    max_phase: u32,
) -> Result<Vec<LearnRow>, SearchError> {
    let mut rows = Vec::with_capacity(problems.len());
    for task in problems {
        let base = registry.weights().clone();
        let mut reevaluations = 0u64;
        let mut rollbacks = 0u64;
        let mut failure: Option<EngineError> = None;
        let mut accept = |cand: &Candidate<'_>| match registry.commit_or_rollback(topo, cand.prefix, Some(task)) {
            Ok(r) => {
                reevaluations += r.reevaluated().len() as u64;
                if !r.committed() {
                    rollbacks += 1;
                }
                r.committed()
            }
            Err(e) => {
                failure.get_or_insert(e);
                false
            }
        };
        let outcome = Search::new(topo, bias, task, max_phase)
            .base(&base)
            .run_with(&mut Hooks { accept: Some(&mut accept), observe: None })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        let result = if outcome.found.is_some() {
            let trace = registry.trace(task.id).expect("committed task has a trace").clone();
            bias.adaptive_update(topo, &trace, registry.weights())?;
            LearnResult::Committed
        } else {
            LearnResult::Unsolved
        };
        rows.push(LearnRow {
            task_id: task.id,
            phase_reached: outcome.phase_reached,
            programs_tested: outcome.programs_tested,
            reevaluations,
            rollbacks,
            result,
        });
    }
    Ok(rows)
}
