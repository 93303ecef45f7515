use std::io::Write;

use anyhow::{Context, Result};
use serde::Serialize;

use slimnn::bench::{compare_touches, planted_chain};
use slimnn::engine::{Engine, EngineOptions, LogRecord, Trace};
use slimnn::search::Search;
use slimnn::tasks::{evaluate_all, evaluate_with, Evaluation, SequenceEnv};
use slimnn::tracker::{learn_sequence, LearnResult};
use slimnn::weights::{ProgramFile, ZeroFill};
use slimnn::{SlimTopology, TaskRegistry};

use crate::config::Loaded;

pub struct Options {
    pub workers: usize,
    pub seed: Option<u64>,
    pub log: Option<std::path::PathBuf>,
}

/// Whether the command reached its goal; false maps to exit code 1.
pub type Solved = bool;

fn csv_writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

#[derive(Serialize)]
struct RunRow {
    task_id: Option<u32>,
    solved: Option<bool>,
    halted: bool,
    steps: u32,
    time: f64,
    trace_size: usize,
    wire_cost: f64,
}

impl RunRow {
    fn new(topo: &SlimTopology, task_id: Option<u32>, solved: Option<bool>, e: &Evaluation) -> Result<Self> {
        Ok(RunRow {
            task_id,
            solved,
            halted: !e.episodes.is_empty() && e.episodes.iter().all(|r| r.halted()),
            steps: e.episodes.iter().map(|r| r.steps).sum(),
            time: e.trace.time,
            trace_size: trace_size(&e.trace),
            wire_cost: topo.total_wire_cost(&e.trace)?,
        })
    }
}

fn trace_size(t: &Trace) -> usize {
    t.counts.values().filter(|u| u.uses > 0).count()
}

/// One record per line: `A,step,neuron,net_input,activation` or `C,step,src,dst,contribution`.
fn write_log(path: &std::path::Path, log: &[LogRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating log {}", path.display()))?,
    );
    for r in log {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn run(cfg: &Loaded, opts: &Options, out: impl Write) -> Result<Solved> {
    let topo = cfg.topology()?;
    let weights = cfg.weights(&topo)?;
    let t_lim = cfg.t_lim();
    let mut w = csv_writer(out, &["task_id", "solved", "halted", "steps", "time", "trace_size", "wire_cost"])?;
    let record_log = opts.log.is_some();
    let mut log = Vec::new();

    if let Some(rows) = &cfg.config.inputs {
        let mut engine = Engine::with_options(&topo, EngineOptions { record_log, ..Default::default() });
        let mut env = SequenceEnv::new(Vec::new(), rows.clone(), cfg.config.tail, false);
        let r = engine.spread(&mut ZeroFill(&weights), &mut env, t_lim)?;
        let e = Evaluation { solved: r.halted, trace: r.trace, episodes: engine.episodes().to_vec() };
        w.serialize(RunRow::new(&topo, None, None, &e)?)?;
        log = engine.take_log();
        w.flush()?;
        if let Some(p) = &opts.log {
            write_log(p, &log)?;
        }
        return Ok(true);
    }

    let tasks = cfg.tasks(&topo, opts.seed)?;
    let evals = if record_log {
        let mut engine = Engine::with_options(&topo, EngineOptions { record_log, ..Default::default() });
        let mut evals = Vec::with_capacity(tasks.len());
        for t in &tasks {
            evals.push(evaluate_with(&mut engine, &mut ZeroFill(&weights), t, t_lim)?);
            log.extend(engine.take_log());
        }
        evals
    } else {
        evaluate_all(&topo, &weights, &tasks, t_lim, opts.workers > 1)?
    };
    for (t, e) in tasks.iter().zip(&evals) {
        w.serialize(RunRow::new(&topo, Some(t.id), Some(e.solved), e)?)?;
    }
    w.flush()?;
    if let Some(p) = &opts.log {
        write_log(p, &log)?;
    }
    Ok(evals.iter().all(|e| e.solved))
}

#[derive(Serialize)]
pub struct SearchSummary {
    pub task_id: u32,
    pub found: bool,
    pub phase_reached: u32,
    pub programs_tested: u64,
    pub total_time_charged: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime: Option<f64>,
    /// Solution weights in the order the search chose them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<ProgramFile>,
}

pub fn search(cfg: &Loaded, opts: &Options, out: impl Write) -> Result<(Solved, SearchSummary)> {
    let topo = cfg.topology()?;
    let base = cfg.weights(&topo)?;
    let bias = cfg.bias(&topo)?;
    let tasks = cfg.tasks(&topo, opts.seed)?;
    let task = match cfg.config.task {
        Some(id) => tasks.iter().find(|t| t.id == id).with_context(|| format!("no task with id {id}"))?,
        None if tasks.len() == 1 => &tasks[0],
        None => anyhow::bail!("{} tasks configured; pick one with `task = <id>`", tasks.len()),
    };
    let outcome = Search::new(&topo, &bias, task, cfg.max_phase()).base(&base).workers(opts.workers).run()?;

    let mut w = csv_writer(out, &["phase", "programs_tested", "time_charged", "found"])?;
    for row in &outcome.phases {
        w.serialize(row)?;
    }
    w.flush()?;
    let sol = outcome.found.as_ref();
    let summary = SearchSummary {
        task_id: task.id,
        found: sol.is_some(),
        phase_reached: outcome.phase_reached,
        programs_tested: outcome.programs_tested,
        total_time_charged: outcome.total_time_charged,
        phase: sol.map(|s| s.phase),
        probability: sol.map(|s| s.probability),
        runtime: sol.map(|s| s.runtime),
        program: sol.map(|s| s.program.to_file(&topo)),
    };
    Ok((sol.is_some(), summary))
}

#[derive(Serialize)]
struct AdaptRow {
    task_id: u32,
    phase_reached: u32,
    programs_tested: u64,
    reevaluations: u64,
    rollbacks: u64,
    result: &'static str,
}

pub fn adapt(cfg: &Loaded, opts: &Options, out: impl Write) -> Result<Solved> {
    let topo = cfg.topology()?;
    let start = cfg.weights(&topo)?;
    let mut bias = cfg.bias(&topo)?;
    let tasks = cfg.tasks(&topo, opts.seed)?;
    let mut registry = TaskRegistry::with_weights(start, cfg.t_lim()).parallel(opts.workers > 1);
    let rows = learn_sequence(&topo, &mut registry, &mut bias, &tasks, cfg.max_phase())?;

    let header = ["task_id", "phase_reached", "programs_tested", "reevaluations", "rollbacks", "result"];
    let mut w = csv_writer(out, &header)?;
    for r in &rows {
        w.serialize(AdaptRow {
            task_id: r.task_id,
            phase_reached: r.phase_reached,
            programs_tested: r.programs_tested,
            reevaluations: r.reevaluations,
            rollbacks: r.rollbacks,
            result: match r.result {
                LearnResult::Committed => "commit",
                LearnResult::Unsolved => "unsolved",
            },
        })?;
    }
    w.flush()?;
    if let Some(p) = &cfg.config.bias_out {
        bias.save(&topo, cfg.path(p))?;
    }
    if let Some(p) = &cfg.config.registry_out {
        registry.save(&topo, cfg.path(p))?;
    }
    Ok(rows.iter().all(|r| r.result == LearnResult::Committed))
}

pub fn bench(cfg: &Loaded, opts: &Options, out: impl Write) -> Result<Solved> {
    let b = &cfg.config.bench;
    let seed = opts.seed.or(cfg.config.seed).unwrap_or(0);
    let header = ["n_neurons", "n_connections", "used_fraction", "sparse_touches", "dense_touches"];
    let mut w = csv_writer(out, &header)?;
    let mut agree = true;
    for &size in &b.sizes {
        let net = planted_chain(size, b.chain, seed);
        let r = compare_touches(&net, b.t_lim)?;
        agree &= r.agree;
        w.write_record([
            r.n_neurons.to_string(),
            r.n_connections.to_string(),
            r.used_fraction.to_string(),
            r.sparse_touches.to_string(),
            r.dense_touches.to_string(),
        ])?;
    }
    w.flush()?;
    if !agree {
        anyhow::bail!("sparse and dense simulations disagree");
    }
    Ok(true)
}
