use crate::bias::BiasModel;
use crate::tasks::TaskSpec;
use crate::topology::SlimTopology;

use super::{Search, SearchError, SearchOutcome};

/// Solves `problems` in order, shifting the bias towards each solution before
/// the next search. Stops at the first problem left unsolved.
pub fn adaptive_universal_search(
    topo: &SlimTopology,
    bias: &BiasModel,
    problems: &[TaskSpec],
    eta: f64,
    max_phase: u32,
) -> Result<(Vec<SearchOutcome>, BiasModel), SearchError> {
    adaptive_search_with(topo, bias, problems, eta, max_phase, 1)
}

pub fn adaptive_search_with(
    topo: &SlimTopology,
    bias: &BiasModel,
    problems: &[TaskSpec],
    eta: f64,
    max_phase: u32,
    workers: usize,
) -> Result<(Vec<SearchOutcome>, BiasModel), SearchError> {
    let mut model = bias.clone();
    model.set_eta(eta)?;
    let mut outcomes = Vec::with_capacity(problems.len());
    for task in problems {
        let outcome = Search::new(topo, &model, task, max_phase).workers(workers).run()?;
        let solved = match &outcome.found {
            Some(sol) => {
                model.adaptive_update(topo, &sol.trace, &sol.program)?;
                true
            }
            None => false,
        };
        outcomes.push(outcome);
        if !solved {
            break;
        }
    }
    Ok((outcomes, model))
}
