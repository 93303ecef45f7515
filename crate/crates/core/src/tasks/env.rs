use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("environment failure: {0}")]
pub struct EnvError(pub String);

/// A deterministic, resettable world an episode interacts with.
///
/// Step `t` starts with `observe(t, x)`, which fills the input vector (already
/// zeroed, length `n_x`, reward channel last). Once the step's activations are
/// resolved the engine calls `act(t + 1, y)` with the output activations and
/// charges `step_cost()` to the episode's time.
pub trait Environment {
    fn reset(&mut self);

    fn observe(&mut self, step: u32, x: &mut [f64]) -> Result<(), EnvError>;

    fn act(&mut self, _step: u32, _y: &[f64]) -> Result<(), EnvError> {
        Ok(())
    }

    /// External cost of the step just acted on.
    fn step_cost(&self) -> f64 {
        0.0
    }

    /// True if every observation from `step` on is identical no matter what
    /// the network does. Lets the engine end episodes that can no longer change.
    fn inputs_settled(&self, _step: u32) -> bool {
        false
    }
}

/// What a [`SequenceEnv`] feeds once its rows run out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Zero,
    #[default]
    RepeatLast,
}

/// Feeds `prefix ++ rows[t-1] ++ [reward]` at step `t`; the prefix (a task
/// description) is constant for the whole episode and the reward channel is 0.
#[derive(Clone, Debug)]
pub struct SequenceEnv {
    prefix: Vec<f64>,
    rows: Vec<Vec<f64>>,
    row_width: usize,
    tail: Tail,
    reward_channel: bool,
    cost_per_step: f64,
}

impl SequenceEnv {
    pub fn new(prefix: Vec<f64>, rows: Vec<Vec<f64>>, tail: Tail, reward_channel: bool) -> Self {
        let row_width = rows.iter().map(Vec::len).max().unwrap_or(0);
        SequenceEnv { prefix, rows, row_width, tail, reward_channel, cost_per_step: 0.0 }
    }

    /// Plain per-step input vectors, used verbatim.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self::new(Vec::new(), rows, Tail::RepeatLast, false)
    }

    pub fn with_step_cost(mut self, cost: f64) -> Self {
        self.cost_per_step = cost;
        self
    }

    pub fn width(&self) -> usize {
        self.prefix.len() + self.row_width + self.reward_channel as usize
    }
}

impl Environment for SequenceEnv {
    fn reset(&mut self) {}

    fn observe(&mut self, step: u32, x: &mut [f64]) -> Result<(), EnvError> {
        if x.len() != self.width() {
            return Err(EnvError(format!("network has {} inputs, environment provides {}", x.len(), self.width())));
        }
        x[..self.prefix.len()].copy_from_slice(&self.prefix);
        let idx = step as usize - 1;
        let row = match self.rows.get(idx) {
            Some(r) => Some(r),
            None if self.tail == Tail::RepeatLast => self.rows.last(),
            None => None,
        };
        if let Some(r) = row {
            x[self.prefix.len()..self.prefix.len() + r.len()].copy_from_slice(r);
        }
        Ok(())
    }

    fn step_cost(&self) -> f64 {
        self.cost_per_step
    }

    fn inputs_settled(&self, step: u32) -> bool {
        step as usize > self.rows.len() || (self.tail == Tail::RepeatLast && step as usize == self.rows.len())
    }
}
