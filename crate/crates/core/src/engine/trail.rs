//! Undo log for depth-first program search.
//!
//! While at least one save point is open every engine mutation pushes the
//! information needed to revert it. Restoring a save point pops entries until
//! the log is back at the recorded length.

use super::trace::UsageCounts;

#[derive(Debug)]
pub(crate) enum Undo {
    Now(u32, f64),
    Acc(u32, f64),
    Used(u32, bool),
    Mark(u32, u32),
    Counter(u32, UsageCounts),
    PushOld,
    PushNew,
    PushInputsOn,
    PushStepUse,
    PushFirstUse,
    PushCounter,
    PushActive,
    PushOutput,
    PushEpisode,
    PushLog,
    ReplaceOld(Vec<u32>),
    ReplaceNew(Vec<u32>),
    ReplaceInputsOn(Vec<u32>),
    ReplaceStepUses(Vec<u32>),
    ReplaceOutputs(Vec<Vec<f64>>),
}

#[derive(Debug, Default)]
pub(crate) struct Trail {
    pub(crate) entries: Vec<Undo>,
    pub(crate) open: usize,
}

impl Trail {
    #[inline]
    pub(crate) fn active(&self) -> bool {
        self.open > 0
    }

    #[inline]
    pub(crate) fn push(&mut self, u: Undo) {
        if self.open > 0 {
            self.entries.push(u);
        }
    }
}

/// Everything the undo log does not cover: the scalar registers of the machine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Registers {
    pub(crate) cursor: super::Cursor,
    pub(crate) step: u32,
    pub(crate) episode: u32,
    pub(crate) episode_first_use: u32,
    pub(crate) idle_steps: u32,
    pub(crate) time: f64,
    pub(crate) t_lim: f64,
}

/// Opaque handle returned by [`super::Engine::save`].
#[derive(Clone, Debug)]
pub struct SavePoint {
    pub(crate) trail_len: usize,
    pub(crate) regs: Registers,
}
