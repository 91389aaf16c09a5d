//! Pull-based failure detection: a bounded history of poll outcomes and the
//! threshold rule that turns it into a verdict.

use alloc::collections::VecDeque;

/// One liveness probe result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollOutcome {
    pub at_ms: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Healthy,
    Failed,
}

/// Recent poll outcomes, oldest first. `consecutive_failures` always equals
/// the length of the trailing run of failed polls, even once older entries
/// have been evicted from the ring.
#[derive(Debug, Clone)]
pub struct PollHistory {
    recent: VecDeque<PollOutcome>,
    capacity: usize,
    consecutive_failures: u32,
}

impl PollHistory {
    pub const DEFAULT_CAPACITY: usize = 64;

    pub fn new(capacity: usize) -> Self {
        PollHistory {
            recent: VecDeque::with_capacity(capacity.max(1)),
            capacity: capacity.max(1),
            consecutive_failures: 0,
        }
    }

    pub fn record(&mut self, outcome: PollOutcome) {
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(outcome);
        if outcome.ok {
            self.consecutive_failures = 0;
        } else {
            self.consecutive_failures = self.consecutive_failures.saturating_add(1);
        }
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }

    /// Forgets the current failure run, e.g. after a restart was issued.
    pub fn reset_failures(&mut self) {
        self.consecutive_failures = 0;
    }

    pub fn recent(&self) -> impl Iterator<Item = &PollOutcome> {
        self.recent.iter()
    }
}

impl Default for PollHistory {
    fn default() -> Self {
        PollHistory::new(Self::DEFAULT_CAPACITY)
    }
}

/// Appends `outcome` and declares failure once `threshold` consecutive polls
/// have failed. A threshold of 0 is treated as 1.
pub fn update_and_decide(history: &mut PollHistory, outcome: PollOutcome, threshold: u32) -> Decision {
    history.record(outcome);
    if history.consecutive_failures() >= threshold.max(1) {
        Decision::Failed
    } else {
        Decision::Healthy
    }
}
