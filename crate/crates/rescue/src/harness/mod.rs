//! Test harness: simulated nodes, master process control, crash scenarios,
//! the recovery benchmark and checkpoint inspection.

pub mod bench;
pub mod process;
pub mod scenario;
pub mod sim;

use std::path::Path;
use std::time::{Duration, Instant};

use rescue_core::MasterState;

use crate::checkpoint::{self, CheckpointError};

/// Polls the checkpoint file until it holds a state satisfying `pred`.
pub fn wait_checkpoint(path: &Path, pred: impl Fn(&MasterState) -> bool, timeout: Duration) -> Result<MasterState, String> {
    let deadline = Instant::now() + timeout;
    loop {
        let last = checkpoint::load(path);
        if let Ok(Some(state)) = &last {
            if pred(state) {
                return Ok(state.clone());
            }
        }
        if Instant::now() >= deadline {
            return Err(format!("checkpoint {} never reached the expected state; last read: {last:?}", path.display()));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn plural(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

#[derive(Debug, thiserror::Error)]
pub enum InspectError {
    #[error("no checkpoint at {0}")]
    Missing(String),
    #[error(transparent)]
    Invalid(#[from] CheckpointError),
}

/// Counts, after full validation.
pub fn summarize(state: &MasterState) -> String {
    format!(
        "{}, {}, {}, {}",
        plural(state.nodes().count(), "node", "nodes"),
        plural(state.topics().count(), "topic", "topics"),
        plural(state.services().count(), "service", "services"),
        plural(state.param_names().len(), "param", "params"),
    )
}

pub fn inspect_checkpoint(path: &Path) -> Result<String, InspectError> {
    match checkpoint::load(path)? {
        Some(state) => Ok(summarize(&state)),
        None => Err(InspectError::Missing(path.display().to_string())),
    }
}
