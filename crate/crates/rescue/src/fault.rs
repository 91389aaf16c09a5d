//! Crash injection for fault-tolerance testing.
//!
//! Only reachable through the `injectCrash` method, which a master answers
//! only when started with fault injection enabled. A triggered crash ends
//! the process with [`CRASH_EXIT_CODE`] and no cleanup.

use std::ops::ControlFlow;
use std::str::FromStr;
use std::sync::Mutex;

use crate::checkpoint::{CommitHook, CommitStage};

pub const CRASH_EXIT_CODE: i32 = 86;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashMode {
    /// Exit as soon as the request is read.
    Immediate,
    /// Exit inside the next checkpoint commit, after the temporary file is
    /// written (or after `offset` bytes of it) and before the rename.
    DuringCheckpointWrite,
    /// Exit after the next state-changing request is committed to disk but
    /// before any subscriber is notified.
    BeforeNotify,
}

impl FromStr for CrashMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "immediate" => Ok(CrashMode::Immediate),
            "during-checkpoint-write" => Ok(CrashMode::DuringCheckpointWrite),
            "before-notify" => Ok(CrashMode::BeforeNotify),
            other => Err(format!(
                "unknown crash mode {other:?} (expected immediate, during-checkpoint-write or before-notify)"
            )),
        }
    }
}

#[derive(Debug, Default)]
struct Armed {
    during_write: Option<Option<usize>>,
    before_notify: bool,
}

/// Armed crash points. Doubles as the checkpoint writer's commit hook.
#[derive(Debug, Default)]
pub struct FaultInjector {
    armed: Mutex<Armed>,
}

pub fn crash_now(reason: &str) -> ! {
    eprintln!("injected crash: {reason}");
    std::process::exit(CRASH_EXIT_CODE)
}

impl FaultInjector {
    pub fn arm(&self, mode: CrashMode, offset: Option<usize>) {
        let mut armed = self.armed.lock().unwrap();
        match mode {
            CrashMode::Immediate => crash_now("immediate"),
            CrashMode::DuringCheckpointWrite => armed.during_write = Some(offset),
            CrashMode::BeforeNotify => armed.before_notify = true,
        }
    }

    pub fn before_notify_armed(&self) -> bool {
        self.armed.lock().unwrap().before_notify
    }
}

impl CommitHook for FaultInjector {
    fn at(&self, stage: CommitStage) -> ControlFlow<()> {
        let armed = self.armed.lock().unwrap();
        match (armed.during_write, stage) {
            (Some(None), CommitStage::BeforeRename) => crash_now("during checkpoint write, before rename"),
            (Some(Some(offset)), CommitStage::Wrote { written, .. }) if written >= offset => {
                crash_now(&format!("during checkpoint write, {written} bytes written"))
            }
            (Some(Some(_)), CommitStage::BeforeRename) => crash_now("during checkpoint write, before rename"),
            _ => ControlFlow::Continue(()),
        }
    }
}
