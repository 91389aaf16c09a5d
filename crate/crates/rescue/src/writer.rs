//! Background checkpoint writer.
//!
//! Producers hand over immutable snapshots tagged with the registry version.
//! The writer keeps at most one pending snapshot: a newer submission replaces
//! an older one that has not been written yet. Commits therefore happen in
//! strictly increasing version order and the newest submitted state is always
//! written eventually.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rescue_core::MasterState;

use crate::checkpoint::{self, CommitError, CommitHook};

#[derive(Debug, Clone)]
pub struct WriterQueueEntry {
    pub state: MasterState,
    pub version: u64,
}

/// Counters exposed for tests and the console summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriterStats {
    pub commits: u64,
    pub failures: u64,
    pub committed_version: Option<u64>,
    pub halted: bool,
}

#[derive(Default)]
struct Slot {
    pending: Option<WriterQueueEntry>,
    last_submitted: Option<u64>,
    in_flight: bool,
    shutdown: bool,
    stats: WriterStats,
}

struct Shared {
    slot: Mutex<Slot>,
    changed: Condvar,
}

pub struct CheckpointWriter {
    shared: Arc<Shared>,
    path: PathBuf,
    thread: Option<JoinHandle<()>>,
}

const MAX_BACKOFF: Duration = Duration::from_secs(1);

impl CheckpointWriter {
    pub fn start(path: impl Into<PathBuf>, hook: Arc<dyn CommitHook>) -> Self {
        let path = path.into();
        let shared = Arc::new(Shared {
            slot: Mutex::new(Slot::default()),
            changed: Condvar::new(),
        });
        let thread = {
            let shared = Arc::clone(&shared);
            let path = path.clone();
            std::thread::Builder::new()
                .name("checkpoint-writer".into())
                .spawn(move || run(&shared, &path, &*hook))
                .expect("spawn checkpoint writer")
        };
        CheckpointWriter {
            shared,
            path,
            thread: Some(thread),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Queues `state` for writing. Submissions must carry strictly increasing
    /// versions; stale ones are ignored.
    pub fn submit(&self, state: MasterState) {
        let version = state.version();
        let mut slot = self.shared.slot.lock().unwrap();
        if slot.last_submitted.is_some_and(|last| version <= last) {
            log::warn!("ignoring checkpoint for version {version}: not newer than {:?}", slot.last_submitted);
            return;
        }
        slot.last_submitted = Some(version);
        slot.pending = Some(WriterQueueEntry { state, version });
        self.shared.changed.notify_all();
    }

    /// Blocks until everything submitted so far is on disk, the writer has
    /// halted, or `timeout` elapses. Returns whether the writer caught up.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut slot = self.shared.slot.lock().unwrap();
        loop {
            if slot.stats.halted {
                return false;
            }
            if slot.pending.is_none() && !slot.in_flight && slot.stats.committed_version >= slot.last_submitted {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            slot = self.shared.changed.wait_timeout(slot, deadline - now).unwrap().0;
        }
    }

    /// Waits until `version` (or something newer) is on disk.
    pub fn wait_for(&self, version: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut slot = self.shared.slot.lock().unwrap();
        loop {
            if slot.stats.committed_version.is_some_and(|v| v >= version) {
                return true;
            }
            let now = Instant::now();
            if slot.stats.halted || now >= deadline {
                return false;
            }
            slot = self.shared.changed.wait_timeout(slot, deadline - now).unwrap().0;
        }
    }

    pub fn stats(&self) -> WriterStats {
        self.shared.slot.lock().unwrap().stats
    }

    /// Writes whatever is pending, then stops the thread.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        {
            let mut slot = self.shared.slot.lock().unwrap();
            slot.shutdown = true;
            self.shared.changed.notify_all();
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for CheckpointWriter {
    fn drop(&mut self) {
        self.stop();
    }
}

fn run(shared: &Shared, path: &Path, hook: &dyn CommitHook) {
    let mut backoff = Duration::from_millis(10);
    loop {
        let entry = {
            let mut slot = shared.slot.lock().unwrap();
            loop {
                if let Some(entry) = slot.pending.take() {
                    slot.in_flight = true;
                    break entry;
                }
                if slot.shutdown {
                    return;
                }
                slot = shared.changed.wait(slot).unwrap();
            }
        };

        let text = checkpoint::serialize(&entry.state);
        let result = checkpoint::commit_with(&text, path, hook);

        let mut slot = shared.slot.lock().unwrap();
        slot.in_flight = false;
        match result {
            Ok(()) => {
                slot.stats.commits += 1;
                slot.stats.committed_version = Some(entry.version);
                backoff = Duration::from_millis(10);
            }
            Err(CommitError::Interrupted(stage)) => {
                log::error!("checkpoint writer halted at {stage:?}");
                slot.stats.halted = true;
                shared.changed.notify_all();
                return;
            }
            Err(e) => {
                slot.stats.failures += 1;
                log::error!("{e}; retrying in {backoff:?}");
                // a newer snapshot supersedes the failed one
                if slot.pending.is_none() {
                    slot.pending = Some(entry);
                }
                let shutting_down = slot.shutdown;
                shared.changed.notify_all();
                drop(slot);
                if shutting_down {
                    return;
                }
                std::thread::sleep(backoff);
                backoff = (backoff * 2).min(MAX_BACKOFF);
                continue;
            }
        }
        shared.changed.notify_all();
    }
}
