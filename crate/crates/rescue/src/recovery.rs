//! Startup recovery: load the last checkpoint, drop nodes that died while
//! the master was down, and bring surviving subscribers up to date.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rescue_core::{reconcile as reconcile_state, GraphName, MasterState, NodeRecord};

use crate::checkpoint::{self, CheckpointError};
use crate::slave::{self, fan_out, NOTIFY_TIMEOUT};
use crate::writer::CheckpointWriter;

#[derive(Debug, thiserror::Error)]
#[error("cannot recover from {path}: {source}. Inspect the file (rescuectl inspect) or remove it to start with an empty registry")]
pub struct RecoveryError {
    pub path: PathBuf,
    #[source]
    pub source: CheckpointError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconcileReport {
    pub probed: usize,
    pub dropped_nodes: Vec<GraphName>,
    pub changed_topics: Vec<GraphName>,
    pub notified_subscribers: usize,
    /// Load plus reconcile time; renotification is not included.
    pub duration_ms: f64,
}

/// Decides whether a checkpointed node is still running.
pub trait LivenessProbe: Sync {
    fn is_alive(&self, node: &NodeRecord) -> bool;
}

/// `getPid` with a per-attempt timeout; a node is dead after `attempts`
/// consecutive failures.
#[derive(Debug, Clone, Copy)]
pub struct RpcProbe {
    pub timeout: Duration,
    pub attempts: u32,
}

impl Default for RpcProbe {
    fn default() -> Self {
        RpcProbe {
            timeout: Duration::from_millis(200),
            attempts: 2,
        }
    }
}

impl LivenessProbe for RpcProbe {
    fn is_alive(&self, node: &NodeRecord) -> bool {
        (0..self.attempts.max(1)).any(|_| slave::ping_node(&node.api_uri, self.timeout))
    }
}

impl<F: Fn(&NodeRecord) -> bool + Sync> LivenessProbe for F {
    fn is_alive(&self, node: &NodeRecord) -> bool {
        self(node)
    }
}

pub const DEFAULT_PROBE_FAN_OUT: usize = 16;

/// Missing file: empty state. Unreadable or invalid file: error.
pub fn load_last(path: &Path) -> Result<MasterState, RecoveryError> {
    match checkpoint::load(path) {
        Ok(state) => Ok(state.unwrap_or_default()),
        Err(source) => Err(RecoveryError {
            path: path.to_path_buf(),
            source,
        }),
    }
}

/// Probes every node (up to `fan_out_width` at a time) and drops the dead
/// ones with all of their registrations.
pub fn reconcile(state: &MasterState, probe: &dyn LivenessProbe, fan_out_width: usize) -> (MasterState, ReconcileReport) {
    let nodes: Vec<&NodeRecord> = state.nodes().collect();
    let alive: Vec<bool> = fan_out(&nodes, fan_out_width, |node| probe.is_alive(node));
    let alive_set: BTreeSet<&GraphName> = nodes
        .iter()
        .zip(&alive)
        .filter(|(_, ok)| **ok)
        .map(|(n, _)| &n.name)
        .collect();
    let out = reconcile_state(state, |node| alive_set.contains(&node.name));
    let report = ReconcileReport {
        probed: nodes.len(),
        dropped_nodes: out.dropped_nodes,
        changed_topics: out.changed_topics,
        ..ReconcileReport::default()
    };
    (out.state, report)
}

/// Sends every subscriber of `topics` the topic's current publisher list.
/// Returns how many updates were delivered.
pub fn renotify(topics: &[GraphName], state: &MasterState, fan_out_width: usize) -> usize {
    let topics: BTreeSet<GraphName> = topics.iter().cloned().collect();
    let jobs: Vec<_> = state
        .updates_for(&topics)
        .into_iter()
        .flat_map(|u| {
            let publishers = u.publisher_apis;
            let topic = u.topic;
            u.subscriber_apis
                .into_iter()
                .map(move |s| (s, topic.clone(), publishers.clone()))
        })
        .collect();
    fan_out(&jobs, fan_out_width, |(sub, topic, pubs)| {
        slave::notify_publisher_update(sub, topic, pubs, NOTIFY_TIMEOUT)
    })
    .into_iter()
    .filter(|ok| *ok)
    .count()
}

#[derive(Clone, Copy)]
pub struct RecoveryOptions<'a> {
    pub probe: &'a dyn LivenessProbe,
    pub fan_out: usize,
}

/// load → reconcile → renotify → enqueue one checkpoint.
///
/// Renotification covers every topic that still has subscribers, not just
/// the topics whose publishers changed during reconciliation: an update the
/// previous master owed but never sent (it crashed between committing a
/// change and notifying) is invisible in the checkpoint, so every surviving
/// subscriber is resynchronised.
pub fn recover(
    path: &Path,
    options: RecoveryOptions<'_>,
    writer: Option<&CheckpointWriter>,
) -> Result<(MasterState, ReconcileReport), RecoveryError> {
    let started = Instant::now();
    let loaded = load_last(path)?;
    let (state, mut report) = reconcile(&loaded, options.probe, options.fan_out);
    report.duration_ms = started.elapsed().as_secs_f64() * 1e3;

    let subscribed: Vec<GraphName> = state
        .topics()
        .filter(|t| !t.subscribers.is_empty())
        .map(|t| t.name.clone())
        .collect();
    report.notified_subscribers = renotify(&subscribed, &state, options.fan_out);
    if let Some(writer) = writer {
        writer.submit(state.snapshot());
    }
    Ok((state, report))
}

/// One-line console summary of a recovery.
pub struct Summary<'a> {
    pub path: &'a Path,
    pub state: &'a MasterState,
    pub report: &'a ReconcileReport,
}

impl fmt::Display for Summary<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.report;
        write!(
            f,
            "recovered {}: nodes={} topics={} services={} params={} probed={} dropped={} changed_topics={} notified={} recovery_ms={:.3}",
            self.path.display(),
            self.state.nodes().count(),
            self.state.topics().count(),
            self.state.services().count(),
            self.state.param_names().len(),
            r.probed,
            r.dropped_nodes.len(),
            r.changed_topics.len(),
            r.notified_subscribers,
            r.duration_ms,
        )?;
        if !r.dropped_nodes.is_empty() {
            let names: Vec<&str> = r.dropped_nodes.iter().map(GraphName::as_str).collect();
            write!(f, " dropped_nodes={}", names.join(","))?;
        }
        Ok(())
    }
}

/// Extracts `recovery_ms` from a [`Summary`] line.
pub fn parse_recovery_ms(line: &str) -> Option<f64> {
    line.split_whitespace()
        .find_map(|field| field.strip_prefix("recovery_ms="))
        .and_then(|v| v.parse().ok())
}
