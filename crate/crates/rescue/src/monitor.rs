//! External watchdog: polls the master with `getPid`, declares it failed
//! after a run of missed polls and starts a replacement.

use std::ffi::OsString;
use std::fmt;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rescue_core::{update_and_decide, Decision, EndpointUri, PollHistory, PollOutcome};

use crate::rpc;
use crate::slave::MASTER_CALLER_ID;
use crate::xmlrpc::Value;

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(500);
pub const DEFAULT_THRESHOLD: u32 = 3;
pub const DEFAULT_POLL_TIMEOUT: Duration = Duration::from_millis(200);
pub const BOOT_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub master_uri: EndpointUri,
    pub poll_interval: Duration,
    pub failure_threshold: u32,
    pub poll_timeout: Duration,
    pub restart_command: Vec<OsString>,
    /// None: unbounded.
    pub max_restarts: Option<u32>,
    pub boot_grace: Duration,
    /// Discard the restarted master's console output.
    pub quiet_children: bool,
}

impl MonitorConfig {
    pub fn new(master_uri: EndpointUri, restart_command: Vec<OsString>) -> Self {
        MonitorConfig {
            master_uri,
            poll_interval: DEFAULT_POLL_INTERVAL,
            failure_threshold: DEFAULT_THRESHOLD,
            poll_timeout: DEFAULT_POLL_TIMEOUT,
            restart_command,
            max_restarts: None,
            boot_grace: BOOT_GRACE,
            quiet_children: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.poll_interval.is_zero() {
            return Err("poll interval must be positive".into());
        }
        if self.failure_threshold == 0 {
            return Err("failure threshold must be at least 1".into());
        }
        if self.restart_command.is_empty() {
            return Err("restart command is empty".into());
        }
        Ok(())
    }

    /// Latest time after a crash at which the failure is declared.
    pub fn detection_bound(&self) -> Duration {
        self.poll_interval * (self.failure_threshold + 1) + self.poll_timeout
    }
}

/// Argv for the stock restart: the master binary with the same port and
/// checkpoint flags.
pub fn default_restart_command(master_bin: &Path, rescue: bool, port: u16, checkpoint_path: Option<&Path>) -> Vec<OsString> {
    let mut argv: Vec<OsString> = vec![master_bin.into()];
    if rescue {
        argv.push("--rescue".into());
    }
    argv.push("--port".into());
    argv.push(port.to_string().into());
    if let Some(path) = checkpoint_path {
        argv.push("--checkpoint-path".into());
        argv.push(path.into());
    }
    argv
}

/// True iff the master answers `getPid` with a success triple in time.
pub fn poll_once(master_uri: &EndpointUri, timeout: Duration) -> bool {
    matches!(
        rpc::call_ok(master_uri.as_str(), "getPid", &[Value::from(MASTER_CALLER_ID)], timeout),
        Ok(Value::Int(_))
    )
}

pub fn restart_master(argv: &[OsString], quiet: bool) -> std::io::Result<Child> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty restart command"))?;
    let mut cmd = Command::new(program);
    cmd.args(args).stdin(Stdio::null());
    if quiet {
        cmd.stdout(Stdio::null()).stderr(Stdio::null());
    }
    cmd.spawn()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonitorEvent {
    Healthy,
    Failed { consecutive_failures: u32 },
    Restarted { pid: u32, restarts: u32 },
    RestartFailed { error: String },
    /// The restarted master answered, or the grace period ran out.
    BootGraceOver { answered: bool },
}

impl fmt::Display for MonitorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorEvent::Healthy => f.write_str("master healthy"),
            MonitorEvent::Failed { consecutive_failures } => {
                write!(f, "master failed after {consecutive_failures} missed polls")
            }
            MonitorEvent::Restarted { pid, restarts } => write!(f, "restarted master (pid {pid}, restart #{restarts})"),
            MonitorEvent::RestartFailed { error } => write!(f, "restart failed: {error}; retrying next poll"),
            MonitorEvent::BootGraceOver { answered: true } => f.write_str("restarted master is answering"),
            MonitorEvent::BootGraceOver { answered: false } => {
                f.write_str("restarted master did not answer within the boot grace period")
            }
        }
    }
}

#[derive(Debug)]
pub struct MonitorSummary {
    pub restarts: u32,
    /// Masters started by this monitor that are still running.
    pub children: Vec<Child>,
}

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("invalid monitor configuration: {0}")]
    Config(String),
    #[error("master failed again after {restarts} restarts (limit {limit})")]
    RestartsExhausted { restarts: u32, limit: u32, children: Vec<Child> },
}

fn reap(children: &mut Vec<Child>) {
    children.retain_mut(|c| !matches!(c.try_wait(), Ok(Some(_))));
}

/// Sleeps until `deadline`, waking early when `stop` is set.
fn nap_until(deadline: Instant, stop: &AtomicBool) {
    loop {
        let now = Instant::now();
        if now >= deadline || stop.load(Ordering::Relaxed) {
            return;
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(20)));
    }
}

/// Polls until `stop` is set. Reports each healthy/failed transition, each
/// restart and the end of each boot grace period through `on_event`.
pub fn run_monitor(
    config: &MonitorConfig,
    stop: &AtomicBool,
    on_event: &mut dyn FnMut(&MonitorEvent),
) -> Result<MonitorSummary, MonitorError> {
    config.validate().map_err(MonitorError::Config)?;
    let started = Instant::now();
    let mut history = PollHistory::default();
    let mut status: Option<Decision> = None;
    let mut grace_until: Option<Instant> = None;
    let mut restarts = 0u32;
    let mut children = Vec::new();

    while !stop.load(Ordering::Relaxed) {
        let tick = Instant::now();
        reap(&mut children);
        let ok = poll_once(&config.master_uri, config.poll_timeout);

        if let Some(until) = grace_until {
            if ok || Instant::now() >= until {
                grace_until = None;
                on_event(&MonitorEvent::BootGraceOver { answered: ok });
            } else {
                nap_until(tick + config.poll_interval, stop);
                continue;
            }
        }

        let outcome = PollOutcome {
            at_ms: started.elapsed().as_millis() as u64,
            ok,
        };
        let decision = update_and_decide(&mut history, outcome, config.failure_threshold);
        if status != Some(decision) {
            status = Some(decision);
            on_event(&match decision {
                Decision::Healthy => MonitorEvent::Healthy,
                Decision::Failed => MonitorEvent::Failed {
                    consecutive_failures: history.consecutive_failures(),
                },
            });
        }

        if decision == Decision::Failed {
            if let Some(limit) = config.max_restarts.filter(|&limit| restarts >= limit) {
                return Err(MonitorError::RestartsExhausted { restarts, limit, children });
            }
            match restart_master(&config.restart_command, config.quiet_children) {
                Ok(child) => {
                    restarts += 1;
                    on_event(&MonitorEvent::Restarted { pid: child.id(), restarts });
                    children.push(child);
                    history.reset_failures();
                    grace_until = Some(Instant::now() + config.boot_grace);
                }
                Err(e) => on_event(&MonitorEvent::RestartFailed { error: e.to_string() }),
            }
        }
        nap_until(tick + config.poll_interval, stop);
    }
    Ok(MonitorSummary { restarts, children })
}
