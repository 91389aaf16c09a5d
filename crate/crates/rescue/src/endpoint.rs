//! The master's XML-RPC endpoint.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rescue_core::{
    EndpointUri, GraphName, MasterState, Outcome, ParamError, ParamKey, ParamValue, PublisherUpdate, RegistryEvent,
    SystemState,
};

use crate::checkpoint::{CommitHook, NoHook};
use crate::fault::{self, CrashMode, FaultInjector};
use crate::recovery::{self, RecoveryError, RecoveryOptions, RpcProbe, Summary};
use crate::rpc::{self, RpcServer};
use crate::slave::{Notifier, NOTIFY_TIMEOUT};
use crate::writer::{CheckpointWriter, WriterStats};
use crate::xmlrpc::Value;

pub const DEFAULT_PORT: u16 = 11311;
pub const RESCUE_BANNER: &str = "ROS Rescue enabled. Master is now fault tolerant!!";

/// `~/.ros/log/latest-chkpt.yaml`
pub fn default_checkpoint_path() -> Option<PathBuf> {
    std::env::var_os("HOME").map(|home| Path::new(&home).join(".ros/log/latest-chkpt.yaml"))
}

#[derive(Debug, Clone)]
pub struct MasterConfig {
    pub bind_host: String,
    /// Host placed in the advertised URI.
    pub advertise_host: String,
    /// 0 binds an ephemeral port (tests only; the binary rejects it).
    pub port: u16,
    pub rescue: bool,
    pub checkpoint_path: PathBuf,
    pub fault_injection: bool,
    pub workers: usize,
}

impl MasterConfig {
    pub fn new(checkpoint_path: impl Into<PathBuf>) -> Self {
        MasterConfig {
            bind_host: "0.0.0.0".into(),
            advertise_host: "localhost".into(),
            port: DEFAULT_PORT,
            rescue: false,
            checkpoint_path: checkpoint_path.into(),
            fault_injection: false,
            workers: 32,
        }
    }
}

/// `(code, statusMessage, value)`
#[derive(Debug, Clone, PartialEq)]
pub struct RpcTriple {
    pub code: i32,
    pub message: String,
    pub value: Value,
}

impl RpcTriple {
    pub fn ok(message: impl Into<String>, value: impl Into<Value>) -> Self {
        RpcTriple {
            code: 1,
            message: message.into(),
            value: value.into(),
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        RpcTriple {
            code: -1,
            message: message.into(),
            value: Value::Int(0),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        RpcTriple {
            code: -1,
            message: message.into(),
            value: Value::from(""),
        }
    }

    pub fn into_value(self) -> Value {
        Value::Array(vec![Value::Int(self.code), Value::Str(self.message), self.value])
    }
}

type Reply = Result<RpcTriple, RpcTriple>;

struct Args<'a> {
    method: &'a str,
    values: &'a [Value],
}

impl<'a> Args<'a> {
    fn new(method: &'a str, values: &'a [Value], names: &[&str]) -> Result<Self, RpcTriple> {
        if values.len() != names.len() {
            return Err(RpcTriple::error(format!(
                "{method} takes {} arguments ({}), got {}",
                names.len(),
                names.join(", "),
                values.len()
            )));
        }
        Ok(Args { method, values })
    }

    fn str(&self, i: usize) -> Result<&'a str, RpcTriple> {
        self.values[i]
            .as_str()
            .ok_or_else(|| RpcTriple::error(format!("{}: argument {} must be a string", self.method, i + 1)))
    }

    fn name(&self, i: usize) -> Result<GraphName, RpcTriple> {
        GraphName::new(self.str(i)?).map_err(|e| RpcTriple::error(e.to_string()))
    }

    fn uri(&self, i: usize) -> Result<EndpointUri, RpcTriple> {
        EndpointUri::new(self.str(i)?).map_err(|e| RpcTriple::error(e.to_string()))
    }

    fn key(&self, i: usize) -> Result<ParamKey, RpcTriple> {
        ParamKey::new(self.str(i)?).map_err(|e| RpcTriple::error(e.to_string()))
    }
}

fn uris(list: &[EndpointUri]) -> Value {
    Value::Array(list.iter().map(|u| Value::from(u.as_str())).collect())
}

fn name_lists(rows: &[(GraphName, Vec<GraphName>)]) -> Value {
    Value::Array(
        rows.iter()
            .map(|(name, members)| {
                Value::Array(vec![
                    Value::from(name.as_str()),
                    Value::Array(members.iter().map(|m| Value::from(m.as_str())).collect()),
                ])
            })
            .collect(),
    )
}

fn typed_pairs(rows: &[(GraphName, String)]) -> Value {
    Value::Array(
        rows.iter()
            .map(|(t, ty)| Value::Array(vec![Value::from(t.as_str()), Value::from(ty.as_str())]))
            .collect(),
    )
}

/// The wire shape of `getSystemState`.
pub fn system_state_value(s: &SystemState) -> Value {
    Value::Array(vec![name_lists(&s.publishers), name_lists(&s.subscribers), name_lists(&s.services)])
}

fn param_error(e: ParamError) -> RpcTriple {
    RpcTriple::error(e.to_string())
}

/// Registry plus everything a request can touch. Usable without a socket.
pub struct Master {
    state: Mutex<MasterState>,
    uri: String,
    writer: Option<CheckpointWriter>,
    notifier: Notifier,
    faults: Option<Arc<FaultInjector>>,
}

impl Master {
    pub fn new(state: MasterState, uri: String, writer: Option<CheckpointWriter>, faults: Option<Arc<FaultInjector>>) -> Self {
        Master {
            state: Mutex::new(state),
            uri,
            writer,
            notifier: Notifier::start(8, NOTIFY_TIMEOUT),
            faults,
        }
    }

    pub fn uri(&self) -> &str {
        &self.uri
    }

    pub fn snapshot(&self) -> MasterState {
        self.state.lock().unwrap().snapshot()
    }

    pub fn writer_stats(&self) -> Option<WriterStats> {
        self.writer.as_ref().map(CheckpointWriter::stats)
    }

    /// Waits until the checkpoint reflects every mutation so far.
    pub fn flush_checkpoint(&self, timeout: Duration) -> bool {
        self.writer.as_ref().is_none_or(|w| w.flush(timeout))
    }

    /// Runs a mutation in the exclusive section, queues the new snapshot for
    /// the writer, then hands notifications to the dispatcher.
    fn mutate<T>(&self, f: impl FnOnce(&mut MasterState) -> Result<Outcome<T>, RpcTriple>) -> Result<T, RpcTriple> {
        let (outcome, version, changed) = {
            let mut state = self.state.lock().unwrap();
            let before = state.version();
            let outcome = f(&mut state)?;
            let changed = state.version() != before;
            if changed {
                if let Some(writer) = &self.writer {
                    writer.submit(state.snapshot());
                }
            }
            (outcome, state.version(), changed)
        };
        for event in &outcome.events {
            match event {
                RegistryEvent::TypeConflict { topic, recorded, offered, caller } => log::warn!(
                    "{caller} registered {topic} as {offered}, but it is recorded as {recorded}; keeping {recorded}"
                ),
                RegistryEvent::NodeSuperseded { name, old_uri, new_uri } => {
                    log::info!("{name} moved from {old_uri} to {new_uri}; dropped its old registrations")
                }
            }
        }
        if changed && self.faults.as_ref().is_some_and(|f| f.before_notify_armed()) {
            if let Some(writer) = &self.writer {
                writer.wait_for(version, Duration::from_secs(5));
            }
            fault::crash_now("after commit, before notifying subscribers");
        }
        self.dispatch_updates(outcome.updates);
        Ok(outcome.value)
    }

    fn dispatch_updates(&self, updates: Vec<PublisherUpdate>) {
        if !updates.is_empty() {
            self.notifier.dispatch(updates);
        }
    }

    fn read<T>(&self, f: impl FnOnce(&MasterState) -> T) -> T {
        f(&self.state.lock().unwrap())
    }

    /// Routes one call. Every reply is a triple.
    pub fn dispatch(&self, method: &str, args: &[Value]) -> RpcTriple {
        match self.route(method, args) {
            Ok(t) | Err(t) => t,
        }
    }

    fn route(&self, method: &str, args: &[Value]) -> Reply {
        match method {
            "registerPublisher" => {
                let a = Args::new(method, args, &["caller_id", "topic", "topic_type", "caller_api"])?;
                let (caller, topic, ty, api) = (a.name(0)?, a.name(1)?, a.str(2)?, a.uri(3)?);
                let subs = self.mutate(|s| {
                    s.register_publisher(&caller, &api, &topic, ty)
                        .map_err(|e| RpcTriple::error(e.to_string()))
                })?;
                Ok(RpcTriple::ok(format!("Registered [{caller}] as publisher of [{topic}]"), uris(&subs)))
            }
            "unregisterPublisher" => {
                let a = Args::new(method, args, &["caller_id", "topic", "caller_api"])?;
                let (caller, topic, api) = (a.name(0)?, a.name(1)?, a.uri(2)?);
                let n = self.mutate(|s| Ok(s.unregister_publisher(&caller, &api, &topic)))?;
                Ok(RpcTriple::ok(format!("Unregistered [{caller}] as publisher of [{topic}]"), n as i32))
            }
            "registerSubscriber" => {
                let a = Args::new(method, args, &["caller_id", "topic", "topic_type", "caller_api"])?;
                let (caller, topic, ty, api) = (a.name(0)?, a.name(1)?, a.str(2)?, a.uri(3)?);
                let pubs = self.mutate(|s| {
                    s.register_subscriber(&caller, &api, &topic, ty)
                        .map_err(|e| RpcTriple::error(e.to_string()))
                })?;
                Ok(RpcTriple::ok(format!("Subscribed to [{topic}]"), uris(&pubs)))
            }
            "unregisterSubscriber" => {
                let a = Args::new(method, args, &["caller_id", "topic", "caller_api"])?;
                let (caller, topic, api) = (a.name(0)?, a.name(1)?, a.uri(2)?);
                let n = self.mutate(|s| Ok(s.unregister_subscriber(&caller, &api, &topic)))?;
                Ok(RpcTriple::ok(format!("Unregistered [{caller}] as subscriber of [{topic}]"), n as i32))
            }
            "registerService" => {
                let a = Args::new(method, args, &["caller_id", "service", "service_api", "caller_api"])?;
                let (caller, service, service_api, api) = (a.name(0)?, a.name(1)?, a.uri(2)?, a.uri(3)?);
                let n = self.mutate(|s| Ok(s.register_service(&caller, &api, &service, &service_api)))?;
                Ok(RpcTriple::ok(format!("Registered [{caller}] as provider of [{service}]"), n as i32))
            }
            "unregisterService" => {
                let a = Args::new(method, args, &["caller_id", "service", "service_api"])?;
                let (caller, service, service_api) = (a.name(0)?, a.name(1)?, a.uri(2)?);
                let n = self.mutate(|s| Ok(s.unregister_service(&caller, &service, &service_api)))?;
                Ok(RpcTriple::ok(format!("Unregistered [{caller}] as provider of [{service}]"), n as i32))
            }
            "lookupNode" => {
                let a = Args::new(method, args, &["caller_id", "node_name"])?;
                a.str(0)?;
                let name = a.name(1)?;
                match self.read(|s| s.lookup_node(&name)) {
                    Ok(uri) => Ok(RpcTriple::ok(format!("URI for node [{name}]"), uri.as_str())),
                    Err(e) => Err(RpcTriple::not_found(e.to_string())),
                }
            }
            "lookupService" => {
                let a = Args::new(method, args, &["caller_id", "service"])?;
                a.str(0)?;
                let service = a.name(1)?;
                match self.read(|s| s.lookup_service(&service)) {
                    Ok(uri) => Ok(RpcTriple::ok(format!("rosrpc URI: [{uri}]"), uri.as_str())),
                    Err(e) => Err(RpcTriple::not_found(e.to_string())),
                }
            }
            "getSystemState" => {
                Args::new(method, args, &["caller_id"])?.str(0)?;
                let state = self.read(MasterState::system_state);
                Ok(RpcTriple::ok("current system state", system_state_value(&state)))
            }
            "getPublishedTopics" => {
                let a = Args::new(method, args, &["caller_id", "subgraph"])?;
                a.str(0)?;
                let prefix = a.str(1)?;
                let rows = self.read(|s| s.published_topics(prefix));
                Ok(RpcTriple::ok("current topics", typed_pairs(&rows)))
            }
            "getTopicTypes" => {
                Args::new(method, args, &["caller_id"])?.str(0)?;
                let rows = self.read(MasterState::topic_types);
                Ok(RpcTriple::ok("current topic types", typed_pairs(&rows)))
            }
            "getUri" => {
                Args::new(method, args, &["caller_id"])?.str(0)?;
                Ok(RpcTriple::ok("", self.uri.as_str()))
            }
            "getPid" => {
                Args::new(method, args, &["caller_id"])?.str(0)?;
                Ok(RpcTriple::ok("", std::process::id() as i32))
            }
            "setParam" => {
                let a = Args::new(method, args, &["caller_id", "key", "value"])?;
                a.str(0)?;
                let key = a.key(1)?;
                let value = ParamValue::try_from(&args[2]).map_err(RpcTriple::error)?;
                self.mutate(|s| {
                    s.set_param(&key, value).map_err(param_error)?;
                    Ok(Outcome::<()>::default())
                })?;
                Ok(RpcTriple::ok(format!("parameter {key} set"), 0))
            }
            "getParam" => {
                let a = Args::new(method, args, &["caller_id", "key"])?;
                a.str(0)?;
                let key = a.key(1)?;
                let value = self.read(|s| s.get_param(&key)).map_err(param_error)?;
                Ok(RpcTriple::ok(format!("parameter {key}"), Value::from(&value)))
            }
            "deleteParam" => {
                let a = Args::new(method, args, &["caller_id", "key"])?;
                a.str(0)?;
                let key = a.key(1)?;
                self.mutate(|s| {
                    s.delete_param(&key).map_err(param_error)?;
                    Ok(Outcome::<()>::default())
                })?;
                Ok(RpcTriple::ok(format!("parameter {key} deleted"), 0))
            }
            "hasParam" => {
                let a = Args::new(method, args, &["caller_id", "key"])?;
                a.str(0)?;
                let key = a.key(1)?;
                Ok(RpcTriple::ok(key.as_str(), self.read(|s| s.has_param(&key))))
            }
            "getParamNames" => {
                Args::new(method, args, &["caller_id"])?.str(0)?;
                Ok(RpcTriple::ok("parameter names", self.read(MasterState::param_names)))
            }
            "injectCrash" if self.faults.is_some() => {
                let (mode, offset) = match args.len() {
                    2 => (Args::new(method, args, &["caller_id", "mode"])?.str(1)?, None),
                    _ => {
                        let a = Args::new(method, args, &["caller_id", "mode", "byte_offset"])?;
                        let offset = args[2]
                            .as_int()
                            .and_then(|o| usize::try_from(o).ok())
                            .ok_or_else(|| RpcTriple::error("byte_offset must be a non-negative int"))?;
                        (a.str(1)?, Some(offset))
                    }
                };
                let mode: CrashMode = mode.parse().map_err(RpcTriple::error)?;
                self.faults.as_ref().expect("guarded").arm(mode, offset);
                Ok(RpcTriple::ok(format!("armed {mode:?}"), 0))
            }
            other => Err(RpcTriple::error(format!("unknown method {other}"))),
        }
    }

    fn shutdown(self) {
        let Master { writer, notifier, .. } = self;
        notifier.shutdown();
        if let Some(writer) = writer {
            writer.shutdown();
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("cannot listen on {host}:{port}: {source}")]
    Bind {
        host: String,
        port: u16,
        source: std::io::Error,
    },
    #[error("cannot create checkpoint directory {path}: {source}")]
    CheckpointDir { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

/// A running master.
pub struct MasterHandle {
    master: Arc<Master>,
    server: RpcServer,
    /// Console lines produced during startup, in order.
    pub startup_lines: Vec<String>,
    pub recovery: Option<recovery::ReconcileReport>,
}

impl MasterHandle {
    pub fn uri(&self) -> &str {
        self.master.uri()
    }

    pub fn port(&self) -> u16 {
        self.server.port()
    }

    pub fn master(&self) -> &Master {
        &self.master
    }

    /// Stops serving, drains pending notifications and writes any pending
    /// checkpoint.
    pub fn shutdown(self) {
        let MasterHandle { master, server, .. } = self;
        server.shutdown();
        match Arc::try_unwrap(master) {
            Ok(master) => master.shutdown(),
            Err(_) => log::warn!("master still referenced at shutdown"),
        }
    }
}

/// Binds, recovers (with rescue), then starts answering requests.
pub fn serve(config: &MasterConfig) -> Result<MasterHandle, StartError> {
    let listener = RpcServer::bind(&config.bind_host, config.port).map_err(|source| StartError::Bind {
        host: config.bind_host.clone(),
        port: config.port,
        source,
    })?;
    let uri = format!("http://{}:{}/", config.advertise_host, listener.port());
    let faults = config.fault_injection.then(|| Arc::new(FaultInjector::default()));

    let mut startup_lines = Vec::new();
    let mut report = None;
    let (state, writer) = if config.rescue {
        if let Some(dir) = config.checkpoint_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| StartError::CheckpointDir {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let hook: Arc<dyn CommitHook> = match &faults {
            Some(f) => Arc::clone(f) as Arc<dyn CommitHook>,
            None => Arc::new(NoHook),
        };
        let writer = CheckpointWriter::start(&config.checkpoint_path, hook);
        let probe = RpcProbe::default();
        let options = RecoveryOptions {
            probe: &probe,
            fan_out: recovery::DEFAULT_PROBE_FAN_OUT,
        };
        let (state, r) = recovery::recover(&config.checkpoint_path, options, Some(&writer))?;
        startup_lines.push(
            Summary {
                path: &config.checkpoint_path,
                state: &state,
                report: &r,
            }
            .to_string(),
        );
        report = Some(r);
        (state, Some(writer))
    } else {
        (MasterState::new(), None)
    };

    let master = Arc::new(Master::new(state, uri, writer, faults));
    let handler: Arc<rpc::Handler> = {
        let master = Arc::clone(&master);
        Arc::new(move |method, args| master.dispatch(method, &args).into_value())
    };
    let malformed: Arc<rpc::Malformed> =
        Arc::new(|e| RpcTriple::error(format!("malformed request: {e}")).into_value());
    let server = listener.serve(config.workers, handler, malformed);
    if config.rescue {
        startup_lines.push(RESCUE_BANNER.to_string());
    }
    Ok(MasterHandle {
        master,
        server,
        startup_lines,
        recovery: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn master() -> Master {
        Master::new(MasterState::new(), "http://localhost:11311/".into(), None, None)
    }

    fn s(v: &str) -> Value {
        Value::from(v)
    }

    #[test]
    fn register_publisher_golden() {
        let m = master();
        let t = m.dispatch(
            "registerPublisher",
            &[s("/talker"), s("/chatter"), s("std_msgs/String"), s("http://localhost:40001/")],
        );
        assert_eq!(t.code, 1);
        assert_eq!(t.value, Value::Array(vec![]));
    }

    #[test]
    fn lookup_failures_use_minus_one_and_empty_string() {
        let m = master();
        let t = m.dispatch("lookupNode", &[s("/me"), s("/ghost")]);
        assert_eq!(t, RpcTriple::not_found("unknown node /ghost"));
        let t = m.dispatch("lookupService", &[s("/me"), s("/srv")]);
        assert_eq!((t.code, t.value), (-1, s("")));
    }

    #[test]
    fn unknown_method_and_bad_arguments() {
        let m = master();
        assert_eq!(m.dispatch("frobnicate", &[]), RpcTriple::error("unknown method frobnicate"));
        assert_eq!(m.dispatch("injectCrash", &[s("/me"), s("immediate")]).message, "unknown method injectCrash");
        assert_eq!(m.dispatch("getPid", &[]).code, -1);
        assert_eq!(m.dispatch("getPid", &[Value::Int(3)]).code, -1);
        assert_eq!(
            m.dispatch("registerPublisher", &[s("/a"), s("chatter"), s("x/Y"), s("http://h:1/")]).code,
            -1
        );
        assert_eq!(m.dispatch("registerPublisher", &[s("/a"), s("/c"), s("*"), s("http://h:1/")]).code, -1);
    }

    #[test]
    fn reads_do_not_bump_version() {
        let m = master();
        m.dispatch("setParam", &[s("/me"), s("/a/b"), Value::Int(1)]);
        let v = m.snapshot().version();
        for method in ["getSystemState", "getTopicTypes", "getParamNames", "getUri", "getPid"] {
            assert_eq!(m.dispatch(method, &[s("/me")]).code, 1, "{method}");
        }
        assert_eq!(m.dispatch("getParam", &[s("/me"), s("/a")]).value.as_int(), None);
        assert_eq!(m.snapshot().version(), v);
    }

    #[test]
    fn param_roundtrip_and_not_found() {
        let m = master();
        assert_eq!(m.dispatch("setParam", &[s("/me"), s("/a/b"), Value::Int(1)]).code, 1);
        assert_eq!(m.dispatch("getParam", &[s("/me"), s("/a/b")]).value, Value::Int(1));
        assert_eq!(m.dispatch("hasParam", &[s("/me"), s("/missing")]).value, Value::Bool(false));
        let t = m.dispatch("getParam", &[s("/me"), s("/missing")]);
        assert_eq!((t.code, t.message.as_str()), (-1, "parameter /missing is not set"));
        assert_eq!(m.dispatch("deleteParam", &[s("/me"), s("/missing")]).code, -1);
        assert_eq!(m.dispatch("setParam", &[s("/me"), s("/l"), Value::Array(vec![])]).code, -1);
    }
}
