//! Simulated nodes: a slave endpoint answering `getPid` and recording every
//! `publisherUpdate`, plus the registrations the node makes at startup.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rescue_core::{EndpointUri, GraphName};
use serde::{Deserialize, Serialize};

use crate::rpc::{self, CallError, RpcServer};
use crate::xmlrpc::Value;

pub const REGISTRATION_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub topic: String,
    #[serde(rename = "type")]
    pub datatype: String,
}

impl TopicSpec {
    pub fn new(topic: &str, datatype: &str) -> Self {
        TopicSpec {
            topic: topic.into(),
            datatype: datatype.into(),
        }
    }
}

/// What a simulated node registers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimNodeSpec {
    pub name: String,
    #[serde(default)]
    pub publishes: Vec<TopicSpec>,
    #[serde(default)]
    pub subscribes: Vec<TopicSpec>,
    #[serde(default)]
    pub services: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Publisher,
    Subscriber,
    Service,
    Mixed,
}

impl SimNodeSpec {
    pub fn publisher(name: &str, topic: &str, datatype: &str) -> Self {
        SimNodeSpec {
            name: name.into(),
            publishes: vec![TopicSpec::new(topic, datatype)],
            subscribes: vec![],
            services: vec![],
        }
    }

    pub fn subscriber(name: &str, topic: &str, datatype: &str) -> Self {
        SimNodeSpec {
            name: name.into(),
            publishes: vec![],
            subscribes: vec![TopicSpec::new(topic, datatype)],
            services: vec![],
        }
    }

    pub fn role(&self) -> Role {
        match (!self.publishes.is_empty(), !self.subscribes.is_empty(), !self.services.is_empty()) {
            (true, false, false) => Role::Publisher,
            (false, true, false) => Role::Subscriber,
            (false, false, true) => Role::Service,
            _ => Role::Mixed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        GraphName::new(self.name.as_str()).map_err(|e| e.to_string())?;
        for t in self.publishes.iter().chain(&self.subscribes) {
            GraphName::new(t.topic.as_str()).map_err(|e| e.to_string())?;
            if t.datatype.is_empty() {
                return Err(format!("{}: empty type for {}", self.name, t.topic));
            }
        }
        for s in &self.services {
            GraphName::new(s.as_str()).map_err(|e| e.to_string())?;
        }
        if self.publishes.is_empty() && self.subscribes.is_empty() && self.services.is_empty() {
            return Err(format!("{} registers nothing", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedUpdate {
    pub topic: String,
    pub publishers: Vec<String>,
}

#[derive(Default)]
struct Inner {
    updates: Mutex<Vec<RecordedUpdate>>,
    peers: Mutex<BTreeMap<String, Vec<String>>>,
    paused: Mutex<bool>,
    resumed: Condvar,
}

impl Inner {
    fn wait_while_paused(&self) {
        let mut paused = self.paused.lock().unwrap();
        while *paused {
            paused = self.resumed.wait(paused).unwrap();
        }
    }

    fn handle(&self, method: &str, args: Vec<Value>) -> Value {
        self.wait_while_paused();
        let triple = |code: i32, msg: &str, v: Value| Value::Array(vec![Value::Int(code), Value::from(msg), v]);
        match (method, args.as_slice()) {
            ("getPid", [_]) => triple(1, "", Value::Int(std::process::id() as i32)),
            ("publisherUpdate", [_, Value::Str(topic), Value::Array(pubs)]) => {
                let publishers: Option<Vec<String>> = pubs.iter().map(|p| p.as_str().map(str::to_string)).collect();
                let Some(publishers) = publishers else {
                    return triple(-1, "publisher list must hold strings", Value::Int(0));
                };
                // record and update peers under one lock so arrival order is kept
                let mut updates = self.updates.lock().unwrap();
                self.peers.lock().unwrap().insert(topic.clone(), publishers.clone());
                updates.push(RecordedUpdate {
                    topic: topic.clone(),
                    publishers,
                });
                triple(1, "", Value::Int(0))
            }
            _ => triple(-1, &format!("unsupported call {method}"), Value::Int(0)),
        }
    }
}

/// A running simulated node. Dropping it kills it.
pub struct SimNode {
    spec: SimNodeSpec,
    name: GraphName,
    api: EndpointUri,
    server: Option<RpcServer>,
    inner: Arc<Inner>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid node spec: {0}")]
    Spec(String),
    #[error("cannot start node endpoint: {0}")]
    Bind(#[from] std::io::Error),
    #[error("{node}: {method} {target} failed: {source}")]
    Register {
        node: String,
        method: &'static str,
        target: String,
        source: CallError,
    },
}

impl SimNode {
    /// Starts the endpoint and registers every role with the master.
    pub fn spawn(spec: SimNodeSpec, master_uri: &str) -> Result<SimNode, SimError> {
        spec.validate().map_err(SimError::Spec)?;
        let listener = RpcServer::bind("127.0.0.1", 0)?;
        let api = EndpointUri::http("127.0.0.1", listener.port()).expect("valid loopback uri");
        let inner = Arc::new(Inner::default());
        let handler: Arc<rpc::Handler> = {
            let inner = Arc::clone(&inner);
            Arc::new(move |method, args| inner.handle(method, args))
        };
        let malformed: Arc<rpc::Malformed> =
            Arc::new(|e| Value::Array(vec![Value::Int(-1), Value::from(e.to_string()), Value::Int(0)]));
        // one worker: requests are handled strictly in arrival order
        let server = listener.serve(1, handler, malformed);
        let node = SimNode {
            name: GraphName::new(spec.name.as_str()).expect("validated"),
            spec,
            api,
            server: Some(server),
            inner,
        };
        node.register_all(master_uri)?;
        Ok(node)
    }

    fn call(&self, master_uri: &str, method: &'static str, target: &str, params: &[Value]) -> Result<Value, SimError> {
        rpc::call_ok(master_uri, method, params, REGISTRATION_TIMEOUT).map_err(|source| SimError::Register {
            node: self.spec.name.clone(),
            method,
            target: target.to_string(),
            source,
        })
    }

    fn register_all(&self, master_uri: &str) -> Result<(), SimError> {
        let me = Value::from(self.spec.name.as_str());
        let api = Value::from(self.api.as_str());
        for t in &self.spec.publishes {
            let params = [me.clone(), Value::from(t.topic.as_str()), Value::from(t.datatype.as_str()), api.clone()];
            self.call(master_uri, "registerPublisher", &t.topic, &params)?;
        }
        for t in &self.spec.subscribes {
            let params = [me.clone(), Value::from(t.topic.as_str()), Value::from(t.datatype.as_str()), api.clone()];
            let publishers = self.call(master_uri, "registerSubscriber", &t.topic, &params)?;
            let publishers: Vec<String> = publishers
                .as_array()
                .unwrap_or_default()
                .iter()
                .filter_map(|p| p.as_str().map(str::to_string))
                .collect();
            self.inner.peers.lock().unwrap().insert(t.topic.clone(), publishers);
        }
        for s in &self.spec.services {
            let params = [me.clone(), Value::from(s.as_str()), Value::from(self.service_uri().as_str()), api.clone()];
            self.call(master_uri, "registerService", s, &params)?;
        }
        Ok(())
    }

    pub fn unregister_publisher(&self, master_uri: &str, topic: &str) -> Result<i32, CallError> {
        let params = [Value::from(self.spec.name.as_str()), Value::from(topic), Value::from(self.api.as_str())];
        let v = rpc::call_ok(master_uri, "unregisterPublisher", &params, REGISTRATION_TIMEOUT)?;
        Ok(v.as_int().unwrap_or_default())
    }

    pub fn spec(&self) -> &SimNodeSpec {
        &self.spec
    }

    pub fn name(&self) -> &GraphName {
        &self.name
    }

    pub fn api(&self) -> &EndpointUri {
        &self.api
    }

    /// Where this node claims to serve its services.
    pub fn service_uri(&self) -> EndpointUri {
        EndpointUri::new(format!("rosrpc://127.0.0.1:{}", self.api.port())).expect("valid loopback uri")
    }

    /// Every `publisherUpdate` received, in arrival order.
    pub fn recorded_updates(&self) -> Vec<RecordedUpdate> {
        self.inner.updates.lock().unwrap().clone()
    }

    /// The node's current publisher list for `topic`: the registration reply,
    /// overwritten by each later update.
    pub fn peers(&self, topic: &str) -> Option<Vec<String>> {
        self.inner.peers.lock().unwrap().get(topic).cloned()
    }

    /// Holds incoming requests until [`SimNode::resume`].
    pub fn pause(&self) {
        *self.inner.paused.lock().unwrap() = true;
    }

    pub fn resume(&self) {
        *self.inner.paused.lock().unwrap() = false;
        self.inner.resumed.notify_all();
    }

    pub fn is_alive(&self) -> bool {
        self.server.is_some()
    }

    /// Closes the endpoint; the node answers nothing afterwards.
    pub fn kill(&mut self) {
        self.resume();
        if let Some(server) = self.server.take() {
            server.shutdown();
        }
    }
}

impl Drop for SimNode {
    fn drop(&mut self) {
        self.kill();
    }
}
