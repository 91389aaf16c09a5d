//! The master's registration state machine.
//!
//! [`MasterState`] holds every node, topic, service and parameter the master
//! knows about. All mutating operations keep three invariants:
//!
//! * every node named by a topic or service has a [`NodeRecord`],
//! * a node with no remaining registration is removed,
//! * a topic with neither publishers nor subscribers is removed.
//!
//! Operations never perform I/O. Side effects the caller must carry out
//! (publisher-update callbacks, conflict logging) are returned in an
//! [`Outcome`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{InvariantViolation, NotFound, ValidationError};
use crate::names::{EndpointUri, GraphName};
use crate::params::{ParamError, ParamKey, ParamTree, ParamValue};

/// Datatype placeholder used by subscribers that accept any type.
pub const WILDCARD_TYPE: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub name: GraphName,
    pub api_uri: EndpointUri,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRecord {
    pub name: GraphName,
    pub datatype: String,
    pub publishers: BTreeSet<GraphName>,
    pub subscribers: BTreeSet<GraphName>,
}

impl TopicRecord {
    fn is_empty(&self) -> bool {
        self.publishers.is_empty() && self.subscribers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRecord {
    pub name: GraphName,
    pub provider: GraphName,
    pub service_uri: EndpointUri,
    pub provider_api_uri: EndpointUri,
}

/// A callback the master owes to subscribers of `topic`: the current list of
/// publisher endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublisherUpdate {
    pub topic: GraphName,
    pub subscriber_apis: Vec<EndpointUri>,
    pub publisher_apis: Vec<EndpointUri>,
}

/// Non-fatal events worth logging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistryEvent {
    /// A registration named a type other than the one already recorded. The
    /// recorded type was kept.
    TypeConflict {
        topic: GraphName,
        recorded: String,
        offered: String,
        caller: GraphName,
    },
    /// A node re-registered from a new URI; everything registered under the
    /// old URI was dropped.
    NodeSuperseded {
        name: GraphName,
        old_uri: EndpointUri,
        new_uri: EndpointUri,
    },
}

/// Result of a registry operation plus the work it leaves for the caller.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome<T> {
    pub value: T,
    pub updates: Vec<PublisherUpdate>,
    pub events: Vec<RegistryEvent>,
}

impl<T> Outcome<T> {
    fn new(value: T) -> Self {
        Outcome {
            value,
            updates: Vec::new(),
            events: Vec::new(),
        }
    }
}

/// Name lists returned by [`MasterState::system_state`], all sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SystemState {
    pub publishers: Vec<(GraphName, Vec<GraphName>)>,
    pub subscribers: Vec<(GraphName, Vec<GraphName>)>,
    pub services: Vec<(GraphName, Vec<GraphName>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Publisher,
    Subscriber,
}

/// The complete registry metadata.
///
/// Equality compares content only. The version counter orders snapshots
/// within one master lifetime and is not part of the registry's meaning.
#[derive(Debug, Clone, Default)]
pub struct MasterState {
    nodes: BTreeMap<GraphName, NodeRecord>,
    topics: BTreeMap<GraphName, TopicRecord>,
    services: BTreeMap<GraphName, ServiceRecord>,
    params: ParamTree,
    version: u64,
}

impl PartialEq for MasterState {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.topics == other.topics
            && self.services == other.services
            && self.params == other.params
    }
}

impl MasterState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assembles a state from externally supplied records, rejecting any
    /// combination that breaks a registry invariant. The version starts at 0.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = NodeRecord>,
        topics: impl IntoIterator<Item = TopicRecord>,
        services: impl IntoIterator<Item = ServiceRecord>,
        params: ParamTree,
    ) -> Result<Self, InvariantViolation> {
        let state = MasterState {
            nodes: nodes.into_iter().map(|n| (n.name.clone(), n)).collect(),
            topics: topics.into_iter().map(|t| (t.name.clone(), t)).collect(),
            services: services.into_iter().map(|s| (s.name.clone(), s)).collect(),
            params,
            version: 0,
        };
        state.check_invariants()?;
        Ok(state)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// An immutable copy, safe to hand to another thread.
    pub fn snapshot(&self) -> MasterState {
        self.clone()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn node(&self, name: &GraphName) -> Option<&NodeRecord> {
        self.nodes.get(name)
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicRecord> {
        self.topics.values()
    }

    pub fn topic(&self, name: &GraphName) -> Option<&TopicRecord> {
        self.topics.get(name)
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceRecord> {
        self.services.values()
    }

    pub fn params(&self) -> &ParamTree {
        &self.params
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.topics.is_empty() && self.services.is_empty() && self.params.is_empty()
    }

    fn bump(&mut self) {
        self.version += 1;
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let mut referenced = BTreeSet::new();
        for (name, topic) in &self.topics {
            if topic.is_empty() {
                return Err(InvariantViolation::EmptyTopic(name.to_string()));
            }
            if topic.datatype.is_empty() {
                return Err(InvariantViolation::EmptyDatatype(name.to_string()));
            }
            if topic.datatype == WILDCARD_TYPE && !topic.publishers.is_empty() {
                return Err(InvariantViolation::WildcardPublisherType(name.to_string()));
            }
            for node in topic.publishers.iter().chain(&topic.subscribers) {
                if !self.nodes.contains_key(node) {
                    return Err(InvariantViolation::DanglingNode {
                        owner: name.to_string(),
                        node: node.to_string(),
                    });
                }
                referenced.insert(node);
            }
        }
        for (name, service) in &self.services {
            match self.nodes.get(&service.provider) {
                None => {
                    return Err(InvariantViolation::DanglingNode {
                        owner: name.to_string(),
                        node: service.provider.to_string(),
                    })
                }
                Some(node) if node.api_uri != service.provider_api_uri => {
                    return Err(InvariantViolation::DanglingNode {
                        owner: name.to_string(),
                        node: alloc::format!("{} at {}", service.provider, service.provider_api_uri),
                    })
                }
                Some(_) => {}
            }
            referenced.insert(&service.provider);
        }
        if let Some(orphan) = self.nodes.keys().find(|n| !referenced.contains(n)) {
            return Err(InvariantViolation::OrphanNode(orphan.to_string()));
        }
        Ok(())
    }

    // ---- registration ----------------------------------------------------

    pub fn register_publisher(
        &mut self,
        caller: &GraphName,
        caller_api: &EndpointUri,
        topic: &GraphName,
        datatype: &str,
    ) -> Result<Outcome<Vec<EndpointUri>>, ValidationError> {
        if datatype == WILDCARD_TYPE {
            return Err(ValidationError::Datatype {
                datatype: datatype.to_string(),
                reason: "publishers must name a concrete type",
            });
        }
        self.register_topic_role(Role::Publisher, caller, caller_api, topic, datatype)
    }

    pub fn register_subscriber(
        &mut self,
        caller: &GraphName,
        caller_api: &EndpointUri,
        topic: &GraphName,
        datatype: &str,
    ) -> Result<Outcome<Vec<EndpointUri>>, ValidationError> {
        self.register_topic_role(Role::Subscriber, caller, caller_api, topic, datatype)
    }

    fn register_topic_role(
        &mut self,
        role: Role,
        caller: &GraphName,
        caller_api: &EndpointUri,
        topic: &GraphName,
        datatype: &str,
    ) -> Result<Outcome<Vec<EndpointUri>>, ValidationError> {
        if datatype.is_empty() || datatype.chars().any(char::is_whitespace) {
            return Err(ValidationError::Datatype {
                datatype: datatype.to_string(),
                reason: "must be non-empty without whitespace",
            });
        }
        let mut out = Outcome::new(Vec::new());
        let mut changed = false;
        let mut touched = self.upsert_node(caller, caller_api, &mut out, &mut changed);

        let record = self.topics.entry(topic.clone()).or_insert_with(|| {
            changed = true;
            TopicRecord {
                name: topic.clone(),
                datatype: datatype.to_string(),
                publishers: BTreeSet::new(),
                subscribers: BTreeSet::new(),
            }
        });
        if datatype != WILDCARD_TYPE && record.datatype != datatype {
            if record.datatype == WILDCARD_TYPE {
                record.datatype = datatype.to_string();
                changed = true;
            } else {
                out.events.push(RegistryEvent::TypeConflict {
                    topic: topic.clone(),
                    recorded: record.datatype.clone(),
                    offered: datatype.to_string(),
                    caller: caller.clone(),
                });
            }
        }
        let set = match role {
            Role::Publisher => &mut record.publishers,
            Role::Subscriber => &mut record.subscribers,
        };
        changed |= set.insert(caller.clone());

        if role == Role::Publisher {
            touched.insert(topic.clone());
        }
        out.value = match role {
            Role::Publisher => self.role_apis(topic, Role::Subscriber),
            Role::Subscriber => self.role_apis(topic, Role::Publisher),
        };
        out.updates = self.updates_for(&touched);
        if changed {
            self.bump();
        }
        Ok(out)
    }

    pub fn unregister_publisher(
        &mut self,
        caller: &GraphName,
        caller_api: &EndpointUri,
        topic: &GraphName,
    ) -> Outcome<u32> {
        self.unregister_topic_role(Role::Publisher, caller, caller_api, topic)
    }

    pub fn unregister_subscriber(
        &mut self,
        caller: &GraphName,
        caller_api: &EndpointUri,
        topic: &GraphName,
    ) -> Outcome<u32> {
        self.unregister_topic_role(Role::Subscriber, caller, caller_api, topic)
    }

    fn unregister_topic_role(
        &mut self,
        role: Role,
        caller: &GraphName,
        caller_api: &EndpointUri,
        topic: &GraphName,
    ) -> Outcome<u32> {
        let mut out = Outcome::new(0);
        if self.nodes.get(caller).map(|n| &n.api_uri) != Some(caller_api) {
            return out;
        }
        let Some(record) = self.topics.get_mut(topic) else {
            return out;
        };
        let removed = match role {
            Role::Publisher => record.publishers.remove(caller),
            Role::Subscriber => record.subscribers.remove(caller),
        };
        if !removed {
            return out;
        }
        if record.is_empty() {
            self.topics.remove(topic);
        }
        self.prune_node(caller);
        out.value = 1;
        if role == Role::Publisher {
            out.updates = self.updates_for(&BTreeSet::from([topic.clone()]));
        }
        self.bump();
        out
    }

    pub fn register_service(
        &mut self,
        caller: &GraphName,
        caller_api: &EndpointUri,
        service: &GraphName,
        service_uri: &EndpointUri,
    ) -> Outcome<u32> {
        let mut out = Outcome::new(1);
        let mut changed = false;
        let touched = self.upsert_node(caller, caller_api, &mut out, &mut changed);
        let record = ServiceRecord {
            name: service.clone(),
            provider: caller.clone(),
            service_uri: service_uri.clone(),
            provider_api_uri: caller_api.clone(),
        };
        if let Some(previous) = self.services.insert(service.clone(), record.clone()) {
            if previous != record {
                changed = true;
                if previous.provider != *caller {
                    self.prune_node(&previous.provider);
                }
            }
        } else {
            changed = true;
        }
        out.updates = self.updates_for(&touched);
        if changed {
            self.bump();
        }
        out
    }

    pub fn unregister_service(
        &mut self,
        caller: &GraphName,
        service: &GraphName,
        service_uri: &EndpointUri,
    ) -> Outcome<u32> {
        let mut out = Outcome::new(0);
        match self.services.get(service) {
            Some(record) if record.provider == *caller && record.service_uri == *service_uri => {}
            _ => return out,
        }
        self.services.remove(service);
        self.prune_node(caller);
        self.bump();
        out.value = 1;
        out
    }

    /// Records `caller` at `caller_api`. A node already known under another
    /// URI is treated as dead: all of its registrations are dropped first.
    /// Returns the topics whose publisher set changed as a result.
    fn upsert_node<T>(
        &mut self,
        caller: &GraphName,
        caller_api: &EndpointUri,
        out: &mut Outcome<T>,
        changed: &mut bool,
    ) -> BTreeSet<GraphName> {
        let mut touched = BTreeSet::new();
        match self.nodes.get(caller) {
            Some(existing) if existing.api_uri == *caller_api => return touched,
            Some(existing) => {
                out.events.push(RegistryEvent::NodeSuperseded {
                    name: caller.clone(),
                    old_uri: existing.api_uri.clone(),
                    new_uri: caller_api.clone(),
                });
                touched = self.drop_node(caller);
            }
            None => {}
        }
        self.nodes.insert(
            caller.clone(),
            NodeRecord {
                name: caller.clone(),
                api_uri: caller_api.clone(),
            },
        );
        *changed = true;
        touched
    }

    /// Removes a node together with every registration it holds. Returns the
    /// topics whose publisher set changed (including topics pruned entirely).
    fn drop_node(&mut self, name: &GraphName) -> BTreeSet<GraphName> {
        let mut publisher_changed = BTreeSet::new();
        self.topics.retain(|topic, record| {
            if record.publishers.remove(name) {
                publisher_changed.insert(topic.clone());
            }
            record.subscribers.remove(name);
            !record.is_empty()
        });
        self.services.retain(|_, s| s.provider != *name);
        self.nodes.remove(name);
        publisher_changed
    }

    /// Removes a node and all of its registrations, bumping the version if
    /// the node existed.
    pub fn remove_node(&mut self, name: &GraphName) -> BTreeSet<GraphName> {
        if !self.nodes.contains_key(name) {
            return BTreeSet::new();
        }
        let touched = self.drop_node(name);
        self.bump();
        touched
    }

    fn prune_node(&mut self, name: &GraphName) {
        let in_use = self
            .topics
            .values()
            .any(|t| t.publishers.contains(name) || t.subscribers.contains(name))
            || self.services.values().any(|s| s.provider == *name);
        if !in_use {
            self.nodes.remove(name);
        }
    }

    fn role_apis(&self, topic: &GraphName, role: Role) -> Vec<EndpointUri> {
        let Some(record) = self.topics.get(topic) else {
            return Vec::new();
        };
        let names = match role {
            Role::Publisher => &record.publishers,
            Role::Subscriber => &record.subscribers,
        };
        names
            .iter()
            .filter_map(|n| self.nodes.get(n))
            .map(|n| n.api_uri.clone())
            .collect()
    }

    /// Publisher updates owed for `topics`: one per topic that still has
    /// subscribers.
    pub fn updates_for(&self, topics: &BTreeSet<GraphName>) -> Vec<PublisherUpdate> {
        topics
            .iter()
            .filter_map(|topic| {
                let subscriber_apis = self.role_apis(topic, Role::Subscriber);
                (!subscriber_apis.is_empty()).then(|| PublisherUpdate {
                    topic: topic.clone(),
                    subscriber_apis,
                    publisher_apis: self.role_apis(topic, Role::Publisher),
                })
            })
            .collect()
    }

    // ---- queries ---------------------------------------------------------

    pub fn lookup_node(&self, name: &GraphName) -> Result<EndpointUri, NotFound> {
        self.nodes
            .get(name)
            .map(|n| n.api_uri.clone())
            .ok_or_else(|| NotFound::Node(name.to_string()))
    }

    pub fn lookup_service(&self, name: &GraphName) -> Result<EndpointUri, NotFound> {
        self.services
            .get(name)
            .map(|s| s.service_uri.clone())
            .ok_or_else(|| NotFound::Service(name.to_string()))
    }

    pub fn publisher_apis(&self, topic: &GraphName) -> Vec<EndpointUri> {
        self.role_apis(topic, Role::Publisher)
    }

    pub fn subscriber_apis(&self, topic: &GraphName) -> Vec<EndpointUri> {
        self.role_apis(topic, Role::Subscriber)
    }

    pub fn system_state(&self) -> SystemState {
        let role_lists = |pick: fn(&TopicRecord) -> &BTreeSet<GraphName>| {
            self.topics
                .values()
                .filter(|t| !pick(t).is_empty())
                .map(|t| (t.name.clone(), pick(t).iter().cloned().collect()))
                .collect()
        };
        SystemState {
            publishers: role_lists(|t| &t.publishers),
            subscribers: role_lists(|t| &t.subscribers),
            services: self
                .services
                .values()
                .map(|s| (s.name.clone(), alloc::vec![s.provider.clone()]))
                .collect(),
        }
    }

    /// Every known topic and its type.
    pub fn topic_types(&self) -> Vec<(GraphName, String)> {
        self.topics
            .values()
            .map(|t| (t.name.clone(), t.datatype.clone()))
            .collect()
    }

    /// Topics with at least one publisher whose name starts with `prefix`.
    pub fn published_topics(&self, prefix: &str) -> Vec<(GraphName, String)> {
        self.topics
            .values()
            .filter(|t| !t.publishers.is_empty() && t.name.as_str().starts_with(prefix))
            .map(|t| (t.name.clone(), t.datatype.clone()))
            .collect()
    }

    // ---- parameter server ------------------------------------------------

    pub fn set_param(&mut self, key: &ParamKey, value: ParamValue) -> Result<(), ParamError> {
        if self.params.set(key, value)? {
            self.bump();
        }
        Ok(())
    }

    pub fn get_param(&self, key: &ParamKey) -> Result<ParamValue, ParamError> {
        self.params.get(key)
    }

    pub fn delete_param(&mut self, key: &ParamKey) -> Result<(), ParamError> {
        self.params.delete(key)?;
        self.bump();
        Ok(())
    }

    pub fn has_param(&self, key: &ParamKey) -> bool {
        self.params.has(key)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.names()
    }
}
