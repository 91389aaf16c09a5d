//! A deliberately naive registry bookkeeper used as a test oracle.
//!
//! It keeps flat lists of registrations and parameter leaves and rebuilds a
//! [`MasterState`] from them on demand. It shares no code with the registry
//! beyond the record types used to express the result.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rescue_core::{
    EndpointUri, GraphName, MasterState, NodeRecord, ParamKey, ParamTree, ParamValue, ServiceRecord, TopicRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Pub,
    Sub,
}

#[derive(Debug, Clone)]
pub enum Event {
    Register { kind: Kind, node: String, port: u16, topic: String, datatype: String },
    Unregister { kind: Kind, node: String, port: u16, topic: String },
    RegisterService { node: String, port: u16, service: String, service_port: u16 },
    UnregisterService { node: String, service: String, service_port: u16 },
    SetParam { key: String, value: ParamValue },
    DeleteParam { key: String },
}

pub fn uri(port: u16) -> String {
    format!("http://localhost:{port}/")
}

pub fn service_uri(port: u16) -> String {
    format!("rosrpc://localhost:{port}")
}

/// Draws a random event from small name pools so that collisions,
/// supersessions and no-op unregistrations are frequent. `below(n)` must
/// return a uniform value in `0..n`.
pub fn random_event(below: &mut impl FnMut(u32) -> u32) -> Event {
    const NODES: u32 = 6;
    const TOPICS: u32 = 4;
    const SERVICES: u32 = 3;
    const TYPES: [&str; 3] = ["a/A", "b/B", "*"];
    let node = format!("/n{}", below(NODES));
    // mostly a node's home port; sometimes a different one
    let home = 20_000 + 10 * node[2..].parse::<u16>().unwrap();
    let port = if below(8) == 0 { home + 1 } else { home };
    let topic = format!("/t{}", below(TOPICS));
    let service = format!("/s{}", below(SERVICES));
    let service_port = 30_000 + below(2) as u16;
    match below(12) {
        0..=2 => Event::Register {
            kind: Kind::Pub,
            node,
            port,
            topic,
            datatype: TYPES[below(2) as usize].into(),
        },
        3..=5 => Event::Register {
            kind: Kind::Sub,
            node,
            port,
            topic,
            datatype: TYPES[below(3) as usize].into(),
        },
        6 => Event::Unregister { kind: Kind::Pub, node, port, topic },
        7 => Event::Unregister { kind: Kind::Sub, node, port, topic },
        8 => Event::RegisterService { node, port, service, service_port },
        9 => Event::UnregisterService { node, service, service_port },
        10 => Event::SetParam {
            key: random_key(below),
            value: random_value(below, 2),
        },
        _ => Event::DeleteParam { key: random_key(below) },
    }
}

fn random_key(below: &mut impl FnMut(u32) -> u32) -> String {
    const KEYS: [&str; 6] = ["/p", "/p/q", "/p/r", "/x/y/z", "/x/y", "/w"];
    KEYS[below(KEYS.len() as u32) as usize].to_string()
}

fn random_value(below: &mut impl FnMut(u32) -> u32, depth: u32) -> ParamValue {
    match below(if depth == 0 { 4 } else { 5 }) {
        0 => ParamValue::Bool(below(2) == 1),
        1 => ParamValue::Int(below(1000) as i32 - 500),
        2 => ParamValue::Double(below(1000) as f64 / 8.0),
        3 => ParamValue::Str(format!("v{}", below(10))),
        _ => {
            let len = 1 + below(2);
            ParamValue::Map(
                (0..len)
                    .map(|_| (format!("k{}", below(3)), random_value(below, depth - 1)))
                    .collect(),
            )
        }
    }
}

/// Applies `event` to the real registry. Returns the caller-visible value.
pub fn apply(state: &mut MasterState, event: &Event) -> i64 {
    let g = |s: &str| GraphName::new(s).unwrap();
    let e = |s: &str| EndpointUri::new(s).unwrap();
    match event {
        Event::Register { kind, node, port, topic, datatype } => {
            let r = match kind {
                Kind::Pub => state.register_publisher(&g(node), &e(&uri(*port)), &g(topic), datatype),
                Kind::Sub => state.register_subscriber(&g(node), &e(&uri(*port)), &g(topic), datatype),
            };
            match r {
                Ok(out) => out.value.len() as i64,
                Err(_) => -1,
            }
        }
        Event::Unregister { kind, node, port, topic } => {
            let out = match kind {
                Kind::Pub => state.unregister_publisher(&g(node), &e(&uri(*port)), &g(topic)),
                Kind::Sub => state.unregister_subscriber(&g(node), &e(&uri(*port)), &g(topic)),
            };
            out.value as i64
        }
        Event::RegisterService { node, port, service, service_port } => {
            state
                .register_service(&g(node), &e(&uri(*port)), &g(service), &e(&service_uri(*service_port)))
                .value as i64
        }
        Event::UnregisterService { node, service, service_port } => {
            state
                .unregister_service(&g(node), &g(service), &e(&service_uri(*service_port)))
                .value as i64
        }
        Event::SetParam { key, value } => match state.set_param(&ParamKey::new(key.as_str()).unwrap(), value.clone()) {
            Ok(()) => 1,
            Err(_) => -1,
        },
        Event::DeleteParam { key } => match state.delete_param(&ParamKey::new(key.as_str()).unwrap()) {
            Ok(()) => 1,
            Err(_) => 0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Reg {
    Topic { kind: Kind, node: String, topic: String },
    Service { node: String, service: String, service_port: u16 },
}

impl Reg {
    fn node(&self) -> &str {
        match self {
            Reg::Topic { node, .. } | Reg::Service { node, .. } => node,
        }
    }

    fn topic(&self) -> Option<&str> {
        match self {
            Reg::Topic { topic, .. } => Some(topic),
            Reg::Service { .. } => None,
        }
    }
}

/// Flat-list bookkeeper.
#[derive(Debug, Default, Clone)]
pub struct Bookkeeper {
    nodes: Vec<(String, u16)>,
    regs: Vec<Reg>,
    types: Vec<(String, String)>,
    /// (path segments, scalar) for every leaf parameter
    leaves: Vec<(Vec<String>, ParamValue)>,
}

impl Bookkeeper {
    fn node_port(&self, node: &str) -> Option<u16> {
        self.nodes.iter().find(|(n, _)| n == node).map(|(_, p)| *p)
    }

    fn drop_node(&mut self, node: &str) {
        self.regs.retain(|r| r.node() != node);
        self.nodes.retain(|(n, _)| n != node);
        self.drop_unused_types();
    }

    fn drop_unused_types(&mut self) {
        let regs = self.regs.clone();
        self.types.retain(|(t, _)| regs.iter().any(|r| r.topic() == Some(t.as_str())));
    }

    fn prune(&mut self, node: &str) {
        if !self.regs.iter().any(|r| r.node() == node) {
            self.nodes.retain(|(n, _)| n != node);
        }
    }

    fn adopt(&mut self, node: &str, port: u16) {
        match self.node_port(node) {
            Some(p) if p == port => {}
            Some(_) => {
                self.drop_node(node);
                self.nodes.push((node.to_string(), port));
            }
            None => self.nodes.push((node.to_string(), port)),
        }
    }

    fn count(&self, kind: Kind, topic: &str) -> i64 {
        self.regs
            .iter()
            .filter(|r| matches!(r, Reg::Topic { kind: k, topic: t, .. } if *k == kind && t == topic))
            .count() as i64
    }

    pub fn apply(&mut self, event: &Event) -> i64 {
        match event {
            Event::Register { kind, node, port, topic, datatype } => {
                if *kind == Kind::Pub && datatype == "*" {
                    return -1;
                }
                self.adopt(node, *port);
                let reg = Reg::Topic { kind: *kind, node: node.clone(), topic: topic.clone() };
                if !self.regs.contains(&reg) {
                    self.regs.push(reg);
                }
                match self.types.iter_mut().find(|(t, _)| t == topic) {
                    None => self.types.push((topic.clone(), datatype.clone())),
                    Some((_, ty)) if ty == "*" && datatype != "*" => *ty = datatype.clone(),
                    Some(_) => {}
                }
                let other = if *kind == Kind::Pub { Kind::Sub } else { Kind::Pub };
                self.count(other, topic)
            }
            Event::Unregister { kind, node, port, topic } => {
                let reg = Reg::Topic { kind: *kind, node: node.clone(), topic: topic.clone() };
                if self.node_port(node) != Some(*port) || !self.regs.contains(&reg) {
                    return 0;
                }
                self.regs.retain(|r| *r != reg);
                self.drop_unused_types();
                self.prune(node);
                1
            }
            Event::RegisterService { node, port, service, service_port } => {
                self.adopt(node, *port);
                let previous: Vec<String> = self
                    .regs
                    .iter()
                    .filter(|r| matches!(r, Reg::Service { service: s, .. } if s == service))
                    .map(|r| r.node().to_string())
                    .collect();
                self.regs.retain(|r| !matches!(r, Reg::Service { service: s, .. } if s == service));
                self.regs.push(Reg::Service {
                    node: node.clone(),
                    service: service.clone(),
                    service_port: *service_port,
                });
                for p in previous {
                    self.prune(&p);
                }
                1
            }
            Event::UnregisterService { node, service, service_port } => {
                let reg = Reg::Service { node: node.clone(), service: service.clone(), service_port: *service_port };
                if !self.regs.contains(&reg) {
                    return 0;
                }
                self.regs.retain(|r| *r != reg);
                self.prune(node);
                1
            }
            Event::SetParam { key, value } => {
                let path = split(key);
                self.leaves.retain(|(p, _)| !(p.starts_with(&path) || path.starts_with(p)));
                flatten(&path, value, &mut self.leaves);
                1
            }
            Event::DeleteParam { key } => {
                let path = split(key);
                let before = self.leaves.len();
                self.leaves.retain(|(p, _)| !p.starts_with(&path));
                i64::from(self.leaves.len() != before)
            }
        }
    }

    /// The registry state implied by the flat lists.
    pub fn to_state(&self) -> MasterState {
        let g = |s: &str| GraphName::new(s).unwrap();
        let nodes = self.nodes.iter().map(|(n, p)| NodeRecord {
            name: g(n),
            api_uri: EndpointUri::new(uri(*p)).unwrap(),
        });
        let mut topics: BTreeMap<String, TopicRecord> = BTreeMap::new();
        let mut services = Vec::new();
        for reg in &self.regs {
            match reg {
                Reg::Topic { kind, node, topic } => {
                    let datatype = self.types.iter().find(|(t, _)| t == topic).unwrap().1.clone();
                    let record = topics.entry(topic.clone()).or_insert_with(|| TopicRecord {
                        name: g(topic),
                        datatype,
                        publishers: BTreeSet::new(),
                        subscribers: BTreeSet::new(),
                    });
                    match kind {
                        Kind::Pub => record.publishers.insert(g(node)),
                        Kind::Sub => record.subscribers.insert(g(node)),
                    };
                }
                Reg::Service { node, service, service_port } => services.push(ServiceRecord {
                    name: g(service),
                    provider: g(node),
                    service_uri: EndpointUri::new(service_uri(*service_port)).unwrap(),
                    provider_api_uri: EndpointUri::new(uri(self.node_port(node).unwrap())).unwrap(),
                }),
            }
        }
        MasterState::from_parts(nodes, topics.into_values(), services, unflatten(&self.leaves))
            .expect("bookkeeper produced an invalid state")
    }
}

fn split(key: &str) -> Vec<String> {
    key.split('/').filter(|s| !s.is_empty()).map(String::from).collect()
}

fn flatten(prefix: &[String], value: &ParamValue, out: &mut Vec<(Vec<String>, ParamValue)>) {
    match value {
        ParamValue::Map(map) => {
            for (k, v) in map {
                let mut path = prefix.to_vec();
                path.push(k.clone());
                flatten(&path, v, out);
            }
        }
        scalar => out.push((prefix.to_vec(), scalar.clone())),
    }
}

fn unflatten(leaves: &[(Vec<String>, ParamValue)]) -> ParamTree {
    let mut root = BTreeMap::new();
    for (path, value) in leaves {
        let mut map = &mut root;
        let (last, interior) = path.split_last().unwrap();
        for seg in interior {
            let ParamValue::Map(next) = map
                .entry(seg.clone())
                .or_insert_with(|| ParamValue::Map(BTreeMap::new()))
            else {
                panic!("leaf on interior path")
            };
            map = next;
        }
        map.insert(last.clone(), value.clone());
    }
    ParamTree::from_map(root)
}
