use alloc::string::String;
use core::fmt;

/// Rejected input: a malformed name, URI, key or datatype.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationError {
    GraphName { name: String, reason: &'static str },
    Uri { uri: String, reason: &'static str },
    ParamKey { key: String, reason: &'static str },
    Datatype { datatype: String, reason: &'static str },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationError::GraphName { name, reason } => {
                write!(f, "invalid graph name {name:?}: {reason}")
            }
            ValidationError::Uri { uri, reason } => write!(f, "invalid uri {uri:?}: {reason}"),
            ValidationError::ParamKey { key, reason } => {
                write!(f, "invalid parameter key {key:?}: {reason}")
            }
            ValidationError::Datatype { datatype, reason } => {
                write!(f, "invalid datatype {datatype:?}: {reason}")
            }
        }
    }
}

/// Lookup misses. Carried back to callers as a failure code, never a panic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NotFound {
    Node(String),
    Service(String),
    Param(String),
}

impl fmt::Display for NotFound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotFound::Node(name) => write!(f, "unknown node {name}"),
            NotFound::Service(name) => write!(f, "no provider for service {name}"),
            NotFound::Param(key) => write!(f, "parameter {key} is not set"),
        }
    }
}

/// A state assembled from external parts (e.g. a checkpoint) that breaks a
/// registry invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvariantViolation {
    DanglingNode { owner: String, node: String },
    OrphanNode(String),
    EmptyTopic(String),
    EmptyDatatype(String),
    DuplicateRole { topic: String, node: String },
    WildcardPublisherType(String),
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvariantViolation::DanglingNode { owner, node } => {
                write!(f, "{owner} references node {node} which is not registered")
            }
            InvariantViolation::OrphanNode(node) => {
                write!(f, "node {node} has no registrations")
            }
            InvariantViolation::EmptyTopic(topic) => {
                write!(f, "topic {topic} has neither publishers nor subscribers")
            }
            InvariantViolation::EmptyDatatype(topic) => write!(f, "topic {topic} has an empty type"),
            InvariantViolation::DuplicateRole { topic, node } => {
                write!(f, "topic {topic} lists node {node} more than once in one role")
            }
            InvariantViolation::WildcardPublisherType(topic) => {
                write!(f, "topic {topic} has publishers but wildcard type '*'")
            }
        }
    }
}

impl core::error::Error for ValidationError {}
impl core::error::Error for NotFound {}
impl core::error::Error for InvariantViolation {}
