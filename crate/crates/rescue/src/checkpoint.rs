//! The YAML checkpoint: schema, (de)serialization and two-stage commit.
//!
//! A checkpoint is the complete registry state, not an operation log. The
//! file layout is:
//!
//! ```yaml
//! schema_version: 1
//! nodes:
//!   /listener: http://localhost:40001/
//!   /talker: http://localhost:40000/
//! topics:
//!   /chatter:
//!     type: std_msgs/String
//!     publishers:
//!     - /talker
//!     subscribers:
//!     - /listener
//! services: {}
//! params: {}
//! ...
//! ```
//!
//! The closing `...` document-end marker is mandatory; a file without it is
//! treated as truncated.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::ops::ControlFlow;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use rescue_core::{
    EndpointUri, GraphName, InvariantViolation, MasterState, NodeRecord, ParamTree, ParamValue, ServiceRecord,
    TopicRecord, ValidationError,
};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

pub const SCHEMA_VERSION: u64 = 1;

/// Permission bits of a committed checkpoint.
pub const CHECKPOINT_MODE: u32 = 0o655;

const DOCUMENT_END: &str = "...\n";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint is truncated (missing document end marker)")]
    Truncated,
    #[error("malformed checkpoint yaml: {0}")]
    Yaml(String),
    #[error("checkpoint has no schema_version")]
    MissingVersion,
    #[error("unsupported checkpoint schema_version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion(String),
    #[error("invalid checkpoint entry: {0}")]
    Invalid(#[from] ValidationError),
    #[error("checkpoint violates a registry invariant: {0}")]
    Invariant(#[from] InvariantViolation),
    #[error("invalid parameter {key}: {reason}")]
    Param { key: String, reason: String },
    #[error("checkpoint i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Read side of the schema.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[allow(dead_code)] // checked before typed decoding
    schema_version: u64,
    nodes: BTreeMap<String, String>,
    topics: BTreeMap<String, TopicEntry>,
    services: BTreeMap<String, ServiceEntry>,
    params: BTreeMap<String, serde_yaml::Value>,
}

/// Write side of the schema; field order is the on-disk order.
#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u64,
    nodes: BTreeMap<String, String>,
    topics: BTreeMap<String, TopicEntry>,
    services: BTreeMap<String, ServiceEntry>,
    params: ParamMap<'a>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopicEntry {
    #[serde(rename = "type")]
    datatype: String,
    publishers: Vec<String>,
    subscribers: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceEntry {
    node: String,
    service_uri: String,
    node_uri: String,
}

struct ParamMap<'a>(&'a BTreeMap<String, ParamValue>);

impl Serialize for ParamMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            map.serialize_entry(k, &ParamLeaf(v))?;
        }
        map.end()
    }
}

struct ParamLeaf<'a>(&'a ParamValue);

impl Serialize for ParamLeaf<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            ParamValue::Bool(b) => s.serialize_bool(*b),
            ParamValue::Int(i) => s.serialize_i32(*i),
            ParamValue::Double(d) => s.serialize_f64(*d),
            ParamValue::Str(v) => s.serialize_str(v),
            ParamValue::Map(m) => ParamMap(m).serialize(s),
        }
    }
}

/// Renders `state` as checkpoint text. Equal states give identical bytes.
pub fn serialize(state: &MasterState) -> String {
    let doc = DocumentOut {
        schema_version: SCHEMA_VERSION,
        nodes: state
            .nodes()
            .map(|n| (n.name.to_string(), n.api_uri.to_string()))
            .collect(),
        topics: state
            .topics()
            .map(|t| {
                (
                    t.name.to_string(),
                    TopicEntry {
                        datatype: t.datatype.clone(),
                        publishers: t.publishers.iter().map(ToString::to_string).collect(),
                        subscribers: t.subscribers.iter().map(ToString::to_string).collect(),
                    },
                )
            })
            .collect(),
        services: state
            .services()
            .map(|s| {
                (
                    s.name.to_string(),
                    ServiceEntry {
                        node: s.provider.to_string(),
                        service_uri: s.service_uri.to_string(),
                        node_uri: s.provider_api_uri.to_string(),
                    },
                )
            })
            .collect(),
        params: ParamMap(state.params().as_map()),
    };
    let mut text = serde_yaml::to_string(&doc).expect("checkpoint document always serializes");
    text.push_str(DOCUMENT_END);
    text
}

/// Parses checkpoint text back into a registry state, validating every name,
/// URI and registry invariant. Never returns a partial state.
pub fn deserialize(text: &str) -> Result<MasterState, CheckpointError> {
    if !(text.ends_with(&format!("\n{DOCUMENT_END}")) || text == DOCUMENT_END) {
        return Err(CheckpointError::Truncated);
    }
    let raw: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| CheckpointError::Yaml(e.to_string()))?;
    match raw.get("schema_version") {
        None => return Err(CheckpointError::MissingVersion),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => {
            let shown = serde_yaml::to_string(v).unwrap_or_default();
            return Err(CheckpointError::UnsupportedVersion(shown.trim().to_string()));
        }
    }
    let doc: Document = serde_yaml::from_value(raw).map_err(|e| CheckpointError::Yaml(e.to_string()))?;

    let nodes = doc
        .nodes
        .iter()
        .map(|(name, uri)| {
            Ok(NodeRecord {
                name: GraphName::new(name.as_str())?,
                api_uri: EndpointUri::new(uri.as_str())?,
            })
        })
        .collect::<Result<Vec<_>, ValidationError>>()?;
    let mut topics = Vec::with_capacity(doc.topics.len());
    for (name, entry) in &doc.topics {
        let names = |list: &[String]| -> Result<_, CheckpointError> {
            let set: std::collections::BTreeSet<GraphName> =
                list.iter().map(|n| GraphName::new(n.as_str())).collect::<Result<_, _>>()?;
            if set.len() != list.len() {
                return Err(InvariantViolation::DuplicateRole {
                    topic: name.clone(),
                    node: list.join(","),
                }
                .into());
            }
            Ok(set)
        };
        topics.push(TopicRecord {
            name: GraphName::new(name.as_str())?,
            datatype: entry.datatype.clone(),
            publishers: names(&entry.publishers)?,
            subscribers: names(&entry.subscribers)?,
        });
    }
    let services = doc
        .services
        .iter()
        .map(|(name, entry)| {
            Ok(ServiceRecord {
                name: GraphName::new(name.as_str())?,
                provider: GraphName::new(entry.node.as_str())?,
                service_uri: EndpointUri::new(entry.service_uri.as_str())?,
                provider_api_uri: EndpointUri::new(entry.node_uri.as_str())?,
            })
        })
        .collect::<Result<Vec<_>, ValidationError>>()?;
    let params = doc
        .params
        .iter()
        .map(|(k, v)| Ok((k.clone(), param_from_yaml(&format!("/{k}"), v)?)))
        .collect::<Result<BTreeMap<_, _>, CheckpointError>>()?;

    Ok(MasterState::from_parts(nodes, topics, services, ParamTree::from_map(params))?)
}

fn param_from_yaml(key: &str, value: &serde_yaml::Value) -> Result<ParamValue, CheckpointError> {
    use serde_yaml::Value as Y;
    let bad = |reason: &str| CheckpointError::Param {
        key: key.to_string(),
        reason: reason.to_string(),
    };
    if key[1..].split('/').any(|s| s.is_empty() || s.chars().any(char::is_whitespace)) {
        return Err(bad("invalid key segment"));
    }
    Ok(match value {
        Y::Bool(b) => ParamValue::Bool(*b),
        Y::Number(n) => match n.as_i64() {
            Some(i) => ParamValue::Int(i32::try_from(i).map_err(|_| bad("integer out of 32-bit range"))?),
            None => ParamValue::Double(n.as_f64().ok_or_else(|| bad("unrepresentable number"))?),
        },
        Y::String(s) => ParamValue::Str(s.clone()),
        Y::Mapping(m) => {
            let mut out = BTreeMap::new();
            for (k, v) in m {
                let Y::String(k) = k else {
                    return Err(bad("non-string key"));
                };
                out.insert(k.clone(), param_from_yaml(&format!("{key}/{k}"), v)?);
            }
            ParamValue::Map(out)
        }
        Y::Null => return Err(bad("null value")),
        Y::Sequence(_) => return Err(bad("lists are not supported")),
        Y::Tagged(_) => return Err(bad("tagged values are not supported")),
    })
}

/// Points in [`commit_with`] at which the hook is consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitStage {
    /// The temporary file exists and is empty.
    TempCreated,
    /// `written` of `total` bytes are in the temporary file.
    Wrote { written: usize, total: usize },
    /// The temporary file is complete and synced; the rename is next.
    BeforeRename,
    /// The rename happened; the directory sync is next.
    Renamed,
}

/// Observes commit progress. Returning `Break` abandons the commit at that
/// point, leaving the files exactly as they are (a simulated crash).
pub trait CommitHook: Send + Sync {
    fn at(&self, stage: CommitStage) -> ControlFlow<()>;
}

/// A hook that never interrupts.
pub struct NoHook;

impl CommitHook for NoHook {
    fn at(&self, _: CommitStage) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommitError {
    #[error("commit interrupted at {0:?}")]
    Interrupted(CommitStage),
    #[error("commit of {path} failed: {source}")]
    Io { path: PathBuf, source: io::Error },
}

const WRITE_CHUNK: usize = 512;

pub fn temp_path(final_path: &Path) -> PathBuf {
    let mut name = final_path.as_os_str().to_owned();
    name.push(".tmp");
    PathBuf::from(name)
}

/// Two-stage commit: write `final_path.tmp`, sync it, rename it over
/// `final_path`, sync the directory. On any failure `final_path` is left
/// untouched.
pub fn commit(text: &str, final_path: &Path) -> Result<(), CommitError> {
    commit_with(text, final_path, &NoHook)
}

pub fn commit_with(text: &str, final_path: &Path, hook: &dyn CommitHook) -> Result<(), CommitError> {
    let tmp = temp_path(final_path);
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CommitError::Io { path, source }
    };
    let check = |stage| match hook.at(stage) {
        ControlFlow::Continue(()) => Ok(()),
        ControlFlow::Break(()) => Err(CommitError::Interrupted(stage)),
    };

    let mut file: File = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(&tmp)
        .map_err(io_err(&tmp))?;
    file.set_permissions(fs::Permissions::from_mode(CHECKPOINT_MODE))
        .map_err(io_err(&tmp))?;
    check(CommitStage::TempCreated)?;
    let bytes = text.as_bytes();
    let mut written = 0;
    for chunk in bytes.chunks(WRITE_CHUNK) {
        file.write_all(chunk).map_err(io_err(&tmp))?;
        written += chunk.len();
        check(CommitStage::Wrote {
            written,
            total: bytes.len(),
        })?;
    }
    file.sync_all().map_err(io_err(&tmp))?;
    drop(file);
    check(CommitStage::BeforeRename)?;
    fs::rename(&tmp, final_path).map_err(io_err(final_path))?;
    check(CommitStage::Renamed)?;
    let dir = final_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    File::open(dir).and_then(|d| d.sync_all()).map_err(io_err(dir))?;
    Ok(())
}

/// Reads and parses the checkpoint at `path`. `Ok(None)` when no file
/// exists yet.
pub fn load(path: &Path) -> Result<Option<MasterState>, CheckpointError> {
    match fs::read_to_string(path) {
        Ok(text) => deserialize(&text).map(Some),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}
