//! The parameter server's global dictionary.
//!
//! Keys are absolute slash paths. `/` addresses the whole tree. A path holds
//! either a scalar leaf or an interior map, never both.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{NotFound, ValidationError};

/// A parameter value. Maps nest arbitrarily.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Bool(bool),
    Int(i32),
    Double(f64),
    Str(String),
    Map(BTreeMap<String, ParamValue>),
}

impl ParamValue {
    pub fn is_map(&self) -> bool {
        matches!(self, ParamValue::Map(_))
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl From<i32> for ParamValue {
    fn from(v: i32) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Double(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Str(v)
    }
}

/// An absolute parameter path; `/` is the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamKey(String);

impl ParamKey {
    pub fn new(key: impl Into<String>) -> Result<Self, ValidationError> {
        let key = key.into();
        let invalid = |reason| ValidationError::ParamKey {
            key: key.clone(),
            reason,
        };
        if !key.starts_with('/') {
            return Err(invalid("must begin with '/'"));
        }
        if key.chars().any(char::is_whitespace) {
            return Err(invalid("contains whitespace"));
        }
        if key != "/" && key[1..].split('/').any(str::is_empty) {
            return Err(invalid("empty segment"));
        }
        Ok(ParamKey(key))
    }

    pub fn root() -> Self {
        ParamKey("/".into())
    }

    pub fn is_root(&self) -> bool {
        self.0 == "/"
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn segments(&self) -> impl Iterator<Item = &str> {
        self.0[1..].split('/').filter(|s| !s.is_empty())
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamError {
    NotFound(NotFound),
    Invalid(ValidationError),
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamError::NotFound(e) => e.fmt(f),
            ParamError::Invalid(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for ParamError {}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTree {
    root: BTreeMap<String, ParamValue>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(root: BTreeMap<String, ParamValue>) -> Self {
        ParamTree { root }
    }

    pub fn as_map(&self) -> &BTreeMap<String, ParamValue> {
        &self.root
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_empty()
    }

    /// Stores `value` at `key`, creating interior maps as needed and
    /// replacing any scalar that sits on the path. Returns whether the tree
    /// changed.
    pub fn set(&mut self, key: &ParamKey, value: ParamValue) -> Result<bool, ParamError> {
        if key.is_root() {
            let ParamValue::Map(map) = value else {
                return Err(ParamError::Invalid(ValidationError::ParamKey {
                    key: key.to_string(),
                    reason: "the root can only be set to a map",
                }));
            };
            let changed = self.root != map;
            self.root = map;
            return Ok(changed);
        }
        let segments: Vec<&str> = key.segments().collect();
        let (last, interior) = segments.split_last().expect("non-root key has a segment");
        let mut node = &mut self.root;
        for segment in interior {
            let slot = node
                .entry((*segment).to_string())
                .or_insert_with(|| ParamValue::Map(BTreeMap::new()));
            if !slot.is_map() {
                *slot = ParamValue::Map(BTreeMap::new());
            }
            let ParamValue::Map(next) = slot else { unreachable!() };
            node = next;
        }
        let previous = node.insert((*last).to_string(), value.clone());
        Ok(previous.as_ref() != Some(&value))
    }

    pub fn get(&self, key: &ParamKey) -> Result<ParamValue, ParamError> {
        if key.is_root() {
            return Ok(ParamValue::Map(self.root.clone()));
        }
        self.lookup(key)
            .cloned()
            .ok_or_else(|| ParamError::NotFound(NotFound::Param(key.to_string())))
    }

    pub fn has(&self, key: &ParamKey) -> bool {
        key.is_root() || self.lookup(key).is_some()
    }

    fn lookup(&self, key: &ParamKey) -> Option<&ParamValue> {
        let mut segments = key.segments();
        let mut current = self.root.get(segments.next()?)?;
        for segment in segments {
            match current {
                ParamValue::Map(map) => current = map.get(segment)?,
                _ => return None,
            }
        }
        Some(current)
    }

    /// Removes `key` and prunes interior maps left empty by the removal.
    pub fn delete(&mut self, key: &ParamKey) -> Result<(), ParamError> {
        if key.is_root() {
            return Err(ParamError::Invalid(ValidationError::ParamKey {
                key: key.to_string(),
                reason: "the root cannot be deleted",
            }));
        }
        let segments: Vec<&str> = key.segments().collect();
        if remove_path(&mut self.root, &segments) {
            Ok(())
        } else {
            Err(ParamError::NotFound(NotFound::Param(key.to_string())))
        }
    }

    /// Full names of all leaf values, sorted.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_names(&self.root, "", &mut out);
        out
    }
}

fn remove_path(map: &mut BTreeMap<String, ParamValue>, segments: &[&str]) -> bool {
    match segments {
        [] => false,
        [leaf] => map.remove(*leaf).is_some(),
        [head, rest @ ..] => {
            let Some(ParamValue::Map(child)) = map.get_mut(*head) else {
                return false;
            };
            let removed = remove_path(child, rest);
            if removed && child.is_empty() {
                map.remove(*head);
            }
            removed
        }
    }
}

fn collect_names(map: &BTreeMap<String, ParamValue>, prefix: &str, out: &mut Vec<String>) {
    for (segment, value) in map {
        let name = alloc::format!("{prefix}/{segment}");
        match value {
            ParamValue::Map(child) => collect_names(child, &name, out),
            _ => out.push(name),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn key(k: &str) -> ParamKey {
        ParamKey::new(k).unwrap()
    }

    fn map(entries: &[(&str, ParamValue)]) -> ParamValue {
        ParamValue::Map(entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
    }

    #[test]
    fn set_then_get() {
        let mut tree = ParamTree::new();
        assert!(tree.set(&key("/a/b"), 1.into()).unwrap());
        assert_eq!(tree.get(&key("/a/b")).unwrap(), ParamValue::Int(1));
        assert_eq!(tree.get(&key("/a")).unwrap(), map(&[("b", 1.into())]));
        assert!(!tree.set(&key("/a/b"), 1.into()).unwrap());
    }

    #[test]
    fn map_value_names_are_sorted_leaves() {
        let mut tree = ParamTree::new();
        tree.set(&key("/a"), map(&[("c", 2.into()), ("b", 1.into())])).unwrap();
        assert_eq!(tree.names(), vec!["/a/b".to_string(), "/a/c".to_string()]);
    }

    #[test]
    fn missing_keys() {
        let mut tree = ParamTree::new();
        assert!(!tree.has(&key("/missing")));
        assert!(matches!(tree.get(&key("/missing")), Err(ParamError::NotFound(_))));
        assert!(matches!(tree.delete(&key("/missing")), Err(ParamError::NotFound(_))));
        tree.set(&key("/a"), 1.into()).unwrap();
        assert!(!tree.has(&key("/a/b")));
    }

    #[test]
    fn scalar_on_path_is_replaced_by_map() {
        let mut tree = ParamTree::new();
        tree.set(&key("/a"), "x".into()).unwrap();
        tree.set(&key("/a/b"), true.into()).unwrap();
        assert_eq!(tree.get(&key("/a")).unwrap(), map(&[("b", true.into())]));
        tree.set(&key("/a"), 2.5.into()).unwrap();
        assert_eq!(tree.names(), vec!["/a".to_string()]);
    }

    #[test]
    fn delete_prunes_empty_interiors() {
        let mut tree = ParamTree::new();
        tree.set(&key("/a/b/c"), 1.into()).unwrap();
        tree.set(&key("/x"), 1.into()).unwrap();
        tree.delete(&key("/a/b/c")).unwrap();
        assert!(!tree.has(&key("/a")));
        assert_eq!(tree.names(), vec!["/x".to_string()]);
    }

    #[test]
    fn root_handling() {
        let mut tree = ParamTree::new();
        tree.set(&key("/"), map(&[("k", "v".into())])).unwrap();
        assert!(tree.has(&ParamKey::root()));
        assert_eq!(tree.get(&ParamKey::root()).unwrap(), map(&[("k", "v".into())]));
        assert!(matches!(tree.set(&ParamKey::root(), 1.into()), Err(ParamError::Invalid(_))));
        assert!(matches!(tree.delete(&ParamKey::root()), Err(ParamError::Invalid(_))));
    }

    #[test]
    fn key_validation() {
        assert!(ParamKey::new("/").is_ok());
        assert!(ParamKey::new("/a/b").is_ok());
        for bad in ["", "a", "/a//b", "/a/", "/a b"] {
            assert!(ParamKey::new(bad).is_err(), "{bad:?}");
        }
    }
}
