//! Validated graph resource names and endpoint URIs.

use alloc::string::{String, ToString};
use core::fmt;

use crate::error::ValidationError;

/// A slash-separated graph resource name such as `/talker` or `/ns/chatter`.
///
/// Always absolute, never empty, never contains whitespace or empty segments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GraphName(String);

impl GraphName {
    pub fn new(value: impl Into<String>) -> Result<Self, ValidationError> {
        let value = value.into();
        validate_graph_name(&value)?;
        Ok(GraphName(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Path segments without the leading slash.
    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0[1..].split('/')
    }
}

fn validate_graph_name(value: &str) -> Result<(), ValidationError> {
    let invalid = |reason: &'static str| ValidationError::GraphName {
        name: value.to_string(),
        reason,
    };
    if value.is_empty() {
        return Err(invalid("empty"));
    }
    if !value.starts_with('/') {
        return Err(invalid("must begin with '/'"));
    }
    if value.chars().any(char::is_whitespace) {
        return Err(invalid("contains whitespace"));
    }
    if value[1..].split('/').any(str::is_empty) {
        return Err(invalid("empty segment"));
    }
    Ok(())
}

impl fmt::Display for GraphName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for GraphName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl core::str::FromStr for GraphName {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GraphName::new(s)
    }
}

/// Schemes accepted for endpoint URIs. Node APIs are `http`, service
/// endpoints conventionally use `rosrpc`.
const SCHEMES: [&str; 2] = ["http", "rosrpc"];

/// An absolute endpoint URI with an explicit host and port, e.g.
/// `http://host:11311/`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndpointUri {
    raw: String,
    host_start: usize,
    host_end: usize,
    port: u16,
}

impl EndpointUri {
    pub fn new(value: impl Into<String>) -> Result<Self, ValidationError> {
        let raw = value.into();
        let invalid = |reason: &'static str| ValidationError::Uri {
            uri: raw.clone(),
            reason,
        };
        if raw.chars().any(char::is_whitespace) {
            return Err(invalid("contains whitespace"));
        }
        let (scheme, rest) = raw.split_once("://").ok_or_else(|| invalid("missing scheme"))?;
        if !SCHEMES.contains(&scheme) {
            return Err(invalid("unsupported scheme"));
        }
        let authority_end = rest.find('/').unwrap_or(rest.len());
        let authority = &rest[..authority_end];
        if authority.contains('@') {
            return Err(invalid("userinfo not allowed"));
        }
        let colon = authority.rfind(':').ok_or_else(|| invalid("missing port"))?;
        let host = &authority[..colon];
        let port = &authority[colon + 1..];
        if host.is_empty() {
            return Err(invalid("missing host"));
        }
        if port.is_empty() || !port.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid("port is not a number"));
        }
        let port: u16 = port.parse().map_err(|_| invalid("port out of range"))?;
        if port == 0 {
            return Err(invalid("port out of range"));
        }
        let host_start = scheme.len() + 3;
        Ok(EndpointUri {
            host_start,
            host_end: host_start + host.len(),
            port,
            raw,
        })
    }

    /// Builds `http://host:port/`.
    pub fn http(host: &str, port: u16) -> Result<Self, ValidationError> {
        EndpointUri::new(alloc::format!("http://{host}:{port}/"))
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn scheme(&self) -> &str {
        &self.raw[..self.host_start - 3]
    }

    pub fn host(&self) -> &str {
        &self.raw[self.host_start..self.host_end]
    }

    pub fn port(&self) -> u16 {
        self.port
    }
}

impl fmt::Display for EndpointUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl core::str::FromStr for EndpointUri {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EndpointUri::new(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_names() {
        for ok in ["/talker", "/chatter", "/a/b/c", "/with_under-score.1"] {
            assert!(GraphName::new(ok).is_ok(), "{ok}");
        }
        for bad in ["", "talker", "/", "//x", "/a//b", "/a/", "/has space", "/tab\t"] {
            assert!(GraphName::new(bad).is_err(), "{bad:?}");
        }
        let name = GraphName::new("/a/b").unwrap();
        assert_eq!(name.segments().collect::<alloc::vec::Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn endpoint_uris() {
        let uri = EndpointUri::new("http://localhost:11311/").unwrap();
        assert_eq!(uri.host(), "localhost");
        assert_eq!(uri.port(), 11311);
        assert_eq!(uri.scheme(), "http");
        assert!(EndpointUri::new("http://10.0.0.2:5000").is_ok());
        assert!(EndpointUri::new("rosrpc://robot:4455").is_ok());
        for bad in [
            "",
            "localhost:11311",
            "ftp://host:21/",
            "http://:80/",
            "http://host/",
            "http://host:0/",
            "http://host:65536/",
            "http://host:12a/",
            "http://u@host:1/",
            "http://host:1/ x",
        ] {
            assert!(EndpointUri::new(bad).is_err(), "{bad:?}");
        }
        assert_eq!(EndpointUri::http("h", 1).unwrap().as_str(), "http://h:1/");
    }
}
