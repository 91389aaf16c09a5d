//! Minimal XML-RPC value model and codec.
//!
//! Covers the types the master API needs: `int`/`i4`, `boolean`, `string`,
//! `double`, `array` and `struct`. Untyped `<value>` text is a string.
//! `base64` and `dateTime.iso8601` are decoded as their raw text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rescue_core::ParamValue;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i32),
    Bool(bool),
    Str(String),
    Double(f64),
    Array(Vec<Value>),
    Struct(BTreeMap<String, Value>),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i32> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i32> for Value {
    fn from(i: i32) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl<T: Into<Value>> From<Vec<T>> for Value {
    fn from(items: Vec<T>) -> Self {
        Value::Array(items.into_iter().map(Into::into).collect())
    }
}

impl From<&ParamValue> for Value {
    fn from(p: &ParamValue) -> Self {
        match p {
            ParamValue::Bool(b) => Value::Bool(*b),
            ParamValue::Int(i) => Value::Int(*i),
            ParamValue::Double(d) => Value::Double(*d),
            ParamValue::Str(s) => Value::Str(s.clone()),
            ParamValue::Map(m) => Value::Struct(m.iter().map(|(k, v)| (k.clone(), v.into())).collect()),
        }
    }
}

impl TryFrom<&Value> for ParamValue {
    type Error = &'static str;

    fn try_from(v: &Value) -> Result<Self, Self::Error> {
        Ok(match v {
            Value::Bool(b) => ParamValue::Bool(*b),
            Value::Int(i) => ParamValue::Int(*i),
            Value::Double(d) => ParamValue::Double(*d),
            Value::Str(s) => ParamValue::Str(s.clone()),
            Value::Struct(m) => ParamValue::Map(
                m.iter()
                    .map(|(k, v)| Ok((k.clone(), ParamValue::try_from(v)?)))
                    .collect::<Result<_, &'static str>>()?,
            ),
            Value::Array(_) => return Err("list parameters are not supported"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed xml: {0}")]
    Xml(String),
    #[error("unexpected document structure: {0}")]
    Structure(String),
    #[error("fault {code}: {message}")]
    Fault { code: i32, message: String },
}

fn escape(text: &str, out: &mut String) {
    for c in text.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            _ => out.push(c),
        }
    }
}

fn encode_value(value: &Value, out: &mut String) {
    out.push_str("<value>");
    match value {
        Value::Int(i) => {
            let _ = write!(out, "<i4>{i}</i4>");
        }
        Value::Bool(b) => {
            let _ = write!(out, "<boolean>{}</boolean>", u8::from(*b));
        }
        Value::Str(s) => {
            out.push_str("<string>");
            escape(s, out);
            out.push_str("</string>");
        }
        Value::Double(d) => {
            let _ = write!(out, "<double>{d}</double>");
        }
        Value::Array(items) => {
            out.push_str("<array><data>");
            for item in items {
                encode_value(item, out);
            }
            out.push_str("</data></array>");
        }
        Value::Struct(members) => {
            out.push_str("<struct>");
            for (name, v) in members {
                out.push_str("<member><name>");
                escape(name, out);
                out.push_str("</name>");
                encode_value(v, out);
                out.push_str("</member>");
            }
            out.push_str("</struct>");
        }
    }
    out.push_str("</value>");
}

pub fn encode_call(method: &str, params: &[Value]) -> String {
    let mut out = String::from("<?xml version=\"1.0\"?>\n<methodCall><methodName>");
    escape(method, &mut out);
    out.push_str("</methodName><params>");
    for p in params {
        out.push_str("<param>");
        encode_value(p, &mut out);
        out.push_str("</param>");
    }
    out.push_str("</params></methodCall>\n");
    out
}

pub fn encode_response(value: &Value) -> String {
    let mut out = String::from("<?xml version=\"1.0\"?>\n<methodResponse><params><param>");
    encode_value(value, &mut out);
    out.push_str("</param></params></methodResponse>\n");
    out
}

pub fn encode_fault(code: i32, message: &str) -> String {
    let mut members = BTreeMap::new();
    members.insert("faultCode".to_string(), Value::Int(code));
    members.insert("faultString".to_string(), Value::Str(message.to_string()));
    let mut out = String::from("<?xml version=\"1.0\"?>\n<methodResponse><fault>");
    encode_value(&Value::Struct(members), &mut out);
    out.push_str("</fault></methodResponse>\n");
    out
}

type Node<'a, 'i> = roxmltree::Node<'a, 'i>;

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>, DecodeError> {
    elements(node)
        .find(|n| n.has_tag_name(name))
        .ok_or_else(|| DecodeError::Structure(format!("<{}> has no <{name}>", node.tag_name().name())))
}

fn text(node: Node) -> String {
    node.children().filter(|n| n.is_text()).filter_map(|n| n.text()).collect()
}

fn decode_value(node: Node) -> Result<Value, DecodeError> {
    let Some(typed) = elements(node).next() else {
        return Ok(Value::Str(text(node)));
    };
    let bad = |what: &str| DecodeError::Structure(format!("bad {what}: {:?}", text(typed)));
    Ok(match typed.tag_name().name() {
        "i4" | "int" => Value::Int(text(typed).trim().parse().map_err(|_| bad("int"))?),
        "boolean" => match text(typed).trim() {
            "1" | "true" => Value::Bool(true),
            "0" | "false" => Value::Bool(false),
            _ => return Err(bad("boolean")),
        },
        "string" | "base64" | "dateTime.iso8601" => Value::Str(text(typed)),
        "double" => Value::Double(text(typed).trim().parse().map_err(|_| bad("double"))?),
        "array" => {
            let data = child(typed, "data")?;
            Value::Array(elements(data).map(decode_value).collect::<Result<_, _>>()?)
        }
        "struct" => {
            let mut members = BTreeMap::new();
            for member in elements(typed).filter(|n| n.has_tag_name("member")) {
                let name = text(child(member, "name")?);
                members.insert(name, decode_value(child(member, "value")?)?);
            }
            Value::Struct(members)
        }
        other => return Err(DecodeError::Structure(format!("unsupported type <{other}>"))),
    })
}

fn parse(body: &str) -> Result<roxmltree::Document<'_>, DecodeError> {
    roxmltree::Document::parse(body).map_err(|e| DecodeError::Xml(e.to_string()))
}

fn decode_params(params: Option<Node>) -> Result<Vec<Value>, DecodeError> {
    let Some(params) = params else {
        return Ok(Vec::new());
    };
    elements(params)
        .filter(|n| n.has_tag_name("param"))
        .map(|p| decode_value(child(p, "value")?))
        .collect()
}

/// Decodes a `<methodCall>` into its method name and parameters.
pub fn decode_call(body: &str) -> Result<(String, Vec<Value>), DecodeError> {
    let doc = parse(body)?;
    let root = doc.root_element();
    if !root.has_tag_name("methodCall") {
        return Err(DecodeError::Structure("expected <methodCall>".into()));
    }
    let method = text(child(root, "methodName")?).trim().to_string();
    let params = decode_params(elements(root).find(|n| n.has_tag_name("params")))?;
    Ok((method, params))
}

/// Decodes a `<methodResponse>`; a fault becomes [`DecodeError::Fault`].
pub fn decode_response(body: &str) -> Result<Value, DecodeError> {
    let doc = parse(body)?;
    let root = doc.root_element();
    if !root.has_tag_name("methodResponse") {
        return Err(DecodeError::Structure("expected <methodResponse>".into()));
    }
    if let Some(fault) = elements(root).find(|n| n.has_tag_name("fault")) {
        let value = decode_value(child(fault, "value")?)?;
        let Value::Struct(members) = value else {
            return Err(DecodeError::Structure("fault is not a struct".into()));
        };
        return Err(DecodeError::Fault {
            code: members.get("faultCode").and_then(Value::as_int).unwrap_or(0),
            message: members.get("faultString").and_then(Value::as_str).unwrap_or_default().to_string(),
        });
    }
    decode_params(Some(child(root, "params")?))?
        .into_iter()
        .next()
        .ok_or_else(|| DecodeError::Structure("response carries no value".into()))
}
