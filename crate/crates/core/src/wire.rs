//! Self-describing serialized node graph and its canonical text form.
//!
//! A document is a root id plus an id-to-record map; every distinct
//! structured value appears exactly once and back references are plain
//! ids, so sharing and cycles survive the trip. The text form is
//! canonical UTF-8 JSON: object keys sorted, numbers rendered shortest
//! round-trip, ids rendered as decimal strings — equal documents
//! serialize to identical bytes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde_json::{Map as JsonMap, Value as Json};

use crate::reflect::TypeName;

pub const WIRE_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Payload entry: an atom, a reference to another node, or plain
/// structured data (lists and string-keyed maps) belonging to the node.
#[derive(Debug, Clone, PartialEq)]
pub enum WireValue {
    Nil,
    Bool(bool),
    Num(f64),
    Str(String),
    Ref(NodeId),
    List(Vec<WireValue>),
    Map(BTreeMap<String, WireValue>),
}

impl WireValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            WireValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            WireValue::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_ref_id(&self) -> Option<NodeId> {
        match self {
            WireValue::Ref(id) => Some(*id),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[WireValue]> {
        match self {
            WireValue::List(items) => Some(items),
            _ => None,
        }
    }

    /// Maps decode leniently: an empty list is an empty map.
    pub fn as_map(&self) -> Option<BTreeMap<String, WireValue>> {
        match self {
            WireValue::Map(m) => Some(m.clone()),
            WireValue::List(items) if items.is_empty() => Some(BTreeMap::new()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub kind: TypeName,
    /// The source machine's own name for this value, kept for
    /// re-identification when a value returns to its origin.
    pub origin: String,
    pub payload: BTreeMap<String, WireValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileRecord {
    pub path: String,
    pub mode: String,
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireDoc {
    pub version: String,
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, NodeRecord>,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireError {
    /// Malformed text; the offset is a byte position into the input.
    ParseError { offset: usize, message: String },
    /// A payload references a node id that does not exist.
    DanglingRef(NodeId),
    /// A payload carries a field outside its kind's schema, or a field
    /// of the wrong shape.
    SchemaViolation { node: NodeId, field: String },
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::ParseError { offset, message } => {
                write!(f, "parse error at byte {offset}: {message}")
            }
            WireError::DanglingRef(id) => write!(f, "reference to missing node {id}"),
            WireError::SchemaViolation { node, field } => {
                write!(f, "node {node}: field `{field}` violates the schema")
            }
        }
    }
}

/// Payload keys allowed per kind; `None` means any (tables carry
/// arbitrary entries).
fn allowed_keys(kind: TypeName) -> Option<&'static [&'static str]> {
    match kind {
        TypeName::Function => Some(&["p", "env"]),
        TypeName::Proto => Some(&["param", "code", "consts", "inner"]),
        TypeName::Env => Some(&["vars", "parent"]),
        TypeName::Table => None,
        TypeName::Frame => Some(&["stack", "env", "code", "pc-resumable"]),
        TypeName::Thread => Some(&["status", "depth", "frames"]),
        TypeName::File => Some(&["path", "mode", "position"]),
    }
}

impl WireDoc {
    pub fn new(root: NodeId) -> WireDoc {
        WireDoc {
            version: String::from(WIRE_VERSION),
            root,
            nodes: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    /// Check the documented invariants: the root exists, every
    /// reference resolves, every payload fits its kind's schema.
    pub fn validate(&self) -> Result<(), WireError> {
        if !self.nodes.contains_key(&self.root) {
            return Err(WireError::DanglingRef(self.root));
        }
        for (id, rec) in &self.nodes {
            if let Some(keys) = allowed_keys(rec.kind) {
                for k in rec.payload.keys() {
                    if !keys.contains(&k.as_str()) {
                        return Err(WireError::SchemaViolation {
                            node: *id,
                            field: k.clone(),
                        });
                    }
                }
            }
            for v in rec.payload.values() {
                check_refs(v, &self.nodes)?;
            }
        }
        Ok(())
    }

    pub fn count_kind(&self, kind: TypeName) -> usize {
        self.nodes.values().filter(|r| r.kind == kind).count()
    }
}

fn check_refs(
    v: &WireValue,
    nodes: &BTreeMap<NodeId, NodeRecord>,
) -> Result<(), WireError> {
    match v {
        WireValue::Ref(id) => {
            if !nodes.contains_key(id) {
                return Err(WireError::DanglingRef(*id));
            }
        }
        WireValue::List(items) => {
            for i in items {
                check_refs(i, nodes)?;
            }
        }
        WireValue::Map(m) => {
            for i in m.values() {
                check_refs(i, nodes)?;
            }
        }
        _ => {}
    }
    Ok(())
}

// ---- encode ----

fn json_of_value(v: &WireValue) -> Json {
    match v {
        WireValue::Nil => Json::Null,
        WireValue::Bool(b) => Json::Bool(*b),
        WireValue::Num(n) => match serde_json::Number::from_f64(*n) {
            Some(num) => Json::Number(num),
            None => {
                let mut m = JsonMap::new();
                let tag = if n.is_nan() {
                    "nan"
                } else if *n > 0.0 {
                    "inf"
                } else {
                    "-inf"
                };
                m.insert(String::from("$num"), Json::String(String::from(tag)));
                Json::Object(m)
            }
        },
        WireValue::Str(s) => Json::String(s.clone()),
        WireValue::Ref(id) => {
            let mut m = JsonMap::new();
            m.insert(String::from("$ref"), Json::String(id.to_string()));
            Json::Object(m)
        }
        WireValue::List(items) => Json::Array(items.iter().map(json_of_value).collect()),
        WireValue::Map(entries) => {
            let mut m = JsonMap::new();
            for (k, v) in entries {
                debug_assert!(!k.starts_with('$'), "reserved key in payload map");
                m.insert(k.clone(), json_of_value(v));
            }
            Json::Object(m)
        }
    }
}

/// Canonical text form; byte-identical for equal documents.
pub fn serialize(doc: &WireDoc) -> Vec<u8> {
    let mut nodes = JsonMap::new();
    for (id, rec) in &doc.nodes {
        let mut n = JsonMap::new();
        n.insert(String::from("kind"), Json::String(String::from(rec.kind.name())));
        n.insert(String::from("origin"), Json::String(rec.origin.clone()));
        let mut payload = JsonMap::new();
        for (k, v) in &rec.payload {
            payload.insert(k.clone(), json_of_value(v));
        }
        n.insert(String::from("payload"), Json::Object(payload));
        nodes.insert(id.to_string(), Json::Object(n));
    }
    let files: Vec<Json> = doc
        .files
        .iter()
        .map(|f| {
            let mut m = JsonMap::new();
            m.insert(String::from("mode"), Json::String(f.mode.clone()));
            m.insert(String::from("path"), Json::String(f.path.clone()));
            m.insert(String::from("position"), Json::Number(f.position.into()));
            Json::Object(m)
        })
        .collect();
    let mut top = JsonMap::new();
    top.insert(String::from("files"), Json::Array(files));
    top.insert(String::from("nodes"), Json::Object(nodes));
    top.insert(String::from("root"), Json::String(doc.root.to_string()));
    top.insert(String::from("version"), Json::String(doc.version.clone()));
    serde_json::to_string(&Json::Object(top))
        .expect("document maps contain no non-string keys")
        .into_bytes()
}

// ---- decode ----

fn parse_err(offset: usize, message: impl Into<String>) -> WireError {
    WireError::ParseError {
        offset,
        message: message.into(),
    }
}

fn offset_of(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut seen = 1usize;
    let mut offset = 0usize;
    for (i, b) in bytes.iter().enumerate() {
        if seen == line {
            offset = i;
            break;
        }
        if *b == b'\n' {
            seen += 1;
            offset = i + 1;
        }
    }
    (offset + column.saturating_sub(1)).min(bytes.len())
}

fn value_of_json(j: &Json) -> Result<WireValue, String> {
    Ok(match j {
        Json::Null => WireValue::Nil,
        Json::Bool(b) => WireValue::Bool(*b),
        Json::Number(n) => WireValue::Num(
            n.as_f64()
                .ok_or_else(|| String::from("number out of range"))?,
        ),
        Json::String(s) => WireValue::Str(s.clone()),
        Json::Array(items) => WireValue::List(
            items
                .iter()
                .map(value_of_json)
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Json::Object(m) => {
            if m.len() == 1 {
                if let Some(Json::String(id)) = m.get("$ref") {
                    let n: u64 = id.parse().map_err(|_| alloc::format!("bad ref `{id}`"))?;
                    return Ok(WireValue::Ref(NodeId(n)));
                }
                if let Some(Json::String(tag)) = m.get("$num") {
                    return Ok(WireValue::Num(match tag.as_str() {
                        "nan" => f64::NAN,
                        "inf" => f64::INFINITY,
                        "-inf" => f64::NEG_INFINITY,
                        other => return Err(alloc::format!("bad number tag `{other}`")),
                    }));
                }
            }
            let mut out = BTreeMap::new();
            for (k, v) in m {
                if k.starts_with('$') {
                    return Err(alloc::format!("reserved key `{k}`"));
                }
                out.insert(k.clone(), value_of_json(v)?);
            }
            WireValue::Map(out)
        }
    })
}

/// Parse and validate a canonical document.
pub fn deserialize(bytes: &[u8]) -> Result<WireDoc, WireError> {
    let json: Json = serde_json::from_slice(bytes).map_err(|e| {
        let offset = offset_of(bytes, e.line(), e.column());
        parse_err(offset, e.to_string())
    })?;
    let top = json
        .as_object()
        .ok_or_else(|| parse_err(0, "top level must be an object"))?;

    let version = top
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| parse_err(0, "missing version"))?;
    if version != WIRE_VERSION {
        return Err(parse_err(0, alloc::format!("unsupported version `{version}`")));
    }

    let root = top
        .get("root")
        .and_then(|v| v.as_str())
        .and_then(|s| s.parse::<u64>().ok())
        .map(NodeId)
        .ok_or_else(|| parse_err(0, "missing root id"))?;

    let mut nodes = BTreeMap::new();
    let raw_nodes = top
        .get("nodes")
        .and_then(|v| v.as_object())
        .ok_or_else(|| parse_err(0, "missing nodes map"))?;
    for (key, raw) in raw_nodes {
        let id = key
            .parse::<u64>()
            .map(NodeId)
            .map_err(|_| parse_err(0, alloc::format!("bad node id `{key}`")))?;
        let obj = raw
            .as_object()
            .ok_or_else(|| parse_err(0, "node must be an object"))?;
        let kind = obj
            .get("kind")
            .and_then(|v| v.as_str())
            .and_then(TypeName::from_name)
            .ok_or(WireError::SchemaViolation {
                node: id,
                field: String::from("kind"),
            })?;
        let origin = obj
            .get("origin")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string();
        let mut payload = BTreeMap::new();
        let raw_payload = obj
            .get("payload")
            .and_then(|v| v.as_object())
            .ok_or(WireError::SchemaViolation {
                node: id,
                field: String::from("payload"),
            })?;
        for (k, v) in raw_payload {
            let wv = value_of_json(v).map_err(|_| WireError::SchemaViolation {
                node: id,
                field: k.clone(),
            })?;
            payload.insert(k.clone(), wv);
        }
        nodes.insert(
            id,
            NodeRecord {
                kind,
                origin,
                payload,
            },
        );
    }

    let mut files = Vec::new();
    let raw_files = top
        .get("files")
        .and_then(|v| v.as_array())
        .ok_or_else(|| parse_err(0, "missing files list"))?;
    for f in raw_files {
        let obj = f
            .as_object()
            .ok_or_else(|| parse_err(0, "file record must be an object"))?;
        let path = obj
            .get("path")
            .and_then(|v| v.as_str())
            .ok_or_else(|| parse_err(0, "file record needs a path"))?;
        let mode = obj
            .get("mode")
            .and_then(|v| v.as_str())
            .ok_or_else(|| parse_err(0, "file record needs a mode"))?;
        if !crate::host::mode_is_valid(mode) {
            return Err(parse_err(0, alloc::format!("bad file mode `{mode}`")));
        }
        let position = obj
            .get("position")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| parse_err(0, "file record needs a position"))?;
        files.push(FileRecord {
            path: path.to_string(),
            mode: mode.to_string(),
            position,
        });
    }

    let doc = WireDoc {
        version: version.to_string(),
        root,
        nodes,
        files,
    };
    doc.validate()?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_doc() -> WireDoc {
        let mut doc = WireDoc::new(NodeId(0));
        let mut payload = BTreeMap::new();
        payload.insert(
            String::from("entries"),
            WireValue::List(alloc::vec![WireValue::List(alloc::vec![
                WireValue::Num(1.0),
                WireValue::Ref(NodeId(1)),
            ])]),
        );
        doc.nodes.insert(
            NodeId(0),
            NodeRecord {
                kind: TypeName::Table,
                origin: String::from("0x1"),
                payload,
            },
        );
        doc.nodes.insert(
            NodeId(1),
            NodeRecord {
                kind: TypeName::Table,
                origin: String::from("0x2"),
                payload: BTreeMap::new(),
            },
        );
        doc
    }

    #[test]
    fn serialize_is_deterministic_and_idempotent() {
        let doc = tiny_doc();
        let a = serialize(&doc);
        let b = serialize(&doc);
        assert_eq!(a, b);
        let parsed = deserialize(&a).unwrap();
        assert_eq!(parsed, doc);
        assert_eq!(serialize(&parsed), a);
    }

    #[test]
    fn truncated_input_is_parse_error() {
        let mut bytes = serialize(&tiny_doc());
        bytes.truncate(bytes.len() / 2);
        match deserialize(&bytes) {
            Err(WireError::ParseError { offset, .. }) => assert!(offset <= bytes.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_ref_is_detected() {
        let mut doc = tiny_doc();
        doc.nodes.remove(&NodeId(1));
        assert_eq!(doc.validate(), Err(WireError::DanglingRef(NodeId(1))));
        let bytes = serialize(&doc);
        assert!(matches!(
            deserialize(&bytes),
            Err(WireError::DanglingRef(_))
        ));
    }

    #[test]
    fn version_mismatch_is_parse_error() {
        let mut doc = tiny_doc();
        doc.version = String::from("999");
        let bytes = serialize(&doc);
        assert!(matches!(
            deserialize(&bytes),
            Err(WireError::ParseError { .. })
        ));
    }

    #[test]
    fn schema_violation_on_unknown_field() {
        let mut doc = tiny_doc();
        doc.nodes.insert(
            NodeId(2),
            NodeRecord {
                kind: TypeName::Function,
                origin: String::new(),
                payload: {
                    let mut p = BTreeMap::new();
                    p.insert(String::from("bogus"), WireValue::Nil);
                    p
                },
            },
        );
        assert!(matches!(
            doc.validate(),
            Err(WireError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn nonfinite_numbers_round_trip() {
        let mut doc = tiny_doc();
        doc.nodes.get_mut(&NodeId(1)).unwrap().payload.insert(
            String::from("entries"),
            WireValue::List(alloc::vec![WireValue::List(alloc::vec![
                WireValue::Num(1.0),
                WireValue::Num(f64::INFINITY),
            ])]),
        );
        let parsed = deserialize(&serialize(&doc)).unwrap();
        assert_eq!(parsed, doc);
    }
}
