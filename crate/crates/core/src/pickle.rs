//! Deep, sharing- and cycle-preserving pickling of machine values.
//!
//! Capture walks a value graph through `reify`, visiting every
//! structured value exactly once (keyed by its name) and emitting one
//! node per value; aliased and self-referential structure survives as
//! shared node ids. Instantiation rebuilds bottom-up; a value inside a
//! cycle gets an inert placeholder of its declared kind first, which is
//! patched in place once its content is ready.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::MachineError;
use crate::host::FileHost;
use crate::instr::{ControlList, Instruction, PrimOp, ProtoRef};
use crate::machine::Machine;
use crate::reflect::{self, InstallTarget, TypeName};
use crate::store::{CoroutineRec, EnvRec, FileHandleRec, Status, StoredValue, Table};
use crate::value::{Location, Value};
use crate::wire::{FileRecord, NodeId, NodeRecord, WireDoc, WireError, WireValue};

pub use crate::wire::{deserialize, serialize};

/// What to do when the capture walk meets a value that cannot travel:
/// an unregistered file handle or a coroutine that is live on the
/// activation stack.
pub enum ErrorPolicy {
    /// Abort the capture, naming the offending value.
    Fail,
    /// Serialize the offending slot as nil.
    ReplaceWithNil,
    /// Ask the caller for a substitute record (None falls back to Fail).
    Hook(HookFn),
}

pub type HookFn =
    Box<dyn Fn(TypeName, &BTreeMap<String, WireValue>) -> Option<NodeRecord> + Send + Sync>;

impl fmt::Debug for ErrorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorPolicy::Fail => "Fail",
            ErrorPolicy::ReplaceWithNil => "ReplaceWithNil",
            ErrorPolicy::Hook(_) => "Hook",
        })
    }
}

#[derive(Debug)]
pub enum PickleError {
    NonSerializable { name: String, kind: String },
    Wire(WireError),
    Machine(MachineError),
    Internal(String),
}

impl fmt::Display for PickleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PickleError::NonSerializable { name, kind } => {
                write!(f, "value {name} of kind {kind} cannot be serialized")
            }
            PickleError::Wire(e) => write!(f, "{e}"),
            PickleError::Machine(e) => write!(f, "{e}"),
            PickleError::Internal(msg) => write!(f, "internal pickling failure: {msg}"),
        }
    }
}

impl From<WireError> for PickleError {
    fn from(e: WireError) -> Self {
        PickleError::Wire(e)
    }
}

impl From<MachineError> for PickleError {
    fn from(e: MachineError) -> Self {
        PickleError::Machine(e)
    }
}

fn internal<T>(msg: impl Into<String>) -> Result<T, PickleError> {
    Err(PickleError::Internal(msg.into()))
}

/// Record a host file open in the per-machine registry (the redefined
/// `open` every program goes through). Unregistered handles do not
/// travel.
pub fn register_open<H: FileHost + ?Sized>(
    m: &mut Machine,
    host: &mut H,
    path: &str,
    mode: &str,
) -> Result<Location, PickleError> {
    m.open_file(host, path, mode).map_err(PickleError::Machine)
}

/// Reopen a transferred file the way it was open at capture: write
/// modes remap to update modes so existing bytes survive, and the
/// cursor returns to the captured position.
pub fn restore_file<H: FileHost + ?Sized>(
    host: &mut H,
    rec: &FileRecord,
) -> Result<FileHandleRec, PickleError> {
    let mode = match rec.mode.as_str() {
        "w" => "r+",
        "wb" => "rb+",
        other => other,
    };
    if !host.exists(&rec.path) {
        return Err(PickleError::Machine(MachineError::Host(
            crate::host::HostError::OpenFailure {
                path: rec.path.clone(),
                mode: rec.mode.clone(),
            },
        )));
    }
    let size = host.size(&rec.path).map_err(MachineError::Host)?;
    if rec.position > size {
        return Err(PickleError::Machine(MachineError::Host(
            crate::host::HostError::SeekBeyondEnd {
                path: rec.path.clone(),
                position: rec.position,
            },
        )));
    }
    Ok(FileHandleRec {
        path: rec.path.clone(),
        mode: String::from(mode),
        position: rec.position,
    })
}

// ---- capture ----

/// Capture a suspended (or dead) coroutine and everything reachable
/// from it.
pub fn deep_capture(
    m: &Machine,
    coro: Location,
    policy: &ErrorPolicy,
) -> Result<WireDoc, PickleError> {
    match m.coroutine_status(coro) {
        Some(Status::Suspended) | Some(Status::Dead) => {}
        Some(_) => return Err(PickleError::Machine(MachineError::ReifyRunning)),
        None => return Err(PickleError::Machine(MachineError::InvalidLocation(coro))),
    }
    capture_value(m, coro, policy)
}

/// Capture an arbitrary structured value graph.
pub fn capture_value(
    m: &Machine,
    root: Location,
    policy: &ErrorPolicy,
) -> Result<WireDoc, PickleError> {
    let mut cap = Capture {
        scratch: m.clone(),
        policy,
        ids: BTreeMap::new(),
        nodes: BTreeMap::new(),
        files: Vec::new(),
        next: 0,
    };
    let root_id = match cap.visit(root)? {
        Some(id) => id,
        None => return internal("root value replaced by policy"),
    };
    let mut doc = WireDoc::new(root_id);
    doc.nodes = cap.nodes;
    doc.files = cap.files;
    doc.validate()?;
    Ok(doc)
}

struct Capture<'a> {
    /// Clone of the source machine; reification allocates its scratch
    /// tables here, leaving the original untouched.
    scratch: Machine,
    policy: &'a ErrorPolicy,
    ids: BTreeMap<Location, NodeId>,
    nodes: BTreeMap<NodeId, NodeRecord>,
    files: Vec<FileRecord>,
    next: u64,
}

impl Capture<'_> {
    fn fresh_id(&mut self) -> NodeId {
        let id = NodeId(self.next);
        self.next += 1;
        id
    }

    fn visit(&mut self, loc: Location) -> Result<Option<NodeId>, PickleError> {
        if let Some(id) = self.ids.get(&loc) {
            return Ok(Some(*id));
        }
        let kind = match self.scratch.store.get(loc) {
            Some(sv) => sv.kind_name(),
            None => return internal(alloc::format!("dangling location {loc}")),
        };
        let kind = TypeName::from_name(kind)
            .ok_or_else(|| PickleError::Internal(String::from("cell escaped into a value")))?;

        if let Some(reason) = self.unserializable(loc, kind) {
            return self.apply_policy(loc, kind, reason);
        }

        let id = self.fresh_id();
        self.ids.insert(loc, id);
        let origin = reflect::name(&mut self.scratch, &Value::Loc(loc))?;

        let payload = match kind {
            TypeName::Thread => self.thread_payload(loc)?,
            TypeName::Table => self.table_payload(loc)?,
            TypeName::File => {
                let payload = self.plain_payload(loc)?;
                let rec = self
                    .scratch
                    .file_handle(loc)
                    .ok_or_else(|| PickleError::Internal(String::from("file vanished")))?;
                self.files.push(FileRecord {
                    path: rec.path.clone(),
                    mode: rec.mode.clone(),
                    position: rec.position,
                });
                payload
            }
            _ => self.plain_payload(loc)?,
        };
        self.nodes.insert(
            id,
            NodeRecord {
                kind,
                origin,
                payload,
            },
        );
        Ok(Some(id))
    }

    fn unserializable(&self, loc: Location, kind: TypeName) -> Option<&'static str> {
        match kind {
            TypeName::Thread if self.scratch.on_activation(loc) => {
                Some("coroutine is live on the activation stack")
            }
            TypeName::File if !self.scratch.files.contains(&loc) => {
                Some("file handle is not registered")
            }
            _ => None,
        }
    }

    fn apply_policy(
        &mut self,
        loc: Location,
        kind: TypeName,
        _reason: &str,
    ) -> Result<Option<NodeId>, PickleError> {
        let name = reflect::name(&mut self.scratch, &Value::Loc(loc))?;
        match self.policy {
            ErrorPolicy::Fail => Err(PickleError::NonSerializable {
                name,
                kind: String::from(kind.name()),
            }),
            ErrorPolicy::ReplaceWithNil => Ok(None),
            ErrorPolicy::Hook(f) => {
                let sketch = self.offending_sketch(loc, kind)?;
                match f(kind, &sketch) {
                    Some(rec) => {
                        let id = self.fresh_id();
                        self.ids.insert(loc, id);
                        self.nodes.insert(id, rec);
                        Ok(Some(id))
                    }
                    None => Err(PickleError::NonSerializable {
                        name,
                        kind: String::from(kind.name()),
                    }),
                }
            }
        }
    }

    /// Whatever can be said about a value that refuses full reification.
    fn offending_sketch(
        &mut self,
        loc: Location,
        kind: TypeName,
    ) -> Result<BTreeMap<String, WireValue>, PickleError> {
        let mut out = BTreeMap::new();
        match kind {
            TypeName::File => {
                if let Some(f) = self.scratch.file_handle(loc) {
                    out.insert(String::from("path"), WireValue::Str(f.path.clone()));
                    out.insert(String::from("mode"), WireValue::Str(f.mode.clone()));
                    out.insert(
                        String::from("position"),
                        WireValue::Num(f.position as f64),
                    );
                }
            }
            TypeName::Thread => {
                if let Some(c) = self.scratch.coroutine(loc) {
                    out.insert(
                        String::from("status"),
                        WireValue::Str(String::from(c.status.name())),
                    );
                }
            }
            _ => {}
        }
        Ok(out)
    }

    fn thread_payload(
        &mut self,
        loc: Location,
    ) -> Result<BTreeMap<String, WireValue>, PickleError> {
        let header = reflect::reify(&mut self.scratch, &Value::Loc(loc), None)?;
        let header_loc = header
            .as_loc()
            .ok_or_else(|| PickleError::Internal(String::from("header is a table")))?;
        let status = self
            .scratch
            .table_get(header_loc, &Value::from("status"))
            .render();
        let depth = match self.scratch.table_get(header_loc, &Value::from("depth")) {
            Value::Num(n) => n as usize,
            _ => 0,
        };
        let mut frames = Vec::new();
        for level in 1..=depth {
            let rep = reflect::reify(&mut self.scratch, &Value::Loc(loc), Some(level))?;
            let rep_loc = rep
                .as_loc()
                .ok_or_else(|| PickleError::Internal(String::from("level inside depth")))?;
            let fid = self.fresh_id();
            let payload = self.rep_map_payload(rep_loc)?;
            let origin = alloc::format!("frame:{level}");
            self.nodes.insert(
                fid,
                NodeRecord {
                    kind: TypeName::Frame,
                    origin,
                    payload,
                },
            );
            frames.push(WireValue::Ref(fid));
        }
        let mut payload = BTreeMap::new();
        payload.insert(String::from("status"), WireValue::Str(status));
        payload.insert(String::from("depth"), WireValue::Num(depth as f64));
        payload.insert(String::from("frames"), WireValue::List(frames));
        Ok(payload)
    }

    /// Payload of kinds whose representation is a text-keyed table.
    fn plain_payload(&mut self, loc: Location) -> Result<BTreeMap<String, WireValue>, PickleError> {
        let rep = reflect::reify(&mut self.scratch, &Value::Loc(loc), None)?;
        let rep_loc = rep
            .as_loc()
            .ok_or_else(|| PickleError::Internal(String::from("representation is a table")))?;
        self.rep_map_payload(rep_loc)
    }

    fn rep_map_payload(
        &mut self,
        rep: Location,
    ) -> Result<BTreeMap<String, WireValue>, PickleError> {
        let entries: Vec<(Value, Value)> = match self.scratch.table(rep) {
            Some(t) => t.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            None => return internal("representation is a table"),
        };
        let mut out = BTreeMap::new();
        for (k, v) in entries {
            let key = match k {
                Value::Text(s) => s,
                other => return internal(alloc::format!("non-text rep key {other:?}")),
            };
            out.insert(key, self.wire_of(&v)?);
        }
        Ok(out)
    }

    fn table_payload(&mut self, loc: Location) -> Result<BTreeMap<String, WireValue>, PickleError> {
        let rep = reflect::reify(&mut self.scratch, &Value::Loc(loc), None)?;
        let rep_loc = rep
            .as_loc()
            .ok_or_else(|| PickleError::Internal(String::from("representation is a table")))?;
        let entries: Vec<(Value, Value)> = match self.scratch.table(rep_loc) {
            Some(t) => t.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            None => return internal("representation is a table"),
        };
        let mut list = Vec::new();
        for (k, v) in entries {
            let kw = self.wire_of(&k)?;
            let vw = self.wire_of(&v)?;
            // a slot nilled by policy in key position drops the entry
            if matches!(kw, WireValue::Nil) {
                continue;
            }
            list.push(WireValue::List(alloc::vec![kw, vw]));
        }
        let mut payload = BTreeMap::new();
        payload.insert(String::from("entries"), WireValue::List(list));
        Ok(payload)
    }

    /// A value inside a representation: atoms pass through, handles
    /// become node references, scratch tables (lists, instruction
    /// records) convert structurally.
    fn wire_of(&mut self, v: &Value) -> Result<WireValue, PickleError> {
        match v {
            Value::Nil => Ok(WireValue::Nil),
            Value::Bool(b) => Ok(WireValue::Bool(*b)),
            Value::Num(n) => Ok(WireValue::Num(*n)),
            Value::Text(s) => Ok(WireValue::Str(s.clone())),
            Value::Loc(l) => {
                if let Some((name, _)) = reflect::handle_parts(&self.scratch, *l) {
                    let target = match self.scratch.handles.get(&name) {
                        Some(t) => *t,
                        None => return internal(alloc::format!("unregistered handle {name}")),
                    };
                    return Ok(match self.visit(target)? {
                        Some(id) => WireValue::Ref(id),
                        None => WireValue::Nil,
                    });
                }
                self.wire_of_scratch_table(*l)
            }
        }
    }

    fn wire_of_scratch_table(&mut self, loc: Location) -> Result<WireValue, PickleError> {
        let entries: Vec<(Value, Value)> = match self.scratch.table(loc) {
            Some(t) => t.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            None => return internal("rep substructure is a table"),
        };
        let is_list = entries
            .iter()
            .enumerate()
            .all(|(i, (k, _))| matches!(k, Value::Num(n) if *n == (i + 1) as f64));
        if is_list {
            let mut items = Vec::new();
            for (_, v) in entries {
                items.push(self.wire_of(&v)?);
            }
            return Ok(WireValue::List(items));
        }
        let mut map = BTreeMap::new();
        for (k, v) in entries {
            let key = match k {
                Value::Text(s) => s,
                other => return internal(alloc::format!("non-text key {other:?} in rep map")),
            };
            map.insert(key, self.wire_of(&v)?);
        }
        Ok(WireValue::Map(map))
    }
}

// ---- instantiate ----

/// Rebuild a captured graph inside a machine. A thread root lands in
/// `into` when given (it must be off the activation stack), otherwise
/// in a fresh empty coroutine; frames are installed root-to-top at
/// level 0 and the saved status is applied last. Returns the root's
/// location.
pub fn instantiate<H: FileHost + ?Sized>(
    m: &mut Machine,
    doc: &WireDoc,
    into: Option<Location>,
    host: &mut H,
) -> Result<Location, PickleError> {
    doc.validate()?;
    let root_kind = doc
        .nodes
        .get(&doc.root)
        .map(|r| r.kind)
        .ok_or(WireError::DanglingRef(doc.root))?;
    if into.is_some() && root_kind != TypeName::Thread {
        return Err(PickleError::Machine(MachineError::ShapeMismatch(
            String::from("into"),
        )));
    }

    let mut b = Builder {
        m,
        host,
        doc,
        built: BTreeMap::new(),
        promised: BTreeMap::new(),
        in_progress: Vec::new(),
        into,
    };
    let loc = b.build(doc.root)?;
    for (id, placeholder) in &b.promised {
        match b.built.get(id) {
            Some(l) if l == placeholder => {}
            _ => return internal(alloc::format!("unfulfilled promise for node {id}")),
        }
    }
    Ok(loc)
}

struct Builder<'a, H: FileHost + ?Sized> {
    m: &'a mut Machine,
    host: &'a mut H,
    doc: &'a WireDoc,
    built: BTreeMap<NodeId, Location>,
    /// Placeholders allocated for nodes hit through a back edge.
    promised: BTreeMap<NodeId, Location>,
    in_progress: Vec<NodeId>,
    into: Option<Location>,
}

impl<H: FileHost + ?Sized> Builder<'_, H> {
    fn record(&self, id: NodeId) -> Result<&NodeRecord, PickleError> {
        self.doc
            .nodes
            .get(&id)
            .ok_or(PickleError::Wire(WireError::DanglingRef(id)))
    }

    fn schema<T>(&self, id: NodeId, field: &str) -> Result<T, PickleError> {
        Err(PickleError::Wire(WireError::SchemaViolation {
            node: id,
            field: String::from(field),
        }))
    }

    fn build(&mut self, id: NodeId) -> Result<Location, PickleError> {
        if let Some(loc) = self.built.get(&id) {
            return Ok(*loc);
        }
        if self.in_progress.contains(&id) {
            // back edge: hand out an inert placeholder of the declared
            // kind, patched in place when the real content is ready
            if let Some(p) = self.promised.get(&id) {
                return Ok(*p);
            }
            let kind = self.record(id)?.kind;
            let p = self.placeholder(kind)?;
            self.promised.insert(id, p);
            return Ok(p);
        }
        self.in_progress.push(id);
        let rec = self.record(id)?.clone();
        let loc = match rec.kind {
            TypeName::Thread => self.build_thread(id, &rec)?,
            TypeName::Table => {
                let content = self.table_content(id, &rec)?;
                self.finish(id, StoredValue::Table(content))
            }
            TypeName::Function => {
                let content = self.function_content(id, &rec)?;
                self.finish(id, content)
            }
            TypeName::Proto => {
                let content = self.proto_content(id, &rec)?;
                self.finish(id, StoredValue::Proto(content))
            }
            TypeName::Env => {
                let content = self.env_content(id, &rec)?;
                self.finish(id, StoredValue::Env(content))
            }
            TypeName::File => {
                let content = self.file_content(id, &rec)?;
                let loc = self.finish(id, StoredValue::File(content));
                self.m.files.push(loc);
                loc
            }
            TypeName::Frame => return self.schema(id, "frame outside a thread"),
        };
        self.built.insert(id, loc);
        self.in_progress.pop();
        Ok(loc)
    }

    /// Place content at the promised location when one exists,
    /// otherwise allocate fresh.
    fn finish(&mut self, id: NodeId, content: StoredValue) -> Location {
        match self.promised.get(&id) {
            Some(p) => {
                self.m.store.replace(*p, content);
                *p
            }
            None => self.m.store.alloc(content),
        }
    }

    fn placeholder(&mut self, kind: TypeName) -> Result<Location, PickleError> {
        Ok(match kind {
            TypeName::Table => self.m.store.alloc(StoredValue::Table(Table::new())),
            TypeName::Env => self.m.store.alloc(StoredValue::Env(EnvRec::default())),
            TypeName::Proto => self.m.store.alloc(StoredValue::Proto(
                crate::store::Proto::new(String::from("_"), ControlList::new()),
            )),
            TypeName::Function => {
                let proto = self.m.store.alloc(StoredValue::Proto(
                    crate::store::Proto::new(String::from("_"), ControlList::new()),
                ));
                let env = self.m.new_env(None);
                self.m.store.alloc(StoredValue::Closure { proto, env })
            }
            TypeName::Thread => self.m.store.alloc(StoredValue::Coroutine(CoroutineRec {
                frame: None,
                status: Status::Suspended,
            })),
            TypeName::File => self.m.store.alloc(StoredValue::File(FileHandleRec {
                path: String::new(),
                mode: String::from("r"),
                position: 0,
            })),
            TypeName::Frame => {
                return internal("frames are never promised");
            }
        })
    }

    fn value_of(&mut self, id: NodeId, field: &str, wv: &WireValue) -> Result<Value, PickleError> {
        Ok(match wv {
            WireValue::Nil => Value::Nil,
            WireValue::Bool(b) => Value::Bool(*b),
            WireValue::Num(n) => Value::Num(*n),
            WireValue::Str(s) => Value::Text(s.clone()),
            WireValue::Ref(r) => Value::Loc(self.build(*r)?),
            _ => return self.schema(id, field),
        })
    }

    fn table_content(&mut self, id: NodeId, rec: &NodeRecord) -> Result<Table, PickleError> {
        let entries = match rec.payload.get("entries") {
            Some(WireValue::List(items)) => items.clone(),
            None => Vec::new(),
            _ => return self.schema(id, "entries"),
        };
        let mut t = Table::new();
        for pair in &entries {
            let kv = match pair.as_list() {
                Some([k, v]) => (k.clone(), v.clone()),
                _ => return self.schema(id, "entries"),
            };
            let k = self.value_of(id, "entries", &kv.0)?;
            let v = self.value_of(id, "entries", &kv.1)?;
            if !t.set(k, v) {
                return self.schema(id, "entries");
            }
        }
        Ok(t)
    }

    fn function_content(
        &mut self,
        id: NodeId,
        rec: &NodeRecord,
    ) -> Result<StoredValue, PickleError> {
        let proto = match rec.payload.get("p").and_then(|v| v.as_ref_id()) {
            Some(r) => self.build(r)?,
            None => return self.schema(id, "p"),
        };
        let env = match rec.payload.get("env") {
            Some(WireValue::Ref(r)) => self.build(*r)?,
            Some(WireValue::Nil) | None => self.m.new_env(None),
            _ => return self.schema(id, "env"),
        };
        Ok(StoredValue::Closure { proto, env })
    }

    fn proto_content(
        &mut self,
        id: NodeId,
        rec: &NodeRecord,
    ) -> Result<crate::store::Proto, PickleError> {
        let param = match rec.payload.get("param").and_then(|v| v.as_str()) {
            Some(p) => String::from(p),
            None => return self.schema(id, "param"),
        };
        let code = match rec.payload.get("code") {
            Some(v) => self.control_of(id, v)?,
            None => return self.schema(id, "code"),
        };
        Ok(crate::store::Proto::new(param, code))
    }

    fn env_content(&mut self, id: NodeId, rec: &NodeRecord) -> Result<EnvRec, PickleError> {
        let vars = match rec.payload.get("vars") {
            Some(v) => match v.as_map() {
                Some(m) => m,
                None => return self.schema(id, "vars"),
            },
            None => BTreeMap::new(),
        };
        let parent = match rec.payload.get("parent") {
            Some(WireValue::Ref(r)) => Some(self.build(*r)?),
            Some(WireValue::Nil) | None => None,
            _ => return self.schema(id, "parent"),
        };
        let mut out = EnvRec {
            bindings: BTreeMap::new(),
            parent,
        };
        for (x, wv) in vars {
            let v = self.value_of(id, "vars", &wv)?;
            let cell = self.m.store.alloc(StoredValue::Cell(v));
            out.bindings.insert(x, cell);
        }
        Ok(out)
    }

    fn file_content(&mut self, id: NodeId, rec: &NodeRecord) -> Result<FileHandleRec, PickleError> {
        let path = rec.payload.get("path").and_then(|v| v.as_str());
        let mode = rec.payload.get("mode").and_then(|v| v.as_str());
        let position = rec.payload.get("position").and_then(|v| v.as_num());
        match (path, mode, position) {
            (Some(path), Some(mode), Some(position)) if position >= 0.0 => restore_file(
                self.host,
                &FileRecord {
                    path: String::from(path),
                    mode: String::from(mode),
                    position: position as u64,
                },
            ),
            _ => self.schema(id, "path"),
        }
    }

    fn build_thread(&mut self, id: NodeId, rec: &NodeRecord) -> Result<Location, PickleError> {
        let status = rec
            .payload
            .get("status")
            .and_then(|v| v.as_str())
            .and_then(Status::from_name);
        let status = match status {
            Some(Status::Suspended) | Some(Status::Dead) => status.unwrap(),
            _ => return self.schema(id, "status"),
        };
        let depth = match rec.payload.get("depth").and_then(|v| v.as_num()) {
            Some(d) if d >= 0.0 => d as usize,
            _ => return self.schema(id, "depth"),
        };
        let frames: Vec<NodeId> = match rec.payload.get("frames") {
            Some(WireValue::List(items)) => {
                let mut out = Vec::new();
                for i in items {
                    match i.as_ref_id() {
                        Some(r) => out.push(r),
                        None => return self.schema(id, "frames"),
                    }
                }
                out
            }
            None => Vec::new(),
            _ => return self.schema(id, "frames"),
        };
        if frames.len() != depth {
            return self.schema(id, "depth");
        }
        if status == Status::Suspended && depth == 0 {
            return self.schema(id, "status");
        }

        // the coroutine location must exist before its frames are
        // built: a frame may hold the coroutine itself
        let co = match (self.built.get(&id), self.promised.get(&id), self.into.take()) {
            (Some(l), _, _) => *l,
            (None, Some(p), _) => *p,
            (None, None, Some(into)) => {
                if self.m.on_activation(into) {
                    return Err(PickleError::Machine(MachineError::InstallIntoRunning));
                }
                match self.m.store.get_mut(into) {
                    Some(StoredValue::Coroutine(c)) => {
                        c.frame = None;
                        c.status = Status::Suspended;
                    }
                    _ => {
                        return Err(PickleError::Machine(MachineError::InvalidLocation(into)))
                    }
                }
                into
            }
            (None, None, None) => self.placeholder(TypeName::Thread)?,
        };
        self.built.insert(id, co);

        // install root-to-top at level 0, then apply the saved status
        for fid in frames.iter().rev() {
            let frame_rec = self.record(*fid)?.clone();
            if frame_rec.kind != TypeName::Frame {
                return self.schema(*fid, "kind");
            }
            let rep = self.frame_rep_table(*fid, &frame_rec)?;
            reflect::install(
                self.m,
                &Value::Loc(rep),
                &InstallTarget::Coroutine(co),
                Some(0),
            )?;
            self.built.insert(*fid, co);
        }
        reflect::setstatus(self.m, co, status)?;
        Ok(co)
    }

    /// Turn a frame node back into a representation table (with direct
    /// locations in place of handles) for `install`.
    fn frame_rep_table(&mut self, id: NodeId, rec: &NodeRecord) -> Result<Location, PickleError> {
        let stack_items = match rec.payload.get("stack") {
            Some(WireValue::List(items)) => items.clone(),
            None => Vec::new(),
            _ => return self.schema(id, "stack"),
        };
        let env = match rec.payload.get("env").and_then(|v| v.as_ref_id()) {
            Some(r) => self.build(r)?,
            None => return self.schema(id, "env"),
        };
        let code = match rec.payload.get("code") {
            Some(v) => v.clone(),
            None => return self.schema(id, "code"),
        };

        let stack = self.m.new_table();
        for (i, wv) in stack_items.iter().enumerate() {
            let v = self.value_of(id, "stack", wv)?;
            self.m
                .table_set(stack, Value::Num((i + 1) as f64), v)
                .map_err(PickleError::Machine)?;
        }
        let code_loc = self.code_rep_table(id, &code)?;
        let rep = self.m.new_table();
        self.m
            .table_set(rep, Value::from("stack"), Value::Loc(stack))?;
        self.m.table_set(rep, Value::from("env"), Value::Loc(env))?;
        self.m
            .table_set(rep, Value::from("code"), Value::Loc(code_loc))?;
        self.m
            .table_set(rep, Value::from("pc-resumable"), Value::Bool(true))?;
        Ok(rep)
    }

    fn code_rep_table(&mut self, id: NodeId, code: &WireValue) -> Result<Location, PickleError> {
        let items = match code.as_list() {
            Some(items) => items.to_vec(),
            None => return self.schema(id, "code"),
        };
        let list = self.m.new_table();
        for (i, item) in items.iter().enumerate() {
            let imap = match item.as_map() {
                Some(m) => m,
                None => return self.schema(id, "code"),
            };
            let entry = self.instr_rep_table(id, &imap)?;
            self.m
                .table_set(list, Value::Num((i + 1) as f64), Value::Loc(entry))?;
        }
        Ok(list)
    }

    fn instr_rep_table(
        &mut self,
        id: NodeId,
        imap: &BTreeMap<String, WireValue>,
    ) -> Result<Location, PickleError> {
        let t = self.m.new_table();
        for (k, wv) in imap {
            let v = match (k.as_str(), wv) {
                ("then", _) | ("else", _) => Value::Loc(self.code_rep_table(id, wv)?),
                ("proto", WireValue::Ref(r)) => Value::Loc(self.build(*r)?),
                _ => self.value_of(id, "code", wv)?,
            };
            self.m.table_set(t, Value::Text(k.clone()), v)?;
        }
        Ok(t)
    }

    fn control_of(&mut self, id: NodeId, code: &WireValue) -> Result<ControlList, PickleError> {
        let items = match code.as_list() {
            Some(items) => items.to_vec(),
            None => return self.schema(id, "code"),
        };
        let mut out = ControlList::new();
        for item in items {
            let imap = match item.as_map() {
                Some(m) => m,
                None => return self.schema(id, "code"),
            };
            out.push_back(self.instr_of(id, &imap)?);
        }
        Ok(out)
    }

    fn instr_of(
        &mut self,
        id: NodeId,
        imap: &BTreeMap<String, WireValue>,
    ) -> Result<Instruction, PickleError> {
        let op = match imap.get("op").and_then(|v| v.as_str()) {
            Some(op) => String::from(op),
            None => return self.schema(id, "op"),
        };
        Ok(match op.as_str() {
            "const" => {
                let v = match imap.get("value") {
                    Some(wv) => self.value_of(id, "value", wv)?,
                    None => Value::Nil,
                };
                if !v.is_atomic() {
                    return self.schema(id, "value");
                }
                Instruction::Const(v)
            }
            "var" => match imap.get("name").and_then(|v| v.as_str()) {
                Some(x) => Instruction::Var(String::from(x)),
                None => return self.schema(id, "name"),
            },
            "set" => match imap.get("name").and_then(|v| v.as_str()) {
                Some(x) => Instruction::Set(String::from(x)),
                None => return self.schema(id, "name"),
            },
            "prim" => match imap
                .get("prim")
                .and_then(|v| v.as_str())
                .and_then(PrimOp::from_name)
            {
                Some(p) => Instruction::Prim(p),
                None => return self.schema(id, "prim"),
            },
            "closure" => match imap.get("proto").and_then(|v| v.as_ref_id()) {
                Some(r) => Instruction::MakeClosure(ProtoRef::Loc(self.build(r)?)),
                None => return self.schema(id, "proto"),
            },
            "sel" => {
                let a = match imap.get("then") {
                    Some(v) => self.control_of(id, v)?,
                    None => return self.schema(id, "then"),
                };
                let b = match imap.get("else") {
                    Some(v) => self.control_of(id, v)?,
                    None => return self.schema(id, "else"),
                };
                Instruction::Sel(a, b)
            }
            other => match reflect::instr_from_name(other) {
                Some(ins) => ins,
                None => return self.schema(id, "op"),
            },
        })
    }
}
