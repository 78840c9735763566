//! Reification and installation.
//!
//! `reify` turns one structured value (or one activation record of a
//! suspended coroutine) into a freshly allocated, editable table that
//! describes its first level; anything structured it points at appears
//! as an opaque handle. `install` is the symmetric operation: it builds
//! a live value back out of such a table, resolving handles through the
//! per-machine registry. Representations are copies — editing one never
//! touches the entity it describes, and vice versa.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::MachineError;
use crate::instr::{ControlList, Instruction, PrimOp, ProtoRef};
use crate::machine::Machine;
use crate::store::{CoroutineRec, EnvRec, Frame, Status, StoredValue, Table};
use crate::value::{Location, Value};

/// The closed set of reifiable kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeName {
    Function,
    Proto,
    Env,
    Table,
    Frame,
    Thread,
    File,
}

impl TypeName {
    pub fn name(self) -> &'static str {
        match self {
            TypeName::Function => "function",
            TypeName::Proto => "proto",
            TypeName::Env => "env",
            TypeName::Table => "table",
            TypeName::Frame => "frame",
            TypeName::Thread => "thread",
            TypeName::File => "file",
        }
    }

    pub fn from_name(s: &str) -> Option<TypeName> {
        Some(match s {
            "function" => TypeName::Function,
            "proto" => TypeName::Proto,
            "env" => TypeName::Env,
            "table" => TypeName::Table,
            "frame" => TypeName::Frame,
            "thread" => TypeName::Thread,
            "file" => TypeName::File,
            _ => return None,
        })
    }

    pub const ALL: [TypeName; 7] = [
        TypeName::Function,
        TypeName::Proto,
        TypeName::Env,
        TypeName::Table,
        TypeName::Frame,
        TypeName::Thread,
        TypeName::File,
    ];
}

/// Where an installation lands: a fresh value of a named kind, or a
/// frame level of an existing coroutine.
#[derive(Debug, Clone, PartialEq)]
pub enum InstallTarget {
    Kind(TypeName),
    Coroutine(Location),
}

impl InstallTarget {
    pub fn from_value(m: &Machine, v: &Value) -> Result<InstallTarget, MachineError> {
        match v {
            Value::Text(t) => TypeName::from_name(t)
                .map(InstallTarget::Kind)
                .ok_or_else(|| MachineError::UnknownTypeName(t.clone())),
            Value::Loc(_) => {
                let loc = deref_handle(m, v)?;
                match m.store.get(loc) {
                    Some(StoredValue::Coroutine(_)) => Ok(InstallTarget::Coroutine(loc)),
                    _ => Err(MachineError::type_error("install", v)),
                }
            }
            other => Err(MachineError::type_error("install", other)),
        }
    }
}

const HANDLE_MARK: &str = "handle";

/// Platform-unique name of a structured value, stable for the lifetime
/// of the machine. Naming a value registers it for later resolution.
pub fn name(m: &mut Machine, v: &Value) -> Result<String, MachineError> {
    let loc = match v {
        Value::Loc(l) => *l,
        _ => return Err(MachineError::NameOfAtomic),
    };
    if let Some((n, _)) = handle_parts(m, loc) {
        return Ok(n);
    }
    Ok(register(m, loc))
}

fn register(m: &mut Machine, loc: Location) -> String {
    let n = alloc::format!("0x{:x}", loc.0);
    m.handles.insert(n.clone(), loc);
    n
}

/// Is this location a handle table? Returns its (name, kind) if so.
pub(crate) fn handle_parts(m: &Machine, loc: Location) -> Option<(String, String)> {
    let t = m.table(loc)?;
    if !matches!(t.get(&Value::Text(String::from(HANDLE_MARK))), Value::Bool(true)) {
        return None;
    }
    match (
        t.get(&Value::Text(String::from("name"))),
        t.get(&Value::Text(String::from("kind"))),
    ) {
        (Value::Text(n), Value::Text(k)) => Some((n, k)),
        _ => None,
    }
}

/// Allocate a handle table for a structured value and register its name.
fn make_handle(m: &mut Machine, loc: Location) -> Result<Value, MachineError> {
    let kind = match m.store.get(loc) {
        Some(sv) => sv.kind_name(),
        None => return Err(MachineError::InvalidLocation(loc)),
    };
    debug_assert_ne!(kind, "cell", "cells are inlined, never exposed as handles");
    let n = register(m, loc);
    let h = m.new_table();
    m.table_set(h, Value::Text(String::from(HANDLE_MARK)), Value::Bool(true))?;
    m.table_set(h, Value::from("name"), Value::Text(n))?;
    m.table_set(h, Value::from("kind"), Value::from(kind))?;
    Ok(Value::Loc(h))
}

/// Follow a handle table to its target; plain locations pass through.
pub fn deref_handle(m: &Machine, v: &Value) -> Result<Location, MachineError> {
    let loc = match v {
        Value::Loc(l) => *l,
        other => return Err(MachineError::type_error("deref", other)),
    };
    match handle_parts(m, loc) {
        Some((n, kind)) => {
            let target = m
                .handles
                .get(&n)
                .copied()
                .ok_or(MachineError::UnresolvedHandle(n.clone()))?;
            match m.store.get(target) {
                Some(sv) if sv.kind_name() == kind => Ok(target),
                Some(_) => Err(MachineError::ShapeMismatch(alloc::format!(
                    "handle `{n}` kind `{kind}`"
                ))),
                None => Err(MachineError::UnresolvedHandle(n)),
            }
        }
        None => Ok(loc),
    }
}

/// Structured values are replaced by handles; atoms pass through.
fn to_rep_value(m: &mut Machine, v: &Value) -> Result<Value, MachineError> {
    match v {
        Value::Loc(l) => make_handle(m, *l),
        atom => Ok(atom.clone()),
    }
}

/// Handle tables resolve to their target; everything else passes through.
fn from_rep_value(m: &Machine, v: &Value) -> Result<Value, MachineError> {
    match v {
        Value::Loc(_) => Ok(Value::Loc(deref_handle(m, v)?)),
        atom => Ok(atom.clone()),
    }
}

fn new_list(m: &mut Machine, items: Vec<Value>) -> Result<Location, MachineError> {
    let t = m.new_table();
    for (i, v) in items.into_iter().enumerate() {
        m.table_set(t, Value::Num((i + 1) as f64), v)?;
    }
    Ok(t)
}

/// Read a list table back: keys 1..n, nothing else.
fn read_list(m: &Machine, loc: Location, what: &str) -> Result<Vec<Value>, MachineError> {
    let t = m
        .table(loc)
        .ok_or_else(|| MachineError::ShapeMismatch(String::from(what)))?;
    let mut items = Vec::new();
    loop {
        let v = t.get(&Value::Num((items.len() + 1) as f64));
        if matches!(v, Value::Nil) {
            break;
        }
        items.push(v);
    }
    if items.len() != t.len() {
        return Err(MachineError::ShapeMismatch(String::from(what)));
    }
    Ok(items)
}

fn rep_get(m: &Machine, rep: Location, key: &str) -> Value {
    m.table_get(rep, &Value::Text(String::from(key)))
}

fn rep_get_text(m: &Machine, rep: Location, key: &str) -> Result<String, MachineError> {
    match rep_get(m, rep, key) {
        Value::Text(s) => Ok(s),
        _ => Err(MachineError::ShapeMismatch(String::from(key))),
    }
}

// ---- reify ----

/// Reify a structured value into a fresh representation table.
///
/// With a level it extracts one activation record of a suspended (or
/// dead) coroutine; levels past the chain depth give nil, mirroring the
/// sentinel loop used to walk a whole stack. Without a level a
/// coroutine reifies to its header (status and depth).
pub fn reify(m: &mut Machine, value: &Value, level: Option<usize>) -> Result<Value, MachineError> {
    if value.is_atomic() {
        return Err(MachineError::ReifyAtomic);
    }
    let loc = deref_handle(m, value)?;
    let sv = m
        .store
        .get(loc)
        .ok_or(MachineError::InvalidLocation(loc))?
        .clone();

    if level.is_some() && !matches!(sv, StoredValue::Coroutine(_)) {
        return Err(MachineError::ShapeMismatch(String::from("level")));
    }

    match sv {
        StoredValue::Closure { proto, env } => {
            let rep = m.new_table();
            let p = make_handle(m, proto)?;
            let e = make_handle(m, env)?;
            m.table_set(rep, Value::from("p"), p)?;
            m.table_set(rep, Value::from("env"), e)?;
            Ok(Value::Loc(rep))
        }
        StoredValue::Proto(p) => {
            let rep = m.new_table();
            m.table_set(rep, Value::from("param"), Value::Text(p.param.clone()))?;
            let code = reify_code(m, &p.code)?;
            m.table_set(rep, Value::from("code"), Value::Loc(code))?;
            let consts = new_list(m, p.consts.clone())?;
            m.table_set(rep, Value::from("consts"), Value::Loc(consts))?;
            let inner_handles: Result<Vec<Value>, MachineError> =
                p.inner.iter().map(|l| make_handle(m, *l)).collect();
            let inner = new_list(m, inner_handles?)?;
            m.table_set(rep, Value::from("inner"), Value::Loc(inner))?;
            Ok(Value::Loc(rep))
        }
        StoredValue::Env(e) => {
            let vars = m.new_table();
            for (x, cell) in e.bindings.iter() {
                let v = match m.store.get(*cell) {
                    Some(StoredValue::Cell(v)) => v.clone(),
                    _ => return Err(MachineError::InvalidLocation(*cell)),
                };
                let rv = to_rep_value(m, &v)?;
                m.table_set(vars, Value::Text(x.clone()), rv)?;
            }
            let rep = m.new_table();
            m.table_set(rep, Value::from("vars"), Value::Loc(vars))?;
            let parent = match e.parent {
                Some(p) => make_handle(m, p)?,
                None => Value::Nil,
            };
            m.table_set(rep, Value::from("parent"), parent)?;
            Ok(Value::Loc(rep))
        }
        StoredValue::Table(t) => {
            let rep = m.new_table();
            let entries: Vec<(Value, Value)> =
                t.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            for (k, v) in entries {
                let rk = to_rep_value(m, &k)?;
                let rv = to_rep_value(m, &v)?;
                m.table_set(rep, rk, rv)?;
            }
            Ok(Value::Loc(rep))
        }
        StoredValue::Coroutine(c) => {
            if m.on_activation(loc) {
                return Err(MachineError::ReifyRunning);
            }
            match level {
                None => {
                    let rep = m.new_table();
                    m.table_set(rep, Value::from("status"), Value::from(c.status.name()))?;
                    let depth = c.frame.as_ref().map(|f| f.depth()).unwrap_or(0);
                    m.table_set(rep, Value::from("depth"), Value::Num(depth as f64))?;
                    Ok(Value::Loc(rep))
                }
                Some(n) => {
                    let frame = match c.frame.as_ref().and_then(|f| f.sublist(n)) {
                        Some(f) => f.clone(),
                        None => return Ok(Value::Nil),
                    };
                    Ok(Value::Loc(reify_frame(m, &frame)?))
                }
            }
        }
        StoredValue::File(f) => {
            let rep = m.new_table();
            m.table_set(rep, Value::from("path"), Value::Text(f.path.clone()))?;
            m.table_set(rep, Value::from("mode"), Value::Text(f.mode.clone()))?;
            m.table_set(rep, Value::from("position"), Value::Num(f.position as f64))?;
            Ok(Value::Loc(rep))
        }
        StoredValue::Cell(_) => Err(MachineError::type_error("reify", "cell")),
    }
}

fn reify_frame(m: &mut Machine, frame: &Frame) -> Result<Location, MachineError> {
    let stack_items: Result<Vec<Value>, MachineError> =
        frame.stack.iter().map(|v| to_rep_value(m, v)).collect();
    let stack = new_list(m, stack_items?)?;
    let env = make_handle(m, frame.env)?;
    let code = reify_code(m, &frame.code)?;
    let rep = m.new_table();
    m.table_set(rep, Value::from("stack"), Value::Loc(stack))?;
    m.table_set(rep, Value::from("env"), env)?;
    m.table_set(rep, Value::from("code"), Value::Loc(code))?;
    m.table_set(rep, Value::from("pc-resumable"), Value::Bool(true))?;
    Ok(rep)
}

fn reify_code(m: &mut Machine, code: &ControlList) -> Result<Location, MachineError> {
    let mut items = Vec::new();
    for ins in code {
        items.push(Value::Loc(reify_instr(m, ins)?));
    }
    new_list(m, items)
}

fn reify_instr(m: &mut Machine, ins: &Instruction) -> Result<Location, MachineError> {
    let t = m.new_table();
    let set = |m: &mut Machine, k: &str, v: Value| m.table_set(t, Value::from(k), v);
    match ins {
        Instruction::Const(v) => {
            set(m, "op", Value::from("const"))?;
            set(m, "value", v.clone())?;
        }
        Instruction::Var(x) => {
            set(m, "op", Value::from("var"))?;
            set(m, "name", Value::Text(x.clone()))?;
        }
        Instruction::MakeClosure(ProtoRef::Loc(p)) => {
            set(m, "op", Value::from("closure"))?;
            let h = make_handle(m, *p)?;
            set(m, "proto", h)?;
        }
        Instruction::MakeClosure(ProtoRef::Index(_)) => {
            return Err(MachineError::type_error("reify", "unlinked prototype index"))
        }
        Instruction::Prim(p) => {
            set(m, "op", Value::from("prim"))?;
            set(m, "prim", Value::from(p.name()))?;
        }
        Instruction::Set(x) => {
            set(m, "op", Value::from("set"))?;
            set(m, "name", Value::Text(x.clone()))?;
        }
        Instruction::Sel(a, b) => {
            set(m, "op", Value::from("sel"))?;
            let ta = reify_code(m, a)?;
            set(m, "then", Value::Loc(ta))?;
            let tb = reify_code(m, b)?;
            set(m, "else", Value::Loc(tb))?;
        }
        simple => {
            set(m, "op", Value::from(simple_op_name(simple)))?;
        }
    }
    Ok(t)
}

fn simple_op_name(ins: &Instruction) -> &'static str {
    match ins {
        Instruction::Ap => "ap",
        Instruction::Join => "join",
        Instruction::Create => "create",
        Instruction::Resume => "resume",
        Instruction::Yield => "yield",
        Instruction::NewThread => "newthread",
        Instruction::Reify => "reify",
        Instruction::Install => "install",
        Instruction::NameOf => "name",
        Instruction::FieldsOf => "fields",
        Instruction::TableNew => "tablenew",
        Instruction::TableGet => "tableget",
        Instruction::TableSet => "tableset",
        Instruction::OpenFile => "open",
        Instruction::WriteFile => "write",
        Instruction::ReadFile => "read",
        _ => unreachable!("structured instruction"),
    }
}

pub(crate) fn instr_from_name(op: &str) -> Option<Instruction> {
    Some(match op {
        "ap" => Instruction::Ap,
        "join" => Instruction::Join,
        "create" => Instruction::Create,
        "resume" => Instruction::Resume,
        "yield" => Instruction::Yield,
        "newthread" => Instruction::NewThread,
        "reify" => Instruction::Reify,
        "install" => Instruction::Install,
        "name" => Instruction::NameOf,
        "fields" => Instruction::FieldsOf,
        "tablenew" => Instruction::TableNew,
        "tableget" => Instruction::TableGet,
        "tableset" => Instruction::TableSet,
        "open" => Instruction::OpenFile,
        "write" => Instruction::WriteFile,
        "read" => Instruction::ReadFile,
        _ => return None,
    })
}

/// Parse a code representation back into a control list.
pub fn code_from_rep(m: &Machine, v: &Value) -> Result<ControlList, MachineError> {
    let loc = match v {
        Value::Loc(l) => *l,
        _ => return Err(MachineError::ShapeMismatch(String::from("code"))),
    };
    let items = read_list(m, loc, "code")?;
    let mut code = ControlList::new();
    for item in items {
        code.push_back(instr_from_rep(m, &item)?);
    }
    Ok(code)
}

fn instr_from_rep(m: &Machine, v: &Value) -> Result<Instruction, MachineError> {
    let loc = match v {
        Value::Loc(l) => *l,
        _ => return Err(MachineError::ShapeMismatch(String::from("instr"))),
    };
    let op = rep_get_text(m, loc, "op")?;
    Ok(match op.as_str() {
        "const" => {
            let value = rep_get(m, loc, "value");
            if !value.is_atomic() {
                return Err(MachineError::ShapeMismatch(String::from("const.value")));
            }
            Instruction::Const(value)
        }
        "var" => Instruction::Var(rep_get_text(m, loc, "name")?),
        "set" => Instruction::Set(rep_get_text(m, loc, "name")?),
        "prim" => {
            let p = rep_get_text(m, loc, "prim")?;
            Instruction::Prim(
                PrimOp::from_name(&p)
                    .ok_or_else(|| MachineError::ShapeMismatch(String::from("prim")))?,
            )
        }
        "closure" => {
            let proto = deref_handle(m, &rep_get(m, loc, "proto"))?;
            if !matches!(m.store.get(proto), Some(StoredValue::Proto(_))) {
                return Err(MachineError::ShapeMismatch(String::from("closure.proto")));
            }
            Instruction::MakeClosure(ProtoRef::Loc(proto))
        }
        "sel" => {
            let a = code_from_rep(m, &rep_get(m, loc, "then"))?;
            let b = code_from_rep(m, &rep_get(m, loc, "else"))?;
            Instruction::Sel(a, b)
        }
        other => instr_from_name(other)
            .ok_or_else(|| MachineError::ShapeMismatch(alloc::format!("op `{other}`")))?,
    })
}

// ---- install ----

/// Build a live value from a representation. Handles are resolved
/// bottom-up against the registry; the new value's own name is
/// registered so later installs may refer to it.
pub fn install(
    m: &mut Machine,
    rep: &Value,
    target: &InstallTarget,
    level: Option<usize>,
) -> Result<Value, MachineError> {
    let rep_loc = deref_handle(m, rep)?;
    if m.table(rep_loc).is_none() {
        return Err(MachineError::ShapeMismatch(String::from("representation")));
    }

    match target {
        InstallTarget::Kind(k) => {
            let loc = match k {
                TypeName::Proto => install_proto(m, rep_loc)?,
                TypeName::Function => install_function(m, rep_loc)?,
                TypeName::Table => install_table(m, rep_loc)?,
                TypeName::Env => install_env(m, rep_loc)?,
                TypeName::Thread | TypeName::File | TypeName::Frame => {
                    return Err(MachineError::InstallUnsupported(String::from(k.name())))
                }
            };
            register(m, loc);
            Ok(Value::Loc(loc))
        }
        InstallTarget::Coroutine(coro) => {
            if m.on_activation(*coro) {
                return Err(MachineError::InstallIntoRunning);
            }
            let (stack, env, code) = if !matches!(rep_get(m, rep_loc, "p"), Value::Nil) {
                // A closure representation boots the coroutine the same
                // way `create` would.
                let clo = install_function(m, rep_loc)?;
                let boot_env = m.new_env(None);
                (
                    alloc::vec![Value::Loc(clo)],
                    boot_env,
                    ControlList::from(alloc::vec![Instruction::Ap]),
                )
            } else {
                frame_parts_from_rep(m, rep_loc)?
            };
            let level = level.unwrap_or(0);
            let rec = match m.store.get_mut(*coro) {
                Some(StoredValue::Coroutine(c)) => c,
                _ => return Err(MachineError::InvalidLocation(*coro)),
            };
            if level == 0 {
                let below = rec.frame.take().map(alloc::boxed::Box::new);
                rec.frame = Some(Frame::pushed(below, stack, env, code));
            } else {
                let ok = match rec.frame.as_mut() {
                    Some(chain) => chain.put(level, stack, env, code),
                    None => false,
                };
                if !ok {
                    return Err(MachineError::BadLevel(level));
                }
            }
            // A coroutine that has something to run again is suspended.
            if rec.status == Status::Dead {
                rec.status = Status::Suspended;
            }
            Ok(Value::Loc(*coro))
        }
    }
}

fn frame_parts_from_rep(
    m: &Machine,
    rep: Location,
) -> Result<(Vec<Value>, Location, ControlList), MachineError> {
    let stack_loc = match rep_get(m, rep, "stack") {
        Value::Loc(l) => l,
        _ => return Err(MachineError::ShapeMismatch(String::from("stack"))),
    };
    let stack: Result<Vec<Value>, MachineError> = read_list(m, stack_loc, "stack")?
        .iter()
        .map(|v| from_rep_value(m, v))
        .collect();
    let env = deref_handle(m, &rep_get(m, rep, "env"))
        .map_err(|_| MachineError::ShapeMismatch(String::from("env")))?;
    if !matches!(m.store.get(env), Some(StoredValue::Env(_))) {
        return Err(MachineError::ShapeMismatch(String::from("env")));
    }
    let code = code_from_rep(m, &rep_get(m, rep, "code"))?;
    match rep_get(m, rep, "pc-resumable") {
        Value::Bool(_) | Value::Nil => {}
        _ => return Err(MachineError::ShapeMismatch(String::from("pc-resumable"))),
    }
    Ok((stack?, env, code))
}

fn install_proto(m: &mut Machine, rep: Location) -> Result<Location, MachineError> {
    let param = rep_get_text(m, rep, "param")?;
    let code = code_from_rep(m, &rep_get(m, rep, "code"))?;
    // consts and inner are derived from the code, so an edited code list
    // stays authoritative.
    let proto = crate::store::Proto::new(param, code);
    Ok(m.store.alloc(StoredValue::Proto(proto)))
}

fn install_function(m: &mut Machine, rep: Location) -> Result<Location, MachineError> {
    let proto = deref_handle(m, &rep_get(m, rep, "p"))
        .map_err(|e| shape_or(e, "p"))?;
    if !matches!(m.store.get(proto), Some(StoredValue::Proto(_))) {
        return Err(MachineError::ShapeMismatch(String::from("p")));
    }
    let env = match rep_get(m, rep, "env") {
        Value::Nil => m.new_env(None),
        v => {
            let e = deref_handle(m, &v).map_err(|e| shape_or(e, "env"))?;
            if !matches!(m.store.get(e), Some(StoredValue::Env(_))) {
                return Err(MachineError::ShapeMismatch(String::from("env")));
            }
            e
        }
    };
    Ok(m.store.alloc(StoredValue::Closure { proto, env }))
}

fn install_table(m: &mut Machine, rep: Location) -> Result<Location, MachineError> {
    let entries: Vec<(Value, Value)> = m
        .table(rep)
        .expect("checked by install")
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut t = Table::new();
    for (k, v) in entries {
        let k = from_rep_value(m, &k)?;
        let v = from_rep_value(m, &v)?;
        if !t.set(k.clone(), v) {
            return Err(MachineError::type_error("install", k));
        }
    }
    Ok(m.store.alloc(StoredValue::Table(t)))
}

fn install_env(m: &mut Machine, rep: Location) -> Result<Location, MachineError> {
    let vars_loc = match rep_get(m, rep, "vars") {
        Value::Loc(l) => l,
        _ => return Err(MachineError::ShapeMismatch(String::from("vars"))),
    };
    let vars: Vec<(Value, Value)> = m
        .table(vars_loc)
        .ok_or_else(|| MachineError::ShapeMismatch(String::from("vars")))?
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let parent = match rep_get(m, rep, "parent") {
        Value::Nil => None,
        v => {
            let p = deref_handle(m, &v).map_err(|e| shape_or(e, "parent"))?;
            if !matches!(m.store.get(p), Some(StoredValue::Env(_))) {
                return Err(MachineError::ShapeMismatch(String::from("parent")));
            }
            Some(p)
        }
    };
    let mut rec = EnvRec {
        bindings: Default::default(),
        parent,
    };
    for (k, v) in vars {
        let x = match k {
            Value::Text(x) => x,
            _ => return Err(MachineError::ShapeMismatch(String::from("vars"))),
        };
        let v = from_rep_value(m, &v)?;
        let cell = m.store.alloc(StoredValue::Cell(v));
        rec.bindings.insert(x, cell);
    }
    Ok(m.store.alloc(StoredValue::Env(rec)))
}

fn shape_or(e: MachineError, field: &str) -> MachineError {
    match e {
        MachineError::UnresolvedHandle(_) => e,
        _ => MachineError::ShapeMismatch(String::from(field)),
    }
}

// ---- fields / setstatus ----

/// Field schema of a representation kind, as a fresh table.
pub fn fields(m: &mut Machine, ty: &str) -> Result<Location, MachineError> {
    let kind =
        TypeName::from_name(ty).ok_or_else(|| MachineError::UnknownTypeName(String::from(ty)))?;
    let t = m.new_table();
    let put = |m: &mut Machine, k: &str, v: &str| m.table_set(t, Value::from(k), Value::from(v));
    match kind {
        TypeName::Function => {
            put(m, "p", "handle:proto")?;
            put(m, "env", "handle:env|nil")?;
        }
        TypeName::Proto => {
            put(m, "param", "text")?;
            put(m, "code", "list:instr")?;
            put(m, "consts", "list:atom")?;
            put(m, "inner", "list:handle:proto")?;
        }
        TypeName::Env => {
            put(m, "vars", "table:atom-or-handle")?;
            put(m, "parent", "handle:env|nil")?;
        }
        TypeName::Table => {
            put(m, "*", "atom-or-handle")?;
        }
        TypeName::Frame => {
            put(m, "stack", "list:atom-or-handle")?;
            put(m, "env", "handle:env")?;
            put(m, "code", "list:instr")?;
            put(m, "pc-resumable", "bool")?;
        }
        TypeName::Thread => {
            put(m, "status", "text")?;
            put(m, "depth", "num")?;
        }
        TypeName::File => {
            put(m, "path", "text")?;
            put(m, "mode", "text")?;
            put(m, "position", "num")?;
        }
    }
    Ok(t)
}

/// Overwrite the status of an off-stack coroutine. Only `suspended` and
/// `dead` may be set; suspending needs at least one frame, and a dead
/// coroutine drops its frames.
pub fn setstatus(m: &mut Machine, coro: Location, status: Status) -> Result<(), MachineError> {
    if m.on_activation(coro) {
        return Err(MachineError::SetStatusRunning);
    }
    if matches!(status, Status::Running | Status::Normal) {
        return Err(MachineError::SetStatusRunning);
    }
    let rec = match m.store.get_mut(coro) {
        Some(StoredValue::Coroutine(c)) => c,
        _ => return Err(MachineError::InvalidLocation(coro)),
    };
    match status {
        Status::Suspended => {
            if rec.frame.is_none() {
                return Err(MachineError::SuspendedWithoutFrames);
            }
            rec.status = Status::Suspended;
        }
        Status::Dead => {
            rec.status = Status::Dead;
            rec.frame = None;
        }
        _ => unreachable!(),
    }
    Ok(())
}

/// Reify every level of a suspended coroutine, walking with the nil
/// sentinel the way a capture loop does.
pub fn reify_all_levels(m: &mut Machine, coro: Location) -> Result<Vec<Value>, MachineError> {
    let mut reps = Vec::new();
    loop {
        let rep = reify(m, &Value::Loc(coro), Some(reps.len() + 1))?;
        if matches!(rep, Value::Nil) {
            return Ok(reps);
        }
        reps.push(rep);
    }
}

#[allow(unused)]
fn coroutine_rec(m: &Machine, loc: Location) -> Option<&CoroutineRec> {
    match m.store.get(loc) {
        Some(StoredValue::Coroutine(c)) => Some(c),
        _ => None,
    }
}
