//! The store: a map from locations to structured values, plus the frame
//! type that coroutine entries hold while suspended.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::instr::ControlList;
use crate::value::{Location, TableKey, Value};

/// One activation record: the S, E, C registers plus the dump chain of
/// the records below it. The chain length is the coroutine's frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Operand stack, top first.
    pub stack: Vec<Value>,
    /// Environment of the record.
    pub env: Location,
    /// Remaining control list.
    pub code: ControlList,
    /// Saved registers of the caller, if any.
    pub dump: Option<Box<Frame>>,
}

impl Frame {
    pub fn new(stack: Vec<Value>, env: Location, code: ControlList) -> Frame {
        Frame {
            stack,
            env,
            code,
            dump: None,
        }
    }

    /// Number of records in the chain, this one included.
    pub fn depth(&self) -> usize {
        let mut n = 1;
        let mut cur = self;
        while let Some(d) = &cur.dump {
            n += 1;
            cur = d;
        }
        n
    }

    /// Record at 1-based `level`, level 1 being this (innermost) record.
    pub fn sublist(&self, level: usize) -> Option<&Frame> {
        if level == 0 {
            return None;
        }
        let mut cur = self;
        for _ in 1..level {
            cur = cur.dump.as_deref()?;
        }
        Some(cur)
    }

    fn sublist_mut(&mut self, level: usize) -> Option<&mut Frame> {
        if level == 0 {
            return None;
        }
        let mut cur = self;
        for _ in 1..level {
            cur = cur.dump.as_deref_mut()?;
        }
        Some(cur)
    }

    /// Replace the S, E, C registers of the record at `level`, keeping
    /// the chain below it. Returns false when the level does not exist.
    pub fn put(&mut self, level: usize, stack: Vec<Value>, env: Location, code: ControlList) -> bool {
        match self.sublist_mut(level) {
            Some(frame) => {
                frame.stack = stack;
                frame.env = env;
                frame.code = code;
                true
            }
            None => false,
        }
    }

    /// New record on top of an existing chain (install at level 0).
    pub fn pushed(dump: Option<Box<Frame>>, stack: Vec<Value>, env: Location, code: ControlList) -> Frame {
        Frame {
            stack,
            env,
            code,
            dump,
        }
    }
}

/// Coroutine life cycle. Exactly the coroutine at the head of the
/// activation stack is `Running`; the others on the stack are `Normal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Suspended,
    Running,
    Normal,
    Dead,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Suspended => "suspended",
            Status::Running => "running",
            Status::Normal => "normal",
            Status::Dead => "dead",
        }
    }

    pub fn from_name(s: &str) -> Option<Status> {
        Some(match s {
            "suspended" => Status::Suspended,
            "running" => Status::Running,
            "normal" => Status::Normal,
            "dead" => Status::Dead,
            _ => return None,
        })
    }
}

/// Shareable, immutable part of a function: code plus derived metadata.
/// `consts` and `inner` are recomputed from `code` whenever a prototype
/// is built, so they always satisfy their definition.
#[derive(Debug, Clone, PartialEq)]
pub struct Proto {
    pub param: String,
    pub code: ControlList,
    pub consts: Vec<Value>,
    pub inner: Vec<Location>,
}

impl Proto {
    pub fn new(param: String, code: ControlList) -> Proto {
        let consts = crate::instr::collect_consts(&code);
        let inner = crate::instr::collect_inner(&code);
        Proto {
            param,
            code,
            consts,
            inner,
        }
    }
}

/// Environment record: bindings map identifiers to cell locations;
/// lookup walks the parent chain, innermost first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvRec {
    pub bindings: BTreeMap<String, Location>,
    pub parent: Option<Location>,
}

/// Associative container over arbitrary non-nil keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    entries: BTreeMap<TableKey, Value>,
}

impl Table {
    pub fn new() -> Table {
        Table::default()
    }

    pub fn get(&self, key: &Value) -> Value {
        match TableKey::new(key.clone()) {
            Some(k) => self.entries.get(&k).cloned().unwrap_or(Value::Nil),
            None => Value::Nil,
        }
    }

    /// Insert or overwrite; a nil value removes the entry. Returns false
    /// for keys that are not legal (nil, NaN).
    pub fn set(&mut self, key: Value, value: Value) -> bool {
        match TableKey::new(key) {
            Some(k) => {
                if matches!(value, Value::Nil) {
                    self.entries.remove(&k);
                } else {
                    self.entries.insert(k, value);
                }
                true
            }
            None => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Value, &Value)> {
        self.entries.iter().map(|(k, v)| (k.value(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoroutineRec {
    /// Saved frame chain; present only while the coroutine is off the
    /// activation stack (suspended), absent while running and when dead.
    pub frame: Option<Frame>,
    pub status: Status,
}

/// Opaque host resource: enough bookkeeping to reopen the file elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct FileHandleRec {
    pub path: String,
    pub mode: String,
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredValue {
    /// Mutable variable cell, the target of assignment.
    Cell(Value),
    Closure { proto: Location, env: Location },
    Proto(Proto),
    Env(EnvRec),
    Table(Table),
    Coroutine(CoroutineRec),
    File(FileHandleRec),
}

impl StoredValue {
    pub fn kind_name(&self) -> &'static str {
        match self {
            StoredValue::Cell(_) => "cell",
            StoredValue::Closure { .. } => "function",
            StoredValue::Proto(_) => "proto",
            StoredValue::Env(_) => "env",
            StoredValue::Table(_) => "table",
            StoredValue::Coroutine(_) => "thread",
            StoredValue::File(_) => "file",
        }
    }
}

/// Location-to-value map with a monotone allocation counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Store {
    entries: BTreeMap<Location, StoredValue>,
    next_id: u64,
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    pub fn alloc(&mut self, v: StoredValue) -> Location {
        let loc = Location(self.next_id);
        self.next_id += 1;
        self.entries.insert(loc, v);
        loc
    }

    pub fn get(&self, loc: Location) -> Option<&StoredValue> {
        self.entries.get(&loc)
    }

    pub fn get_mut(&mut self, loc: Location) -> Option<&mut StoredValue> {
        self.entries.get_mut(&loc)
    }

    /// Overwrite an existing entry in place (promise fulfilment, cells).
    pub fn replace(&mut self, loc: Location, v: StoredValue) -> bool {
        match self.entries.get_mut(&loc) {
            Some(slot) => {
                *slot = v;
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, loc: Location) -> bool {
        self.entries.contains_key(&loc)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Location, &StoredValue)> {
        self.entries.iter().map(|(l, v)| (*l, v))
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_is_fresh() {
        let mut s = Store::new();
        let a = s.alloc(StoredValue::Cell(Value::Nil));
        let b = s.alloc(StoredValue::Cell(Value::Nil));
        assert_ne!(a, b);
        assert!(s.next_id() > b.0);
    }

    #[test]
    fn table_nil_value_removes() {
        let mut t = Table::new();
        assert!(t.set(Value::Num(1.0), Value::Text("x".into())));
        assert!(t.set(Value::Num(1.0), Value::Nil));
        assert!(t.is_empty());
        assert!(!t.set(Value::Nil, Value::Num(1.0)));
    }

    #[test]
    fn frame_levels() {
        let base = Frame::new(alloc::vec![], Location(0), ControlList::new());
        let top = Frame::pushed(
            Some(Box::new(base)),
            alloc::vec![Value::Num(1.0)],
            Location(0),
            ControlList::new(),
        );
        assert_eq!(top.depth(), 2);
        assert_eq!(top.sublist(1).unwrap().stack.len(), 1);
        assert_eq!(top.sublist(2).unwrap().stack.len(), 0);
        assert!(top.sublist(3).is_none());
        assert!(top.sublist(0).is_none());
    }
}
