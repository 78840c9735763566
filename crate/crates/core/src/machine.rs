//! The machine: an activation stack of coroutines over a store, advanced
//! one transition at a time.
//!
//! A `Machine` is the complete world state — plain data, cheap to clone,
//! safe to hand between threads whole. effectful file instructions go
//! through a `FileHost` passed into `step`, so the state itself never
//! owns host resources.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::MachineError;
use crate::host::{self, FileHost};
use crate::instr::{ControlList, Instruction, PrimOp, ProtoRef};
use crate::store::{CoroutineRec, EnvRec, FileHandleRec, Frame, Status, Store, StoredValue, Table};
use crate::value::{Location, Value};

/// Result of one transition.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Continue,
    /// The root's control and dump are exhausted; carries the top of S.
    /// The state is left untouched so a driver may feed in more code.
    Halted(Value),
}

/// The complete machine state: activation stack, store, observable output.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    /// Active coroutines in activation order, head last.
    activation: Vec<(Location, Frame)>,
    pub store: Store,
    /// Append-only trace written by `print`.
    pub output: Vec<String>,
    /// Names issued for structured values, resolvable by `install`.
    pub handles: BTreeMap<String, Location>,
    /// File handles in open order.
    pub files: Vec<Location>,
    global_env: Location,
    root: Location,
}

impl Default for Machine {
    fn default() -> Self {
        Machine::new()
    }
}

impl Machine {
    pub fn new() -> Machine {
        let mut store = Store::new();
        let global_env = store.alloc(StoredValue::Env(EnvRec::default()));
        let root = store.alloc(StoredValue::Coroutine(CoroutineRec {
            frame: None,
            status: Status::Running,
        }));
        Machine {
            activation: alloc::vec![(root, Frame::new(Vec::new(), global_env, ControlList::new()))],
            store,
            output: Vec::new(),
            handles: BTreeMap::new(),
            files: Vec::new(),
            global_env,
            root,
        }
    }

    pub fn global_env(&self) -> Location {
        self.global_env
    }

    pub fn root(&self) -> Location {
        self.root
    }

    pub fn running(&self) -> Location {
        self.activation.last().expect("activation stack is never empty").0
    }

    pub fn running_frame(&self) -> &Frame {
        &self.activation.last().expect("activation stack is never empty").1
    }

    pub fn running_frame_mut(&mut self) -> &mut Frame {
        &mut self.activation.last_mut().expect("activation stack is never empty").1
    }

    pub fn activation_len(&self) -> usize {
        self.activation.len()
    }

    pub fn on_activation(&self, coro: Location) -> bool {
        self.activation.iter().any(|(l, _)| *l == coro)
    }

    /// Push a value onto the running frame's stack (driver-level entry).
    pub fn push_value(&mut self, v: Value) {
        self.running_frame_mut().stack.insert(0, v);
    }

    /// Append instructions to the running frame's control list.
    pub fn append_code<I: IntoIterator<Item = Instruction>>(&mut self, code: I) {
        let frame = self.running_frame_mut();
        frame.code.extend(code);
    }

    // ---- store conveniences ----

    pub fn new_table(&mut self) -> Location {
        self.store.alloc(StoredValue::Table(Table::new()))
    }

    pub fn table(&self, loc: Location) -> Option<&Table> {
        match self.store.get(loc) {
            Some(StoredValue::Table(t)) => Some(t),
            _ => None,
        }
    }

    pub fn table_get(&self, loc: Location, key: &Value) -> Value {
        self.table(loc).map(|t| t.get(key)).unwrap_or(Value::Nil)
    }

    pub fn table_set(&mut self, loc: Location, key: Value, value: Value) -> Result<(), MachineError> {
        match self.store.get_mut(loc) {
            Some(StoredValue::Table(t)) => {
                if t.set(key.clone(), value) {
                    Ok(())
                } else {
                    Err(MachineError::type_error("put", key))
                }
            }
            _ => Err(MachineError::type_error("put", loc)),
        }
    }

    pub fn coroutine(&self, loc: Location) -> Option<&CoroutineRec> {
        match self.store.get(loc) {
            Some(StoredValue::Coroutine(c)) => Some(c),
            _ => None,
        }
    }

    pub fn coroutine_status(&self, loc: Location) -> Option<Status> {
        self.coroutine(loc).map(|c| c.status)
    }

    /// Frame chain of a coroutine, wherever it lives: the store for
    /// suspended coroutines, the activation stack for live ones.
    pub fn find_frames(&self, coro: Location) -> Option<&Frame> {
        if let Some((_, frame)) = self.activation.iter().find(|(l, _)| *l == coro) {
            return Some(frame);
        }
        match self.store.get(coro) {
            Some(StoredValue::Coroutine(c)) => c.frame.as_ref(),
            _ => None,
        }
    }

    pub fn frame_depth(&self, coro: Location) -> usize {
        self.find_frames(coro).map(|f| f.depth()).unwrap_or(0)
    }

    // ---- environments ----

    pub fn new_env(&mut self, parent: Option<Location>) -> Location {
        self.store.alloc(StoredValue::Env(EnvRec {
            bindings: BTreeMap::new(),
            parent,
        }))
    }

    /// Chained lookup, innermost wins. Returns the bound cell.
    pub fn lookup_cell(&self, mut env: Location, name: &str) -> Option<Location> {
        loop {
            match self.store.get(env)? {
                StoredValue::Env(rec) => {
                    if let Some(cell) = rec.bindings.get(name) {
                        return Some(*cell);
                    }
                    env = rec.parent?;
                }
                _ => return None,
            }
        }
    }

    pub fn read_var(&self, env: Location, name: &str) -> Result<Value, MachineError> {
        let cell = self
            .lookup_cell(env, name)
            .ok_or_else(|| MachineError::UnknownVariable(String::from(name)))?;
        match self.store.get(cell) {
            Some(StoredValue::Cell(v)) => Ok(v.clone()),
            _ => Err(MachineError::InvalidLocation(cell)),
        }
    }

    /// Bind `name` to a fresh cell in `env`, shadowing any outer binding.
    pub fn define_in(&mut self, env: Location, name: &str, v: Value) -> Result<Location, MachineError> {
        let cell = self.store.alloc(StoredValue::Cell(v));
        match self.store.get_mut(env) {
            Some(StoredValue::Env(rec)) => {
                rec.bindings.insert(String::from(name), cell);
                Ok(cell)
            }
            _ => Err(MachineError::InvalidLocation(env)),
        }
    }

    /// Bind a global visible to every program run on this machine.
    pub fn define_global(&mut self, name: &str, v: Value) -> Result<Location, MachineError> {
        let genv = self.global_env;
        self.define_in(genv, name, v)
    }

    // ---- file handles ----

    pub fn file_handle(&self, loc: Location) -> Option<&FileHandleRec> {
        match self.store.get(loc) {
            Some(StoredValue::File(f)) => Some(f),
            _ => None,
        }
    }

    /// Open a file through the host and record the handle in the
    /// per-machine registry.
    pub fn open_file<H: FileHost + ?Sized>(
        &mut self,
        host: &mut H,
        path: &str,
        mode: &str,
    ) -> Result<Location, MachineError> {
        let position = host::open_with_mode(host, path, mode)?;
        let loc = self.store.alloc(StoredValue::File(FileHandleRec {
            path: String::from(path),
            mode: String::from(mode),
            position,
        }));
        self.files.push(loc);
        Ok(loc)
    }

    // ---- stepping ----

    /// Apply exactly one transition rule, selected by the head
    /// instruction of the running frame (or the return rules when its
    /// control list is empty). On error the state is unchanged, except
    /// for reflection instructions, which consume their operands first.
    pub fn step<H: FileHost + ?Sized>(&mut self, host: &mut H) -> Result<Step, MachineError> {
        let frame = self.running_frame();

        if frame.code.is_empty() {
            return self.step_return();
        }

        // Reflection instructions re-enter the machine as a whole, so
        // they are dispatched outside the split-borrow fast path.
        match frame.code.front() {
            Some(Instruction::Reify)
            | Some(Instruction::Install)
            | Some(Instruction::NameOf)
            | Some(Instruction::FieldsOf) => return self.step_reflect(),
            _ => {}
        }

        let Machine {
            activation,
            store,
            output,
            files,
            ..
        } = self;
        let a_len = activation.len();
        let (_, frame) = activation.last_mut().expect("running frame");
        let ins = frame.code.front().cloned().expect("nonempty control");

        match ins {
            Instruction::Const(v) => {
                frame.code.pop_front();
                frame.stack.insert(0, v);
            }
            Instruction::Var(x) => {
                let cell = lookup_cell_in(store, frame.env, &x)
                    .ok_or(MachineError::UnknownVariable(x))?;
                let v = match store.get(cell) {
                    Some(StoredValue::Cell(v)) => v.clone(),
                    _ => return Err(MachineError::InvalidLocation(cell)),
                };
                frame.code.pop_front();
                frame.stack.insert(0, v);
            }
            Instruction::MakeClosure(ProtoRef::Loc(proto)) => {
                if !matches!(store.get(proto), Some(StoredValue::Proto(_))) {
                    return Err(MachineError::InvalidLocation(proto));
                }
                let clo = store.alloc(StoredValue::Closure {
                    proto,
                    env: frame.env,
                });
                frame.code.pop_front();
                frame.stack.insert(0, Value::Loc(clo));
            }
            Instruction::MakeClosure(ProtoRef::Index(_)) => {
                return Err(MachineError::type_error("closure", "unlinked prototype index"));
            }
            Instruction::Ap => {
                if frame.stack.len() < 2 {
                    return Err(MachineError::type_error("ap", &frame.stack));
                }
                let (proto, cenv) = match frame.stack[1] {
                    Value::Loc(l) => match store.get(l) {
                        Some(StoredValue::Closure { proto, env }) => (*proto, *env),
                        _ => return Err(MachineError::type_error("ap", &frame.stack[1])),
                    },
                    _ => return Err(MachineError::type_error("ap", &frame.stack[1])),
                };
                let code = match store.get(proto) {
                    Some(StoredValue::Proto(p)) => p.code.clone(),
                    _ => return Err(MachineError::InvalidLocation(proto)),
                };
                let param = match store.get(proto) {
                    Some(StoredValue::Proto(p)) => p.param.clone(),
                    _ => unreachable!(),
                };
                let arg = frame.stack.remove(0);
                frame.stack.remove(0);
                frame.code.pop_front();
                let cell = store.alloc(StoredValue::Cell(arg));
                let mut bindings = BTreeMap::new();
                bindings.insert(param, cell);
                let env = store.alloc(StoredValue::Env(EnvRec {
                    bindings,
                    parent: Some(cenv),
                }));
                let caller = core::mem::replace(frame, Frame::new(Vec::new(), env, code));
                frame.dump = Some(Box::new(caller));
            }
            Instruction::Prim(op) => {
                let n = op.arity();
                if frame.stack.len() < n {
                    return Err(MachineError::type_error(op.name(), &frame.stack));
                }
                // Operands were pushed first-to-last, so the last sits on top.
                let mut args: Vec<Value> = frame.stack[..n].to_vec();
                args.reverse();
                let v = apply_prim(op, &args, output)?;
                frame.stack.drain(..n);
                frame.code.pop_front();
                frame.stack.insert(0, v);
            }
            Instruction::Set(x) => {
                let cell = lookup_cell_in(store, frame.env, &x)
                    .ok_or(MachineError::UnknownVariable(x))?;
                let v = frame
                    .stack
                    .first()
                    .cloned()
                    .ok_or_else(|| MachineError::type_error("set", "empty stack"))?;
                store.replace(cell, StoredValue::Cell(v));
                frame.code.pop_front();
            }
            Instruction::Sel(then_arm, else_arm) => {
                let b = match frame.stack.first() {
                    Some(Value::Bool(b)) => *b,
                    other => return Err(MachineError::type_error("sel", other)),
                };
                frame.stack.remove(0);
                frame.code.pop_front();
                let arm = if b { then_arm } else { else_arm };
                for i in arm.into_iter().rev() {
                    frame.code.push_front(i);
                }
            }
            Instruction::Join => {
                frame.code.pop_front();
            }
            Instruction::Create => {
                let clo = match frame.stack.first() {
                    Some(Value::Loc(l))
                        if matches!(store.get(*l), Some(StoredValue::Closure { .. })) =>
                    {
                        *l
                    }
                    _ => return Err(MachineError::NotAClosure),
                };
                frame.stack.remove(0);
                frame.code.pop_front();
                let env = store.alloc(StoredValue::Env(EnvRec::default()));
                let boot = Frame::new(
                    alloc::vec![Value::Loc(clo)],
                    env,
                    ControlList::from(alloc::vec![Instruction::Ap]),
                );
                let coro = store.alloc(StoredValue::Coroutine(CoroutineRec {
                    frame: Some(boot),
                    status: Status::Suspended,
                }));
                frame.stack.insert(0, Value::Loc(coro));
            }
            Instruction::Resume => {
                if frame.stack.len() < 2 {
                    return Err(MachineError::type_error("resume", &frame.stack));
                }
                let target = match frame.stack[0] {
                    Value::Loc(l) => l,
                    _ => return Err(MachineError::type_error("resume", &frame.stack[0])),
                };
                let rec = match store.get(target) {
                    Some(StoredValue::Coroutine(c)) => c,
                    _ => return Err(MachineError::type_error("resume", &frame.stack[0])),
                };
                if rec.status != Status::Suspended {
                    return Err(MachineError::ResumeNonSuspended(rec.status));
                }
                if rec.frame.is_none() {
                    return Err(MachineError::EmptyCoroutine);
                }
                frame.stack.remove(0);
                let arg = frame.stack.remove(0);
                frame.code.pop_front();
                let mut resumed = match store.get_mut(target) {
                    Some(StoredValue::Coroutine(c)) => {
                        c.status = Status::Running;
                        c.frame.take().expect("frame checked above")
                    }
                    _ => unreachable!(),
                };
                resumed.stack.insert(0, arg);
                let (prev, _) = activation.last().expect("running frame");
                if let Some(StoredValue::Coroutine(c)) = store.get_mut(*prev) {
                    c.status = Status::Normal;
                }
                activation.push((target, resumed));
            }
            Instruction::Yield => {
                if a_len < 2 {
                    return Err(MachineError::YieldFromRoot);
                }
                if frame.stack.is_empty() {
                    return Err(MachineError::type_error("yield", "empty stack"));
                }
                let v = frame.stack.remove(0);
                frame.code.pop_front();
                let (loc, suspended) = activation.pop().expect("len checked");
                if let Some(StoredValue::Coroutine(c)) = store.get_mut(loc) {
                    c.status = Status::Suspended;
                    c.frame = Some(suspended);
                }
                let (back, frame) = activation.last_mut().expect("len checked");
                if let Some(StoredValue::Coroutine(c)) = store.get_mut(*back) {
                    c.status = Status::Running;
                }
                frame.stack.insert(0, v);
            }
            Instruction::NewThread => {
                frame.code.pop_front();
                let coro = store.alloc(StoredValue::Coroutine(CoroutineRec {
                    frame: None,
                    status: Status::Suspended,
                }));
                frame.stack.insert(0, Value::Loc(coro));
            }
            Instruction::TableNew => {
                frame.code.pop_front();
                let t = store.alloc(StoredValue::Table(Table::new()));
                frame.stack.insert(0, Value::Loc(t));
            }
            Instruction::TableGet => {
                if frame.stack.len() < 2 {
                    return Err(MachineError::type_error("get", &frame.stack));
                }
                let t = match frame.stack[1] {
                    Value::Loc(l) if matches!(store.get(l), Some(StoredValue::Table(_))) => l,
                    _ => return Err(MachineError::type_error("get", &frame.stack[1])),
                };
                let key = frame.stack.remove(0);
                frame.stack.remove(0);
                frame.code.pop_front();
                let v = match store.get(t) {
                    Some(StoredValue::Table(tbl)) => tbl.get(&key),
                    _ => unreachable!(),
                };
                frame.stack.insert(0, v);
            }
            Instruction::TableSet => {
                if frame.stack.len() < 3 {
                    return Err(MachineError::type_error("put", &frame.stack));
                }
                let t = match frame.stack[2] {
                    Value::Loc(l) if matches!(store.get(l), Some(StoredValue::Table(_))) => l,
                    _ => return Err(MachineError::type_error("put", &frame.stack[2])),
                };
                let value = frame.stack.remove(0);
                let key = frame.stack.remove(0);
                frame.stack.remove(0);
                frame.code.pop_front();
                match store.get_mut(t) {
                    Some(StoredValue::Table(tbl)) => {
                        if !tbl.set(key.clone(), value) {
                            return Err(MachineError::type_error("put", key));
                        }
                    }
                    _ => unreachable!(),
                }
                frame.stack.insert(0, Value::Loc(t));
            }
            Instruction::OpenFile => {
                if frame.stack.len() < 2 {
                    return Err(MachineError::type_error("open", &frame.stack));
                }
                let (path, mode) = match (&frame.stack[1], &frame.stack[0]) {
                    (Value::Text(p), Value::Text(m)) => (p.clone(), m.clone()),
                    other => return Err(MachineError::type_error("open", other)),
                };
                let position = host::open_with_mode(host, &path, &mode)?;
                frame.stack.remove(0);
                frame.stack.remove(0);
                frame.code.pop_front();
                let loc = store.alloc(StoredValue::File(FileHandleRec {
                    path,
                    mode,
                    position,
                }));
                files.push(loc);
                frame.stack.insert(0, Value::Loc(loc));
            }
            Instruction::WriteFile => {
                if frame.stack.len() < 2 {
                    return Err(MachineError::type_error("write", &frame.stack));
                }
                let handle = match frame.stack[1] {
                    Value::Loc(l) if matches!(store.get(l), Some(StoredValue::File(_))) => l,
                    _ => return Err(MachineError::type_error("write", &frame.stack[1])),
                };
                let text = match &frame.stack[0] {
                    Value::Text(s) => s.clone(),
                    other => return Err(MachineError::type_error("write", other)),
                };
                let (path, position) = match store.get(handle) {
                    Some(StoredValue::File(f)) => {
                        if !host::mode_writable(&f.mode) {
                            return Err(MachineError::type_error("write", &f.mode));
                        }
                        (f.path.clone(), f.position)
                    }
                    _ => unreachable!(),
                };
                host.write(&path, position, text.as_bytes())?;
                frame.stack.remove(0);
                frame.stack.remove(0);
                frame.code.pop_front();
                if let Some(StoredValue::File(f)) = store.get_mut(handle) {
                    f.position += text.len() as u64;
                }
                frame.stack.insert(0, Value::Loc(handle));
            }
            Instruction::ReadFile => {
                if frame.stack.len() < 2 {
                    return Err(MachineError::type_error("read", &frame.stack));
                }
                let handle = match frame.stack[1] {
                    Value::Loc(l) if matches!(store.get(l), Some(StoredValue::File(_))) => l,
                    _ => return Err(MachineError::type_error("read", &frame.stack[1])),
                };
                let n = match frame.stack[0] {
                    Value::Num(n) if n >= 0.0 => n as u64,
                    ref other => return Err(MachineError::type_error("read", other)),
                };
                let (path, position) = match store.get(handle) {
                    Some(StoredValue::File(f)) => {
                        if !host::mode_readable(&f.mode) {
                            return Err(MachineError::type_error("read", &f.mode));
                        }
                        (f.path.clone(), f.position)
                    }
                    _ => unreachable!(),
                };
                let data = host.read(&path, position, n)?;
                frame.stack.remove(0);
                frame.stack.remove(0);
                frame.code.pop_front();
                if let Some(StoredValue::File(f)) = store.get_mut(handle) {
                    f.position += data.len() as u64;
                }
                frame.stack.insert(0, Value::Text(String::from_utf8_lossy(&data).into_owned()));
            }
            Instruction::Reify
            | Instruction::Install
            | Instruction::NameOf
            | Instruction::FieldsOf => unreachable!("dispatched above"),
        }
        Ok(Step::Continue)
    }

    /// Return rules: pop the dump inside a coroutine, return across
    /// coroutines when the dump is exhausted, halt at the root.
    fn step_return(&mut self) -> Result<Step, MachineError> {
        let frame = self.running_frame();
        let v = frame.stack.first().cloned().unwrap_or(Value::Nil);
        if frame.dump.is_some() {
            let frame = self.running_frame_mut();
            let mut caller = *frame.dump.take().expect("checked");
            caller.stack.insert(0, v);
            *frame = caller;
            return Ok(Step::Continue);
        }
        if self.activation.len() == 1 {
            return Ok(Step::Halted(v));
        }
        let (loc, _) = self.activation.pop().expect("nonempty");
        if let Some(StoredValue::Coroutine(c)) = self.store.get_mut(loc) {
            c.status = Status::Dead;
            c.frame = None;
        }
        let (back, frame) = self.activation.last_mut().expect("nonempty");
        if let Some(StoredValue::Coroutine(c)) = self.store.get_mut(*back) {
            c.status = Status::Running;
        }
        frame.stack.insert(0, v);
        Ok(Step::Continue)
    }

    /// Pop `n` operands off the running stack, top first.
    fn pop_operands(&mut self, op: &str, n: usize) -> Result<Vec<Value>, MachineError> {
        let frame = self.running_frame_mut();
        if frame.stack.len() < n {
            return Err(MachineError::type_error(op, &frame.stack));
        }
        Ok(frame.stack.drain(..n).collect())
    }

    fn step_reflect(&mut self) -> Result<Step, MachineError> {
        let ins = self
            .running_frame_mut()
            .code
            .pop_front()
            .expect("nonempty control");
        match ins {
            Instruction::Reify => {
                let ops = self.pop_operands("reify", 2)?;
                let level = level_from_value(&ops[1])?;
                let rep = crate::reflect::reify(self, &ops[0], level)?;
                self.push_value(rep);
            }
            Instruction::Install => {
                let ops = self.pop_operands("install", 3)?;
                let level = level_from_value(&ops[2])?;
                let target = crate::reflect::InstallTarget::from_value(self, &ops[1])?;
                let v = crate::reflect::install(self, &ops[0], &target, level)?;
                self.push_value(v);
            }
            Instruction::NameOf => {
                let ops = self.pop_operands("name", 1)?;
                let name = crate::reflect::name(self, &ops[0])?;
                self.push_value(Value::Text(name));
            }
            Instruction::FieldsOf => {
                let ops = self.pop_operands("fields", 1)?;
                let ty = match &ops[0] {
                    Value::Text(t) => t.clone(),
                    other => return Err(MachineError::type_error("fields", other)),
                };
                let loc = crate::reflect::fields(self, &ty)?;
                self.push_value(Value::Loc(loc));
            }
            _ => unreachable!("dispatched above"),
        }
        Ok(Step::Continue)
    }

    /// Iterate `step` until the machine halts. Fuel exhaustion is an error.
    pub fn run<H: FileHost + ?Sized>(
        &mut self,
        host: &mut H,
        fuel: Option<u64>,
    ) -> Result<Value, MachineError> {
        let mut left = fuel;
        loop {
            if let Some(f) = left.as_mut() {
                if *f == 0 {
                    return Err(MachineError::FuelExhausted);
                }
                *f -= 1;
            }
            match self.step(host)? {
                Step::Continue => {}
                Step::Halted(v) => return Ok(v),
            }
        }
    }

    /// Call a closure with one argument on top of the current root state
    /// and run to completion.
    pub fn call_value<H: FileHost + ?Sized>(
        &mut self,
        f: Location,
        arg: Value,
        host: &mut H,
        fuel: Option<u64>,
    ) -> Result<Value, MachineError> {
        self.push_value(Value::Loc(f));
        self.push_value(arg);
        self.append_code([Instruction::Ap]);
        self.run(host, fuel)
    }

    /// Walk everything reachable from the activation stack and the
    /// registries and confirm the structural invariants hold.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen: Vec<Location> = Vec::new();
        let mut work: Vec<Location> = Vec::new();
        let note_value = |v: &Value, work: &mut Vec<Location>| {
            if let Value::Loc(l) = v {
                work.push(*l);
            }
        };

        fn note_frame(f: &Frame, work: &mut Vec<Location>) {
            let mut cur = Some(f);
            while let Some(fr) = cur {
                for v in &fr.stack {
                    if let Value::Loc(l) = v {
                        work.push(*l);
                    }
                }
                work.push(fr.env);
                crate::instr::visit_code(&fr.code, &mut |ins| {
                    if let Instruction::MakeClosure(ProtoRef::Loc(l)) = ins {
                        work.push(*l);
                    }
                });
                cur = fr.dump.as_deref();
            }
        }

        for (i, (loc, frame)) in self.activation.iter().enumerate() {
            work.push(*loc);
            note_frame(frame, &mut work);
            let expect = if i + 1 == self.activation.len() {
                Status::Running
            } else {
                Status::Normal
            };
            match self.coroutine_status(*loc) {
                Some(s) if s == expect => {}
                other => {
                    return Err(alloc::format!(
                        "activation entry {i} has status {other:?}, expected {expect:?}"
                    ))
                }
            }
        }
        work.extend(self.files.iter().copied());
        work.extend(self.handles.values().copied());

        while let Some(loc) = work.pop() {
            if seen.contains(&loc) {
                continue;
            }
            seen.push(loc);
            let sv = self
                .store
                .get(loc)
                .ok_or_else(|| alloc::format!("dangling location {loc}"))?;
            match sv {
                StoredValue::Cell(v) => note_value(v, &mut work),
                StoredValue::Closure { proto, env } => {
                    work.push(*proto);
                    work.push(*env);
                }
                StoredValue::Proto(p) => {
                    work.extend(p.inner.iter().copied());
                    crate::instr::visit_code(&p.code, &mut |ins| {
                        if let Instruction::MakeClosure(ProtoRef::Loc(l)) = ins {
                            work.push(*l);
                        }
                    });
                }
                StoredValue::Env(e) => {
                    work.extend(e.bindings.values().copied());
                    if let Some(p) = e.parent {
                        work.push(p);
                    }
                }
                StoredValue::Table(t) => {
                    for (k, v) in t.iter() {
                        note_value(k, &mut work);
                        note_value(v, &mut work);
                    }
                }
                StoredValue::Coroutine(c) => {
                    if c.status == Status::Dead && c.frame.is_some() {
                        return Err(alloc::format!("dead coroutine {loc} still has frames"));
                    }
                    if !self.on_activation(loc)
                        && matches!(c.status, Status::Running | Status::Normal)
                    {
                        return Err(alloc::format!(
                            "off-stack coroutine {loc} claims status {:?}",
                            c.status
                        ));
                    }
                    if let Some(f) = &c.frame {
                        note_frame(f, &mut work);
                    }
                }
                StoredValue::File(_) => {}
            }
        }

        let max = self.store.iter().map(|(l, _)| l.0).max().unwrap_or(0);
        if !self.store.is_empty() && self.store.next_id() <= max {
            return Err(String::from("allocation counter lags behind the store"));
        }
        Ok(())
    }
}

fn level_from_value(v: &Value) -> Result<Option<usize>, MachineError> {
    match v {
        Value::Nil => Ok(None),
        Value::Num(n) if *n >= 0.0 && libm::trunc(*n) == *n => Ok(Some(*n as usize)),
        Value::Num(n) => Err(MachineError::BadLevel(*n as usize)),
        other => Err(MachineError::type_error("level", other)),
    }
}

fn lookup_cell_in(store: &Store, mut env: Location, name: &str) -> Option<Location> {
    loop {
        match store.get(env)? {
            StoredValue::Env(rec) => {
                if let Some(cell) = rec.bindings.get(name) {
                    return Some(*cell);
                }
                env = rec.parent?;
            }
            _ => return None,
        }
    }
}

/// Primitive application. Arguments arrive first-to-last; `print`
/// appends to the output trace and returns nil.
pub fn apply_prim(
    op: PrimOp,
    args: &[Value],
    output: &mut Vec<String>,
) -> Result<Value, MachineError> {
    debug_assert_eq!(args.len(), op.arity());
    match op {
        PrimOp::Add | PrimOp::Sub | PrimOp::Mul | PrimOp::Div => match (&args[0], &args[1]) {
            (Value::Num(a), Value::Num(b)) => Ok(Value::Num(match op {
                PrimOp::Add => a + b,
                PrimOp::Sub => a - b,
                PrimOp::Mul => a * b,
                PrimOp::Div => a / b,
                _ => unreachable!(),
            })),
            _ => Err(MachineError::type_error(op.name(), args)),
        },
        PrimOp::Eq => Ok(Value::Bool(args[0].prim_eq(&args[1]))),
        PrimOp::Lt => match (&args[0], &args[1]) {
            (Value::Num(a), Value::Num(b)) => Ok(Value::Bool(a < b)),
            _ => Err(MachineError::type_error("lt", args)),
        },
        PrimOp::Concat => {
            let part = |v: &Value| -> Result<String, MachineError> {
                match v {
                    Value::Text(s) => Ok(s.clone()),
                    Value::Num(n) => Ok(crate::value::fmt_num(*n)),
                    other => Err(MachineError::type_error("concat", other)),
                }
            };
            let mut s = part(&args[0])?;
            s.push_str(&part(&args[1])?);
            Ok(Value::Text(s))
        }
        PrimOp::Print => {
            output.push(args[0].render());
            Ok(Value::Nil)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::MemFs;
    use crate::store::Proto;

    fn machine_with_code(code: Vec<Instruction>) -> Machine {
        let mut m = Machine::new();
        m.append_code(code);
        m
    }

    #[test]
    fn const_pushes() {
        let mut m = machine_with_code(alloc::vec![Instruction::Const(Value::Num(4.0))]);
        let mut fs = MemFs::new();
        assert_eq!(m.step(&mut fs).unwrap(), Step::Continue);
        assert_eq!(m.running_frame().stack, alloc::vec![Value::Num(4.0)]);
        assert!(m.running_frame().code.is_empty());
    }

    #[test]
    fn empty_control_and_dump_halts_with_top() {
        let mut m = Machine::new();
        m.push_value(Value::Num(7.0));
        let mut fs = MemFs::new();
        assert_eq!(m.step(&mut fs).unwrap(), Step::Halted(Value::Num(7.0)));
        // halting does not consume the state
        assert_eq!(m.step(&mut fs).unwrap(), Step::Halted(Value::Num(7.0)));
    }

    #[test]
    fn empty_stack_halts_with_nil() {
        let mut m = Machine::new();
        let mut fs = MemFs::new();
        assert_eq!(m.run(&mut fs, None).unwrap(), Value::Nil);
    }

    #[test]
    fn inc_application_by_hand() {
        // inc = closure over one parameter returning the parameter plus one
        let mut m = Machine::new();
        let code: ControlList = alloc::vec![
            Instruction::Var(String::from("counter")),
            Instruction::Const(Value::Num(1.0)),
            Instruction::Prim(PrimOp::Add),
        ]
        .into();
        let proto = m.store.alloc(StoredValue::Proto(Proto::new(
            String::from("counter"),
            code,
        )));
        let genv = m.global_env();
        let clo = m.store.alloc(StoredValue::Closure { proto, env: genv });
        let mut fs = MemFs::new();
        let v = m.call_value(clo, Value::Num(1.0), &mut fs, Some(100)).unwrap();
        assert_eq!(v, Value::Num(2.0));
        m.check_invariants().unwrap();
    }

    #[test]
    fn prim_examples() {
        let mut out = Vec::new();
        assert_eq!(
            apply_prim(PrimOp::Add, &[Value::Num(2.0), Value::Num(3.0)], &mut out).unwrap(),
            Value::Num(5.0)
        );
        assert_eq!(
            apply_prim(PrimOp::Eq, &[Value::Num(0.0), Value::Num(0.0)], &mut out).unwrap(),
            Value::Bool(true)
        );
        let err = apply_prim(PrimOp::Lt, &[Value::Text("a".into()), Value::Num(1.0)], &mut out);
        assert!(matches!(err, Err(MachineError::TypeError { .. })));
        assert_eq!(
            apply_prim(PrimOp::Print, &[Value::Num(1.5)], &mut out).unwrap(),
            Value::Nil
        );
        assert_eq!(out, alloc::vec![String::from("1.5")]);
    }

    #[test]
    fn unknown_variable_reports() {
        let mut m = machine_with_code(alloc::vec![Instruction::Var(String::from("nope"))]);
        let mut fs = MemFs::new();
        assert_eq!(
            m.step(&mut fs),
            Err(MachineError::UnknownVariable(String::from("nope")))
        );
    }

    #[test]
    fn sel_takes_bool_only() {
        let mut m = machine_with_code(alloc::vec![
            Instruction::Const(Value::Num(1.0)),
            Instruction::Sel(ControlList::new(), ControlList::new()),
        ]);
        let mut fs = MemFs::new();
        m.step(&mut fs).unwrap();
        assert!(matches!(
            m.step(&mut fs),
            Err(MachineError::TypeError { .. })
        ));
    }

    #[test]
    fn yield_from_root_errors() {
        let mut m = machine_with_code(alloc::vec![
            Instruction::Const(Value::Num(1.0)),
            Instruction::Yield,
        ]);
        let mut fs = MemFs::new();
        m.step(&mut fs).unwrap();
        assert_eq!(m.step(&mut fs), Err(MachineError::YieldFromRoot));
    }

    #[test]
    fn fuel_exhaustion() {
        let mut m = machine_with_code(alloc::vec![
            Instruction::Const(Value::Num(1.0)),
            Instruction::Const(Value::Num(2.0)),
        ]);
        let mut fs = MemFs::new();
        assert_eq!(m.run(&mut fs, Some(1)), Err(MachineError::FuelExhausted));
    }

    #[test]
    fn set_keeps_value_on_stack() {
        let mut m = Machine::new();
        let genv = m.global_env();
        m.define_in(genv, "x", Value::Num(0.0)).unwrap();
        m.append_code(alloc::vec![
            Instruction::Const(Value::Num(9.0)),
            Instruction::Set(String::from("x")),
        ]);
        let mut fs = MemFs::new();
        m.step(&mut fs).unwrap();
        m.step(&mut fs).unwrap();
        assert_eq!(m.running_frame().stack, alloc::vec![Value::Num(9.0)]);
        assert_eq!(m.read_var(genv, "x").unwrap(), Value::Num(9.0));
    }
}
