//! Instruction set of the machine.
//!
//! The control register of a frame is a plain list of instructions;
//! branching splices the chosen arm (terminated by `Join`) in front of
//! the remaining control, so a suspended frame's control list is always
//! the literal continuation from the suspension point onward.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use crate::value::{Location, Value};

pub type ControlList = VecDeque<Instruction>;

/// Reference to a function prototype. Compiled units address prototypes
/// by index; once loaded into a store every reference is a `Location`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtoRef {
    Index(usize),
    Loc(Location),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    /// Push an atomic constant.
    Const(Value),
    /// Push the value of a variable looked up through the environment chain.
    Var(String),
    /// Allocate a closure over the given prototype and the current environment.
    MakeClosure(ProtoRef),
    /// Apply: pops argument then closure, opens a new activation record.
    Ap,
    /// Apply a primitive operation to its operands on the stack.
    Prim(PrimOp),
    /// Assign the top of stack to an existing binding; the value stays on S.
    Set(String),
    /// Pop a boolean and continue with one of the two arms.
    Sel(ControlList, ControlList),
    /// Arm terminator emitted by the compiler; a no-op when executed.
    Join,
    /// Pop a closure, allocate a suspended coroutine booted on it.
    Create,
    /// Pop coroutine then argument, transfer control to the coroutine.
    Resume,
    /// Pop a value, suspend the running coroutine, hand the value back.
    Yield,
    /// Allocate an empty coroutine (no frames at all).
    NewThread,
    /// Pop target then level, push a representation table (or nil).
    Reify,
    /// Pop representation, target and level, push the installed value.
    Install,
    /// Pop a structured value, push its platform-unique name.
    NameOf,
    /// Pop a type name, push the field schema table for that type.
    FieldsOf,
    /// Allocate an empty table.
    TableNew,
    /// Pop key then table, push the entry (nil when absent).
    TableGet,
    /// Pop value, key and table; write the entry and push the table back.
    TableSet,
    /// Pop mode then path, open and register a file handle.
    OpenFile,
    /// Pop text then handle, write at the handle's position.
    WriteFile,
    /// Pop byte count then handle, read from the handle's position.
    ReadFile,
}

/// Primitive operations of fixed arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Lt,
    Print,
    Concat,
}

impl PrimOp {
    pub fn arity(self) -> usize {
        match self {
            PrimOp::Print => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimOp::Add => "add",
            PrimOp::Sub => "sub",
            PrimOp::Mul => "mul",
            PrimOp::Div => "div",
            PrimOp::Eq => "eq",
            PrimOp::Lt => "lt",
            PrimOp::Print => "print",
            PrimOp::Concat => "concat",
        }
    }

    pub fn from_name(name: &str) -> Option<PrimOp> {
        Some(match name {
            "add" => PrimOp::Add,
            "sub" => PrimOp::Sub,
            "mul" => PrimOp::Mul,
            "div" => PrimOp::Div,
            "eq" => PrimOp::Eq,
            "lt" => PrimOp::Lt,
            "print" => PrimOp::Print,
            "concat" => PrimOp::Concat,
            _ => return None,
        })
    }
}

/// Walk a control list (including branch arms) in order.
pub fn visit_code<'a, F, I>(code: I, f: &mut F)
where
    F: FnMut(&'a Instruction),
    I: IntoIterator<Item = &'a Instruction>,
{
    for ins in code {
        f(ins);
        if let Instruction::Sel(t, e) = ins {
            visit_code(t, f);
            visit_code(e, f);
        }
    }
}

/// Distinct atomic constants appearing in a control list, in first-use order.
pub fn collect_consts(code: &ControlList) -> Vec<Value> {
    let mut out: Vec<Value> = Vec::new();
    visit_code(code, &mut |ins| {
        if let Instruction::Const(v) = ins {
            if !out.iter().any(|c| c.prim_eq(v)) {
                out.push(v.clone());
            }
        }
    });
    out
}

/// Distinct prototype locations referenced by closure-creating
/// instructions, in first-use order.
pub fn collect_inner(code: &ControlList) -> Vec<Location> {
    let mut out: Vec<Location> = Vec::new();
    visit_code(code, &mut |ins| {
        if let Instruction::MakeClosure(ProtoRef::Loc(l)) = ins {
            if !out.contains(l) {
                out.push(*l);
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consts_dedup_in_order() {
        let code: ControlList = alloc::vec![
            Instruction::Const(Value::Num(1.0)),
            Instruction::Const(Value::Num(2.0)),
            Instruction::Const(Value::Num(1.0)),
        ]
        .into();
        assert_eq!(
            collect_consts(&code),
            alloc::vec![Value::Num(1.0), Value::Num(2.0)]
        );
    }

    #[test]
    fn inner_protos_found_inside_branches() {
        let arm: ControlList = alloc::vec![
            Instruction::MakeClosure(ProtoRef::Loc(Location(9))),
            Instruction::Join,
        ]
        .into();
        let code: ControlList =
            alloc::vec![Instruction::Sel(arm, alloc::vec![Instruction::Join].into())].into();
        assert_eq!(collect_inner(&code), alloc::vec![Location(9)]);
    }
}
