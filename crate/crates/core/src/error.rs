//! Machine-level errors. Every error aborts the step that raised it and
//! names the rule or operation at fault; the state is left as it was
//! before the step.

use alloc::string::String;
use core::fmt;

use crate::host::HostError;
use crate::store::Status;
use crate::value::Location;

#[derive(Debug, Clone, PartialEq)]
pub enum MachineError {
    /// Variable not bound anywhere on the environment chain.
    UnknownVariable(String),
    /// An operation met operands of the wrong dynamic type. Carries the
    /// operation name and a rendering of the offending operands.
    TypeError { op: String, operands: String },
    /// Resume of a coroutine that is not suspended.
    ResumeNonSuspended(Status),
    /// Resume of an empty coroutine (fresh `newthread`, nothing to run).
    EmptyCoroutine,
    /// Yield while only the root is on the activation stack and no
    /// harness is driving the machine.
    YieldFromRoot,
    /// `create` applied to something that is not a closure.
    NotAClosure,
    /// Step budget exhausted before the machine halted.
    FuelExhausted,
    /// A location escaped the store; indicates a corrupted state.
    InvalidLocation(Location),

    /// Reification of an atomic value (atoms need no representation).
    ReifyAtomic,
    /// Reification of a coroutine that is live on the activation stack.
    ReifyRunning,
    /// `name` of an atomic value.
    NameOfAtomic,
    /// Type name outside the closed set.
    UnknownTypeName(String),
    /// A representation did not have the shape its target requires.
    ShapeMismatch(String),
    /// A handle whose name is unknown to this machine's registry.
    UnresolvedHandle(String),
    /// Installation into a coroutine that is live on the activation stack.
    InstallIntoRunning,
    /// Frame level outside 0..=depth on install.
    BadLevel(usize),
    /// Install target kind that cannot be built from a representation.
    InstallUnsupported(String),
    /// `setstatus` on the running coroutine, or to `running`.
    SetStatusRunning,
    /// `setstatus` to suspended on a coroutine with no frames.
    SuspendedWithoutFrames,

    /// Host file system failure.
    Host(HostError),
}

impl fmt::Display for MachineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MachineError::UnknownVariable(x) => write!(f, "unknown variable `{x}`"),
            MachineError::TypeError { op, operands } => {
                write!(f, "type error in `{op}` on {operands}")
            }
            MachineError::ResumeNonSuspended(s) => {
                write!(f, "resume of a {} coroutine", s.name())
            }
            MachineError::EmptyCoroutine => write!(f, "resume of an empty coroutine"),
            MachineError::YieldFromRoot => write!(f, "yield from the root with no harness attached"),
            MachineError::NotAClosure => write!(f, "create needs a closure"),
            MachineError::FuelExhausted => write!(f, "step budget exhausted"),
            MachineError::InvalidLocation(l) => write!(f, "dangling location {l}"),
            MachineError::ReifyAtomic => write!(f, "cannot reify an atomic value"),
            MachineError::ReifyRunning => write!(f, "cannot reify a coroutine on the activation stack"),
            MachineError::NameOfAtomic => write!(f, "atomic values have no name"),
            MachineError::UnknownTypeName(t) => write!(f, "unknown type name `{t}`"),
            MachineError::ShapeMismatch(field) => write!(f, "representation shape mismatch at `{field}`"),
            MachineError::UnresolvedHandle(name) => write!(f, "unresolved handle `{name}`"),
            MachineError::InstallIntoRunning => {
                write!(f, "cannot install into a coroutine on the activation stack")
            }
            MachineError::BadLevel(n) => write!(f, "no frame at level {n}"),
            MachineError::InstallUnsupported(k) => write!(f, "cannot install a value of type `{k}`"),
            MachineError::SetStatusRunning => write!(f, "setstatus cannot touch the running coroutine"),
            MachineError::SuspendedWithoutFrames => {
                write!(f, "a suspended coroutine needs at least one frame")
            }
            MachineError::Host(e) => write!(f, "{e}"),
        }
    }
}

impl From<HostError> for MachineError {
    fn from(e: HostError) -> Self {
        MachineError::Host(e)
    }
}

impl MachineError {
    pub fn type_error(op: &str, operands: impl fmt::Debug) -> MachineError {
        MachineError::TypeError {
            op: String::from(op),
            operands: alloc::format!("{operands:?}"),
        }
    }
}
