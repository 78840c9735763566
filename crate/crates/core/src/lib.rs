//! A small stack machine whose running computations are first-class
//! data: coroutines can be reified into editable tables, rebuilt from
//! them, pickled into a self-describing wire form, and resumed on
//! another machine.
//!
//! The crate is `no_std` + `alloc`; everything that touches a real file
//! system or network lives in the companion CLI crate and reaches the
//! machine through the [`host::FileHost`] trait.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod compile;
pub mod corpus;
pub mod driver;
pub mod error;
pub mod host;
pub mod instr;
pub mod machine;
pub mod pickle;
pub mod reflect;
pub mod sexp;
pub mod store;
pub mod value;
pub mod wire;

pub use error::MachineError;
pub use machine::{Machine, Step};
pub use value::{Location, Value};
