//! Program driver: the harness side of a run.
//!
//! A program evaluates to its main closure; the driver wraps that
//! closure in a coroutine and resumes it until it returns, handing the
//! program argument to the first resume. A yield that reaches the root
//! hands control back here — that is the checkpoint/migration moment;
//! the driver loop itself is never part of the captured computation.

use alloc::vec::Vec;
use core::fmt;

use crate::compile::{self, CompiledUnit};
use crate::error::MachineError;
use crate::host::FileHost;
use crate::instr::Instruction;
use crate::machine::Machine;
use crate::store::Status;
use crate::value::{Location, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Leg {
    /// The program coroutine yielded this value to the driver.
    Yielded(Value),
    /// The program coroutine returned; it is dead now.
    Returned(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriveError {
    Machine(MachineError),
    /// The program finished before reaching the requested yield.
    NeverYielded { returned: Value, yields_seen: u64 },
}

impl fmt::Display for DriveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriveError::Machine(e) => write!(f, "{e}"),
            DriveError::NeverYielded { yields_seen, .. } => {
                write!(f, "program returned after {yields_seen} yield(s)")
            }
        }
    }
}

impl From<MachineError> for DriveError {
    fn from(e: MachineError) -> Self {
        DriveError::Machine(e)
    }
}

/// Result of launching a program.
pub enum Launch {
    /// The program was a plain expression; it already ran to its value.
    Finished(Machine, Value),
    /// The program's value was a closure, now parked in a coroutine.
    Driven(Driver),
}

/// Evaluate a unit and, when it yields a main closure, park that
/// closure in a fresh coroutine ready for driving. With several
/// arguments, all but the last are applied directly (closures curry);
/// the last one rides on the first resume.
pub fn launch<H: FileHost + ?Sized>(
    unit: &CompiledUnit,
    args: &[Value],
    host: &mut H,
    fuel: Option<u64>,
) -> Result<Launch, MachineError> {
    let mut m = Machine::new();
    let mut value = compile::eval_unit(&mut m, unit, host, fuel)?;
    if !matches!(value, Value::Loc(l) if matches!(m.store.get(l), Some(crate::store::StoredValue::Closure { .. })))
    {
        return Ok(Launch::Finished(m, value));
    }
    let (pre, last) = match args {
        [] => (&[] as &[Value], Value::Nil),
        [rest @ .., l] => (rest, l.clone()),
    };
    for a in pre {
        let clo = value.as_loc().expect("checked closure");
        value = m.call_value(clo, a.clone(), host, fuel)?;
        if !matches!(value, Value::Loc(l) if matches!(m.store.get(l), Some(crate::store::StoredValue::Closure { .. })))
        {
            return Ok(Launch::Finished(m, value));
        }
    }
    // the closure is on top of the root stack after evaluation
    m.running_frame_mut().stack.clear();
    m.push_value(value);
    m.append_code([Instruction::Create]);
    let co = match m.run(host, fuel)? {
        Value::Loc(l) => l,
        other => return Err(MachineError::type_error("create", other)),
    };
    Ok(Launch::Driven(Driver::attach(m, co, last)))
}

/// Drives one program coroutine inside one machine.
pub struct Driver {
    pub machine: Machine,
    pub co: Location,
    /// Argument for the next resume; the program argument first, nil after.
    next_arg: Value,
    pub yields: u64,
}

impl Driver {
    /// Take over an existing suspended coroutine (e.g. a restored one).
    pub fn attach(machine: Machine, co: Location, first_arg: Value) -> Driver {
        Driver {
            machine,
            co,
            next_arg: first_arg,
            yields: 0,
        }
    }

    pub fn status(&self) -> Option<Status> {
        self.machine.coroutine_status(self.co)
    }

    /// Resume the program once and run until control returns to the
    /// driver, either through a yield or through program return.
    pub fn resume_once<H: FileHost + ?Sized>(
        &mut self,
        host: &mut H,
        fuel: Option<u64>,
    ) -> Result<Leg, MachineError> {
        let arg = core::mem::replace(&mut self.next_arg, Value::Nil);
        self.machine.running_frame_mut().stack.clear();
        self.machine.push_value(arg);
        self.machine.push_value(Value::Loc(self.co));
        self.machine.append_code([Instruction::Resume]);
        let v = self.machine.run(host, fuel)?;
        match self.machine.coroutine_status(self.co) {
            Some(Status::Dead) => Ok(Leg::Returned(v)),
            Some(Status::Suspended) => {
                self.yields += 1;
                Ok(Leg::Yielded(v))
            }
            other => Err(MachineError::type_error("driver", other)),
        }
    }

    /// Resume through every yield until the program returns: the
    /// uninterrupted-run semantics.
    pub fn run_to_end<H: FileHost + ?Sized>(
        &mut self,
        host: &mut H,
        fuel: Option<u64>,
    ) -> Result<Value, MachineError> {
        loop {
            match self.resume_once(host, fuel)? {
                Leg::Yielded(_) => {}
                Leg::Returned(v) => return Ok(v),
            }
        }
    }

    /// Resume until the k-th yield (counting from the driver's start).
    pub fn drive_to_yield<H: FileHost + ?Sized>(
        &mut self,
        k: u64,
        host: &mut H,
        fuel: Option<u64>,
    ) -> Result<Value, DriveError> {
        loop {
            match self.resume_once(host, fuel)? {
                Leg::Yielded(v) => {
                    if self.yields >= k {
                        return Ok(v);
                    }
                }
                Leg::Returned(returned) => {
                    return Err(DriveError::NeverYielded {
                        returned,
                        yields_seen: self.yields,
                    })
                }
            }
        }
    }

    pub fn output(&self) -> &[alloc::string::String] {
        &self.machine.output
    }
}

/// Run a program to completion the way `run` does on the command line:
/// returns the final value, the output trace, and the yield count.
pub fn run_program<H: FileHost + ?Sized>(
    unit: &CompiledUnit,
    args: &[Value],
    host: &mut H,
    fuel: Option<u64>,
) -> Result<(Value, Vec<alloc::string::String>, u64), MachineError> {
    match launch(unit, args, host, fuel)? {
        Launch::Finished(m, v) => Ok((v, m.output, 0)),
        Launch::Driven(mut d) => {
            let v = d.run_to_end(host, fuel)?;
            Ok((v, d.machine.output, d.yields))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::MemFs;

    const COUNT: &str = r#"
(define count
  (lambda (_)
    (begin
      (define i 1)
      (while (<= i 5)
        (print (concat "Number " i))
        (yield i)
        (set! i (+ i 1))))))
count
"#;

    #[test]
    fn drives_count_through_all_yields() {
        let unit = compile::compile_program(COUNT).unwrap();
        let mut fs = MemFs::new();
        let (_, output, yields) = run_program(&unit, &[], &mut fs, Some(1_000_000)).unwrap();
        assert_eq!(yields, 5);
        assert_eq!(
            output,
            alloc::vec![
                "Number 1".to_string(),
                "Number 2".to_string(),
                "Number 3".to_string(),
                "Number 4".to_string(),
                "Number 5".to_string()
            ]
        );
    }

    #[test]
    fn drive_to_third_yield_suspends_there() {
        let unit = compile::compile_program(COUNT).unwrap();
        let mut fs = MemFs::new();
        let mut d = match launch(&unit, &[], &mut fs, Some(1_000_000)).unwrap() {
            Launch::Driven(d) => d,
            _ => panic!("count is driveable"),
        };
        let v = d.drive_to_yield(3, &mut fs, Some(1_000_000)).unwrap();
        assert_eq!(v, Value::Num(3.0));
        assert_eq!(d.status(), Some(Status::Suspended));
        assert_eq!(d.output().len(), 3);
        d.machine.check_invariants().unwrap();
    }

    #[test]
    fn plain_expression_is_finished() {
        let unit = compile::compile_program("(+ 1 2)").unwrap();
        let mut fs = MemFs::new();
        match launch(&unit, &[], &mut fs, Some(10_000)).unwrap() {
            Launch::Finished(_, v) => assert_eq!(v, Value::Num(3.0)),
            _ => panic!("expression programs finish at launch"),
        }
    }

    #[test]
    fn argument_rides_first_resume() {
        let unit = compile::compile_program("(lambda (n) (* n n))").unwrap();
        let mut fs = MemFs::new();
        let (v, _, yields) =
            run_program(&unit, &[Value::Num(7.0)], &mut fs, Some(10_000)).unwrap();
        assert_eq!(v, Value::Num(49.0));
        assert_eq!(yields, 0);
    }

    #[test]
    fn never_yielded_reports() {
        let unit = compile::compile_program("(lambda (n) n)").unwrap();
        let mut fs = MemFs::new();
        let mut d = match launch(&unit, &[Value::Num(1.0)], &mut fs, None).unwrap() {
            Launch::Driven(d) => d,
            _ => panic!(),
        };
        assert!(matches!(
            d.drive_to_yield(1, &mut fs, Some(10_000)),
            Err(DriveError::NeverYielded { .. })
        ));
    }
}
