//! Compiler from the surface language to machine code.
//!
//! The translation stays on the machine's own rules: `define` becomes
//! application of a single-parameter closure to nil followed by an
//! assignment into the fresh binding (which is what makes recursive
//! definitions work), sequencing becomes application of a discarding
//! closure, `while` becomes a self-resuming loop closure, and
//! multi-parameter lambdas curry into nested single-parameter ones.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::MachineError;
use crate::host::FileHost;
use crate::instr::{ControlList, Instruction, PrimOp, ProtoRef};
use crate::machine::Machine;
use crate::sexp::{self, Atom, ExprNode, SourceExpr, Span, SyntaxError};
use crate::store::{Proto, StoredValue};
use crate::value::{Location, Value};

/// One prototype of a compiled unit; closure references are indices
/// into the unit until the unit is loaded into a store.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtoDef {
    pub param: String,
    pub code: ControlList,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledUnit {
    pub protos: Vec<ProtoDef>,
    /// Index of the program entry prototype (always a closure over one
    /// ignored parameter).
    pub root: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileError {
    pub span: Span,
    pub message: String,
}

impl core::fmt::Display for CompileError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "compile error at {}..{}: {}",
            self.span.start, self.span.end, self.message
        )
    }
}

impl From<SyntaxError> for CompileError {
    fn from(e: SyntaxError) -> Self {
        CompileError {
            span: e.span,
            message: alloc::format!("expected {}", e.expected),
        }
    }
}

fn fail<T>(span: Span, message: impl Into<String>) -> Result<T, CompileError> {
    Err(CompileError {
        span,
        message: message.into(),
    })
}

fn expect_args<'a, const N: usize>(
    span: Span,
    form: &str,
    args: &'a [SourceExpr],
) -> Result<[&'a SourceExpr; N], CompileError> {
    if args.len() != N {
        return fail(span, alloc::format!("{form} takes {N} argument(s)"));
    }
    let mut out = [&args[0]; N];
    for (slot, a) in out.iter_mut().zip(args) {
        *slot = a;
    }
    Ok(out)
}

struct Compiler {
    protos: Vec<ProtoDef>,
    gensym: u32,
}

type Code = Vec<Instruction>;

impl Compiler {
    fn add_proto(&mut self, param: impl Into<String>, code: Code) -> usize {
        self.protos.push(ProtoDef {
            param: param.into(),
            code: code.into(),
        });
        self.protos.len() - 1
    }

    fn fresh_loop_name(&mut self) -> String {
        let n = self.gensym;
        self.gensym += 1;
        alloc::format!("__loop{n}")
    }

    fn expr(&mut self, e: &SourceExpr) -> Result<Code, CompileError> {
        match &e.node {
            ExprNode::Atom(Atom::Num(n)) => Ok(alloc::vec![Instruction::Const(Value::Num(*n))]),
            ExprNode::Atom(Atom::Bool(b)) => Ok(alloc::vec![Instruction::Const(Value::Bool(*b))]),
            ExprNode::Atom(Atom::Nil) => Ok(alloc::vec![Instruction::Const(Value::Nil)]),
            ExprNode::Atom(Atom::Str(s)) => {
                Ok(alloc::vec![Instruction::Const(Value::Text(s.clone()))])
            }
            ExprNode::Atom(Atom::Symbol(s)) => Ok(alloc::vec![Instruction::Var(s.clone())]),
            ExprNode::List(items) => self.form(e.span, items),
        }
    }

    fn form(&mut self, span: Span, items: &[SourceExpr]) -> Result<Code, CompileError> {
        if items.is_empty() {
            return fail(span, "empty application");
        }
        let head = match items[0].as_symbol() {
            Some(s) => s,
            None => return self.application(items),
        };
        let args = &items[1..];
        match head {
            "lambda" => self.lambda(span, args),
            "define" => fail(span, "define is only allowed inside a body"),
            "set!" => {
                let [x, v] = expect_args(span, "set!", args)?;
                let name = x
                    .as_symbol()
                    .ok_or_else(|| CompileError {
                        span: x.span,
                        message: String::from("set! needs a variable name"),
                    })?
                    .into();
                let mut code = self.expr(v)?;
                code.push(Instruction::Set(name));
                Ok(code)
            }
            "if" => {
                if args.len() < 2 || args.len() > 3 {
                    return fail(span, "if takes a condition and one or two arms");
                }
                let mut code = self.expr(&args[0])?;
                let mut then_arm = self.expr(&args[1])?;
                then_arm.push(Instruction::Join);
                let mut else_arm = match args.get(2) {
                    Some(e) => self.expr(e)?,
                    None => alloc::vec![Instruction::Const(Value::Nil)],
                };
                else_arm.push(Instruction::Join);
                code.push(Instruction::Sel(then_arm.into(), else_arm.into()));
                Ok(code)
            }
            "begin" => self.seq(span, args, None),
            "while" => {
                if args.is_empty() {
                    return fail(span, "while needs a condition");
                }
                let name = self.fresh_loop_name();
                let call = alloc::vec![
                    Instruction::Var(name.clone()),
                    Instruction::Const(Value::Nil),
                    Instruction::Ap,
                ];
                let mut then_arm = self.seq(span, &args[1..], Some(call.clone()))?;
                then_arm.push(Instruction::Join);
                let else_arm = alloc::vec![Instruction::Const(Value::Nil), Instruction::Join];
                let mut loop_body = self.expr(&args[0])?;
                loop_body.push(Instruction::Sel(then_arm.into(), else_arm.into()));
                let p_loop = self.add_proto("_", loop_body);
                let value = alloc::vec![Instruction::MakeClosure(ProtoRef::Index(p_loop))];
                Ok(self.define_chunk(name, value, Some(call)))
            }
            "create" => self.op1(span, "create", args, Instruction::Create),
            "yield" => {
                let mut code = match args {
                    [] => alloc::vec![Instruction::Const(Value::Nil)],
                    [v] => self.expr(v)?,
                    _ => return fail(span, "yield takes at most one value"),
                };
                code.push(Instruction::Yield);
                Ok(code)
            }
            "resume" => {
                let [c, v] = expect_args(span, "resume", args)?;
                let mut code = self.expr(v)?;
                code.extend(self.expr(c)?);
                code.push(Instruction::Resume);
                Ok(code)
            }
            "newthread" => {
                if !args.is_empty() {
                    return fail(span, "newthread takes no arguments");
                }
                Ok(alloc::vec![Instruction::NewThread])
            }
            "reify" => {
                if args.is_empty() || args.len() > 2 {
                    return fail(span, "reify takes a value and an optional level");
                }
                let mut code = match args.get(1) {
                    Some(n) => self.expr(n)?,
                    None => alloc::vec![Instruction::Const(Value::Nil)],
                };
                code.extend(self.expr(&args[0])?);
                code.push(Instruction::Reify);
                Ok(code)
            }
            "install" => {
                if args.len() < 2 || args.len() > 3 {
                    return fail(span, "install takes a representation, a target and an optional level");
                }
                let mut code = match args.get(2) {
                    Some(n) => self.expr(n)?,
                    None => alloc::vec![Instruction::Const(Value::Nil)],
                };
                code.extend(self.expr(&args[1])?);
                code.extend(self.expr(&args[0])?);
                code.push(Instruction::Install);
                Ok(code)
            }
            "name" => self.op1(span, "name", args, Instruction::NameOf),
            "fields" => self.op1(span, "fields", args, Instruction::FieldsOf),
            "table" => {
                if !args.is_empty() {
                    return fail(span, "table takes no arguments");
                }
                Ok(alloc::vec![Instruction::TableNew])
            }
            "get" => self.opn(span, "get", args, 2, Instruction::TableGet),
            "put" => self.opn(span, "put", args, 3, Instruction::TableSet),
            "open" => self.opn(span, "open", args, 2, Instruction::OpenFile),
            "write" => self.opn(span, "write", args, 2, Instruction::WriteFile),
            "read" => self.opn(span, "read", args, 2, Instruction::ReadFile),
            "+" => self.prim(span, args, PrimOp::Add),
            "-" => self.prim(span, args, PrimOp::Sub),
            "*" => self.prim(span, args, PrimOp::Mul),
            "/" => self.prim(span, args, PrimOp::Div),
            "=" => self.prim(span, args, PrimOp::Eq),
            "<" => self.prim(span, args, PrimOp::Lt),
            "print" => self.prim(span, args, PrimOp::Print),
            "concat" => self.prim(span, args, PrimOp::Concat),
            _ => self.application(items),
        }
    }

    fn op1(
        &mut self,
        span: Span,
        form: &str,
        args: &[SourceExpr],
        ins: Instruction,
    ) -> Result<Code, CompileError> {
        self.opn(span, form, args, 1, ins)
    }

    fn opn(
        &mut self,
        span: Span,
        form: &str,
        args: &[SourceExpr],
        n: usize,
        ins: Instruction,
    ) -> Result<Code, CompileError> {
        if args.len() != n {
            return fail(span, alloc::format!("{form} takes {n} argument(s)"));
        }
        let mut code = Code::new();
        for a in args {
            code.extend(self.expr(a)?);
        }
        code.push(ins);
        Ok(code)
    }

    fn prim(&mut self, span: Span, args: &[SourceExpr], op: PrimOp) -> Result<Code, CompileError> {
        if args.len() != op.arity() {
            return fail(
                span,
                alloc::format!("{} takes {} argument(s)", op.name(), op.arity()),
            );
        }
        let mut code = Code::new();
        for a in args {
            code.extend(self.expr(a)?);
        }
        code.push(Instruction::Prim(op));
        Ok(code)
    }

    fn lambda(&mut self, span: Span, args: &[SourceExpr]) -> Result<Code, CompileError> {
        if args.is_empty() {
            return fail(span, "lambda needs a parameter list");
        }
        let params: Vec<String> = match args[0].as_list() {
            Some(ps) => ps
                .iter()
                .map(|p| {
                    p.as_symbol().map(String::from).ok_or(CompileError {
                        span: p.span,
                        message: String::from("parameters must be symbols"),
                    })
                })
                .collect::<Result<_, _>>()?,
            None => return fail(args[0].span, "lambda needs a parameter list"),
        };
        let body = self.seq(span, &args[1..], None)?;
        // curry: the innermost prototype holds the body, outer ones
        // immediately return the next closure
        let mut idx = match params.last() {
            Some(last) => self.add_proto(last.clone(), body),
            None => self.add_proto("_", body),
        };
        for p in params.iter().rev().skip(1) {
            let code = alloc::vec![Instruction::MakeClosure(ProtoRef::Index(idx))];
            idx = self.add_proto(p.clone(), code);
        }
        Ok(alloc::vec![Instruction::MakeClosure(ProtoRef::Index(idx))])
    }

    fn application(&mut self, items: &[SourceExpr]) -> Result<Code, CompileError> {
        let mut code = self.expr(&items[0])?;
        if items.len() == 1 {
            code.push(Instruction::Const(Value::Nil));
            code.push(Instruction::Ap);
            return Ok(code);
        }
        for arg in &items[1..] {
            code.extend(self.expr(arg)?);
            code.push(Instruction::Ap);
        }
        Ok(code)
    }

    /// Compile an expression sequence: intermediate results are
    /// discarded by applying a continuation closure, `define` opens a
    /// fresh binding scoping over the rest of the sequence, and an
    /// optional tail runs after the last expression.
    fn seq(
        &mut self,
        span: Span,
        exprs: &[SourceExpr],
        tail: Option<Code>,
    ) -> Result<Code, CompileError> {
        let Some((first, rest)) = exprs.split_first() else {
            return Ok(tail.unwrap_or_else(|| alloc::vec![Instruction::Const(Value::Nil)]));
        };

        if let Some(list) = first.as_list() {
            if list.first().and_then(|h| h.as_symbol()) == Some("define") {
                if list.len() != 3 {
                    return fail(first.span, "define takes a name and a value");
                }
                let name = list[1]
                    .as_symbol()
                    .map(String::from)
                    .ok_or(CompileError {
                        span: list[1].span,
                        message: String::from("define needs a variable name"),
                    })?;
                let value = self.expr(&list[2])?;
                let rest_code = if rest.is_empty() && tail.is_none() {
                    None
                } else {
                    Some(self.seq(span, rest, tail)?)
                };
                return Ok(self.define_chunk(name, value, rest_code));
            }
        }

        if rest.is_empty() && tail.is_none() {
            return self.expr(first);
        }
        let rest_code = self.seq(span, rest, tail)?;
        let p_rest = self.add_proto("_", rest_code);
        let mut code = alloc::vec![Instruction::MakeClosure(ProtoRef::Index(p_rest))];
        code.extend(self.expr(first)?);
        code.push(Instruction::Ap);
        Ok(code)
    }

    /// `(define name value) rest…` as machine code: apply a closure
    /// binding `name` to nil, assign the value into the new cell (so the
    /// value may refer to itself), then run the rest.
    fn define_chunk(&mut self, name: String, value: Code, rest: Option<Code>) -> Code {
        let mut body = Code::new();
        match rest {
            None => {
                body.extend(value);
                body.push(Instruction::Set(name.clone()));
            }
            Some(rest_code) => {
                let p_rest = self.add_proto("_", rest_code);
                body.push(Instruction::MakeClosure(ProtoRef::Index(p_rest)));
                body.extend(value);
                body.push(Instruction::Set(name.clone()));
                body.push(Instruction::Ap);
            }
        }
        let p_def = self.add_proto(name, body);
        alloc::vec![
            Instruction::MakeClosure(ProtoRef::Index(p_def)),
            Instruction::Const(Value::Nil),
            Instruction::Ap,
        ]
    }
}

/// Compile a sequence of top-level expressions into a unit whose root
/// prototype evaluates them in order.
pub fn compile_exprs(exprs: &[SourceExpr]) -> Result<CompiledUnit, CompileError> {
    let span = exprs
        .first()
        .map(|e| Span::new(e.span.start, exprs.last().unwrap().span.end))
        .unwrap_or(Span::new(0, 0));
    let mut c = Compiler {
        protos: Vec::new(),
        gensym: 0,
    };
    let code = c.seq(span, exprs, None)?;
    let root = c.add_proto("_", code);
    Ok(CompiledUnit {
        protos: c.protos,
        root,
    })
}

/// Compile a single expression.
pub fn compile(expr: &SourceExpr) -> Result<CompiledUnit, CompileError> {
    compile_exprs(core::slice::from_ref(expr))
}

/// Helper bindings available to every program, compiled in front of it.
pub const PRELUDE: &str = r#"
(define not (lambda (b) (if b false true)))
(define <= (lambda (a b) (not (< b a))))
(define > (lambda (a b) (< b a)))
(define >= (lambda (a b) (not (< a b))))
(define cons (lambda (h t) (put (put (table) 1 h) 2 t)))
(define car (lambda (c) (get c 1)))
(define cdr (lambda (c) (get c 2)))
(define null? (lambda (x) (= x nil)))
"#;

/// Parse and compile a program with the prelude in scope.
pub fn compile_program(text: &str) -> Result<CompiledUnit, CompileError> {
    let mut exprs = sexp::parse_all(PRELUDE).expect("prelude parses");
    exprs.extend(sexp::parse_all(text)?);
    compile_exprs(&exprs)
}

/// Allocate every prototype of a unit into the machine's store, linking
/// closure references, and return the root prototype's location.
pub fn load(m: &mut Machine, unit: &CompiledUnit) -> Result<Location, MachineError> {
    let mut locs: Vec<Location> = Vec::with_capacity(unit.protos.len());
    for def in &unit.protos {
        let code = link_code(&def.code, &locs)?;
        let loc = m
            .store
            .alloc(StoredValue::Proto(Proto::new(def.param.clone(), code)));
        locs.push(loc);
    }
    locs.get(unit.root)
        .copied()
        .ok_or_else(|| MachineError::ShapeMismatch(String::from("root prototype")))
}

fn link_code(code: &ControlList, locs: &[Location]) -> Result<ControlList, MachineError> {
    let mut out = ControlList::new();
    for ins in code {
        out.push_back(match ins {
            Instruction::MakeClosure(ProtoRef::Index(i)) => {
                let loc = locs
                    .get(*i)
                    .copied()
                    .ok_or_else(|| MachineError::ShapeMismatch(String::from("proto index")))?;
                Instruction::MakeClosure(ProtoRef::Loc(loc))
            }
            Instruction::Sel(a, b) => {
                Instruction::Sel(link_code(a, locs)?, link_code(b, locs)?)
            }
            other => other.clone(),
        });
    }
    Ok(out)
}

/// Load a unit and evaluate its root; the result is the program's value
/// (for the bundled programs, the main closure).
pub fn eval_unit<H: FileHost + ?Sized>(
    m: &mut Machine,
    unit: &CompiledUnit,
    host: &mut H,
    fuel: Option<u64>,
) -> Result<Value, MachineError> {
    let proto = load(m, unit)?;
    let genv = m.global_env();
    let clo = m.store.alloc(StoredValue::Closure { proto, env: genv });
    m.call_value(clo, Value::Nil, host, fuel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::MemFs;

    fn run_source(text: &str) -> Result<Value, MachineError> {
        let unit = compile_program(text).expect("compiles");
        let mut m = Machine::new();
        let mut fs = MemFs::new();
        eval_unit(&mut m, &unit, &mut fs, Some(2_000_000))
    }

    #[test]
    fn arithmetic() {
        assert_eq!(run_source("(+ 1 2)").unwrap(), Value::Num(3.0));
    }

    #[test]
    fn lambda_application() {
        assert_eq!(
            run_source("((lambda (n) (+ n 1)) 1)").unwrap(),
            Value::Num(2.0)
        );
    }

    #[test]
    fn if_true_takes_first_arm() {
        assert_eq!(run_source("(if true 1 2)").unwrap(), Value::Num(1.0));
        assert_eq!(run_source("(if false 1 2)").unwrap(), Value::Num(2.0));
    }

    #[test]
    fn define_then_set_gives_recursion() {
        let v = run_source(
            "(define fib (lambda (n) (if (< n 2) n (+ (fib (- n 1)) (fib (- n 2)))))) (fib 10)",
        )
        .unwrap();
        assert_eq!(v, Value::Num(55.0));
    }

    #[test]
    fn factorial_program() {
        let v = run_source(
            "(define fact (lambda (n) (if (= n 0) 1 (* n (fact (- n 1)))))) (fact 5)",
        )
        .unwrap();
        assert_eq!(v, Value::Num(120.0));
    }

    #[test]
    fn while_loops() {
        let v = run_source(
            "(define i 0) (define sum 0) (while (< i 5) (set! sum (+ sum i)) (set! i (+ i 1))) sum",
        )
        .unwrap();
        assert_eq!(v, Value::Num(10.0));
    }

    #[test]
    fn currying_multi_params() {
        assert_eq!(
            run_source("((lambda (a b c) (+ a (* b c))) 1 2 3)").unwrap(),
            Value::Num(7.0)
        );
    }

    #[test]
    fn prelude_list_cells() {
        let v = run_source("(car (cdr (cons 1 (cons 2 nil))))").unwrap();
        assert_eq!(v, Value::Num(2.0));
        assert_eq!(run_source("(null? nil)").unwrap(), Value::Bool(true));
        assert_eq!(run_source("(<= 2 2)").unwrap(), Value::Bool(true));
    }

    #[test]
    fn coroutine_count_to_three() {
        let v = run_source(
            "(define count (lambda (_) (begin (define i 1) (while (<= i 5) (print (concat \"Number \" i)) (yield i) (set! i (+ i 1))))))
             (define co (create count))
             (resume co nil) (resume co nil) (resume co nil)",
        )
        .unwrap();
        assert_eq!(v, Value::Num(3.0));
    }

    #[test]
    fn compile_is_deterministic() {
        let text = "(define f (lambda (x) (while (< x 3) (set! x (+ x 1))))) (f 0)";
        let a = compile_program(text).unwrap();
        let b = compile_program(text).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_cite_spans_inside_input() {
        let text = "(set! 1 2)";
        let err = compile_program(text).unwrap_err();
        assert!(err.span.start < err.span.end);
        assert!(err.span.end <= text.len());
        let text2 = "(unknownform";
        let err2 = compile_program(text2).unwrap_err();
        assert!(err2.span.end <= text2.len());
    }

    #[test]
    fn define_outside_body_is_rejected() {
        let e = sexp::parse("(+ (define x 1) 2)").unwrap();
        assert!(compile(&e).is_err());
    }
}
