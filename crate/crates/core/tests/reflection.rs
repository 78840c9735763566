//! Reify/install behavior: function round trips, coroutine capture and
//! rebuild, representation editing, level algebra.

use relo_core::compile::{self, CompiledUnit};
use relo_core::corpus;
use relo_core::driver::{launch, Driver, Launch, Leg};
use relo_core::host::MemFs;
use relo_core::pickle::{self, ErrorPolicy};
use relo_core::reflect::{self, InstallTarget, TypeName};
use relo_core::store::{CoroutineRec, Status, StoredValue};
use relo_core::{Location, Machine, MachineError, Value};

const FUEL: Option<u64> = Some(10_000_000);

fn unit(text: &str) -> CompiledUnit {
    compile::compile_program(text).expect("program compiles")
}

fn get(m: &Machine, rep: &Value, key: &str) -> Value {
    m.table_get(rep.as_loc().expect("rep is a table"), &Value::from(key))
}

fn driven(text: &str, args: &[Value]) -> (Driver, MemFs) {
    let mut fs = MemFs::new();
    match launch(&unit(text), args, &mut fs, FUEL).expect("launches") {
        Launch::Driven(d) => (d, fs),
        Launch::Finished(..) => panic!("program should evaluate to a closure"),
    }
}

fn fresh_coroutine(m: &mut Machine) -> Location {
    m.store.alloc(StoredValue::Coroutine(CoroutineRec {
        frame: None,
        status: Status::Suspended,
    }))
}

/// Canonical observable form of a suspended coroutine.
fn canon(m: &Machine, co: Location) -> Vec<u8> {
    pickle::serialize(&pickle::deep_capture(m, co, &ErrorPolicy::Fail).expect("captures"))
}

#[test]
fn inc_function_round_trip() {
    let mut fs = MemFs::new();
    let mut m = Machine::new();
    let inc = compile::eval_unit(&mut m, &unit(corpus::INC), &mut fs, FUEL).unwrap();

    let tinc = reflect::reify(&mut m, &inc, None).unwrap();
    let p = get(&m, &tinc, "p");
    assert!(p.as_loc().is_some(), "closure representation carries a proto handle");

    let proto_rep = reflect::reify(&mut m, &p, None).unwrap();
    let consts = get(&m, &proto_rep, "consts");
    assert_eq!(
        m.table_get(consts.as_loc().unwrap(), &Value::Num(1.0)),
        Value::Num(1.0),
        "inc has exactly the constant 1"
    );

    // bottom-up: install the proto, assemble a fresh function
    // representation around it, install the function
    let new_proto = reflect::install(
        &mut m,
        &proto_rep,
        &InstallTarget::Kind(TypeName::Proto),
        None,
    )
    .unwrap();
    let tinc2 = m.new_table();
    m.table_set(tinc2, Value::from("p"), new_proto).unwrap();
    m.table_set(tinc2, Value::from("env"), get(&m, &tinc, "env"))
        .unwrap();
    let newinc = reflect::install(
        &mut m,
        &Value::Loc(tinc2),
        &InstallTarget::Kind(TypeName::Function),
        None,
    )
    .unwrap();

    let v = m
        .call_value(newinc.as_loc().unwrap(), Value::Num(1.0), &mut fs, FUEL)
        .unwrap();
    assert_eq!(v, Value::Num(2.0));
}

#[test]
fn editing_a_proto_changes_the_installed_function_only() {
    let mut fs = MemFs::new();
    let mut m = Machine::new();
    let inc = compile::eval_unit(&mut m, &unit(corpus::INC), &mut fs, FUEL).unwrap();

    let tinc = reflect::reify(&mut m, &inc, None).unwrap();
    let proto_rep = reflect::reify(&mut m, &get(&m, &tinc, "p"), None).unwrap();
    let code = get(&m, &proto_rep, "code").as_loc().unwrap();
    let const_instr = m.table_get(code, &Value::Num(2.0)).as_loc().unwrap();
    assert_eq!(m.table_get(const_instr, &Value::from("op")), Value::from("const"));
    m.table_set(const_instr, Value::from("value"), Value::Num(10.0))
        .unwrap();

    let new_proto =
        reflect::install(&mut m, &proto_rep, &InstallTarget::Kind(TypeName::Proto), None).unwrap();
    let rep2 = m.new_table();
    m.table_set(rep2, Value::from("p"), new_proto).unwrap();
    m.table_set(rep2, Value::from("env"), get(&m, &tinc, "env"))
        .unwrap();
    let edited = reflect::install(
        &mut m,
        &Value::Loc(rep2),
        &InstallTarget::Kind(TypeName::Function),
        None,
    )
    .unwrap();

    let v = m
        .call_value(edited.as_loc().unwrap(), Value::Num(1.0), &mut fs, FUEL)
        .unwrap();
    assert_eq!(v, Value::Num(11.0), "edited constant is in effect");
    // the original function still increments by one
    let v0 = m
        .call_value(inc.as_loc().unwrap(), Value::Num(1.0), &mut fs, FUEL)
        .unwrap();
    assert_eq!(v0, Value::Num(2.0));
}

#[test]
fn count_capture_and_rebuild_continues_at_four() {
    let (mut d, mut fs) = driven(corpus::COUNT, &[]);
    loop {
        match d.resume_once(&mut fs, FUEL).unwrap() {
            Leg::Yielded(Value::Num(n)) if n == 3.0 => break,
            Leg::Yielded(_) => {}
            Leg::Returned(_) => panic!("count yields before returning"),
        }
    }
    let co = d.co;
    let mut m = d.machine;

    let header = reflect::reify(&mut m, &Value::Loc(co), None).unwrap();
    assert_eq!(get(&m, &header, "status"), Value::from("suspended"));
    let depth = match get(&m, &header, "depth") {
        Value::Num(n) => n as usize,
        other => panic!("depth should be a number, got {other:?}"),
    };
    assert!(depth >= 1);

    // sentinel walk: levels 1..depth reify, depth+1 gives nil
    let reps = reflect::reify_all_levels(&mut m, co).unwrap();
    assert_eq!(reps.len(), depth);
    assert_eq!(
        reflect::reify(&mut m, &Value::Loc(co), Some(depth + 1)).unwrap(),
        Value::Nil
    );

    // rebuild: empty coroutine, install root-to-top at level 0
    let ncoro = fresh_coroutine(&mut m);
    m.push_value(Value::Nil);
    m.push_value(Value::Loc(ncoro));
    m.append_code([relo_core::instr::Instruction::Resume]);
    assert_eq!(m.run(&mut fs, FUEL), Err(MachineError::EmptyCoroutine));
    m.running_frame_mut().code.clear();
    m.running_frame_mut().stack.clear();
    for rep in reps.iter().rev() {
        reflect::install(&mut m, rep, &InstallTarget::Coroutine(ncoro), Some(0)).unwrap();
    }
    reflect::setstatus(&mut m, ncoro, Status::Suspended).unwrap();
    assert_eq!(m.coroutine_status(ncoro), Some(Status::Suspended));

    let before = m.output.len();
    let mut d2 = Driver::attach(m, ncoro, Value::Nil);
    assert_eq!(
        d2.resume_once(&mut fs, FUEL).unwrap(),
        Leg::Yielded(Value::Num(4.0))
    );
    assert_eq!(
        d2.resume_once(&mut fs, FUEL).unwrap(),
        Leg::Yielded(Value::Num(5.0))
    );
    assert!(matches!(
        d2.resume_once(&mut fs, FUEL).unwrap(),
        Leg::Returned(_)
    ));
    assert_eq!(
        d2.machine.output[before..],
        [String::from("Number 4"), String::from("Number 5")]
    );
    d2.machine.check_invariants().unwrap();
}

#[test]
fn install_reify_is_symmetric_on_one_machine() {
    let (mut d, mut fs) = driven(corpus::COUNT, &[]);
    d.drive_to_yield(2, &mut fs, FUEL).unwrap();
    let co = d.co;
    let mut m = d.machine;

    let before = canon(&m, co);
    let depth = m.frame_depth(co);
    for level in 1..=depth {
        let rep = reflect::reify(&mut m, &Value::Loc(co), Some(level)).unwrap();
        reflect::install(&mut m, &rep, &InstallTarget::Coroutine(co), Some(level)).unwrap();
    }
    assert_eq!(canon(&m, co), before, "reinstalling every level changes nothing");

    // and the rebuilt machine still runs to the same trace
    let mut d2 = Driver::attach(m, co, Value::Nil);
    d2.run_to_end(&mut fs, FUEL).unwrap();
    let tail: Vec<&str> = d2.machine.output.iter().map(|s| s.as_str()).collect();
    assert_eq!(
        tail,
        ["Number 1", "Number 2", "Number 3", "Number 4", "Number 5"]
    );
}

#[test]
fn put_at_a_level_leaves_other_levels_alone() {
    let (mut d, mut fs) = driven(corpus::FACTORIAL, &[Value::Num(4.0)]);
    d.drive_to_yield(1, &mut fs, FUEL).unwrap();
    let co = d.co;
    let mut m = d.machine;
    let depth = m.frame_depth(co);
    assert!(depth >= 3);

    let reps_before = reflect::reify_all_levels(&mut m, co).unwrap();
    let target = 2usize;
    let rep = reflect::reify(&mut m, &Value::Loc(co), Some(target)).unwrap();
    reflect::install(&mut m, &rep, &InstallTarget::Coroutine(co), Some(target)).unwrap();
    let reps_after = reflect::reify_all_levels(&mut m, co).unwrap();
    assert_eq!(reps_before.len(), reps_after.len());
    for (level, (a, b)) in reps_before.iter().zip(&reps_after).enumerate() {
        assert!(
            rep_equal(&m, a, b),
            "level {} representation changed",
            level + 1
        );
    }
}

/// Structural equality of representations up to handle identity: handles
/// are compared by the location they resolve to.
fn rep_equal(m: &Machine, a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Loc(_), Value::Loc(_)) => {
            let la = reflect::deref_handle(m, a).unwrap();
            let lb = reflect::deref_handle(m, b).unwrap();
            if la == lb {
                return true;
            }
            match (m.table(la), m.table(lb)) {
                (Some(ta), Some(tb)) => {
                    if ta.len() != tb.len() {
                        return false;
                    }
                    ta.iter().zip(tb.iter()).all(|((ka, va), (kb, vb))| {
                        rep_equal(m, ka, kb) && rep_equal(m, va, vb)
                    })
                }
                _ => false,
            }
        }
        _ => a == b,
    }
}

#[test]
fn reify_install_round_trips_representations() {
    let (mut d, mut fs) = driven(corpus::COUNT, &[]);
    d.drive_to_yield(1, &mut fs, FUEL).unwrap();
    let co = d.co;
    let mut m = d.machine;

    let rep = reflect::reify(&mut m, &Value::Loc(co), Some(1)).unwrap();
    reflect::install(&mut m, &rep, &InstallTarget::Coroutine(co), Some(1)).unwrap();
    let rep2 = reflect::reify(&mut m, &Value::Loc(co), Some(1)).unwrap();
    assert!(rep_equal(&m, &rep, &rep2));
}

#[test]
fn copy_isolation_both_directions() {
    let mut m = Machine::new();
    let t = m.new_table();
    m.table_set(t, Value::Num(1.0), Value::from("original")).unwrap();

    let rep = reflect::reify(&mut m, &Value::Loc(t), None).unwrap();
    let rep_loc = rep.as_loc().unwrap();
    assert_ne!(rep_loc, t, "representation is a fresh table");

    // editing the representation leaves the entity alone
    m.table_set(rep_loc, Value::Num(1.0), Value::from("edited")).unwrap();
    assert_eq!(m.table_get(t, &Value::Num(1.0)), Value::from("original"));

    // mutating the entity leaves an existing representation alone
    m.table_set(t, Value::Num(1.0), Value::from("mutated")).unwrap();
    assert_eq!(m.table_get(rep_loc, &Value::Num(1.0)), Value::from("edited"));

    // re-reifying sees the mutation
    let rep2 = reflect::reify(&mut m, &Value::Loc(t), None).unwrap();
    assert_eq!(
        m.table_get(rep2.as_loc().unwrap(), &Value::Num(1.0)),
        Value::from("mutated")
    );
}

#[test]
fn names_are_identity_not_structure() {
    let mut m = Machine::new();
    let a = m.new_table();
    let b = m.new_table();
    let na1 = reflect::name(&mut m, &Value::Loc(a)).unwrap();
    let na2 = reflect::name(&mut m, &Value::Loc(a)).unwrap();
    let nb = reflect::name(&mut m, &Value::Loc(b)).unwrap();
    assert_eq!(na1, na2);
    assert_ne!(na1, nb);
    assert!(matches!(
        reflect::name(&mut m, &Value::Num(1.0)),
        Err(MachineError::NameOfAtomic)
    ));
}

#[test]
fn fields_schemas_cover_reify_output() {
    let mut fs = MemFs::new();
    let mut m = Machine::new();
    let inc = compile::eval_unit(&mut m, &unit(corpus::INC), &mut fs, FUEL).unwrap();

    for ty in ["function", "proto", "env", "table", "frame", "thread", "file"] {
        reflect::fields(&mut m, ty).unwrap();
    }
    assert!(matches!(
        reflect::fields(&mut m, "widget"),
        Err(MachineError::UnknownTypeName(_))
    ));

    let schema = reflect::fields(&mut m, "function").unwrap();
    assert_ne!(m.table_get(schema, &Value::from("p")), Value::Nil);
    assert_ne!(m.table_get(schema, &Value::from("env")), Value::Nil);

    // every key a reification produces is declared by its kind's schema
    for (kind, value) in [("function", inc.clone())] {
        let rep = reflect::reify(&mut m, &value, None).unwrap();
        let schema = reflect::fields(&mut m, kind).unwrap();
        let keys: Vec<Value> = m
            .table(rep.as_loc().unwrap())
            .unwrap()
            .iter()
            .map(|(k, _)| k.clone())
            .collect();
        for k in keys {
            assert_ne!(
                m.table_get(schema, &k),
                Value::Nil,
                "{kind} schema is missing {k:?}"
            );
        }
    }
}

#[test]
fn setstatus_rules() {
    let mut m = Machine::new();
    let co = fresh_coroutine(&mut m);
    assert!(matches!(
        reflect::setstatus(&mut m, co, Status::Suspended),
        Err(MachineError::SuspendedWithoutFrames)
    ));
    reflect::setstatus(&mut m, co, Status::Dead).unwrap();
    assert_eq!(m.coroutine_status(co), Some(Status::Dead));
    assert!(matches!(
        reflect::setstatus(&mut m, co, Status::Running),
        Err(MachineError::SetStatusRunning)
    ));
    let root = m.root();
    assert!(matches!(
        reflect::setstatus(&mut m, root, Status::Dead),
        Err(MachineError::SetStatusRunning)
    ));
}

#[test]
fn reify_rejects_atoms_and_live_coroutines() {
    let mut m = Machine::new();
    assert!(matches!(
        reflect::reify(&mut m, &Value::Num(1.0), None),
        Err(MachineError::ReifyAtomic)
    ));
    let root = m.root();
    assert!(matches!(
        reflect::reify(&mut m, &Value::Loc(root), None),
        Err(MachineError::ReifyRunning)
    ));
}

#[test]
fn install_resolves_handles_and_rejects_unknown_ones() {
    let mut m = Machine::new();
    // a handle pointing nowhere
    let fake = m.new_table();
    m.table_set(fake, Value::from("handle"), Value::Bool(true)).unwrap();
    m.table_set(fake, Value::from("name"), Value::from("0xdeadbeef")).unwrap();
    m.table_set(fake, Value::from("kind"), Value::from("proto")).unwrap();
    let rep = m.new_table();
    m.table_set(rep, Value::from("p"), Value::Loc(fake)).unwrap();
    assert!(matches!(
        reflect::install(&mut m, &Value::Loc(rep), &InstallTarget::Kind(TypeName::Function), None),
        Err(MachineError::UnresolvedHandle(_))
    ));
}

#[test]
fn whole_thread_install_is_unsupported() {
    let mut m = Machine::new();
    let rep = m.new_table();
    assert!(matches!(
        reflect::install(&mut m, &Value::Loc(rep), &InstallTarget::Kind(TypeName::Thread), None),
        Err(MachineError::InstallUnsupported(_))
    ));
}
