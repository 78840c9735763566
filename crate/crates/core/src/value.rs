//! Runtime values and store locations.
//!
//! Atomic values (nil, booleans, numbers, strings) are carried inline;
//! every structured entity lives in the store and is reached through a
//! `Location`. Two `Loc` values are equal exactly when they point at the
//! same store entry.

use alloc::string::String;
use core::cmp::Ordering;
use core::fmt;

/// Store address of a structured value. Fresh locations never collide
/// with allocated ones within a machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location(pub u64);

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:x}", self.0)
    }
}

/// A first-class runtime value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Nil,
    Bool(bool),
    Num(f64),
    Text(String),
    Loc(Location),
}

impl Value {
    pub fn is_atomic(&self) -> bool {
        !matches!(self, Value::Loc(_))
    }

    pub fn as_loc(&self) -> Option<Location> {
        match self {
            Value::Loc(l) => Some(*l),
            _ => None,
        }
    }

    pub fn truthy_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Value equality as exposed by the `eq` primitive: atoms by content,
    /// locations by identity, values of different kinds never equal.
    pub fn prim_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Nil, Value::Nil) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Num(a), Value::Num(b)) => a == b,
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Loc(a), Value::Loc(b)) => a == b,
            _ => false,
        }
    }

    /// Human-readable form used by `print` and the CLI.
    pub fn render(&self) -> String {
        match self {
            Value::Nil => String::from("nil"),
            Value::Bool(b) => {
                if *b {
                    String::from("true")
                } else {
                    String::from("false")
                }
            }
            Value::Num(n) => fmt_num(*n),
            Value::Text(s) => s.clone(),
            Value::Loc(l) => {
                let mut s = String::from("ref: ");
                s.push_str(&alloc::format!("{l}"));
                s
            }
        }
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Num(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(String::from(s))
    }
}

/// Shortest numeric rendering: integral doubles print without a fraction,
/// everything else goes through shortest round-trip formatting.
pub fn fmt_num(n: f64) -> String {
    if n.is_finite() && libm::trunc(n) == n && n.abs() < 9.007_199_254_740_992e15 {
        alloc::format!("{}", n as i64)
    } else {
        let mut buf = ryu::Buffer::new();
        String::from(buf.format(n))
    }
}

/// Table key with a total order over all key-legal values, used so that
/// iteration order (and therefore serialization) is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct TableKey(Value);

impl TableKey {
    /// Nil and NaN are not legal keys; negative zero folds onto zero so
    /// that `0.0` and `-0.0` address the same entry.
    pub fn new(v: Value) -> Option<TableKey> {
        match v {
            Value::Nil => None,
            Value::Num(n) if n.is_nan() => None,
            Value::Num(n) if n == 0.0 => Some(TableKey(Value::Num(0.0))),
            other => Some(TableKey(other)),
        }
    }

    pub fn value(&self) -> &Value {
        &self.0
    }

    fn rank(&self) -> u8 {
        match self.0 {
            Value::Nil => 0,
            Value::Bool(_) => 1,
            Value::Num(_) => 2,
            Value::Text(_) => 3,
            Value::Loc(_) => 4,
        }
    }
}

impl Eq for TableKey {}

impl Ord for TableKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (&self.0, &other.0) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Loc(a), Value::Loc(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for TableKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loc_equality_is_identity() {
        assert_eq!(Value::Loc(Location(3)), Value::Loc(Location(3)));
        assert_ne!(Value::Loc(Location(3)), Value::Loc(Location(4)));
    }

    #[test]
    fn prim_eq_across_kinds_is_false() {
        assert!(!Value::Num(1.0).prim_eq(&Value::Text("1".into())));
        assert!(!Value::Nil.prim_eq(&Value::Bool(false)));
        assert!(Value::Num(0.0).prim_eq(&Value::Num(0.0)));
    }

    #[test]
    fn num_rendering() {
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(120.0), "120");
        assert_eq!(fmt_num(479001600.0), "479001600");
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(-3.0), "-3");
    }

    #[test]
    fn table_key_rules() {
        assert!(TableKey::new(Value::Nil).is_none());
        assert!(TableKey::new(Value::Num(f64::NAN)).is_none());
        let z = TableKey::new(Value::Num(0.0)).unwrap();
        let nz = TableKey::new(Value::Num(-0.0)).unwrap();
        assert_eq!(z.cmp(&nz), Ordering::Equal);
    }
}
