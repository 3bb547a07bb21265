//! The dataflow analysis language.
//!
//! Programs are nested calls:
//!
//! ```text
//! e ::= getDC(id) | filter(f < m, e) | filter(f > m, e) | project({f, ...}, e)
//!     | redact(f, full|hash|truncate(k), e) | join(e, e) | union(e, e)
//!     | dpCount(epsilon, delta, e)
//! ```

mod analysis;
mod eval;
mod table;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attr::{Declass, RedactMode};
use crate::lex::{Cursor, Pos, Tok};
use crate::parser::parse_redact_mode;

pub use analysis::{abstract_interpret, AbstractCapsule, AnalysisError, CapsuleEnv, PolicyEffect};
pub use eval::{evaluate, laplace_noise, EvalError, TableStore};
pub use table::{Row, RowRef, Table, TableError, Value, SUBJECT_COLUMN};

/// Identifier of a data capsule.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CapsuleId(String);

impl CapsuleId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Ids must be usable as `getDC` arguments.
    pub fn is_valid(id: &str) -> bool {
        let mut chars = id.chars();
        matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
            && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
    }
}

impl fmt::Display for CapsuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CapsuleId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Ordered field → datatype label mapping.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    fields: Vec<(String, String)>,
}

impl Schema {
    /// Returns `None` on duplicate field names.
    pub fn new<I, A, B>(fields: I) -> Option<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let fields: Vec<(String, String)> = fields
            .into_iter()
            .map(|(a, b)| (a.into(), b.into()))
            .collect();
        let names: BTreeSet<&str> = fields.iter().map(|(n, _)| n.as_str()).collect();
        (names.len() == fields.len()).then_some(Self { fields })
    }

    pub fn label(&self, field: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(n, _)| n == field)
            .map(|(_, l)| l.as_str())
    }

    pub fn contains(&self, field: &str) -> bool {
        self.label(field).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(n, _)| n.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(_, l)| l.as_str())
    }

    pub fn fields(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fields.iter().map(|(n, l)| (n.as_str(), l.as_str()))
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Same fields with the same labels, ignoring order.
    pub fn same_fields(&self, other: &Schema) -> bool {
        let a: BTreeSet<_> = self.fields.iter().collect();
        let b: BTreeSet<_> = other.fields.iter().collect();
        a == b
    }

    /// Parses `field:Label,field:Label`.
    pub fn parse_spec(spec: &str) -> Option<Self> {
        let pairs: Option<Vec<(String, String)>> = spec
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                let (f, l) = p.split_once(':')?;
                Some((f.trim().to_string(), l.trim().to_string()))
            })
            .collect();
        Self::new(pairs?)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .fields
            .iter()
            .map(|(n, l)| format!("{n}:{l}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Gt,
}

/// `field < bound` or `field > bound`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub field: String,
    pub cmp: Cmp,
    pub bound: i64,
}

impl Predicate {
    pub fn interval(&self) -> crate::Interval {
        match self.cmp {
            Cmp::Lt => crate::Interval::less_than(self.bound),
            Cmp::Gt => crate::Interval::greater_than(self.bound),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.cmp {
            Cmp::Lt => "<",
            Cmp::Gt => ">",
        };
        write!(f, "{} {op} {}", self.field, self.bound)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProgramExpr {
    GetDc(CapsuleId),
    Filter {
        pred: Predicate,
        input: Box<ProgramExpr>,
    },
    Project {
        fields: Vec<String>,
        input: Box<ProgramExpr>,
    },
    Redact {
        field: String,
        mode: RedactMode,
        input: Box<ProgramExpr>,
    },
    Join(Box<ProgramExpr>, Box<ProgramExpr>),
    Union(Box<ProgramExpr>, Box<ProgramExpr>),
    DpCount {
        epsilon: f64,
        delta: f64,
        input: Box<ProgramExpr>,
    },
}

impl ProgramExpr {
    pub fn get_dc(id: &str) -> Self {
        ProgramExpr::GetDc(CapsuleId::new(id))
    }

    pub fn filter(field: &str, cmp: Cmp, bound: i64, input: ProgramExpr) -> Self {
        ProgramExpr::Filter {
            pred: Predicate {
                field: field.to_string(),
                cmp,
                bound,
            },
            input: Box::new(input),
        }
    }

    pub fn project(fields: &[&str], input: ProgramExpr) -> Self {
        ProgramExpr::Project {
            fields: fields.iter().map(|f| f.to_string()).collect(),
            input: Box::new(input),
        }
    }

    pub fn redact(field: &str, mode: RedactMode, input: ProgramExpr) -> Self {
        ProgramExpr::Redact {
            field: field.to_string(),
            mode,
            input: Box::new(input),
        }
    }

    pub fn join(a: ProgramExpr, b: ProgramExpr) -> Self {
        ProgramExpr::Join(Box::new(a), Box::new(b))
    }

    pub fn union(a: ProgramExpr, b: ProgramExpr) -> Self {
        ProgramExpr::Union(Box::new(a), Box::new(b))
    }

    pub fn dp_count(epsilon: f64, delta: f64, input: ProgramExpr) -> Self {
        ProgramExpr::DpCount {
            epsilon,
            delta,
            input: Box::new(input),
        }
    }

    /// Capsule ids appearing in `getDC` leaves.
    pub fn free_capsules(&self) -> BTreeSet<CapsuleId> {
        let mut out = BTreeSet::new();
        self.collect_capsules(&mut out);
        out
    }

    fn collect_capsules(&self, out: &mut BTreeSet<CapsuleId>) {
        match self {
            ProgramExpr::GetDc(id) => {
                out.insert(id.clone());
            }
            ProgramExpr::Filter { input, .. }
            | ProgramExpr::Project { input, .. }
            | ProgramExpr::Redact { input, .. }
            | ProgramExpr::DpCount { input, .. } => input.collect_capsules(out),
            ProgramExpr::Join(a, b) | ProgramExpr::Union(a, b) => {
                a.collect_capsules(out);
                b.collect_capsules(out);
            }
        }
    }

    /// One `getDC` under only filter/project/redact: every output row comes
    /// from exactly one input row.
    pub fn row_preserving(&self) -> bool {
        match self {
            ProgramExpr::GetDc(_) => true,
            ProgramExpr::Filter { input, .. }
            | ProgramExpr::Project { input, .. }
            | ProgramExpr::Redact { input, .. } => input.row_preserving(),
            _ => false,
        }
    }
}

impl fmt::Display for ProgramExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgramExpr::GetDc(id) => write!(f, "getDC({id})"),
            ProgramExpr::Filter { pred, input } => write!(f, "filter({pred}, {input})"),
            ProgramExpr::Project { fields, input } => {
                write!(f, "project({{{}}}, {input})", fields.join(","))
            }
            ProgramExpr::Redact { field, mode, input } => {
                write!(f, "redact({field}, {mode}, {input})")
            }
            ProgramExpr::Join(a, b) => write!(f, "join({a}, {b})"),
            ProgramExpr::Union(a, b) => write!(f, "union({a}, {b})"),
            ProgramExpr::DpCount {
                epsilon,
                delta,
                input,
            } => write!(f, "dpCount({epsilon}, {delta}, {input})"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{pos}: syntax error: {message}")]
pub struct ProgramParseError {
    pub pos: Pos,
    pub message: String,
}

pub fn parse_program(text: &str) -> Result<ProgramExpr, ProgramParseError> {
    let mut p = ProgramParser {
        cur: Cursor::new(text),
    };
    let e = p.expr()?;
    if !p.cur.at_end() {
        return p.expected("end of program");
    }
    Ok(e)
}

struct ProgramParser {
    cur: Cursor,
}

impl ProgramParser {
    fn expected<T>(&self, what: &str) -> Result<T, ProgramParseError> {
        Err(ProgramParseError {
            pos: self.cur.pos(),
            message: format!("expected {what}, found {}", self.cur.describe_next()),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ProgramParseError> {
        if self.cur.eat(&tok) {
            Ok(())
        } else {
            self.expected(&tok.to_string())
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ProgramParseError> {
        match self.cur.peek_ident() {
            Some(s) => {
                let s = s.to_string();
                self.cur.next();
                Ok(s)
            }
            None => self.expected(what),
        }
    }

    fn int(&mut self) -> Result<i64, ProgramParseError> {
        match self.cur.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.cur.next();
                Ok(v)
            }
            _ => self.expected("an integer"),
        }
    }

    fn number(&mut self) -> Result<f64, ProgramParseError> {
        let v = match self.cur.peek() {
            Some(Tok::Int(v)) => *v as f64,
            Some(Tok::Float(v)) => *v,
            _ => return self.expected("a number"),
        };
        self.cur.next();
        Ok(v)
    }

    fn expr(&mut self) -> Result<ProgramExpr, ProgramParseError> {
        let pos = self.cur.pos();
        let head = self.ident("an expression")?;
        self.expect(Tok::LParen)?;
        let e = match head.as_str() {
            "getDC" => ProgramExpr::GetDc(CapsuleId::new(self.ident("a capsule id")?)),
            "filter" => {
                let field = self.ident("a field name")?;
                let cmp = if self.cur.eat(&Tok::Lt) {
                    Cmp::Lt
                } else if self.cur.eat(&Tok::Gt) {
                    Cmp::Gt
                } else {
                    return self.expected("`<` or `>`");
                };
                let bound = self.int()?;
                self.expect(Tok::Comma)?;
                let input = self.expr()?;
                ProgramExpr::Filter {
                    pred: Predicate { field, cmp, bound },
                    input: Box::new(input),
                }
            }
            "project" => {
                self.expect(Tok::LBrace)?;
                let mut fields = vec![self.ident("a field name")?];
                while self.cur.eat(&Tok::Comma) {
                    fields.push(self.ident("a field name")?);
                }
                self.expect(Tok::RBrace)?;
                let unique: BTreeSet<&String> = fields.iter().collect();
                if unique.len() != fields.len() {
                    return Err(ProgramParseError {
                        pos,
                        message: "duplicate field in project".into(),
                    });
                }
                self.expect(Tok::Comma)?;
                ProgramExpr::Project {
                    fields,
                    input: Box::new(self.expr()?),
                }
            }
            "redact" => {
                let field = self.ident("a field name")?;
                self.expect(Tok::Comma)?;
                let Some(mode) = parse_redact_mode(&mut self.cur) else {
                    return self.expected("a redaction mode (full, hash, truncate(k))");
                };
                self.expect(Tok::Comma)?;
                ProgramExpr::Redact {
                    field,
                    mode,
                    input: Box::new(self.expr()?),
                }
            }
            "join" | "union" => {
                let a = self.expr()?;
                self.expect(Tok::Comma)?;
                let b = self.expr()?;
                if head == "join" {
                    ProgramExpr::join(a, b)
                } else {
                    ProgramExpr::union(a, b)
                }
            }
            "dpCount" => {
                let epsilon = self.number()?;
                self.expect(Tok::Comma)?;
                let delta = self.number()?;
                if let Err(e) = Declass::dp(epsilon, delta) {
                    return Err(ProgramParseError {
                        pos,
                        message: e.to_string(),
                    });
                }
                self.expect(Tok::Comma)?;
                ProgramExpr::DpCount {
                    epsilon,
                    delta,
                    input: Box::new(self.expr()?),
                }
            }
            other => {
                return Err(ProgramParseError {
                    pos,
                    message: format!("unknown operator `{other}`"),
                })
            }
        };
        self.expect(Tok::RParen)?;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf() {
        assert_eq!(
            parse_program("getDC(c1)").unwrap(),
            ProgramExpr::get_dc("c1")
        );
    }

    #[test]
    fn project_over_get() {
        assert_eq!(
            parse_program("project({zip,status}, getDC(c1))").unwrap(),
            ProgramExpr::project(&["zip", "status"], ProgramExpr::get_dc("c1"))
        );
    }

    #[test]
    fn two_leaf_union() {
        assert_eq!(
            parse_program("union(getDC(c1), getDC(c2))").unwrap(),
            ProgramExpr::union(ProgramExpr::get_dc("c1"), ProgramExpr::get_dc("c2"))
        );
    }

    #[test]
    fn full_pipeline() {
        let e = parse_program("dpCount(1.0, 1e-6, filter(age > 17, getDC(c1)))").unwrap();
        assert_eq!(
            e,
            ProgramExpr::dp_count(
                1.0,
                1e-6,
                ProgramExpr::filter("age", Cmp::Gt, 17, ProgramExpr::get_dc("c1"))
            )
        );
        assert_eq!(parse_program(&e.to_string()).unwrap(), e);
    }

    #[test]
    fn redact_modes() {
        let e = parse_program("redact(name, truncate(2), redact(ssn, hash, getDC(c1)))").unwrap();
        assert_eq!(
            e,
            ProgramExpr::redact(
                "name",
                RedactMode::Truncate(2),
                ProgramExpr::redact("ssn", RedactMode::Hash, ProgramExpr::get_dc("c1"))
            )
        );
    }

    #[test]
    fn free_capsules_are_a_set() {
        let e = parse_program("union(filter(age > 3, getDC(c1)), getDC(c1))").unwrap();
        assert_eq!(e.free_capsules(), BTreeSet::from([CapsuleId::new("c1")]));
        let e = parse_program("join(getDC(c1), getDC(c2))").unwrap();
        assert_eq!(e.free_capsules().len(), 2);
    }

    #[test]
    fn row_preservation() {
        assert!(parse_program("project({zip}, getDC(c1))")
            .unwrap()
            .row_preserving());
        assert!(!parse_program("join(getDC(c1), getDC(c2))")
            .unwrap()
            .row_preserving());
        assert!(!parse_program("dpCount(1, 0, getDC(c1))")
            .unwrap()
            .row_preserving());
    }

    #[test]
    fn syntax_errors() {
        let err = parse_program("filter(age >= 3, getDC(c1))").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 12 });
        assert!(parse_program("getDC(c1) extra").is_err());
        assert!(parse_program("dpCount(0, 0, getDC(c1))").is_err());
        assert!(parse_program("frobnicate(getDC(c1))").is_err());
        assert!(parse_program("project({a,a}, getDC(c1))").is_err());
        assert!(parse_program("").is_err());
    }

    #[test]
    fn schema_spec() {
        let s = Schema::parse_spec("age:AgeBucket, zip:Region").unwrap();
        assert_eq!(s.label("zip"), Some("Region"));
        assert_eq!(s.to_string(), "age:AgeBucket,zip:Region");
        assert!(Schema::parse_spec("age:AgeBucket,age:Region").is_none());
        assert!(Schema::parse_spec("age").is_none());
    }
}
