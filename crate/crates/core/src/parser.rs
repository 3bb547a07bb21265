//! Policy surface syntax: parsing and canonical printing.
//!
//! ```text
//! policy  ::= (ALLOW formula)+
//! formula ::= conj (OR conj)*
//! conj    ::= primary (AND primary)*
//! primary ::= atom | TRUE | '(' formula ')'
//! ```
//!
//! AND binds tighter than OR. A parenthesised group directly following an
//! atom or group, such as `(Article 9)`, is a citation and is skipped.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::attr::{AttrError, AttrKind, AttributeValue, Declass, RedactMode, RoleExpr};
use crate::interval::Interval;
use crate::lattice::Lattices;
use crate::lex::{Cursor, Pos, Tok};
use crate::policy::{Formula, PolicyAst, PolicyDnf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyParseError {
    #[error("{origin}:{pos}: syntax error: {message}")]
    Syntax {
        origin: String,
        pos: Pos,
        message: String,
    },
    #[error("{origin}:{pos}: unknown attribute `{name}`")]
    UnknownAttribute {
        origin: String,
        pos: Pos,
        name: String,
    },
    #[error("{origin}:{pos}: unknown {lattice} label `{label}`")]
    UnknownLabel {
        origin: String,
        pos: Pos,
        lattice: &'static str,
        label: String,
    },
}

/// Policy source text with a name used in diagnostics.
#[derive(Clone, Debug)]
pub struct SourcePolicy {
    pub text: String,
    pub origin: String,
}

impl SourcePolicy {
    pub fn new(text: impl Into<String>, origin: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            origin: origin.into(),
        }
    }

    pub fn inline(text: impl Into<String>) -> Self {
        Self::new(text, "<inline>")
    }
}

/// The bundled GDPR encoding.
pub const GDPR_POLICY: &str = include_str!("../data/policies/gdpr.priv");
/// The single-clause GDPR subset used in examples and tests.
pub const GDPR_SUBSET_POLICY: &str = include_str!("../data/policies/gdpr_subset.priv");

const RESERVED: &[&str] = &["ALLOW", "AND", "OR", "TRUE"];

fn is_reserved(word: &str) -> bool {
    RESERVED.contains(&word) || AttrKind::from_keyword(word).is_some()
}

pub fn parse_policy(
    src: &SourcePolicy,
    lattices: &Lattices,
) -> Result<PolicyAst, PolicyParseError> {
    Parser {
        cur: Cursor::new(&src.text),
        origin: &src.origin,
        lattices,
    }
    .policy()
}

/// Parses raw bytes; invalid UTF-8 is a syntax error.
pub fn parse_policy_bytes(
    bytes: &[u8],
    origin: &str,
    lattices: &Lattices,
) -> Result<PolicyAst, PolicyParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| PolicyParseError::Syntax {
        origin: origin.to_string(),
        pos: Pos { line: 1, col: 1 },
        message: format!("invalid UTF-8: {e}"),
    })?;
    parse_policy(&SourcePolicy::new(text, origin), lattices)
}

/// Parses and normalizes in one step.
pub fn parse_dnf(src: &SourcePolicy, lattices: &Lattices) -> Result<PolicyDnf, PolicyParseError> {
    Ok(parse_policy(src, lattices)?.to_dnf(lattices))
}

struct Parser<'a> {
    cur: Cursor,
    origin: &'a str,
    lattices: &'a Lattices,
}

impl Parser<'_> {
    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, PolicyParseError> {
        Err(PolicyParseError::Syntax {
            origin: self.origin.to_string(),
            pos: self.cur.pos(),
            message: message.into(),
        })
    }

    fn expected<T>(&self, what: &str) -> Result<T, PolicyParseError> {
        self.syntax(format!(
            "expected {what}, found {}",
            self.cur.describe_next()
        ))
    }

    fn keyword(&mut self, word: &str) -> bool {
        if self.cur.peek_ident() == Some(word) {
            self.cur.next();
            true
        } else {
            false
        }
    }

    fn policy(mut self) -> Result<PolicyAst, PolicyParseError> {
        let mut clauses = Vec::new();
        while !self.cur.at_end() {
            if !self.keyword("ALLOW") {
                return self.expected("`ALLOW`");
            }
            clauses.push(self.formula()?);
        }
        if clauses.is_empty() {
            return self.syntax("a policy needs at least one ALLOW clause");
        }
        Ok(PolicyAst { clauses })
    }

    fn formula(&mut self) -> Result<Formula, PolicyParseError> {
        let mut lhs = self.conj()?;
        while self.keyword("OR") {
            let rhs = self.conj()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Formula, PolicyParseError> {
        let mut lhs = self.primary()?;
        while self.keyword("AND") {
            let rhs = self.primary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Formula, PolicyParseError> {
        let f = if self.cur.eat(&Tok::LParen) {
            let inner = self.formula()?;
            if !self.cur.eat(&Tok::RParen) {
                return self.expected("`)`");
            }
            inner
        } else if self.keyword("TRUE") {
            Formula::True
        } else {
            Formula::Atom(self.atom()?)
        };
        self.skip_citations()?;
        Ok(f)
    }

    fn skip_citations(&mut self) -> Result<(), PolicyParseError> {
        while self.cur.peek() == Some(&Tok::LParen) {
            let open = self.cur.pos();
            self.cur.next();
            let mut depth = 1;
            while depth > 0 {
                match self.cur.next().map(|t| t.tok) {
                    Some(Tok::LParen) => depth += 1,
                    Some(Tok::RParen) => depth -= 1,
                    Some(_) => {}
                    None => {
                        return Err(PolicyParseError::Syntax {
                            origin: self.origin.to_string(),
                            pos: open,
                            message: "unterminated citation".into(),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<AttributeValue, PolicyParseError> {
        let pos = self.cur.pos();
        let name = match self.cur.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return self.expected("an attribute"),
        };
        let Some(kind) = AttrKind::from_keyword(&name) else {
            return Err(PolicyParseError::UnknownAttribute {
                origin: self.origin.to_string(),
                pos,
                name,
            });
        };
        self.cur.next();
        match kind {
            AttrKind::Schema => {
                let labels = self.labels("datatype")?;
                AttributeValue::schema(labels, self.lattices).map_err(|e| self.label_error(e, pos))
            }
            AttrKind::Purpose => {
                let labels = self.labels("purpose")?;
                AttributeValue::purpose(labels, self.lattices).map_err(|e| self.label_error(e, pos))
            }
            AttrKind::Role => self.role().map(AttributeValue::Role),
            AttrKind::Filter => {
                let field = self.field()?;
                let range = self.filter_range()?;
                Ok(AttributeValue::filter(field, range))
            }
            AttrKind::Redact => {
                let field = self.field()?;
                let mode = parse_redact_mode(&mut self.cur);
                match mode {
                    Some(m) => Ok(AttributeValue::redact(field, m)),
                    None => self.expected("a redaction mode (full, hash, truncate(k))"),
                }
            }
            AttrKind::Declass => self.declass().map(AttributeValue::Declass),
            AttrKind::ConsentRequired => Ok(AttributeValue::ConsentRequired),
            AttrKind::NotificationRequired => Ok(AttributeValue::NotificationRequired),
        }
    }

    fn label_error(&self, e: AttrError, pos: Pos) -> PolicyParseError {
        match e {
            AttrError::UnknownLabel { lattice, label } => PolicyParseError::UnknownLabel {
                origin: self.origin.to_string(),
                pos,
                lattice,
                label,
            },
            other => PolicyParseError::Syntax {
                origin: self.origin.to_string(),
                pos,
                message: other.to_string(),
            },
        }
    }

    fn labels(&mut self, what: &str) -> Result<Vec<String>, PolicyParseError> {
        let mut out = Vec::new();
        while let Some(word) = self.cur.peek_ident() {
            if is_reserved(word) {
                break;
            }
            out.push(word.to_string());
            self.cur.next();
        }
        if out.is_empty() {
            return self.expected(&format!("a {what} label"));
        }
        Ok(out)
    }

    fn field(&mut self) -> Result<String, PolicyParseError> {
        match self.cur.peek_ident() {
            Some(w) if !is_reserved(w) => {
                let w = w.to_string();
                self.cur.next();
                Ok(w)
            }
            _ => self.expected("a field name"),
        }
    }

    fn role(&mut self) -> Result<RoleExpr, PolicyParseError> {
        let pos = self.cur.pos();
        match self.cur.peek().cloned() {
            Some(Tok::Var(v)) => {
                self.cur.next();
                Ok(RoleExpr::Var(v))
            }
            Some(Tok::Ident(name)) if !is_reserved(&name) => {
                // `Func($var)` is a metafunction; any other parenthesis is a citation.
                if let (Some(Tok::LParen), Some(Tok::Var(v)), Some(Tok::RParen)) = (
                    self.cur.peek_at(1),
                    self.cur.peek_at(2),
                    self.cur.peek_at(3),
                ) {
                    let var = v.clone();
                    for _ in 0..4 {
                        self.cur.next();
                    }
                    return Ok(RoleExpr::Meta {
                        function: name,
                        var,
                    });
                }
                if !self.lattices.roles.contains(&name) {
                    return Err(PolicyParseError::UnknownLabel {
                        origin: self.origin.to_string(),
                        pos,
                        lattice: "role",
                        label: name,
                    });
                }
                self.cur.next();
                Ok(RoleExpr::Literal(name))
            }
            _ => self.expected("a role, `$variable` or `Function($variable)`"),
        }
    }

    fn bound(&mut self) -> Result<Option<i64>, PolicyParseError> {
        match self.cur.peek().cloned() {
            Some(Tok::Int(v)) => {
                self.cur.next();
                Ok(Some(v))
            }
            Some(Tok::Ident(w)) if w == "inf" => {
                self.cur.next();
                Ok(None)
            }
            Some(Tok::Minus) if self.cur.peek_at(1) == Some(&Tok::Ident("inf".into())) => {
                self.cur.next();
                self.cur.next();
                Ok(None)
            }
            _ => self.expected("an integer bound or `inf`"),
        }
    }

    fn filter_range(&mut self) -> Result<Interval, PolicyParseError> {
        let op = self.cur.peek().cloned();
        match op {
            Some(Tok::LBracket) => {
                self.cur.next();
                if self.cur.eat(&Tok::RBracket) {
                    return Ok(Interval::Empty);
                }
                let lo_pos = self.cur.pos();
                let lo_neg_inf = self.cur.peek() == Some(&Tok::Minus);
                let lo = self.bound()?;
                if lo.is_none() && !lo_neg_inf {
                    return Err(PolicyParseError::Syntax {
                        origin: self.origin.to_string(),
                        pos: lo_pos,
                        message: "lower bound cannot be `inf`".into(),
                    });
                }
                if !self.cur.eat(&Tok::Comma) {
                    return self.expected("`,`");
                }
                let hi_pos = self.cur.pos();
                let hi_neg_inf = self.cur.peek() == Some(&Tok::Minus);
                let hi = self.bound()?;
                if hi_neg_inf {
                    return Err(PolicyParseError::Syntax {
                        origin: self.origin.to_string(),
                        pos: hi_pos,
                        message: "upper bound cannot be `-inf`".into(),
                    });
                }
                if !self.cur.eat(&Tok::RBracket) {
                    return self.expected("`]`");
                }
                Ok(Interval::new(lo, hi))
            }
            Some(Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge) => {
                self.cur.next();
                let m = match self.cur.peek() {
                    Some(Tok::Int(m)) => *m,
                    _ => return self.expected("an integer"),
                };
                self.cur.next();
                Ok(match op {
                    Some(Tok::Lt) => Interval::less_than(m),
                    Some(Tok::Gt) => Interval::greater_than(m),
                    Some(Tok::Le) => Interval::at_most(m),
                    _ => Interval::at_least(m),
                })
            }
            _ => self.expected("`[lo, hi]` or a comparison"),
        }
    }

    fn number(&mut self) -> Option<f64> {
        let v = match self.cur.peek()? {
            Tok::Int(i) => *i as f64,
            Tok::Float(x) => *x,
            _ => return None,
        };
        self.cur.next();
        Some(v)
    }

    fn declass(&mut self) -> Result<Declass, PolicyParseError> {
        let pos = self.cur.pos();
        let mech = match self.cur.peek_ident() {
            Some(m) => m.to_string(),
            None => return self.expected("a declassification mechanism"),
        };
        self.cur.next();
        match mech.as_str() {
            "DP" | "DifferentialPrivacy" => {
                let Some(epsilon) = self.number() else {
                    return self.expected("epsilon");
                };
                let delta = self.number().unwrap_or(0.0);
                Declass::dp(epsilon, delta).map_err(|e| PolicyParseError::Syntax {
                    origin: self.origin.to_string(),
                    pos,
                    message: e.to_string(),
                })
            }
            "Any" => Ok(Declass::Any),
            other => Err(PolicyParseError::Syntax {
                origin: self.origin.to_string(),
                pos,
                message: format!("unknown declassification mechanism `{other}`"),
            }),
        }
    }
}

/// `full`, `hash` or `truncate(k)`; shared with the program parser.
pub(crate) fn parse_redact_mode(cur: &mut Cursor) -> Option<RedactMode> {
    match cur.peek_ident()? {
        "full" => {
            cur.next();
            Some(RedactMode::Full)
        }
        "hash" => {
            cur.next();
            Some(RedactMode::Hash)
        }
        "truncate" => {
            let k = match (cur.peek_at(1), cur.peek_at(2), cur.peek_at(3)) {
                (Some(Tok::LParen), Some(Tok::Int(k)), Some(Tok::RParen)) => {
                    u32::try_from(*k).ok()?
                }
                _ => return None,
            };
            for _ in 0..4 {
                cur.next();
            }
            Some(RedactMode::Truncate(k))
        }
        _ => None,
    }
}

fn write_formula(out: &mut String, f: &Formula, min_prec: u8) -> fmt::Result {
    let prec = match f {
        Formula::Or(..) => 1,
        Formula::And(..) => 2,
        _ => 3,
    };
    let paren = prec < min_prec;
    if paren {
        out.push('(');
    }
    match f {
        Formula::Atom(a) => write!(out, "{a}")?,
        Formula::True => out.push_str("TRUE"),
        Formula::Or(l, r) => {
            write_formula(out, l, 1)?;
            out.push_str(" OR ");
            write_formula(out, r, 2)?;
        }
        Formula::And(l, r) => {
            write_formula(out, l, 2)?;
            out.push_str(" AND ");
            write_formula(out, r, 3)?;
        }
    }
    if paren {
        out.push(')');
    }
    Ok(())
}

/// Canonical text for a parsed policy; re-parses to an equal AST.
pub fn print_ast(ast: &PolicyAst) -> String {
    let mut out = String::new();
    for clause in &ast.clauses {
        out.push_str("ALLOW ");
        write_formula(&mut out, clause, 1).expect("writing to a String");
        out.push('\n');
    }
    out
}

/// Canonical text for a DNF policy: one `ALLOW` per clause, atoms in
/// attribute-kind order.
pub fn print_dnf(dnf: &PolicyDnf) -> String {
    dnf.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyClause;

    fn lat() -> Lattices {
        Lattices::sample()
    }

    fn parse(text: &str) -> Result<PolicyAst, PolicyParseError> {
        parse_policy(&SourcePolicy::inline(text), &lat())
    }

    #[test]
    fn gdpr_subset_shape() {
        let ast = parse(GDPR_SUBSET_POLICY).unwrap();
        assert_eq!(ast.clauses.len(), 1);
        // SCHEMA AND NOTIFICATION AND (ROLE OR (CONSENT AND DECLASS))
        let Formula::And(outer_l, outer_r) = &ast.clauses[0] else {
            panic!("expected AND at the top: {:?}", ast.clauses[0])
        };
        assert!(matches!(**outer_l, Formula::And(..)));
        assert!(matches!(**outer_r, Formula::Or(..)));
    }

    #[test]
    fn gdpr_subset_dnf() {
        let l = lat();
        let dnf = parse(GDPR_SUBSET_POLICY).unwrap().to_dnf(&l);
        let base = [
            AttributeValue::schema(["NotPII"], &l).unwrap(),
            AttributeValue::NotificationRequired,
        ];
        let c1 = PolicyClause::new(
            base.iter()
                .cloned()
                .chain([AttributeValue::Role(RoleExpr::Var("user_id".into()))]),
            &l,
        );
        let c2 = PolicyClause::new(
            base.iter().cloned().chain([
                AttributeValue::ConsentRequired,
                AttributeValue::dp(1.0, 1e-6).unwrap(),
            ]),
            &l,
        );
        assert_eq!(dnf, PolicyDnf::new([c1, c2]).unwrap());
    }

    #[test]
    fn full_gdpr_has_five_clauses() {
        let ast = parse(GDPR_POLICY).unwrap();
        assert_eq!(ast.clauses.len(), 5);
        assert_eq!(ast.to_dnf(&lat()).len(), 7);
    }

    #[test]
    fn smallest_policy() {
        let ast = parse("ALLOW CONSENT_REQUIRED").unwrap();
        assert_eq!(
            ast.clauses,
            vec![Formula::Atom(AttributeValue::ConsentRequired)]
        );
    }

    #[test]
    fn declass_aliases_agree() {
        assert_eq!(
            parse("ALLOW DECLASS DP 1 0.000001").unwrap(),
            parse("ALLOW DECLASS DifferentialPrivacy 1 1e-6").unwrap()
        );
    }

    #[test]
    fn filter_forms() {
        let age = |text: &str| match &parse(text).unwrap().clauses[0] {
            Formula::Atom(AttributeValue::Filter { range, .. }) => *range,
            other => panic!("{other:?}"),
        };
        assert_eq!(age("ALLOW FILTER age > 17"), Interval::at_least(18));
        assert_eq!(age("ALLOW FILTER age < 5"), Interval::at_most(4));
        assert_eq!(age("ALLOW FILTER age >= 18"), Interval::at_least(18));
        assert_eq!(age("ALLOW FILTER age [3, 9]"), Interval::closed(3, 9));
        assert_eq!(age("ALLOW FILTER age [-inf, inf]"), Interval::TOP);
        assert_eq!(age("ALLOW FILTER age []"), Interval::Empty);
    }

    #[test]
    fn role_forms() {
        let role = |text: &str| match &parse(text).unwrap().clauses[0] {
            Formula::Atom(AttributeValue::Role(r)) => r.clone(),
            other => panic!("{other:?}"),
        };
        assert_eq!(role("ALLOW ROLE $user_id"), RoleExpr::Var("user_id".into()));
        assert_eq!(
            role("ALLOW ROLE UserAffiliatedOrganizations($user_id)"),
            RoleExpr::Meta {
                function: "UserAffiliatedOrganizations".into(),
                var: "user_id".into()
            }
        );
        assert_eq!(
            role("ALLOW ROLE LegalAuthority (Article 6)"),
            RoleExpr::Literal("LegalAuthority".into())
        );
    }

    #[test]
    fn citations_are_ignored() {
        assert_eq!(
            parse(
                "ALLOW SCHEMA PersonalInformation (Article 9) AND CONSENT_REQUIRED (Article 4, 6)"
            )
            .unwrap(),
            parse("ALLOW SCHEMA PersonalInformation AND CONSENT_REQUIRED").unwrap()
        );
    }

    #[test]
    fn errors_carry_positions() {
        match parse("ALLOW SCHEMA NotPII\n  AND BOGUS x").unwrap_err() {
            PolicyParseError::UnknownAttribute { pos, name, .. } => {
                assert_eq!(name, "BOGUS");
                assert_eq!(pos, Pos { line: 2, col: 7 });
            }
            other => panic!("{other}"),
        }
        assert!(matches!(
            parse("ALLOW SCHEMA Martian").unwrap_err(),
            PolicyParseError::UnknownLabel {
                lattice: "datatype",
                ..
            }
        ));
        assert!(matches!(
            parse("ALLOW PURPOSE Fun").unwrap_err(),
            PolicyParseError::UnknownLabel {
                lattice: "purpose",
                ..
            }
        ));
        assert!(matches!(
            parse("").unwrap_err(),
            PolicyParseError::Syntax { .. }
        ));
        assert!(matches!(
            parse("ALLOW (CONSENT_REQUIRED").unwrap_err(),
            PolicyParseError::Syntax { .. }
        ));
        assert!(matches!(
            parse("allow CONSENT_REQUIRED").unwrap_err(),
            PolicyParseError::Syntax { .. }
        ));
        assert!(matches!(
            parse("ALLOW DECLASS DP 0 0").unwrap_err(),
            PolicyParseError::Syntax { .. }
        ));
    }

    #[test]
    fn print_dnf_single_atom() {
        let l = lat();
        let dnf = PolicyDnf::single(PolicyClause::new([AttributeValue::ConsentRequired], &l));
        assert_eq!(print_dnf(&dnf), "ALLOW CONSENT_REQUIRED\n");
    }

    #[test]
    fn gdpr_round_trip() {
        let l = lat();
        let ast = parse(GDPR_POLICY).unwrap();
        let again = parse(&print_ast(&ast)).unwrap();
        assert_eq!(ast, again);
        let dnf = ast.to_dnf(&l);
        assert_eq!(parse(&print_dnf(&dnf)).unwrap().to_dnf(&l), dnf);
    }

    #[test]
    fn invalid_utf8_is_syntax_error() {
        let err = parse_policy_bytes(&[0x41, 0xff, 0xfe], "bytes", &lat()).unwrap_err();
        assert!(matches!(err, PolicyParseError::Syntax { .. }));
    }
}
