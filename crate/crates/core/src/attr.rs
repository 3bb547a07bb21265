//! Attribute abstract domains.
//!
//! Every attribute kind forms a lattice whose order reads "at least as
//! restrictive as": `a ⊑ b` means a guarantee of `a` also establishes `b`.
//! A program effect atom discharges a policy requirement when the effect is
//! below the requirement in its kind's order.

use std::collections::BTreeSet;
use std::fmt;

use ordered_float::OrderedFloat;
use thiserror::Error;

use crate::interval::Interval;
use crate::lattice::{FiniteLattice, Lattices};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttrError {
    #[error("attribute kind mismatch: {0} vs {1}")]
    KindMismatch(AttrKind, AttrKind),
    #[error("{kind} atoms on different fields (`{left}` vs `{right}`)")]
    KeyMismatch {
        kind: AttrKind,
        left: String,
        right: String,
    },
    #[error("unknown {lattice} label `{label}`")]
    UnknownLabel {
        lattice: &'static str,
        label: String,
    },
    #[error("invalid differential privacy parameters: epsilon={epsilon}, delta={delta}")]
    InvalidDp { epsilon: f64, delta: f64 },
}

/// Attribute names, in canonical printing order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrKind {
    Schema,
    Filter,
    Redact,
    Purpose,
    NotificationRequired,
    ConsentRequired,
    Role,
    Declass,
}

impl AttrKind {
    pub const ALL: [AttrKind; 8] = [
        AttrKind::Schema,
        AttrKind::Filter,
        AttrKind::Redact,
        AttrKind::Purpose,
        AttrKind::NotificationRequired,
        AttrKind::ConsentRequired,
        AttrKind::Role,
        AttrKind::Declass,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            AttrKind::Schema => "SCHEMA",
            AttrKind::Filter => "FILTER",
            AttrKind::Redact => "REDACT",
            AttrKind::Purpose => "PURPOSE",
            AttrKind::NotificationRequired => "NOTIFICATION_REQUIRED",
            AttrKind::ConsentRequired => "CONSENT_REQUIRED",
            AttrKind::Role => "ROLE",
            AttrKind::Declass => "DECLASS",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.keyword() == word)
    }

    /// FILTER and REDACT atoms are keyed by field.
    pub fn is_keyed(self) -> bool {
        matches!(self, AttrKind::Filter | AttrKind::Redact)
    }
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A set of lattice labels ordered as a Hoare powerdomain: `S1 ⊑ S2` iff
/// every label of `S1` lies below some label of `S2`.
///
/// Stored canonically as the antichain of maximal labels, which makes the
/// order antisymmetric and structural equality coincide with equivalence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSet(BTreeSet<String>);

impl LabelSet {
    pub fn new<I, S>(
        labels: I,
        lattice: &FiniteLattice,
        name: &'static str,
    ) -> Result<Self, AttrError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let raw: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        if let Some(bad) = raw.iter().find(|l| !lattice.contains(l)) {
            return Err(AttrError::UnknownLabel {
                lattice: name,
                label: bad.clone(),
            });
        }
        Ok(Self::canonical(raw, lattice))
    }

    fn canonical(raw: BTreeSet<String>, lattice: &FiniteLattice) -> Self {
        let keep: BTreeSet<String> = raw
            .iter()
            .filter(|x| !raw.iter().any(|y| y != *x && lattice.leq(x, y)))
            .cloned()
            .collect();
        LabelSet(keep)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn leq(&self, other: &LabelSet, lattice: &FiniteLattice) -> bool {
        self.0
            .iter()
            .all(|x| other.0.iter().any(|y| lattice.leq(x, y)))
    }

    pub fn join(&self, other: &LabelSet, lattice: &FiniteLattice) -> LabelSet {
        Self::canonical(self.0.union(&other.0).cloned().collect(), lattice)
    }

    pub fn meet(&self, other: &LabelSet, lattice: &FiniteLattice) -> LabelSet {
        let raw = self
            .0
            .iter()
            .flat_map(|x| other.0.iter().map(move |y| lattice.meet(x, y).to_string()))
            .collect();
        Self::canonical(raw, lattice)
    }

    /// `{ s1 ⊔ s2 | s1 ∈ S1, s2 ∈ S2 }`: an upper bound of both operands
    /// that coarsens every pair of labels to their common supertype.
    pub fn pairwise_join(&self, other: &LabelSet, lattice: &FiniteLattice) -> LabelSet {
        let raw = self
            .0
            .iter()
            .flat_map(|x| other.0.iter().map(move |y| lattice.join(x, y).to_string()))
            .collect();
        Self::canonical(raw, lattice)
    }
}

/// A role requirement.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoleExpr {
    /// A label of the role lattice.
    Literal(String),
    /// `$name`, resolved against request bindings at declassification.
    Var(String),
    /// `Func($name)`, resolved through a configured relation.
    Meta { function: String, var: String },
}

impl fmt::Display for RoleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoleExpr::Literal(l) => f.write_str(l),
            RoleExpr::Var(v) => write!(f, "${v}"),
            RoleExpr::Meta { function, var } => write!(f, "{function}(${var})"),
        }
    }
}

impl RoleExpr {
    // The role lattice extended with opaque symbols glued in between its top
    // and bottom; opaque symbols are mutually incomparable.
    fn leq(&self, other: &RoleExpr, roles: &FiniteLattice) -> bool {
        if self == other {
            return true;
        }
        match (self, other) {
            (RoleExpr::Literal(a), RoleExpr::Literal(b)) => roles.leq(a, b),
            (RoleExpr::Literal(a), _) => a == roles.bottom(),
            (_, RoleExpr::Literal(b)) => b == roles.top(),
            _ => false,
        }
    }

    fn join(&self, other: &RoleExpr, roles: &FiniteLattice) -> RoleExpr {
        if self.leq(other, roles) {
            return other.clone();
        }
        if other.leq(self, roles) {
            return self.clone();
        }
        match (self, other) {
            (RoleExpr::Literal(a), RoleExpr::Literal(b)) => {
                RoleExpr::Literal(roles.join(a, b).to_string())
            }
            _ => RoleExpr::Literal(roles.top().to_string()),
        }
    }

    fn meet(&self, other: &RoleExpr, roles: &FiniteLattice) -> RoleExpr {
        if self.leq(other, roles) {
            return self.clone();
        }
        if other.leq(self, roles) {
            return other.clone();
        }
        match (self, other) {
            (RoleExpr::Literal(a), RoleExpr::Literal(b)) => {
                RoleExpr::Literal(roles.meet(a, b).to_string())
            }
            _ => RoleExpr::Literal(roles.bottom().to_string()),
        }
    }
}

/// Declassification mechanisms. Smaller privacy parameters are more
/// restrictive; `Any` accepts every mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Declass {
    Dp {
        epsilon: OrderedFloat<f64>,
        delta: OrderedFloat<f64>,
    },
    Any,
}

impl Declass {
    pub fn dp(epsilon: f64, delta: f64) -> Result<Self, AttrError> {
        if !(epsilon > 0.0 && epsilon.is_finite() && (0.0..1.0).contains(&delta)) {
            return Err(AttrError::InvalidDp { epsilon, delta });
        }
        Ok(Declass::Dp {
            epsilon: OrderedFloat(epsilon),
            delta: OrderedFloat(delta),
        })
    }

    fn leq(&self, other: &Declass) -> bool {
        match (self, other) {
            (_, Declass::Any) => true,
            (Declass::Any, _) => false,
            (
                Declass::Dp {
                    epsilon: e1,
                    delta: d1,
                },
                Declass::Dp {
                    epsilon: e2,
                    delta: d2,
                },
            ) => e1 <= e2 && d1 <= d2,
        }
    }

    fn join(&self, other: &Declass) -> Declass {
        match (self, other) {
            (Declass::Any, _) | (_, Declass::Any) => Declass::Any,
            (
                Declass::Dp {
                    epsilon: e1,
                    delta: d1,
                },
                Declass::Dp {
                    epsilon: e2,
                    delta: d2,
                },
            ) => Declass::Dp {
                epsilon: *e1.max(e2),
                delta: *d1.max(d2),
            },
        }
    }

    fn meet(&self, other: &Declass) -> Declass {
        match (self, other) {
            (Declass::Any, x) | (x, Declass::Any) => *x,
            (
                Declass::Dp {
                    epsilon: e1,
                    delta: d1,
                },
                Declass::Dp {
                    epsilon: e2,
                    delta: d2,
                },
            ) => Declass::Dp {
                epsilon: *e1.min(e2),
                delta: *d1.min(d2),
            },
        }
    }
}

impl fmt::Display for Declass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Declass::Dp { epsilon, delta } => write!(f, "DP {} {}", epsilon.0, delta.0),
            Declass::Any => f.write_str("Any"),
        }
    }
}

/// Redaction modes, from most to least destructive. The derived order is
/// the lattice order: `full ⊑ hash ⊑ truncate(0) ⊑ truncate(1) ⊑ …`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RedactMode {
    Full,
    Hash,
    Truncate(u32),
}

impl fmt::Display for RedactMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RedactMode::Full => f.write_str("full"),
            RedactMode::Hash => f.write_str("hash"),
            RedactMode::Truncate(k) => write!(f, "truncate({k})"),
        }
    }
}

/// One policy atom or effect atom.
///
/// Variant order is the canonical printing order within a clause.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttributeValue {
    Schema(LabelSet),
    Filter { field: String, range: Interval },
    Redact { field: String, mode: RedactMode },
    Purpose(LabelSet),
    NotificationRequired,
    ConsentRequired,
    Role(RoleExpr),
    Declass(Declass),
}

impl AttributeValue {
    pub fn kind(&self) -> AttrKind {
        match self {
            AttributeValue::Schema(_) => AttrKind::Schema,
            AttributeValue::Filter { .. } => AttrKind::Filter,
            AttributeValue::Redact { .. } => AttrKind::Redact,
            AttributeValue::Purpose(_) => AttrKind::Purpose,
            AttributeValue::NotificationRequired => AttrKind::NotificationRequired,
            AttributeValue::ConsentRequired => AttrKind::ConsentRequired,
            AttributeValue::Role(_) => AttrKind::Role,
            AttributeValue::Declass(_) => AttrKind::Declass,
        }
    }

    /// Field key for keyed kinds.
    pub fn key(&self) -> Option<&str> {
        match self {
            AttributeValue::Filter { field, .. } | AttributeValue::Redact { field, .. } => {
                Some(field)
            }
            _ => None,
        }
    }

    /// Whether two atoms live in the same lattice (same kind and key).
    pub fn comparable(&self, other: &AttributeValue) -> bool {
        self.kind() == other.kind() && self.key() == other.key()
    }

    pub fn schema<I, S>(labels: I, lattices: &Lattices) -> Result<Self, AttrError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Ok(AttributeValue::Schema(LabelSet::new(
            labels,
            &lattices.datatypes,
            "datatype",
        )?))
    }

    pub fn purpose<I, S>(labels: I, lattices: &Lattices) -> Result<Self, AttrError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Ok(AttributeValue::Purpose(LabelSet::new(
            labels,
            &lattices.purposes,
            "purpose",
        )?))
    }

    pub fn filter(field: impl Into<String>, range: Interval) -> Self {
        AttributeValue::Filter {
            field: field.into(),
            range,
        }
    }

    pub fn redact(field: impl Into<String>, mode: RedactMode) -> Self {
        AttributeValue::Redact {
            field: field.into(),
            mode,
        }
    }

    pub fn dp(epsilon: f64, delta: f64) -> Result<Self, AttrError> {
        Ok(AttributeValue::Declass(Declass::dp(epsilon, delta)?))
    }

    fn check_same(&self, other: &AttributeValue) -> Result<(), AttrError> {
        if self.kind() != other.kind() {
            return Err(AttrError::KindMismatch(self.kind(), other.kind()));
        }
        if self.key() != other.key() {
            return Err(AttrError::KeyMismatch {
                kind: self.kind(),
                left: self.key().unwrap_or_default().to_string(),
                right: other.key().unwrap_or_default().to_string(),
            });
        }
        Ok(())
    }

    /// `self ⊑ other` in the kind's order.
    pub fn leq(&self, other: &AttributeValue, lattices: &Lattices) -> Result<bool, AttrError> {
        self.check_same(other)?;
        Ok(self.leq_unchecked(other, lattices))
    }

    /// Order test for atoms already known to be comparable.
    pub(crate) fn leq_unchecked(&self, other: &AttributeValue, lattices: &Lattices) -> bool {
        use AttributeValue::*;
        match (self, other) {
            (Schema(a), Schema(b)) => a.leq(b, &lattices.datatypes),
            (Purpose(a), Purpose(b)) => a.leq(b, &lattices.purposes),
            (Filter { range: a, .. }, Filter { range: b, .. }) => a.leq(b),
            (Redact { mode: a, .. }, Redact { mode: b, .. }) => a <= b,
            (Role(a), Role(b)) => a.leq(b, &lattices.roles),
            (Declass(a), Declass(b)) => a.leq(b),
            (NotificationRequired, NotificationRequired) | (ConsentRequired, ConsentRequired) => {
                true
            }
            _ => false,
        }
    }

    pub fn join(
        &self,
        other: &AttributeValue,
        lattices: &Lattices,
    ) -> Result<AttributeValue, AttrError> {
        self.check_same(other)?;
        use AttributeValue::*;
        Ok(match (self, other) {
            (Schema(a), Schema(b)) => Schema(a.join(b, &lattices.datatypes)),
            (Purpose(a), Purpose(b)) => Purpose(a.join(b, &lattices.purposes)),
            (Filter { field, range: a }, Filter { range: b, .. }) => Filter {
                field: field.clone(),
                range: a.join(b),
            },
            (Redact { field, mode: a }, Redact { mode: b, .. }) => Redact {
                field: field.clone(),
                mode: *a.max(b),
            },
            (Role(a), Role(b)) => Role(a.join(b, &lattices.roles)),
            (Declass(a), Declass(b)) => Declass(a.join(b)),
            (x, _) => x.clone(),
        })
    }

    pub fn meet(
        &self,
        other: &AttributeValue,
        lattices: &Lattices,
    ) -> Result<AttributeValue, AttrError> {
        self.check_same(other)?;
        Ok(self.meet_unchecked(other, lattices))
    }

    pub(crate) fn meet_unchecked(
        &self,
        other: &AttributeValue,
        lattices: &Lattices,
    ) -> AttributeValue {
        use AttributeValue::*;
        match (self, other) {
            (Schema(a), Schema(b)) => Schema(a.meet(b, &lattices.datatypes)),
            (Purpose(a), Purpose(b)) => Purpose(a.meet(b, &lattices.purposes)),
            (Filter { field, range: a }, Filter { range: b, .. }) => Filter {
                field: field.clone(),
                range: a.meet(b),
            },
            (Redact { field, mode: a }, Redact { mode: b, .. }) => Redact {
                field: field.clone(),
                mode: *a.min(b),
            },
            (Role(a), Role(b)) => Role(a.meet(b, &lattices.roles)),
            (Declass(a), Declass(b)) => Declass(a.meet(b)),
            (x, _) => x.clone(),
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Schema(s) | AttributeValue::Purpose(s) => {
                f.write_str(self.kind().keyword())?;
                for l in s.labels() {
                    write!(f, " {l}")?;
                }
                Ok(())
            }
            AttributeValue::Filter { field, range } => write!(f, "FILTER {field} {range}"),
            AttributeValue::Redact { field, mode } => write!(f, "REDACT {field} {mode}"),
            AttributeValue::NotificationRequired => f.write_str("NOTIFICATION_REQUIRED"),
            AttributeValue::ConsentRequired => f.write_str("CONSENT_REQUIRED"),
            AttributeValue::Role(r) => write!(f, "ROLE {r}"),
            AttributeValue::Declass(d) => write!(f, "DECLASS {d}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat() -> Lattices {
        Lattices::sample()
    }

    fn schema(labels: &[&str]) -> AttributeValue {
        AttributeValue::schema(labels.iter().copied(), &lat()).unwrap()
    }

    #[test]
    fn filter_containment() {
        let l = lat();
        let a = AttributeValue::filter("age", Interval::closed(3, 5));
        let b = AttributeValue::filter("age", Interval::closed(0, 9));
        assert!(a.leq(&b, &l).unwrap());
        assert!(!b.leq(&a, &l).unwrap());
        assert_eq!(
            AttributeValue::filter("age", Interval::closed(0, 5))
                .meet(&AttributeValue::filter("age", Interval::closed(3, 9)), &l)
                .unwrap(),
            AttributeValue::filter("age", Interval::closed(3, 5))
        );
    }

    #[test]
    fn dp_componentwise() {
        let l = lat();
        let a = AttributeValue::dp(0.5, 1e-6).unwrap();
        let b = AttributeValue::dp(1.0, 1e-6).unwrap();
        assert!(a.leq(&b, &l).unwrap());
        assert!(!b.leq(&a, &l).unwrap());
        assert!(b.leq(&AttributeValue::Declass(Declass::Any), &l).unwrap());
    }

    #[test]
    fn dp_parameter_validation() {
        assert!(Declass::dp(0.0, 0.0).is_err());
        assert!(Declass::dp(1.0, 1.0).is_err());
        assert!(Declass::dp(1.0, -0.1).is_err());
        assert!(Declass::dp(f64::NAN, 0.0).is_err());
        assert!(Declass::dp(1.0, 0.0).is_ok());
    }

    #[test]
    fn schema_order_uses_datatype_lattice() {
        let l = lat();
        assert!(!schema(&["Name"]).leq(&schema(&["NotPII"]), &l).unwrap());
        assert!(schema(&["Region"]).leq(&schema(&["NotPII"]), &l).unwrap());
        // ∀∃ rather than ∀∀: reflexive on multi-element sets.
        let multi = schema(&["Name", "Region"]);
        assert!(multi.leq(&multi, &l).unwrap());
    }

    #[test]
    fn schema_pairwise_join_of_pii_leaves() {
        let l = lat();
        let (AttributeValue::Schema(a), AttributeValue::Schema(b)) =
            (schema(&["Name"]), schema(&["SSN"]))
        else {
            unreachable!()
        };
        let joined = a.pairwise_join(&b, &l.datatypes);
        assert_eq!(joined.labels().collect::<Vec<_>>(), vec!["PII"]);
    }

    #[test]
    fn schema_canonical_form_drops_dominated_labels() {
        assert_eq!(schema(&["Name", "PII"]), schema(&["PII"]));
    }

    #[test]
    fn purpose_join_is_union() {
        let l = lat();
        let a = AttributeValue::purpose(["PublicHealth"], &l).unwrap();
        let b = AttributeValue::purpose(["LegalObligation"], &l).unwrap();
        assert_eq!(
            a.join(&b, &l).unwrap(),
            AttributeValue::purpose(["PublicHealth", "LegalObligation"], &l).unwrap()
        );
    }

    #[test]
    fn kind_and_key_mismatch() {
        let l = lat();
        let err = AttributeValue::ConsentRequired
            .leq(&AttributeValue::NotificationRequired, &l)
            .unwrap_err();
        assert!(matches!(err, AttrError::KindMismatch(..)));
        let err = AttributeValue::filter("a", Interval::TOP)
            .join(&AttributeValue::filter("b", Interval::TOP), &l)
            .unwrap_err();
        assert!(matches!(err, AttrError::KeyMismatch { .. }));
    }

    #[test]
    fn role_opaque_symbols() {
        let l = lat();
        let var = AttributeValue::Role(RoleExpr::Var("user_id".into()));
        let top = AttributeValue::Role(RoleExpr::Literal("Anyone".into()));
        let lit = AttributeValue::Role(RoleExpr::Literal("Analyst".into()));
        assert!(var.leq(&top, &l).unwrap());
        assert!(!var.leq(&lit, &l).unwrap());
        assert_eq!(var.join(&lit, &l).unwrap(), top);
        assert_eq!(
            var.meet(&lit, &l).unwrap(),
            AttributeValue::Role(RoleExpr::Literal("NoRole".into()))
        );
    }

    #[test]
    fn redact_chain() {
        assert!(RedactMode::Full < RedactMode::Hash);
        assert!(RedactMode::Hash < RedactMode::Truncate(0));
        assert!(RedactMode::Truncate(2) < RedactMode::Truncate(3));
    }

    #[test]
    fn unknown_label_rejected() {
        let err = AttributeValue::schema(["Nonsense"], &lat()).unwrap_err();
        assert!(matches!(err, AttrError::UnknownLabel { .. }));
    }
}
