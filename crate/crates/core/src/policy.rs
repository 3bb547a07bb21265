//! Policy clauses, disjunctive normal form and DNF conversion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::attr::AttributeValue;
use crate::lattice::Lattices;

/// A conjunction of attribute requirements.
///
/// Construction canonicalises the atom set: keyed atoms (FILTER, REDACT)
/// sharing a field are merged by meet, and an unkeyed atom implied by
/// another atom of the same kind in the clause is dropped. An empty clause
/// has no remaining requirements.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyClause {
    atoms: BTreeSet<AttributeValue>,
}

impl PolicyClause {
    pub fn new<I>(atoms: I, lattices: &Lattices) -> Self
    where
        I: IntoIterator<Item = AttributeValue>,
    {
        let mut keyed: BTreeMap<(crate::attr::AttrKind, String), AttributeValue> = BTreeMap::new();
        let mut unkeyed: BTreeSet<AttributeValue> = BTreeSet::new();
        for atom in atoms {
            match atom.key() {
                Some(field) => {
                    let slot = (atom.kind(), field.to_string());
                    let merged = match keyed.remove(&slot) {
                        Some(prev) => prev.meet_unchecked(&atom, lattices),
                        None => atom,
                    };
                    keyed.insert(slot, merged);
                }
                None => {
                    unkeyed.insert(atom);
                }
            }
        }
        let reduced: Vec<AttributeValue> = unkeyed
            .iter()
            .filter(|a| {
                !unkeyed
                    .iter()
                    .any(|b| b != *a && b.kind() == a.kind() && b.leq_unchecked(a, lattices))
            })
            .cloned()
            .collect();
        let mut atoms: BTreeSet<AttributeValue> = keyed.into_values().collect();
        atoms.extend(reduced);
        Self { atoms }
    }

    /// The empty (trivially satisfied) clause.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a clause from atoms already in canonical form, e.g. a subset of
    /// an existing clause.
    pub(crate) fn from_canonical(atoms: BTreeSet<AttributeValue>) -> Self {
        Self { atoms }
    }

    pub fn atoms(&self) -> impl Iterator<Item = &AttributeValue> {
        self.atoms.iter()
    }

    pub fn atom_set(&self) -> &BTreeSet<AttributeValue> {
        &self.atoms
    }

    pub fn contains(&self, atom: &AttributeValue) -> bool {
        self.atoms.contains(atom)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_subset(&self, other: &PolicyClause) -> bool {
        self.atoms.is_subset(&other.atoms)
    }

    /// Conjunction of two clauses.
    pub fn conjoin(&self, other: &PolicyClause, lattices: &Lattices) -> PolicyClause {
        PolicyClause::new(
            self.atoms.iter().chain(other.atoms.iter()).cloned(),
            lattices,
        )
    }
}

/// `clauseLeq(c1, c2)`: `c1` is at least as demanding as `c2`, i.e. every
/// requirement of `c2` is implied by some same-kind, same-key atom of `c1`.
pub fn clause_leq(c1: &PolicyClause, c2: &PolicyClause, lattices: &Lattices) -> bool {
    c2.atoms().all(|a2| {
        c1.atoms()
            .any(|a1| a1.comparable(a2) && a1.leq_unchecked(a2, lattices))
    })
}

impl fmt::Display for PolicyClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.atoms.is_empty() {
            return f.write_str("TRUE");
        }
        for (i, atom) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(" AND ")?;
            }
            write!(f, "{atom}")?;
        }
        Ok(())
    }
}

/// A policy in disjunctive normal form: satisfied when any clause is.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PolicyDnf {
    clauses: BTreeSet<PolicyClause>,
}

impl PolicyDnf {
    /// Returns `None` for an empty clause set.
    pub fn new<I>(clauses: I) -> Option<Self>
    where
        I: IntoIterator<Item = PolicyClause>,
    {
        let clauses: BTreeSet<PolicyClause> = clauses.into_iter().collect();
        if clauses.is_empty() {
            None
        } else {
            Some(Self { clauses })
        }
    }

    pub fn single(clause: PolicyClause) -> Self {
        Self {
            clauses: BTreeSet::from([clause]),
        }
    }

    pub fn clauses(&self) -> impl Iterator<Item = &PolicyClause> {
        self.clauses.iter()
    }

    pub fn clause_set(&self) -> &BTreeSet<PolicyClause> {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn has_empty_clause(&self) -> bool {
        self.clauses.iter().any(PolicyClause::is_empty)
    }
}

impl fmt::Display for PolicyDnf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for clause in &self.clauses {
            writeln!(f, "ALLOW {clause}")?;
        }
        Ok(())
    }
}

/// A clause formula as written in policy source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Formula {
    Atom(AttributeValue),
    /// The clause with no requirements.
    True,
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    /// Distributes AND over OR; each inner vector is one conjunction.
    fn disjuncts(&self) -> Vec<Vec<AttributeValue>> {
        match self {
            Formula::Atom(a) => vec![vec![a.clone()]],
            Formula::True => vec![vec![]],
            Formula::Or(l, r) => {
                let mut out = l.disjuncts();
                out.extend(r.disjuncts());
                out
            }
            Formula::And(l, r) => {
                let left = l.disjuncts();
                let right = r.disjuncts();
                let mut out = Vec::with_capacity(left.len() * right.len());
                for a in &left {
                    for b in &right {
                        let mut conj = a.clone();
                        conj.extend(b.iter().cloned());
                        out.push(conj);
                    }
                }
                out
            }
        }
    }

    /// Evaluates the formula under a truth assignment of its atoms.
    pub fn eval(&self, assignment: &dyn Fn(&AttributeValue) -> bool) -> bool {
        match self {
            Formula::Atom(a) => assignment(a),
            Formula::True => true,
            Formula::And(l, r) => l.eval(assignment) && r.eval(assignment),
            Formula::Or(l, r) => l.eval(assignment) || r.eval(assignment),
        }
    }

    pub fn atoms(&self) -> Vec<&AttributeValue> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a AttributeValue>) {
        match self {
            Formula::Atom(a) => out.push(a),
            Formula::True => {}
            Formula::And(l, r) | Formula::Or(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
        }
    }
}

/// A parsed policy: one formula per `ALLOW`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyAst {
    pub clauses: Vec<Formula>,
}

impl PolicyAst {
    /// Converts to DNF by distributing conjunction over disjunction and
    /// splitting the resulting top-level disjuncts into separate clauses.
    pub fn to_dnf(&self, lattices: &Lattices) -> PolicyDnf {
        let clauses = self
            .clauses
            .iter()
            .flat_map(Formula::disjuncts)
            .map(|atoms| PolicyClause::new(atoms, lattices));
        PolicyDnf::new(clauses).expect("a policy has at least one ALLOW clause")
    }

    pub fn eval(&self, assignment: &dyn Fn(&AttributeValue) -> bool) -> bool {
        self.clauses.iter().any(|c| c.eval(assignment))
    }
}

impl PolicyDnf {
    pub fn eval(&self, assignment: &dyn Fn(&AttributeValue) -> bool) -> bool {
        self.clauses.iter().any(|c| c.atoms().all(assignment))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attr::Declass;
    use crate::interval::Interval;

    fn flag(name: &str) -> Formula {
        // distinct FILTER fields stand in for independent propositional atoms
        Formula::Atom(AttributeValue::filter(name, Interval::TOP))
    }

    #[test]
    fn single_distribution_step() {
        let l = Lattices::sample();
        let ast = PolicyAst {
            clauses: vec![Formula::and(flag("a"), Formula::or(flag("b"), flag("c")))],
        };
        let dnf = ast.to_dnf(&l);
        let expect = PolicyDnf::new([
            PolicyClause::new(
                [
                    AttributeValue::filter("a", Interval::TOP),
                    AttributeValue::filter("b", Interval::TOP),
                ],
                &l,
            ),
            PolicyClause::new(
                [
                    AttributeValue::filter("a", Interval::TOP),
                    AttributeValue::filter("c", Interval::TOP),
                ],
                &l,
            ),
        ])
        .unwrap();
        assert_eq!(dnf, expect);
    }

    #[test]
    fn two_by_two_gives_four_clauses() {
        let l = Lattices::sample();
        let ast = PolicyAst {
            clauses: vec![Formula::and(
                Formula::or(flag("a"), flag("b")),
                Formula::or(flag("c"), flag("d")),
            )],
        };
        assert_eq!(ast.to_dnf(&l).len(), 4);
    }

    #[test]
    fn keyed_atoms_merge_by_meet() {
        let l = Lattices::sample();
        let c = PolicyClause::new(
            [
                AttributeValue::filter("age", Interval::closed(0, 5)),
                AttributeValue::filter("age", Interval::closed(3, 9)),
            ],
            &l,
        );
        assert_eq!(c.len(), 1);
        assert!(c.contains(&AttributeValue::filter("age", Interval::closed(3, 5))));
    }

    #[test]
    fn implied_unkeyed_atoms_dropped() {
        let l = Lattices::sample();
        let c = PolicyClause::new(
            [
                AttributeValue::schema(["Name"], &l).unwrap(),
                AttributeValue::schema(["PII"], &l).unwrap(),
                AttributeValue::Declass(Declass::dp(1.0, 0.0).unwrap()),
                AttributeValue::Declass(Declass::Any),
            ],
            &l,
        );
        assert_eq!(
            c,
            PolicyClause::new(
                [
                    AttributeValue::schema(["Name"], &l).unwrap(),
                    AttributeValue::Declass(Declass::dp(1.0, 0.0).unwrap()),
                ],
                &l
            )
        );
    }

    #[test]
    fn clause_leq_examples() {
        let l = Lattices::sample();
        let a = AttributeValue::ConsentRequired;
        let b = AttributeValue::NotificationRequired;
        let ca = PolicyClause::new([a.clone()], &l);
        let cab = PolicyClause::new([a, b], &l);
        assert!(clause_leq(&cab, &ca, &l));
        assert!(!clause_leq(&ca, &cab, &l));
        assert!(clause_leq(&ca, &ca, &l));

        let wide = PolicyClause::new([AttributeValue::filter("age", Interval::closed(0, 9))], &l);
        let narrow = PolicyClause::new([AttributeValue::filter("age", Interval::closed(3, 5))], &l);
        assert!(clause_leq(&narrow, &wide, &l));
        assert!(!clause_leq(&wide, &narrow, &l));
    }

    #[test]
    fn empty_clause_display() {
        let dnf = PolicyDnf::single(PolicyClause::empty());
        assert_eq!(dnf.to_string(), "ALLOW TRUE\n");
    }
}
