//! Input policy combination, effect discharge and residual policies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::attr::{AttributeValue, LabelSet, RoleExpr};
use crate::lattice::Lattices;
use crate::policy::{clause_leq, PolicyClause, PolicyDnf};
use crate::program::{CapsuleId, PolicyEffect};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResidualError {
    #[error("no input policies")]
    NoPolicies,
    #[error("role variable `${0}` has no binding")]
    UnboundVariable(String),
}

/// Drops every clause implied by a different clause of the set, since the
/// weaker clause already admits everything the stronger one does.
pub fn reduce(clauses: BTreeSet<PolicyClause>, lattices: &Lattices) -> BTreeSet<PolicyClause> {
    clauses
        .iter()
        .filter(|c2| {
            !clauses.iter().any(|c1| {
                c1 != *c2
                    && clause_leq(c2, c1, lattices)
                    && (!clause_leq(c1, c2, lattices) || c1 < *c2)
            })
        })
        .cloned()
        .collect()
}

/// `p1 ⊔ p2`: pairwise clause conjunctions, deduplicated and reduced.
pub fn policy_join(p1: &PolicyDnf, p2: &PolicyDnf, lattices: &Lattices) -> PolicyDnf {
    let mut out = BTreeSet::new();
    for c1 in p1.clauses() {
        for c2 in p2.clauses() {
            out.insert(c1.conjoin(c2, lattices));
        }
    }
    PolicyDnf::new(reduce(out, lattices)).expect("product of non-empty policies is non-empty")
}

/// Left fold of [`policy_join`].
pub fn ingest(policies: &[PolicyDnf], lattices: &Lattices) -> Result<PolicyDnf, ResidualError> {
    let (first, rest) = policies.split_first().ok_or(ResidualError::NoPolicies)?;
    let seed = PolicyDnf::new(reduce(first.clause_set().clone(), lattices)).expect("non-empty");
    Ok(rest
        .iter()
        .fold(seed, |acc, p| policy_join(&acc, p, lattices)))
}

/// Combined policy of a program's input capsules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputPolicy {
    pub dnf: PolicyDnf,
    pub sources: BTreeSet<CapsuleId>,
}

impl InputPolicy {
    pub fn from_capsules<'a, I>(inputs: I, lattices: &Lattices) -> Result<Self, ResidualError>
    where
        I: IntoIterator<Item = (&'a CapsuleId, &'a PolicyDnf)>,
    {
        let mut sources = BTreeSet::new();
        let mut policies = Vec::new();
        for (id, p) in inputs {
            sources.insert(id.clone());
            policies.push(p.clone());
        }
        Ok(Self {
            dnf: ingest(&policies, lattices)?,
            sources,
        })
    }
}

/// Whether the effect establishes `atom`: some comparable effect atom is at
/// least as restrictive. ROLE atoms are never discharged by a program.
pub fn satisfies(atom: &AttributeValue, effect: &PolicyEffect, lattices: &Lattices) -> bool {
    if matches!(atom, AttributeValue::Role(_)) {
        return false;
    }
    effect
        .atoms()
        .any(|e| e.comparable(atom) && e.leq_unchecked(atom, lattices))
}

/// The clause minus every atom the effect satisfies.
pub fn residual_clause(
    c: &PolicyClause,
    effect: &PolicyEffect,
    lattices: &Lattices,
) -> PolicyClause {
    PolicyClause::from_canonical(
        c.atoms()
            .filter(|a| !satisfies(a, effect, lattices))
            .cloned()
            .collect(),
    )
}

/// Residual of each input clause, in input clause order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResidualPolicy {
    clauses: Vec<PolicyClause>,
}

impl ResidualPolicy {
    pub fn clauses(&self) -> &[PolicyClause] {
        &self.clauses
    }

    /// Deduplicated DNF form.
    pub fn dnf(&self) -> PolicyDnf {
        PolicyDnf::new(self.clauses.iter().cloned()).expect("residual of a non-empty policy")
    }

    pub fn from_dnf(dnf: &PolicyDnf) -> Self {
        Self {
            clauses: dnf.clauses().cloned().collect(),
        }
    }

    pub fn has_empty_clause(&self) -> bool {
        self.clauses.iter().any(PolicyClause::is_empty)
    }
}

impl fmt::Display for ResidualPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            writeln!(f, "ALLOW {c}")?;
        }
        Ok(())
    }
}

pub fn residual_policy(
    pin: &PolicyDnf,
    effect: &PolicyEffect,
    lattices: &Lattices,
) -> ResidualPolicy {
    ResidualPolicy {
        clauses: pin
            .clauses()
            .map(|c| residual_clause(c, effect, lattices))
            .collect(),
    }
}

/// Facts recorded about a run, resolved against the data subjects involved.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Evidence {
    /// Every data subject behind the output consented to the analysis.
    pub consent: bool,
    /// Every data subject behind the output has been notified.
    pub notified: bool,
    /// Purposes declared for the run.
    pub purposes: Option<LabelSet>,
}

/// Removes flag and purpose atoms covered by evidence.
pub fn metadata_discharge(
    r: &ResidualPolicy,
    evidence: &Evidence,
    lattices: &Lattices,
) -> ResidualPolicy {
    let keep = |a: &AttributeValue| match a {
        AttributeValue::ConsentRequired => !evidence.consent,
        AttributeValue::NotificationRequired => !evidence.notified,
        AttributeValue::Purpose(required) => !evidence
            .purposes
            .as_ref()
            .is_some_and(|declared| declared.leq(required, &lattices.purposes)),
        _ => true,
    };
    ResidualPolicy {
        clauses: r
            .clauses
            .iter()
            .map(|c| PolicyClause::from_canonical(c.atoms().filter(|a| keep(a)).cloned().collect()))
            .collect(),
    }
}

/// Who asks to declassify.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Analyst {
    pub identity: String,
    pub role: String,
}

/// Values bound to each role variable. A variable bound to several values
/// (one per data subject) is satisfied only when all of them are.
pub type Bindings = BTreeMap<String, BTreeSet<String>>;

/// `(function, bound value)` → identities or roles affiliated with it.
pub type Affiliations = BTreeMap<(String, String), BTreeSet<String>>;

/// Whether the analyst meets one role requirement.
pub fn role_satisfied(
    role: &RoleExpr,
    analyst: &Analyst,
    bindings: &Bindings,
    affiliations: &Affiliations,
    lattices: &Lattices,
) -> Result<bool, ResidualError> {
    match role {
        RoleExpr::Literal(r) => Ok(lattices.roles.leq(&analyst.role, r)),
        RoleExpr::Var(v) => {
            let values = bindings
                .get(v)
                .ok_or_else(|| ResidualError::UnboundVariable(v.clone()))?;
            Ok(!values.is_empty() && values.iter().all(|x| *x == analyst.identity))
        }
        RoleExpr::Meta { function, var } => {
            let values = bindings
                .get(var)
                .ok_or_else(|| ResidualError::UnboundVariable(var.clone()))?;
            Ok(!values.is_empty()
                && values.iter().all(|x| {
                    affiliations
                        .get(&(function.clone(), x.clone()))
                        .is_some_and(|who| {
                            who.contains(&analyst.identity) || who.contains(&analyst.role)
                        })
                }))
        }
    }
}

/// True when some clause is empty, or consists only of ROLE atoms the
/// analyst satisfies. An unbound variable is an error only if no clause is
/// satisfied without it.
pub fn declassifiable(
    r: &ResidualPolicy,
    analyst: &Analyst,
    bindings: &Bindings,
    affiliations: &Affiliations,
    lattices: &Lattices,
) -> Result<bool, ResidualError> {
    if r.has_empty_clause() {
        return Ok(true);
    }
    let mut unbound = None;
    for c in &r.clauses {
        let mut ok = true;
        for a in c.atoms() {
            let AttributeValue::Role(role) = a else {
                ok = false;
                break;
            };
            match role_satisfied(role, analyst, bindings, affiliations, lattices) {
                Ok(true) => {}
                Ok(false) => {
                    ok = false;
                    break;
                }
                Err(e) => {
                    unbound.get_or_insert(e);
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(true);
        }
    }
    match unbound {
        Some(e) => Err(e),
        None => Ok(false),
    }
}
