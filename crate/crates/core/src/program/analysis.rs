//! Abstract interpretation of programs to a schema plus policy effect.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::{CapsuleId, ProgramExpr, Schema};
use crate::attr::{AttrKind, AttributeValue, Declass, LabelSet};
use crate::lattice::Lattices;

/// Datatype label of the `count` column produced by `dpCount`.
pub const COUNT_LABEL: &str = "Count";
/// Name of the single column produced by dpCount.
pub const COUNT_FIELD: &str = "count";

/// Capsule id → schema.
pub type CapsuleEnv = BTreeMap<CapsuleId, Schema>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("capsule `{0}` is not bound")]
    UnboundCapsule(CapsuleId),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown datatype label `{0}`")]
    UnknownLabel(String),
}

/// Guarantees a program establishes about its output. At most one atom per
/// kind and key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyEffect {
    atoms: BTreeMap<(AttrKind, Option<String>), AttributeValue>,
}

impl PolicyEffect {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds atoms one by one with [`PolicyEffect::add`].
    pub fn from_atoms<I>(atoms: I, lattices: &Lattices) -> Self
    where
        I: IntoIterator<Item = AttributeValue>,
    {
        let mut effect = Self::new();
        for atom in atoms {
            effect.add(atom, lattices);
        }
        effect
    }

    fn slot(atom: &AttributeValue) -> (AttrKind, Option<String>) {
        (atom.kind(), atom.key().map(str::to_string))
    }

    /// Adds a guarantee. An existing atom in the same slot is met with the
    /// new one, since both guarantees hold.
    pub fn add(&mut self, atom: AttributeValue, lattices: &Lattices) {
        let slot = Self::slot(&atom);
        let merged = match self.atoms.remove(&slot) {
            Some(prev) => prev.meet_unchecked(&atom, lattices),
            None => atom,
        };
        self.atoms.insert(slot, merged);
    }

    /// Replaces whatever atom occupies the slot.
    pub fn set(&mut self, atom: AttributeValue) {
        self.atoms.insert(Self::slot(&atom), atom);
    }

    pub fn get(&self, kind: AttrKind, key: Option<&str>) -> Option<&AttributeValue> {
        self.atoms.get(&(kind, key.map(str::to_string)))
    }

    pub fn atoms(&self) -> impl Iterator<Item = &AttributeValue> {
        self.atoms.values()
    }

    pub fn contains(&self, atom: &AttributeValue) -> bool {
        self.atoms.get(&Self::slot(atom)) == Some(atom)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

impl fmt::Display for PolicyEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.atoms.is_empty() {
            return f.write_str("TRUE");
        }
        let parts: Vec<String> = self.atoms.values().map(ToString::to_string).collect();
        f.write_str(&parts.join(" AND "))
    }
}

/// Output schema and effect of a program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractCapsule {
    pub schema: Schema,
    pub effect: PolicyEffect,
}

pub fn abstract_interpret(
    env: &CapsuleEnv,
    e: &ProgramExpr,
    lattices: &Lattices,
) -> Result<AbstractCapsule, AnalysisError> {
    match e {
        ProgramExpr::GetDc(id) => {
            let schema = env
                .get(id)
                .ok_or_else(|| AnalysisError::UnboundCapsule(id.clone()))?;
            if let Some(bad) = schema.labels().find(|l| !lattices.datatypes.contains(l)) {
                return Err(AnalysisError::UnknownLabel(bad.to_string()));
            }
            Ok(AbstractCapsule {
                schema: schema.clone(),
                effect: PolicyEffect::new(),
            })
        }
        ProgramExpr::Filter { pred, input } => {
            let mut cap = abstract_interpret(env, input, lattices)?;
            if !cap.schema.contains(&pred.field) {
                return Err(violation(format!(
                    "filter field `{}` not in schema",
                    pred.field
                )));
            }
            cap.effect.add(
                AttributeValue::filter(&pred.field, pred.interval()),
                lattices,
            );
            Ok(cap)
        }
        ProgramExpr::Project { fields, input } => {
            let cap = abstract_interpret(env, input, lattices)?;
            let mut kept = Vec::with_capacity(fields.len());
            for f in fields {
                let label = cap
                    .schema
                    .label(f)
                    .ok_or_else(|| violation(format!("project field `{f}` not in schema")))?;
                kept.push((f.clone(), label.to_string()));
            }
            let schema =
                Schema::new(kept).ok_or_else(|| violation("duplicate field in project".into()))?;
            let labels = schema_labels(&schema, lattices)?;
            let mut effect = cap.effect;
            effect.set(AttributeValue::Schema(labels));
            Ok(AbstractCapsule { schema, effect })
        }
        ProgramExpr::Redact { field, mode, input } => {
            let mut cap = abstract_interpret(env, input, lattices)?;
            if !cap.schema.contains(field) {
                return Err(violation(format!("redact field `{field}` not in schema")));
            }
            cap.effect
                .add(AttributeValue::redact(field, *mode), lattices);
            Ok(cap)
        }
        ProgramExpr::Join(a, b) => {
            let left = abstract_interpret(env, a, lattices)?;
            let right = abstract_interpret(env, b, lattices)?;
            let schema = join_schema(&left.schema, &right.schema)?;
            let effect = join_effects(&left, &right, lattices);
            Ok(AbstractCapsule { schema, effect })
        }
        ProgramExpr::Union(a, b) => {
            let left = abstract_interpret(env, a, lattices)?;
            let right = abstract_interpret(env, b, lattices)?;
            if !left.schema.same_fields(&right.schema) {
                return Err(violation(format!(
                    "union of different schemas `{}` and `{}`",
                    left.schema, right.schema
                )));
            }
            Ok(AbstractCapsule {
                schema: left.schema,
                effect: PolicyEffect::new(),
            })
        }
        ProgramExpr::DpCount {
            epsilon,
            delta,
            input,
        } => {
            let cap = abstract_interpret(env, input, lattices)?;
            if !lattices.datatypes.contains(COUNT_LABEL) {
                return Err(AnalysisError::UnknownLabel(COUNT_LABEL.to_string()));
            }
            let declass = Declass::dp(*epsilon, *delta).map_err(|e| violation(e.to_string()))?;
            // Repeated releases compose sequentially.
            let mut effect = cap.effect;
            // Facts about an upstream `count` column do not carry over to the new one.
            effect
                .atoms
                .retain(|(_, key), _| key.as_deref() != Some(COUNT_FIELD));
            let declass = match effect.get(AttrKind::Declass, None) {
                Some(AttributeValue::Declass(prev)) => compose_dp(prev, &declass),
                _ => Some(declass),
            };
            effect.atoms.remove(&(AttrKind::Declass, None));
            if let Some(d) = declass {
                effect.set(AttributeValue::Declass(d));
            }
            Ok(AbstractCapsule {
                schema: Schema::new([(COUNT_FIELD, COUNT_LABEL)]).expect("single field"),
                effect,
            })
        }
    }
}

fn violation(msg: String) -> AnalysisError {
    AnalysisError::SchemaViolation(msg)
}

fn schema_labels(schema: &Schema, lattices: &Lattices) -> Result<LabelSet, AnalysisError> {
    LabelSet::new(schema.labels(), &lattices.datatypes, "datatype").map_err(|e| match e {
        crate::attr::AttrError::UnknownLabel { label, .. } => AnalysisError::UnknownLabel(label),
        other => violation(other.to_string()),
    })
}

/// Natural join schema: left fields, then right fields not already present.
/// Shared fields must carry the same label.
fn join_schema(left: &Schema, right: &Schema) -> Result<Schema, AnalysisError> {
    let mut fields: Vec<(String, String)> = left
        .fields()
        .map(|(n, l)| (n.to_string(), l.to_string()))
        .collect();
    for (n, l) in right.fields() {
        match left.label(n) {
            Some(ll) if ll != l => {
                return Err(violation(format!(
                    "join field `{n}` has labels `{ll}` and `{l}`"
                )));
            }
            Some(_) => {}
            None => fields.push((n.to_string(), l.to_string())),
        }
    }
    Ok(Schema::new(fields).expect("fields are unique"))
}

/// Sequential composition of two DP guarantees. `None` when the composed
/// parameters leave the valid range.
fn compose_dp(a: &Declass, b: &Declass) -> Option<Declass> {
    match (a, b) {
        (
            Declass::Dp {
                epsilon: e1,
                delta: d1,
            },
            Declass::Dp {
                epsilon: e2,
                delta: d2,
            },
        ) => Declass::dp(e1.0 + e2.0, d1.0 + d2.0).ok(),
        _ => None,
    }
}

/// What one join side guarantees about a keyed field.
enum SideFact<'a> {
    /// The side has an atom for the field.
    Atom(&'a AttributeValue),
    /// The field is in the side's schema with no guarantee on its values.
    Unconstrained,
    /// The side neither has the field nor an atom for it.
    Absent,
}

fn side_fact<'a>(atom: Option<&'a AttributeValue>, schema: &Schema, field: &str) -> SideFact<'a> {
    match atom {
        Some(a) => SideFact::Atom(a),
        None if schema.contains(field) => SideFact::Unconstrained,
        None => SideFact::Absent,
    }
}

/// Combines join effects so every surviving atom holds of the joined output.
///
/// Keyed atoms on a field shared by both schemas are met, since the joined
/// value equals both sides' values. Otherwise the guarantee must cover
/// values from either side, so the atoms are joined, and an unconstrained
/// side drops the atom. Unkeyed atoms survive only when both sides carry
/// them: SCHEMA and PURPOSE as their join, DECLASS by sequential
/// composition.
fn join_effects(
    left: &AbstractCapsule,
    right: &AbstractCapsule,
    lattices: &Lattices,
) -> PolicyEffect {
    let mut out = PolicyEffect::new();
    let slots: BTreeSet<&(AttrKind, Option<String>)> = left
        .effect
        .atoms
        .keys()
        .chain(right.effect.atoms.keys())
        .collect();
    for slot in slots {
        let (kind, key) = slot;
        let l = left.effect.atoms.get(slot);
        let r = right.effect.atoms.get(slot);
        match key {
            Some(field) => {
                let shared = left.schema.contains(field) && right.schema.contains(field);
                let merged = match (
                    side_fact(l, &left.schema, field),
                    side_fact(r, &right.schema, field),
                ) {
                    (SideFact::Atom(a), SideFact::Atom(b)) if shared => {
                        Some(a.meet_unchecked(b, lattices))
                    }
                    (SideFact::Atom(a), SideFact::Atom(b)) => a.join(b, lattices).ok(),
                    (SideFact::Atom(a), SideFact::Absent)
                    | (SideFact::Absent, SideFact::Atom(a)) => Some(a.clone()),
                    (SideFact::Atom(a), SideFact::Unconstrained)
                    | (SideFact::Unconstrained, SideFact::Atom(a)) => shared.then(|| a.clone()),
                    _ => None,
                };
                if let Some(m) = merged {
                    out.set(m);
                }
            }
            None => {
                let (Some(a), Some(b)) = (l, r) else { continue };
                let merged = match (kind, a, b) {
                    (AttrKind::Declass, AttributeValue::Declass(x), AttributeValue::Declass(y)) => {
                        compose_dp(x, y).map(AttributeValue::Declass)
                    }
                    _ => a.join(b, lattices).ok(),
                };
                if let Some(m) = merged {
                    out.set(m);
                }
            }
        }
    }
    out
}
