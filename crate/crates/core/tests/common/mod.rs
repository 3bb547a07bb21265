//! Generators shared by the integration tests. Everything is driven by a
//! seeded `ChaCha8Rng` so a failing case can be replayed from its seed.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use capsule_core::{
    Analyst, AttrKind, AttributeValue, CapsuleGraph, CapsuleId, Declass, Formula, Interval,
    Lattices, PolicyAst, PolicyEffect, RedactMode, RoleExpr, Schema, SourcePolicy,
};
pub use rand::seq::SliceRandom;
pub use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

pub const KINDS: [AttrKind; 8] = [
    AttrKind::Schema,
    AttrKind::Filter,
    AttrKind::Redact,
    AttrKind::Purpose,
    AttrKind::NotificationRequired,
    AttrKind::ConsentRequired,
    AttrKind::Role,
    AttrKind::Declass,
];

const DATATYPES: [&str; 10] = [
    "Any",
    "PersonalInformation",
    "PII",
    "NotPII",
    "Name",
    "SSN",
    "AgeBucket",
    "Region",
    "Count",
    "Nothing",
];
const PURPOSES: [&str; 5] = [
    "AnyPurpose",
    "Research",
    "Marketing",
    "PublicHealth",
    "NoPurpose",
];
const ROLES: [&str; 5] = ["Anyone", "Public", "Analyst", "Government", "NoRole"];
const FILTER_FIELDS: [&str; 2] = ["age", "zip"];
const REDACT_FIELDS: [&str; 2] = ["name", "zip"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn some_labels(rng: &mut ChaCha8Rng, pool: &[&'static str]) -> Vec<&'static str> {
    let k = rng.gen_range(1..=3);
    pool.choose_multiple(rng, k).copied().collect()
}

fn bound(rng: &mut ChaCha8Rng) -> Option<i64> {
    rng.gen_bool(0.8).then(|| rng.gen_range(-4..=4))
}

/// A random atom of `kind`; keyed kinds use `field`.
pub fn atom_on(rng: &mut ChaCha8Rng, kind: AttrKind, field: &str, l: &Lattices) -> AttributeValue {
    match kind {
        AttrKind::Schema => AttributeValue::schema(some_labels(rng, &DATATYPES), l).unwrap(),
        AttrKind::Purpose => AttributeValue::purpose(some_labels(rng, &PURPOSES), l).unwrap(),
        AttrKind::Filter => {
            let range = if rng.gen_bool(0.1) {
                Interval::Empty
            } else {
                Interval::new(bound(rng), bound(rng))
            };
            AttributeValue::filter(field, range)
        }
        AttrKind::Redact => {
            let mode = match rng.gen_range(0..3) {
                0 => RedactMode::Full,
                1 => RedactMode::Hash,
                _ => RedactMode::Truncate(rng.gen_range(0..4)),
            };
            AttributeValue::redact(field, mode)
        }
        AttrKind::NotificationRequired => AttributeValue::NotificationRequired,
        AttrKind::ConsentRequired => AttributeValue::ConsentRequired,
        AttrKind::Role => {
            let var = ["a", "b"].choose(rng).unwrap().to_string();
            AttributeValue::Role(match rng.gen_range(0..4) {
                0 => RoleExpr::Var(var),
                1 => RoleExpr::Meta {
                    function: "Guardian".into(),
                    var,
                },
                _ => RoleExpr::Literal(ROLES.choose(rng).unwrap().to_string()),
            })
        }
        AttrKind::Declass => {
            if rng.gen_bool(0.2) {
                AttributeValue::Declass(Declass::Any)
            } else {
                let eps = *[0.1, 0.5, 1.0, 2.0].choose(rng).unwrap();
                let delta = *[0.0, 1e-6, 1e-3].choose(rng).unwrap();
                AttributeValue::dp(eps, delta).unwrap()
            }
        }
    }
}

/// A random atom of any kind, keyed atoms on one of a few fields.
pub fn atom(rng: &mut ChaCha8Rng, l: &Lattices) -> AttributeValue {
    let kind = *KINDS.choose(rng).unwrap();
    let field = match kind {
        AttrKind::Redact => REDACT_FIELDS.choose(rng).unwrap(),
        _ => FILTER_FIELDS.choose(rng).unwrap(),
    };
    atom_on(rng, kind, field, l)
}

fn formula_over(rng: &mut ChaCha8Rng, atoms: &[AttributeValue]) -> Formula {
    if atoms.len() == 1 {
        return if rng.gen_bool(0.05) {
            Formula::True
        } else {
            Formula::Atom(atoms[0].clone())
        };
    }
    let split = rng.gen_range(1..atoms.len());
    let (a, b) = (
        formula_over(rng, &atoms[..split]),
        formula_over(rng, &atoms[split..]),
    );
    if rng.gen_bool(0.5) {
        Formula::and(a, b)
    } else {
        Formula::or(a, b)
    }
}

/// A policy of one or two `ALLOW` formulas with at most `max_atoms` atoms.
pub fn policy_ast(rng: &mut ChaCha8Rng, max_atoms: usize, l: &Lattices) -> PolicyAst {
    let n = rng.gen_range(1..=max_atoms);
    let atoms: Vec<_> = (0..n).map(|_| atom(rng, l)).collect();
    let clauses = if n >= 2 && rng.gen_bool(0.3) {
        let split = rng.gen_range(1..n);
        vec![
            formula_over(rng, &atoms[..split]),
            formula_over(rng, &atoms[split..]),
        ]
    } else {
        vec![formula_over(rng, &atoms)]
    };
    PolicyAst { clauses }
}

/// A random program effect. Programs never establish ROLE atoms.
pub fn effect(rng: &mut ChaCha8Rng, max_atoms: usize, l: &Lattices) -> PolicyEffect {
    let n = rng.gen_range(0..=max_atoms);
    let atoms: Vec<_> = std::iter::repeat_with(|| atom(rng, l))
        .filter(|a| a.kind() != AttrKind::Role)
        .take(n)
        .collect();
    PolicyEffect::from_atoms(atoms, l)
}

/// The lattice-consistent truth of `a` when each (kind, key) slot of `env`
/// holds the strongest fact known about it.
pub fn holds(
    env: &BTreeMap<(AttrKind, Option<String>), AttributeValue>,
    a: &AttributeValue,
    l: &Lattices,
) -> bool {
    env.get(&(a.kind(), a.key().map(str::to_string)))
        .is_some_and(|g| g.leq(a, l).unwrap())
}

// ---- random capsule graphs ---------------------------------------------

pub const PEOPLE_SCHEMA: &str = "age:AgeBucket,zip:Region,name:Name";
const NAMES: [&str; 5] = ["Ann", "Bob", "Cy", "Dee", "Eve"];

/// Up to three random `age,zip,name` CSV rows.
pub fn people_rows(rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..rng.gen_range(0..=3))
        .map(|_| {
            format!(
                "{},{},{}",
                rng.gen_range(10..70),
                rng.gen_range(1..4),
                NAMES.choose(rng).unwrap()
            )
        })
        .collect()
}

pub fn analyst() -> Analyst {
    Analyst {
        identity: "ana".into(),
        role: "Analyst".into(),
    }
}

pub struct RandomGraph {
    pub graph: CapsuleGraph,
    /// Ingested capsule ids with their subject.
    pub ingested: Vec<(CapsuleId, String)>,
    pub derived: Vec<CapsuleId>,
}

fn project_schema(s: &Schema, keep: &[&str]) -> Schema {
    Schema::new(
        keep.iter()
            .map(|f| (f.to_string(), s.label(f).unwrap().to_string())),
    )
    .unwrap()
}

fn join_schema(a: &Schema, b: &Schema) -> Schema {
    let mut fields: Vec<(String, String)> = a.fields().map(|(f, l)| (f.into(), l.into())).collect();
    for (f, l) in b.fields() {
        if !a.contains(f) {
            fields.push((f.into(), l.into()));
        }
    }
    Schema::new(fields).unwrap()
}

/// A random well-typed program over `caps` with its output schema.
pub fn program(rng: &mut ChaCha8Rng, caps: &[(CapsuleId, Schema)], depth: u32) -> (String, Schema) {
    let leaf = |rng: &mut ChaCha8Rng| {
        let (id, s) = caps.choose(rng).unwrap();
        (format!("getDC({id})"), s.clone())
    };
    if depth == 0 || rng.gen_bool(0.3) {
        return leaf(rng);
    }
    let (inner, s) = program(rng, caps, depth - 1);
    match rng.gen_range(0..6) {
        0 => {
            let numeric: Vec<&str> = s
                .names()
                .filter(|f| ["age", "zip", "count"].contains(f))
                .collect();
            match numeric.choose(rng) {
                Some(f) => {
                    let op = if rng.gen_bool(0.5) { '>' } else { '<' };
                    (
                        format!("filter({f} {op} {}, {inner})", rng.gen_range(0..60)),
                        s,
                    )
                }
                None => (inner, s),
            }
        }
        1 => {
            let names: Vec<&str> = s.names().collect();
            let k = rng.gen_range(1..=names.len());
            let mut keep: Vec<&str> = names.choose_multiple(rng, k).copied().collect();
            keep.sort_by_key(|f| names.iter().position(|n| n == f));
            let out = project_schema(&s, &keep);
            (format!("project({{{}}}, {inner})", keep.join(",")), out)
        }
        2 if s.contains("name") => {
            let mode = ["full", "hash", "truncate(2)"].choose(rng).unwrap();
            (format!("redact(name, {mode}, {inner})"), s)
        }
        3 => {
            let same: Vec<&(CapsuleId, Schema)> =
                caps.iter().filter(|(_, t)| t.same_fields(&s)).collect();
            let other = match same.choose(rng) {
                Some((id, _)) => format!("getDC({id})"),
                None => inner.clone(),
            };
            (format!("union({inner}, {other})"), s)
        }
        4 => {
            let (other, t) = leaf(rng);
            let out = join_schema(&s, &t);
            (format!("join({inner}, {other})"), out)
        }
        _ => (
            format!("dpCount(1, 0, {inner})"),
            Schema::new([("count", "Count")]).unwrap(),
        ),
    }
}

/// Builds a small random graph under `root`. When `empty` names one of the
/// ingested capsules it is ingested with no rows, giving the scratch
/// rebuild of a deletion. The plan depends only on `seed`.
pub fn random_graph(root: &Path, seed: u64, empty: Option<&str>) -> RandomGraph {
    let mut rng = rng(seed);
    let mut graph = CapsuleGraph::open(root).unwrap();
    let people = Schema::parse_spec(PEOPLE_SCHEMA).unwrap();
    let n_subjects = rng.gen_range(1..=3);
    let n_caps = rng.gen_range(2..=4);
    let mut caps: Vec<(CapsuleId, Schema)> = Vec::new();
    let mut ingested = Vec::new();
    for i in 0..n_caps {
        let id = format!("in{i}");
        let subject = format!("s{}", rng.gen_range(0..n_subjects));
        let rows = people_rows(&mut rng);
        let mut csv = String::from("age,zip,name\n");
        if empty != Some(id.as_str()) {
            for r in rows {
                csv.push_str(&r);
                csv.push('\n');
            }
        }
        let cid = graph
            .ingest_capsule(
                csv.as_bytes(),
                people.clone(),
                &SourcePolicy::inline("ALLOW TRUE"),
                &subject,
                Some(&id),
            )
            .unwrap();
        caps.push((cid.clone(), people.clone()));
        ingested.push((cid, subject));
    }
    let mut derived = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let (source, schema) = program(&mut rng, &caps, 2);
        let seed = rng.gen_range(0..1000);
        let p = graph.register_program(&source, &[], &analyst()).unwrap();
        let report = graph
            .check_program(&p)
            .unwrap_or_else(|e| panic!("{source}: {e}"));
        assert_eq!(report.schema, schema, "{source}");
        let d = graph
            .run_program(&p, seed)
            .unwrap_or_else(|e| panic!("{source}: {e}"));
        caps.push((d.clone(), schema));
        derived.push(d);
    }
    RandomGraph {
        graph,
        ingested,
        derived,
    }
}
