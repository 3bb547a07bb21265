mod common;

use std::collections::BTreeMap;

use capsule_core::residual::reduce;
use capsule_core::{
    abstract_interpret, clause_leq, evaluate, ingest, metadata_discharge, parse_program,
    policy_join, residual_policy, AttributeValue, CapsuleEnv, CapsuleId, Evidence, LabelSet,
    Lattices, PolicyDnf, PolicyEffect, ProgramExpr, RedactMode, ResidualPolicy, Schema, Table,
    Value,
};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn store(rng: &mut ChaCha8Rng) -> (BTreeMap<CapsuleId, Table>, Vec<(CapsuleId, Schema)>) {
    let people = Schema::parse_spec(PEOPLE_SCHEMA).unwrap();
    let mut tables = BTreeMap::new();
    let mut caps = Vec::new();
    for i in 0..3 {
        let id = CapsuleId::new(format!("c{i}"));
        let csv = format!("age,zip,name\n{}", people_rows(rng).join("\n"));
        let (t, _) = Table::read_csv(csv.as_bytes(), &id).unwrap();
        tables.insert(id.clone(), t);
        caps.push((id, people.clone()));
    }
    (tables, caps)
}

/// A digest or a prefix of one.
fn is_digest(s: &str) -> bool {
    (1..=16).contains(&s.len())
        && s.bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Whether `v` is an output of redactions at least as destructive as `mode`.
/// Truncating a digest still yields a function of the digest.
fn redacted(v: &Value, mode: RedactMode) -> bool {
    let Value::Text(s) = v else { return false };
    let full = s == "*";
    match mode {
        RedactMode::Full => full,
        RedactMode::Hash => full || is_digest(s),
        RedactMode::Truncate(k) => full || is_digest(s) || s.chars().count() <= k as usize,
    }
}

/// Checks every column-level guarantee of `effect` against `table`.
fn guarantees_hold(
    effect: &PolicyEffect,
    schema: &Schema,
    table: &Table,
    check_schema: bool,
    l: &Lattices,
) -> Result<(), String> {
    if !table
        .columns()
        .iter()
        .map(String::as_str)
        .eq(schema.names())
    {
        return Err(format!(
            "columns {:?} differ from schema {schema}",
            table.columns()
        ));
    }
    for atom in effect.atoms() {
        match atom {
            AttributeValue::Filter { field, range } => {
                let Some(i) = table.column_index(field) else {
                    continue;
                };
                for row in table.rows() {
                    let ok = match &row.cells[i] {
                        Value::Int(v) => range.contains(*v),
                        Value::Float(v) => range.contains_f64(*v),
                        Value::Text(_) => false,
                    };
                    if !ok {
                        return Err(format!("{atom} violated by {:?}", row.cells[i]));
                    }
                }
            }
            AttributeValue::Redact { field, mode } => {
                let Some(i) = table.column_index(field) else {
                    continue;
                };
                if let Some(row) = table.rows().iter().find(|r| !redacted(&r.cells[i], *mode)) {
                    return Err(format!("{atom} violated by {:?}", row.cells[i]));
                }
            }
            AttributeValue::Schema(set) if check_schema => {
                let out = LabelSet::new(schema.labels(), &l.datatypes, "schema").unwrap();
                if &out != set {
                    return Err(format!("{atom} but output labels are {schema}"));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn aggregates(e: &ProgramExpr) -> bool {
    match e {
        ProgramExpr::GetDc(_) => false,
        ProgramExpr::DpCount { .. } => true,
        ProgramExpr::Filter { input, .. }
        | ProgramExpr::Project { input, .. }
        | ProgramExpr::Redact { input, .. } => aggregates(input),
        ProgramExpr::Join(a, b) | ProgramExpr::Union(a, b) => aggregates(a) || aggregates(b),
    }
}

fn dnf(rng: &mut ChaCha8Rng, l: &Lattices) -> PolicyDnf {
    policy_ast(rng, 5, l).to_dnf(l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn effect_guarantees_hold_on_output(seed in any::<u64>()) {
        let l = Lattices::sample();
        let mut rng = rng(seed);
        let (tables, caps) = store(&mut rng);
        let env: CapsuleEnv = caps.iter().cloned().collect();
        let (src, _) = program(&mut rng, &caps, 3);
        let e = parse_program(&src).unwrap();
        let cap = abstract_interpret(&env, &e, &l).unwrap();
        let out = evaluate(&tables, &e, seed).unwrap();
        prop_assert!(out.columns().iter().map(String::as_str).eq(cap.schema.names()), "{}", src);
        // dpCount keeps its input's guarantees, which describe the table it counts.
        let mut counted = &e;
        while let ProgramExpr::DpCount { input, .. } = counted {
            counted = input;
        }
        let schema = abstract_interpret(&env, counted, &l).unwrap().schema;
        let table = evaluate(&tables, counted, seed).unwrap();
        // A retained SCHEMA atom describes the columns before aggregation, so
        // it is compared only on programs that never aggregate.
        let check_schema = !aggregates(&e);
        if let Err(msg) = guarantees_hold(&cap.effect, &schema, &table, check_schema, &l) {
            prop_assert!(false, "{}: {}", src, msg);
        }
    }

    #[test]
    fn evaluation_is_deterministic(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (tables, caps) = store(&mut rng);
        let (src, _) = program(&mut rng, &caps, 3);
        let e = parse_program(&src).unwrap();
        prop_assert_eq!(evaluate(&tables, &e, seed).unwrap(), evaluate(&tables, &e, seed).unwrap());
    }

    #[test]
    fn residual_only_shrinks(seed in any::<u64>()) {
        let l = Lattices::sample();
        let mut rng = rng(seed);
        let pin = dnf(&mut rng, &l);
        let small = effect(&mut rng, 3, &l);
        let mut large = small.clone();
        for a in effect(&mut rng, 3, &l).atoms() {
            large.add(a.clone(), &l);
        }
        let r_small = residual_policy(&pin, &small, &l);
        let r_large = residual_policy(&pin, &large, &l);
        for ((c, rs), rl) in pin.clauses().zip(r_small.clauses()).zip(r_large.clauses()) {
            prop_assert!(rs.is_subset(c));
            prop_assert!(rl.is_subset(rs), "{} then {} under {}", rs, rl, large);
        }
    }

    #[test]
    fn metadata_discharge_removes_only_metadata(seed in any::<u64>()) {
        let l = Lattices::sample();
        let mut rng = rng(seed);
        let r = ResidualPolicy::from_dnf(&dnf(&mut rng, &l));
        let evidence = Evidence { consent: true, notified: true, purposes: None };
        let after = metadata_discharge(&r, &evidence, &l);
        for (before, after) in r.clauses().iter().zip(after.clauses()) {
            prop_assert!(after.is_subset(before));
            for a in before.atoms().filter(|a| !after.contains(a)) {
                prop_assert!(matches!(a, AttributeValue::ConsentRequired | AttributeValue::NotificationRequired));
            }
            prop_assert!(!after.contains(&AttributeValue::ConsentRequired));
            prop_assert!(!after.contains(&AttributeValue::NotificationRequired));
        }
    }

    #[test]
    fn join_implies_both_inputs(seed in any::<u64>()) {
        let l = Lattices::sample();
        let mut rng = rng(seed);
        let (p1, p2) = (dnf(&mut rng, &l), dnf(&mut rng, &l));
        let j = policy_join(&p1, &p2, &l);
        for c in j.clauses() {
            prop_assert!(p1.clauses().any(|c1| clause_leq(c, c1, &l)));
            prop_assert!(p2.clauses().any(|c2| clause_leq(c, c2, &l)));
        }
    }

    #[test]
    fn ingest_ignores_input_order(seed in any::<u64>()) {
        let l = Lattices::sample();
        let mut rng = rng(seed);
        let mut policies: Vec<PolicyDnf> = (0..rng.gen_range(2..=5)).map(|_| dnf(&mut rng, &l)).collect();
        let a = ingest(&policies, &l).unwrap();
        policies.shuffle(&mut rng);
        let b = ingest(&policies, &l).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reduce_keeps_a_weakest_clause_of_each_kept_chain(seed in any::<u64>()) {
        let l = Lattices::sample();
        let mut rng = rng(seed);
        let all = dnf(&mut rng, &l).clause_set().clone();
        let kept = reduce(all.clone(), &l);
        prop_assert!(!kept.is_empty());
        for c in &all {
            prop_assert!(kept.iter().any(|k| clause_leq(c, k, &l)), "{} lost", c);
        }
    }
}
