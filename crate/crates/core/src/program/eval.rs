//! Concrete evaluation of programs over tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::analysis::COUNT_FIELD;
use super::table::{Row, Table, Value};
use super::{CapsuleId, ProgramExpr};
use crate::attr::RedactMode;

/// Source of capsule payloads for `getDC`.
pub trait TableStore {
    fn table(&self, id: &CapsuleId) -> Option<Table>;
}

impl TableStore for BTreeMap<CapsuleId, Table> {
    fn table(&self, id: &CapsuleId) -> Option<Table> {
        self.get(id).cloned()
    }
}

impl TableStore for HashMap<CapsuleId, Table> {
    fn table(&self, id: &CapsuleId) -> Option<Table> {
        self.get(id).cloned()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("capsule `{0}` is not available")]
    UnboundCapsule(CapsuleId),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("type error: field `{field}` holds non-numeric value `{value}`")]
    TypeError { field: String, value: String },
}

/// One Laplace draw with scale `scale`, as an exponential magnitude with a
/// uniformly random sign.
pub fn laplace_noise<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let magnitude = Exp::new(1.0 / scale).expect("positive rate").sample(rng);
    if rng.gen::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Evaluates `e`. The same seed always yields the same table.
pub fn evaluate(store: &dyn TableStore, e: &ProgramExpr, seed: u64) -> Result<Table, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eval(store, e, &mut rng)
}

fn violation(msg: String) -> EvalError {
    EvalError::SchemaViolation(msg)
}

fn column(t: &Table, field: &str, op: &str) -> Result<usize, EvalError> {
    t.column_index(field)
        .ok_or_else(|| violation(format!("{op} field `{field}` not in table")))
}

fn build(columns: Vec<String>, rows: Vec<Row>) -> Table {
    Table::new(columns, rows).expect("operators preserve arity")
}

/// Marker left by full redaction. It is a fixed point of every mode, so a
/// fully redacted cell stays fully redacted under later redactions.
const REDACTED: &str = "*";

fn redact_value(v: &Value, mode: RedactMode) -> Value {
    let text = v.to_string();
    if text == REDACTED {
        return Value::Text(text);
    }
    Value::Text(match mode {
        RedactMode::Full => REDACTED.to_string(),
        RedactMode::Hash => {
            let digest = Sha256::digest(text.as_bytes());
            digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
        }
        RedactMode::Truncate(k) => text.chars().take(k as usize).collect(),
    })
}

fn eval(store: &dyn TableStore, e: &ProgramExpr, rng: &mut ChaCha8Rng) -> Result<Table, EvalError> {
    match e {
        ProgramExpr::GetDc(id) => store
            .table(id)
            .ok_or_else(|| EvalError::UnboundCapsule(id.clone())),
        ProgramExpr::Filter { pred, input } => {
            let t = eval(store, input, rng)?;
            let i = column(&t, &pred.field, "filter")?;
            // Predicates are integer comparisons, so `f > m` keeps `f >= m + 1`
            // on float cells too, matching the interval the analysis records.
            let range = pred.interval();
            let mut rows = Vec::new();
            for r in t.rows() {
                let keep = match &r.cells[i] {
                    Value::Int(v) => range.contains(*v),
                    Value::Float(v) => range.contains_f64(*v),
                    Value::Text(s) => {
                        return Err(EvalError::TypeError {
                            field: pred.field.clone(),
                            value: s.clone(),
                        })
                    }
                };
                if keep {
                    rows.push(r.clone());
                }
            }
            Ok(build(t.columns().to_vec(), rows))
        }
        ProgramExpr::Project { fields, input } => {
            let t = eval(store, input, rng)?;
            let idx: Vec<usize> = fields
                .iter()
                .map(|f| column(&t, f, "project"))
                .collect::<Result<_, _>>()?;
            let rows = t
                .rows()
                .iter()
                .map(|r| Row {
                    cells: idx.iter().map(|&i| r.cells[i].clone()).collect(),
                    provenance: r.provenance.clone(),
                })
                .collect();
            Ok(build(fields.clone(), rows))
        }
        ProgramExpr::Redact { field, mode, input } => {
            let t = eval(store, input, rng)?;
            let i = column(&t, field, "redact")?;
            let rows = t
                .rows()
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.cells[i] = redact_value(&r.cells[i], *mode);
                    r
                })
                .collect();
            Ok(build(t.columns().to_vec(), rows))
        }
        ProgramExpr::Join(a, b) => {
            let l = eval(store, a, rng)?;
            let r = eval(store, b, rng)?;
            let shared: Vec<(usize, usize)> = l
                .columns()
                .iter()
                .enumerate()
                .filter_map(|(i, c)| r.column_index(c).map(|j| (i, j)))
                .collect();
            let extra: Vec<usize> = (0..r.columns().len())
                .filter(|j| !shared.iter().any(|(_, sj)| sj == j))
                .collect();
            let mut columns = l.columns().to_vec();
            columns.extend(extra.iter().map(|&j| r.columns()[j].clone()));
            let mut rows = Vec::new();
            for lr in l.rows() {
                for rr in r.rows() {
                    if shared.iter().all(|&(i, j)| lr.cells[i] == rr.cells[j]) {
                        let mut cells = lr.cells.clone();
                        cells.extend(extra.iter().map(|&j| rr.cells[j].clone()));
                        let provenance = lr.provenance.union(&rr.provenance).cloned().collect();
                        rows.push(Row { cells, provenance });
                    }
                }
            }
            Ok(build(columns, rows))
        }
        ProgramExpr::Union(a, b) => {
            let l = eval(store, a, rng)?;
            let r = eval(store, b, rng)?;
            let same: BTreeSet<&String> = l.columns().iter().collect();
            if same != r.columns().iter().collect::<BTreeSet<_>>()
                || l.columns().len() != r.columns().len()
            {
                return Err(violation("union of tables with different columns".into()));
            }
            let order: Vec<usize> = l
                .columns()
                .iter()
                .map(|c| r.column_index(c).expect("same column set"))
                .collect();
            let mut rows = l.rows().to_vec();
            rows.extend(r.rows().iter().map(|row| Row {
                cells: order.iter().map(|&j| row.cells[j].clone()).collect(),
                provenance: row.provenance.clone(),
            }));
            Ok(build(l.columns().to_vec(), rows))
        }
        ProgramExpr::DpCount { epsilon, input, .. } => {
            let t = eval(store, input, rng)?;
            let noisy = t.len() as f64 + laplace_noise(rng, 1.0 / epsilon);
            let provenance = t
                .rows()
                .iter()
                .flat_map(|r| r.provenance.iter().cloned())
                .collect();
            Ok(build(
                vec![COUNT_FIELD.to_string()],
                vec![Row {
                    cells: vec![Value::Float(noisy)],
                    provenance,
                }],
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::parse_program;

    fn store() -> BTreeMap<CapsuleId, Table> {
        let mut s = BTreeMap::new();
        let c1 = CapsuleId::new("c1");
        let (t, _) = Table::read_csv(
            "age,zip,name\n12,1,ann\n18,2,bob\n30,1,cyd\n".as_bytes(),
            &c1,
        )
        .unwrap();
        s.insert(c1, t);
        let c2 = CapsuleId::new("c2");
        let (t, _) = Table::read_csv("zip,city\n1,Oslo\n3,Rome\n".as_bytes(), &c2).unwrap();
        s.insert(c2, t);
        let e = CapsuleId::new("empty");
        s.insert(
            e,
            Table::empty(vec!["age".into(), "zip".into(), "name".into()]).unwrap(),
        );
        let five = CapsuleId::new("five");
        let (t, _) = Table::read_csv("x\n1\n2\n3\n4\n5\n".as_bytes(), &five).unwrap();
        s.insert(five, t);
        s
    }

    fn run(src: &str, seed: u64) -> Result<Table, EvalError> {
        evaluate(&store(), &parse_program(src).unwrap(), seed)
    }

    #[test]
    fn filter_keeps_matching_rows() {
        assert_eq!(run("filter(age > 17, getDC(c1))", 0).unwrap().len(), 2);
        assert_eq!(run("filter(age < 18, getDC(c1))", 0).unwrap().len(), 1);
    }

    #[test]
    fn union_with_empty_is_identity() {
        let t = run("union(getDC(c1), getDC(empty))", 0).unwrap();
        assert_eq!(t, store()[&CapsuleId::new("c1")]);
    }

    #[test]
    fn union_reorders_columns() {
        let t = run(
            "union(project({age,zip}, getDC(c1)), project({zip,age}, getDC(c1)))",
            0,
        )
        .unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.rows()[3].cells, t.rows()[0].cells);
    }

    #[test]
    fn natural_join_merges_provenance() {
        let t = run("join(getDC(c1), getDC(c2))", 0).unwrap();
        assert_eq!(t.columns(), ["age", "zip", "name", "city"]);
        assert_eq!(t.len(), 2);
        assert!(t.rows().iter().all(|r| r.provenance.len() == 2));
    }

    #[test]
    fn redaction_modes() {
        let t = run("redact(name, truncate(2), getDC(c1))", 0).unwrap();
        assert_eq!(t.rows()[0].cells[2], Value::Text("an".into()));
        let t = run("redact(name, full, getDC(c1))", 0).unwrap();
        assert_eq!(t.rows()[0].cells[2], Value::Text("*".into()));
        let a = run("redact(name, hash, getDC(c1))", 0).unwrap();
        let b = run("redact(name, hash, getDC(c1))", 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rows()[0].cells[2], a.rows()[1].cells[2]);
    }

    #[test]
    fn float_cells_filter_on_integer_bounds() {
        let id = CapsuleId::new("f");
        let (t, _) = Table::read_csv("x\n0.5\n1\n1.5\n".as_bytes(), &id).unwrap();
        let store = BTreeMap::from([(id, t)]);
        let out = evaluate(
            &store,
            &parse_program("filter(x > 0, getDC(f))").unwrap(),
            0,
        )
        .unwrap();
        let kept: Vec<&Value> = out.rows().iter().map(|r| &r.cells[0]).collect();
        assert_eq!(kept, [&Value::Int(1), &Value::Float(1.5)]);
    }

    #[test]
    fn full_redaction_survives_later_redactions() {
        for mode in ["hash", "truncate(0)", "full"] {
            let t = run(
                &format!("redact(name, {mode}, redact(name, full, getDC(c1)))"),
                0,
            )
            .unwrap();
            assert!(
                t.rows()
                    .iter()
                    .all(|r| r.cells[2] == Value::Text("*".into())),
                "{mode}"
            );
        }
    }

    #[test]
    fn text_comparison_is_type_error() {
        assert!(matches!(
            run("filter(name > 3, getDC(c1))", 0),
            Err(EvalError::TypeError { .. })
        ));
        assert!(matches!(
            run("filter(age > 3, redact(age, full, getDC(c1)))", 0),
            Err(EvalError::TypeError { .. })
        ));
        assert!(matches!(
            run("filter(zzz > 3, getDC(c1))", 0),
            Err(EvalError::SchemaViolation(_))
        ));
    }

    #[test]
    fn dp_count_is_seeded() {
        let a = run("dpCount(1, 0, getDC(c1))", 42).unwrap();
        let b = run("dpCount(1, 0, getDC(c1))", 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows()[0].provenance.len(), 3);
    }

    #[test]
    fn dp_count_high_epsilon_is_accurate() {
        let mut inside = 0;
        for seed in 0..1000 {
            let t = run("dpCount(1000, 0, getDC(five))", seed).unwrap();
            let Value::Float(c) = t.rows()[0].cells[0] else {
                panic!()
            };
            if (c - 5.0).abs() <= 0.05 {
                inside += 1;
            }
        }
        assert!(inside >= 990, "{inside}/1000 within tolerance");
    }

    #[test]
    fn laplace_mean_absolute_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| laplace_noise(&mut rng, 1.0).abs())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() <= 0.2, "mean |noise| = {mean}");
    }

    #[test]
    fn missing_capsule() {
        assert_eq!(
            run("getDC(zz)", 0),
            Err(EvalError::UnboundCapsule(CapsuleId::new("zz")))
        );
    }
}
