//! The persistent capsule graph.
//!
//! A store directory holds:
//!
//! * `graph.json`: capsule and program metadata, evidence and edges;
//! * `policies/<capsule>.priv`: each capsule's policy in surface syntax;
//! * `data/<capsule>.csv`: each payload, and for derived capsules
//!   `data/<capsule>.prov.json` with per-row provenance;
//! * `audit.jsonl`: an append-only operation log;
//! * `lattices/`: optional lattice overrides.
//!
//! Mutations take `&mut self` and rewrite `graph.json` atomically, so one
//! handle is the single writer. Read operations take `&self`.

mod export;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attr::{AttributeValue, LabelSet, RoleExpr};
use crate::lattice::{LatticeError, Lattices};
use crate::parser::{parse_dnf, print_dnf, PolicyParseError, SourcePolicy};
use crate::policy::{PolicyClause, PolicyDnf};
use crate::program::{
    abstract_interpret, evaluate, parse_program, AnalysisError, CapsuleEnv, CapsuleId, EvalError,
    PolicyEffect, ProgramExpr, ProgramParseError, RowRef, Schema, Table, TableError,
};
use crate::residual::{
    declassifiable, ingest, metadata_discharge, residual_policy, role_satisfied, Affiliations,
    Analyst, Bindings, Evidence, ResidualError, ResidualPolicy,
};

pub use export::{EdgeExport, GraphExport, NodeExport, NodeKind};

/// Identifier of an analysis program.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProgramId(String);

impl ProgramId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Policy(#[from] PolicyParseError),
    #[error(transparent)]
    Syntax(#[from] ProgramParseError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("payload: {0}")]
    Table(#[from] TableError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("invalid purpose: {0}")]
    InvalidPurpose(String),
    #[error("invalid id `{0}`")]
    InvalidId(String),
    #[error("id `{0}` is already in use")]
    IdCollision(String),
    #[error("unknown capsule `{0}`")]
    UnknownCapsule(CapsuleId),
    #[error("unknown program `{0}`")]
    UnknownProgram(ProgramId),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("capsule `{0}` is derived; only ingested capsules can be deleted")]
    NotIngested(CapsuleId),
    #[error("program `{0}` has not been checked")]
    NotChecked(ProgramId),
    #[error("program `{0}` has already been executed")]
    AlreadyExecuted(ProgramId),
    #[error("policy of `{capsule}` not satisfied; blocking clauses:\n{}", .blocking.iter().map(|c| format!("  {c}")).collect::<Vec<_>>().join("\n"))]
    PolicyNotSatisfied {
        capsule: CapsuleId,
        blocking: Vec<PolicyClause>,
    },
}

type Result<T> = std::result::Result<T, GraphError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapsuleRecord {
    pub id: CapsuleId,
    /// Payload path relative to the store root.
    pub data_ref: String,
    pub schema: Schema,
    pub subjects: BTreeSet<String>,
    pub created_at: u64,
    pub derived_by: Option<ProgramId>,
    /// Bumped each time deletion recomputes the payload.
    pub version: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProgramStatus {
    Registered,
    Checked,
    Executed,
}

impl fmt::Display for ProgramStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProgramStatus::Registered => "registered",
            ProgramStatus::Checked => "checked",
            ProgramStatus::Executed => "executed",
        })
    }
}

/// Evidence flags in force when a program ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSnapshot {
    pub consent: bool,
    pub notified: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub id: ProgramId,
    /// Registration order; programs only read earlier capsules, so this is
    /// a topological order of the graph.
    pub seq: u64,
    pub source: String,
    pub purposes: Vec<String>,
    pub analyst: String,
    pub analyst_role: String,
    pub status: ProgramStatus,
    /// Printed effect and residual of the last check.
    pub effect: Option<String>,
    pub residual: Option<String>,
    pub inputs: Vec<CapsuleId>,
    pub output: Option<CapsuleId>,
    pub seed: Option<u64>,
    pub evidence_at_run: Option<EvidenceSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvidenceKind {
    Consent { subject: String, program: ProgramId },
    Notification { subject: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub id: String,
    pub at: u64,
    #[serde(flatten)]
    pub kind: EvidenceKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffiliationRecord {
    pub function: String,
    pub subject: String,
    pub member: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct State {
    next_capsule: u64,
    next_program: u64,
    next_evidence: u64,
    capsules: BTreeMap<CapsuleId, CapsuleRecord>,
    /// Schemas of deleted capsules, kept so programs reading them can be
    /// recomputed over empty tables.
    tombstones: BTreeMap<CapsuleId, Schema>,
    programs: BTreeMap<ProgramId, ProgramRecord>,
    evidence: Vec<EvidenceRecord>,
    affiliations: Vec<AffiliationRecord>,
}

/// Result of a static check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckReport {
    pub inputs: BTreeSet<CapsuleId>,
    pub input_policy: PolicyDnf,
    pub schema: Schema,
    pub effect: PolicyEffect,
    pub residual: ResidualPolicy,
}

/// Capsules recomputed after a deletion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeleteReport {
    pub deleted: CapsuleId,
    pub recomputed: Vec<CapsuleId>,
}

/// Rows of one capsule exported to a data subject.
#[derive(Clone, Debug, PartialEq)]
pub struct PortableCapsule {
    pub capsule: CapsuleId,
    pub table: Table,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: u64,
    pub operation: String,
    pub actor: String,
    pub target: String,
    pub outcome: String,
}

pub struct CapsuleGraph {
    root: PathBuf,
    lattices: Lattices,
    state: State,
    policies: BTreeMap<CapsuleId, PolicyDnf>,
}

const GRAPH_FILE: &str = "graph.json";
const AUDIT_FILE: &str = "audit.jsonl";

impl CapsuleGraph {
    /// Opens the store at `root`, creating an empty one if needed.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in ["policies", "data"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let lattices = Lattices::load_dir(&root.join("lattices"))?;
        let graph_path = root.join(GRAPH_FILE);
        let state: State = if graph_path.exists() {
            let text = fs::read_to_string(&graph_path).map_err(io_err(&graph_path))?;
            serde_json::from_str(&text)
                .map_err(|e| GraphError::Corrupt(format!("{}: {e}", graph_path.display())))?
        } else {
            State::default()
        };
        let mut policies = BTreeMap::new();
        for id in state.capsules.keys() {
            let path = Self::policy_path(&root, id);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let dnf = parse_dnf(
                &SourcePolicy::new(text, path.display().to_string()),
                &lattices,
            )?;
            policies.insert(id.clone(), dnf);
        }
        let graph = Self {
            root,
            lattices,
            state,
            policies,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn lattices(&self) -> &Lattices {
        &self.lattices
    }

    fn policy_path(root: &Path, id: &CapsuleId) -> PathBuf {
        root.join("policies").join(format!("{id}.priv"))
    }

    fn data_rel(id: &CapsuleId) -> String {
        format!("data/{id}.csv")
    }

    fn prov_path(&self, id: &CapsuleId) -> PathBuf {
        self.root.join("data").join(format!("{id}.prov.json"))
    }

    fn save(&self) -> Result<()> {
        let path = self.root.join(GRAPH_FILE);
        let tmp = self.root.join(format!("{GRAPH_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&self.state).expect("state serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn audit(&self, operation: &str, actor: &str, target: &str, outcome: &str) -> Result<()> {
        let entry = AuditEntry {
            timestamp: now(),
            operation: operation.to_string(),
            actor: actor.to_string(),
            target: target.to_string(),
            outcome: outcome.to_string(),
        };
        let path = self.root.join(AUDIT_FILE);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(f, "{line}").map_err(io_err(&path))
    }

    /// Reads the audit log.
    pub fn audit_log(&self) -> Result<Vec<AuditEntry>> {
        let path = self.root.join(AUDIT_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .map(|l| {
                serde_json::from_str(l).map_err(|e| GraphError::Corrupt(format!("audit log: {e}")))
            })
            .collect()
    }

    fn write_file(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        fs::write(path, bytes).map_err(io_err(path))
    }

    fn id_taken(&self, id: &str) -> bool {
        self.state.capsules.contains_key(&CapsuleId::new(id))
            || self.state.tombstones.contains_key(&CapsuleId::new(id))
            || self.state.programs.contains_key(&ProgramId::new(id))
    }

    fn mint(&mut self, prefix: &str, program: bool) -> String {
        loop {
            let n = if program {
                self.state.next_program += 1;
                self.state.next_program
            } else {
                self.state.next_capsule += 1;
                self.state.next_capsule
            };
            let id = format!("{prefix}{n}");
            if !self.id_taken(&id) {
                return id;
            }
        }
    }

    // ---- queries --------------------------------------------------------

    pub fn capsule(&self, id: &CapsuleId) -> Result<&CapsuleRecord> {
        self.state
            .capsules
            .get(id)
            .ok_or_else(|| GraphError::UnknownCapsule(id.clone()))
    }

    pub fn capsules(&self) -> impl Iterator<Item = &CapsuleRecord> {
        self.state.capsules.values()
    }

    pub fn policy(&self, id: &CapsuleId) -> Result<&PolicyDnf> {
        self.policies
            .get(id)
            .ok_or_else(|| GraphError::UnknownCapsule(id.clone()))
    }

    pub fn program(&self, id: &ProgramId) -> Result<&ProgramRecord> {
        self.state
            .programs
            .get(id)
            .ok_or_else(|| GraphError::UnknownProgram(id.clone()))
    }

    pub fn programs(&self) -> impl Iterator<Item = &ProgramRecord> {
        self.state.programs.values()
    }

    pub fn evidence(&self) -> &[EvidenceRecord] {
        &self.state.evidence
    }

    /// Absolute path of a capsule's payload.
    pub fn data_path(&self, id: &CapsuleId) -> Result<PathBuf> {
        Ok(self.root.join(&self.capsule(id)?.data_ref))
    }

    /// Subjects owning at least one ingested capsule.
    pub fn subjects(&self) -> BTreeSet<String> {
        self.state
            .capsules
            .values()
            .filter(|c| c.derived_by.is_none())
            .flat_map(|c| c.subjects.iter().cloned())
            .collect()
    }

    /// Loads a payload with its provenance.
    pub fn load_table(&self, id: &CapsuleId) -> Result<Table> {
        if let Some(schema) = self.state.tombstones.get(id) {
            return Ok(Table::empty(schema.names().map(str::to_string).collect())?);
        }
        let rec = self.capsule(id)?;
        let path = self.root.join(&rec.data_ref);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let (table, _) = Table::read_csv(bytes.as_slice(), id)?;
        if rec.derived_by.is_some() {
            let prov_path = self.prov_path(id);
            let text = fs::read_to_string(&prov_path).map_err(io_err(&prov_path))?;
            let prov: Vec<BTreeSet<RowRef>> = serde_json::from_str(&text)
                .map_err(|e| GraphError::Corrupt(format!("{}: {e}", prov_path.display())))?;
            return Ok(table.with_provenance(prov)?);
        }
        Ok(table)
    }

    // ---- ingestion ------------------------------------------------------

    /// Ingests a CSV payload for one subject under `policy`. The CSV header
    /// must list the schema fields in order, optionally preceded by a
    /// `_subject` column whose values all equal `subject`.
    pub fn ingest_capsule(
        &mut self,
        csv: &[u8],
        schema: Schema,
        policy: &SourcePolicy,
        subject: &str,
        id: Option<&str>,
    ) -> Result<CapsuleId> {
        if let Some(bad) = schema
            .labels()
            .find(|l| !self.lattices.datatypes.contains(l))
        {
            return Err(GraphError::InvalidSchema(format!(
                "unknown datatype label `{bad}`"
            )));
        }
        if schema.is_empty() {
            return Err(GraphError::InvalidSchema("schema has no fields".into()));
        }
        let dnf = parse_dnf(policy, &self.lattices)?;
        if subject.is_empty() {
            return Err(GraphError::InvalidPayload("subject id is empty".into()));
        }
        let id = match id {
            Some(id) => {
                if !CapsuleId::is_valid(id) {
                    return Err(GraphError::InvalidId(id.to_string()));
                }
                if self.id_taken(id) {
                    return Err(GraphError::IdCollision(id.to_string()));
                }
                id.to_string()
            }
            None => self.mint("c", false),
        };
        let id = CapsuleId::new(id);
        let (table, subjects) = Table::read_csv(csv, &id)?;
        if !table
            .columns()
            .iter()
            .map(String::as_str)
            .eq(schema.names())
        {
            return Err(GraphError::InvalidSchema(format!(
                "CSV columns `{}` do not match schema `{schema}`",
                table.columns().join(",")
            )));
        }
        if let Some(bad) = subjects.iter().flatten().find(|s| *s != subject) {
            return Err(GraphError::InvalidPayload(format!(
                "row subject `{bad}` differs from capsule subject `{subject}`"
            )));
        }
        let data_ref = Self::data_rel(&id);
        self.write_file(&self.root.join(&data_ref), csv)?;
        self.write_file(
            &Self::policy_path(&self.root, &id),
            print_dnf(&dnf).as_bytes(),
        )?;
        self.state.capsules.insert(
            id.clone(),
            CapsuleRecord {
                id: id.clone(),
                data_ref,
                schema,
                subjects: BTreeSet::from([subject.to_string()]),
                created_at: now(),
                derived_by: None,
                version: 1,
            },
        );
        self.policies.insert(id.clone(), dnf);
        self.commit()?;
        self.audit("ingest", subject, id.as_str(), "ok")?;
        Ok(id)
    }

    /// Reads the payload from a file and ingests it.
    pub fn ingest_file(
        &mut self,
        data: &Path,
        schema: Schema,
        policy: &SourcePolicy,
        subject: &str,
        id: Option<&str>,
    ) -> Result<CapsuleId> {
        let bytes = fs::read(data).map_err(io_err(data))?;
        self.ingest_capsule(&bytes, schema, policy, subject, id)
    }

    // ---- programs -------------------------------------------------------

    /// Registers a program. Capsule references are resolved at check time.
    pub fn register_program(
        &mut self,
        source: &str,
        purposes: &[String],
        analyst: &Analyst,
    ) -> Result<ProgramId> {
        parse_program(source)?;
        if !purposes.is_empty() {
            LabelSet::new(purposes.iter().cloned(), &self.lattices.purposes, "purpose")
                .map_err(|e| GraphError::InvalidPurpose(e.to_string()))?;
        }
        let id = ProgramId::new(self.mint("p", true));
        let seq = self
            .state
            .programs
            .values()
            .map(|p| p.seq + 1)
            .max()
            .unwrap_or(0);
        self.state.programs.insert(
            id.clone(),
            ProgramRecord {
                id: id.clone(),
                seq,
                source: source.to_string(),
                purposes: purposes.to_vec(),
                analyst: analyst.identity.clone(),
                analyst_role: analyst.role.clone(),
                status: ProgramStatus::Registered,
                effect: None,
                residual: None,
                inputs: Vec::new(),
                output: None,
                seed: None,
                evidence_at_run: None,
            },
        );
        self.commit()?;
        self.audit("register", &analyst.identity, id.as_str(), "ok")?;
        Ok(id)
    }

    fn evidence_for(&self, program: &ProgramId, subjects: &BTreeSet<String>) -> EvidenceSnapshot {
        let consented = |s: &String| {
            self.state.evidence.iter().any(|e| {
                matches!(&e.kind, EvidenceKind::Consent { subject, program: p } if subject == s && p == program)
            })
        };
        let notified = |s: &String| {
            self.state
                .evidence
                .iter()
                .any(|e| matches!(&e.kind, EvidenceKind::Notification { subject } if subject == s))
        };
        EvidenceSnapshot {
            consent: !subjects.is_empty() && subjects.iter().all(consented),
            notified: !subjects.is_empty() && subjects.iter().all(notified),
        }
    }

    fn purposes_of(&self, prog: &ProgramRecord) -> Option<LabelSet> {
        if prog.purposes.is_empty() {
            return None;
        }
        LabelSet::new(
            prog.purposes.iter().cloned(),
            &self.lattices.purposes,
            "purpose",
        )
        .ok()
    }

    fn subjects_of<'a>(&self, ids: impl IntoIterator<Item = &'a CapsuleId>) -> BTreeSet<String> {
        ids.into_iter()
            .filter_map(|id| self.state.capsules.get(id))
            .flat_map(|c| c.subjects.iter().cloned())
            .collect()
    }

    fn analyze(
        &self,
        prog: &ProgramRecord,
    ) -> Result<(ProgramExpr, CheckReport, EvidenceSnapshot)> {
        let expr = parse_program(&prog.source)?;
        let inputs = expr.free_capsules();
        let mut env = CapsuleEnv::new();
        let mut policies = Vec::new();
        for id in &inputs {
            let rec = self
                .capsule(id)
                .map_err(|_| AnalysisError::UnboundCapsule(id.clone()))?;
            env.insert(id.clone(), rec.schema.clone());
            policies.push(self.policy(id)?.clone());
        }
        let abs = abstract_interpret(&env, &expr, &self.lattices)?;
        let input_policy = ingest(&policies, &self.lattices)?;
        let residual = residual_policy(&input_policy, &abs.effect, &self.lattices);
        let snapshot = self.evidence_for(&prog.id, &self.subjects_of(&inputs));
        let evidence = Evidence {
            consent: snapshot.consent,
            notified: snapshot.notified,
            purposes: self.purposes_of(prog),
        };
        let residual = metadata_discharge(&residual, &evidence, &self.lattices);
        let report = CheckReport {
            inputs,
            input_policy,
            schema: abs.schema,
            effect: abs.effect,
            residual,
        };
        Ok((expr, report, snapshot))
    }

    /// Statically checks a program against current capsules and evidence.
    /// Reads metadata and policies only, never payloads.
    pub fn check_program(&mut self, id: &ProgramId) -> Result<CheckReport> {
        let prog = self.program(id)?.clone();
        let outcome = self.analyze(&prog);
        let (_, report, _) = match outcome {
            Ok(r) => r,
            Err(e) => {
                self.audit("check", &prog.analyst, id.as_str(), &format!("error: {e}"))?;
                return Err(e);
            }
        };
        let rec = self.state.programs.get_mut(id).expect("checked above");
        rec.effect = Some(report.effect.to_string());
        rec.residual = Some(report.residual.to_string());
        if rec.status == ProgramStatus::Registered {
            rec.status = ProgramStatus::Checked;
        }
        self.commit()?;
        self.audit("check", &prog.analyst, id.as_str(), "ok")?;
        Ok(report)
    }

    fn store_derived(&self, id: &CapsuleId, table: &Table) -> Result<()> {
        let path = self.root.join(Self::data_rel(id));
        let bytes = table.to_csv_string();
        self.write_file(&path, bytes.as_bytes())?;
        let prov = serde_json::to_string(&table.provenance()).expect("provenance serializes");
        self.write_file(&self.prov_path(id), prov.as_bytes())
    }

    fn evaluate_program(
        &self,
        expr: &ProgramExpr,
        inputs: &BTreeSet<CapsuleId>,
        seed: u64,
    ) -> Result<Table> {
        let mut tables = BTreeMap::new();
        for id in inputs {
            tables.insert(id.clone(), self.load_table(id)?);
        }
        Ok(evaluate(&tables, expr, seed)?)
    }

    /// Re-checks and runs a checked program, storing its output as a new
    /// capsule governed by the residual policy.
    pub fn run_program(&mut self, id: &ProgramId, seed: u64) -> Result<CapsuleId> {
        let prog = self.program(id)?.clone();
        match prog.status {
            ProgramStatus::Registered => return Err(GraphError::NotChecked(id.clone())),
            ProgramStatus::Executed => return Err(GraphError::AlreadyExecuted(id.clone())),
            ProgramStatus::Checked => {}
        }
        let (expr, report, snapshot) = self.analyze(&prog)?;
        let table = match self.evaluate_program(&expr, &report.inputs, seed) {
            Ok(t) => t,
            Err(e) => {
                self.audit("run", &prog.analyst, id.as_str(), &format!("error: {e}"))?;
                return Err(e);
            }
        };
        let out = CapsuleId::new(self.mint("d", false));
        self.store_derived(&out, &table)?;
        let dnf = report.residual.dnf();
        self.write_file(
            &Self::policy_path(&self.root, &out),
            print_dnf(&dnf).as_bytes(),
        )?;
        self.state.capsules.insert(
            out.clone(),
            CapsuleRecord {
                id: out.clone(),
                data_ref: Self::data_rel(&out),
                schema: report.schema.clone(),
                subjects: self.subjects_of(&report.inputs),
                created_at: now(),
                derived_by: Some(id.clone()),
                version: 1,
            },
        );
        self.policies.insert(out.clone(), dnf);
        let rec = self.state.programs.get_mut(id).expect("checked above");
        rec.status = ProgramStatus::Executed;
        rec.effect = Some(report.effect.to_string());
        rec.residual = Some(report.residual.to_string());
        rec.inputs = report.inputs.iter().cloned().collect();
        rec.output = Some(out.clone());
        rec.seed = Some(seed);
        rec.evidence_at_run = Some(snapshot);
        self.commit()?;
        self.audit("run", &prog.analyst, id.as_str(), &format!("ok: {out}"))?;
        Ok(out)
    }

    /// Recomputes the stored policy of a derived capsule from its program's
    /// persisted inputs and the evidence in force at run time.
    pub fn replay_policy(&self, id: &CapsuleId) -> Result<Option<PolicyDnf>> {
        let Some(pid) = &self.capsule(id)?.derived_by else {
            return Ok(None);
        };
        let prog = self.program(pid)?;
        let expr = parse_program(&prog.source)?;
        let mut env = CapsuleEnv::new();
        let mut policies = Vec::new();
        for input in &prog.inputs {
            let rec = self.capsule(input)?;
            env.insert(input.clone(), rec.schema.clone());
            policies.push(self.policy(input)?.clone());
        }
        let abs = abstract_interpret(&env, &expr, &self.lattices)?;
        let input_policy = ingest(&policies, &self.lattices)?;
        let residual = residual_policy(&input_policy, &abs.effect, &self.lattices);
        let snap = prog.evidence_at_run.unwrap_or_default();
        let evidence = Evidence {
            consent: snap.consent,
            notified: snap.notified,
            purposes: self.purposes_of(prog),
        };
        Ok(Some(
            metadata_discharge(&residual, &evidence, &self.lattices).dnf(),
        ))
    }

    // ---- evidence -------------------------------------------------------

    fn push_evidence(&mut self, kind: EvidenceKind) -> Result<String> {
        self.state.next_evidence += 1;
        let id = format!("e{}", self.state.next_evidence);
        self.state.evidence.push(EvidenceRecord {
            id: id.clone(),
            at: now(),
            kind,
        });
        self.commit()?;
        Ok(id)
    }

    fn require_subject(&self, subject: &str) -> Result<()> {
        if self.subjects().contains(subject) {
            Ok(())
        } else {
            Err(GraphError::UnknownSubject(subject.to_string()))
        }
    }

    /// Records that `subject` consents to `program`.
    pub fn record_consent(&mut self, subject: &str, program: &ProgramId) -> Result<String> {
        self.require_subject(subject)?;
        self.program(program)?;
        let id = self.push_evidence(EvidenceKind::Consent {
            subject: subject.to_string(),
            program: program.clone(),
        })?;
        self.audit("consent", subject, program.as_str(), &id)?;
        Ok(id)
    }

    /// Records that `subject` has been notified.
    pub fn record_notification(&mut self, subject: &str) -> Result<String> {
        self.require_subject(subject)?;
        let id = self.push_evidence(EvidenceKind::Notification {
            subject: subject.to_string(),
        })?;
        self.audit("notify", subject, subject, &id)?;
        Ok(id)
    }

    /// Declares `member` (an identity or role) affiliated with `subject`
    /// under role function `function`, for `ROLE function($var)` atoms.
    pub fn record_affiliation(
        &mut self,
        function: &str,
        subject: &str,
        member: &str,
    ) -> Result<()> {
        self.require_subject(subject)?;
        self.state.affiliations.push(AffiliationRecord {
            function: function.to_string(),
            subject: subject.to_string(),
            member: member.to_string(),
        });
        self.commit()?;
        self.audit("affiliate", member, subject, function)
    }

    fn affiliations(&self) -> Affiliations {
        let mut out = Affiliations::new();
        for a in &self.state.affiliations {
            out.entry((a.function.clone(), a.subject.clone()))
                .or_default()
                .insert(a.member.clone());
        }
        out
    }

    // ---- declassification ----------------------------------------------

    /// The capsule's stored policy with current evidence applied.
    pub fn effective_policy(&self, id: &CapsuleId) -> Result<ResidualPolicy> {
        let rec = self.capsule(id)?;
        let stored = ResidualPolicy::from_dnf(self.policy(id)?);
        let (snapshot, purposes) = match &rec.derived_by {
            Some(pid) => {
                let prog = self.program(pid)?;
                (
                    self.evidence_for(pid, &rec.subjects),
                    self.purposes_of(prog),
                )
            }
            None => {
                let notified = self
                    .evidence_for(&ProgramId::new(""), &rec.subjects)
                    .notified;
                (
                    EvidenceSnapshot {
                        consent: false,
                        notified,
                    },
                    None,
                )
            }
        };
        let evidence = Evidence {
            consent: snapshot.consent,
            notified: snapshot.notified,
            purposes,
        };
        Ok(metadata_discharge(&stored, &evidence, &self.lattices))
    }

    /// Returns the payload path if the analyst may see the capsule's data.
    /// Role variables bind to the capsule's data subjects.
    pub fn declassify(&self, id: &CapsuleId, analyst: &Analyst) -> Result<PathBuf> {
        let rec = self.capsule(id)?;
        let residual = self.effective_policy(id)?;
        let mut bindings = Bindings::new();
        for c in residual.clauses() {
            for a in c.atoms() {
                if let AttributeValue::Role(RoleExpr::Var(v) | RoleExpr::Meta { var: v, .. }) = a {
                    bindings.insert(v.clone(), rec.subjects.clone());
                }
            }
        }
        let affiliations = self.affiliations();
        let ok = declassifiable(&residual, analyst, &bindings, &affiliations, &self.lattices)?;
        if ok {
            self.audit("declassify", &analyst.identity, id.as_str(), "granted")?;
            return Ok(self.root.join(&rec.data_ref));
        }
        let blocking = residual
            .clauses()
            .iter()
            .map(|c| {
                PolicyClause::from_canonical(
                    c.atoms()
                        .filter(|a| match a {
                            AttributeValue::Role(r) => !role_satisfied(
                                r,
                                analyst,
                                &bindings,
                                &affiliations,
                                &self.lattices,
                            )
                            .unwrap_or(false),
                            _ => true,
                        })
                        .cloned()
                        .collect(),
                )
            })
            .collect();
        self.audit("declassify", &analyst.identity, id.as_str(), "denied")?;
        Err(GraphError::PolicyNotSatisfied {
            capsule: id.clone(),
            blocking,
        })
    }

    // ---- transparency and portability ----------------------------------

    fn program_inputs(&self, p: &ProgramRecord) -> Vec<CapsuleId> {
        if !p.inputs.is_empty() {
            return p.inputs.clone();
        }
        parse_program(&p.source)
            .map(|e| e.free_capsules().into_iter().collect())
            .unwrap_or_default()
    }

    /// Node ids reachable from `start` along capsule → program → capsule
    /// edges, including `start`.
    fn reachable(&self, start: &BTreeSet<String>) -> BTreeSet<String> {
        let edges = self.edges();
        let mut seen = start.clone();
        let mut frontier: Vec<String> = start.iter().cloned().collect();
        while let Some(n) = frontier.pop() {
            for (from, to) in &edges {
                if *from == n && seen.insert(to.clone()) {
                    frontier.push(to.clone());
                }
            }
        }
        seen
    }

    /// Induced subgraph reachable from a subject's ingested capsules.
    pub fn subject_view(&self, subject: &str) -> Result<GraphExport> {
        self.require_subject(subject)?;
        let start = self
            .state
            .capsules
            .values()
            .filter(|c| c.derived_by.is_none() && c.subjects.contains(subject))
            .map(|c| c.id.to_string())
            .collect();
        let keep = self.reachable(&start);
        Ok(self.export_filtered(|n| keep.contains(n)))
    }

    /// The subject's ingested capsules in full, plus their rows in derived
    /// capsules of row-preserving programs.
    pub fn portability_export(&self, subject: &str) -> Result<Vec<PortableCapsule>> {
        self.require_subject(subject)?;
        let owner: BTreeMap<&CapsuleId, &BTreeSet<String>> = self
            .state
            .capsules
            .values()
            .filter(|c| c.derived_by.is_none())
            .map(|c| (&c.id, &c.subjects))
            .collect();
        let only_subject = |refs: &BTreeSet<RowRef>| {
            !refs.is_empty()
                && refs.iter().all(|r| {
                    owner
                        .get(&r.capsule)
                        .is_some_and(|s| s.len() == 1 && s.contains(subject))
                })
        };
        let mut out = Vec::new();
        for rec in self.state.capsules.values() {
            if !rec.subjects.contains(subject) {
                continue;
            }
            let table = match &rec.derived_by {
                None => self.load_table(&rec.id)?,
                Some(pid) => {
                    let prog = self.program(pid)?;
                    if !parse_program(&prog.source)?.row_preserving() {
                        continue;
                    }
                    let full = self.load_table(&rec.id)?;
                    let rows = full
                        .rows()
                        .iter()
                        .filter(|r| only_subject(&r.provenance))
                        .cloned()
                        .collect();
                    Table::new(full.columns().to_vec(), rows)?
                }
            };
            out.push(PortableCapsule {
                capsule: rec.id.clone(),
                table,
            });
        }
        Ok(out)
    }

    // ---- deletion -------------------------------------------------------

    /// Deletes an ingested capsule and recomputes every derived capsule
    /// downstream of it, with the deleted capsule read as an empty table.
    /// Derived capsules keep their ids and policies; their version is
    /// bumped.
    pub fn delete_capsule(&mut self, id: &CapsuleId) -> Result<DeleteReport> {
        let rec = self.capsule(id)?.clone();
        if rec.derived_by.is_some() {
            return Err(GraphError::NotIngested(id.clone()));
        }
        let data = self.root.join(&rec.data_ref);
        fs::remove_file(&data).map_err(io_err(&data))?;
        let pol = Self::policy_path(&self.root, id);
        fs::remove_file(&pol).map_err(io_err(&pol))?;
        self.state.capsules.remove(id);
        self.policies.remove(id);
        self.state.tombstones.insert(id.clone(), rec.schema.clone());

        let mut affected = BTreeSet::from([id.clone()]);
        let mut recomputed = Vec::new();
        let mut order: Vec<ProgramRecord> = self
            .state
            .programs
            .values()
            .filter(|p| p.status == ProgramStatus::Executed)
            .cloned()
            .collect();
        order.sort_by_key(|p| p.seq);
        for prog in order {
            if !prog.inputs.iter().any(|i| affected.contains(i)) {
                continue;
            }
            let out = prog
                .output
                .clone()
                .expect("executed programs have an output");
            let expr = parse_program(&prog.source)?;
            let inputs: BTreeSet<CapsuleId> = prog.inputs.iter().cloned().collect();
            let table = self.evaluate_program(&expr, &inputs, prog.seed.unwrap_or_default())?;
            self.store_derived(&out, &table)?;
            let subjects = self.subjects_of(&inputs);
            let rec = self
                .state
                .capsules
                .get_mut(&out)
                .expect("output capsule exists");
            rec.version += 1;
            rec.subjects = subjects;
            affected.insert(out.clone());
            recomputed.push(out);
        }
        self.commit()?;
        self.audit(
            "delete",
            "system",
            id.as_str(),
            &format!("recomputed {}", recomputed.len()),
        )?;
        Ok(DeleteReport {
            deleted: id.clone(),
            recomputed,
        })
    }

    // ---- invariants -----------------------------------------------------

    fn commit(&self) -> Result<()> {
        self.validate()?;
        self.save()
    }

    /// Checks graph invariants: edge endpoints exist, the graph is acyclic,
    /// executed programs have inputs and one output, and every capsule has
    /// a policy.
    pub fn validate(&self) -> Result<()> {
        let nodes: BTreeSet<String> = self
            .state
            .capsules
            .keys()
            .map(ToString::to_string)
            .chain(self.state.tombstones.keys().map(ToString::to_string))
            .chain(self.state.programs.keys().map(ToString::to_string))
            .collect();
        let edges = self.edges();
        for (from, to) in &edges {
            if !nodes.contains(from) || !nodes.contains(to) {
                return Err(GraphError::Corrupt(format!(
                    "edge {from} -> {to} has a missing endpoint"
                )));
            }
        }
        for p in self.state.programs.values() {
            if p.status == ProgramStatus::Executed {
                let outs = edges.iter().filter(|(f, _)| *f == p.id.as_str()).count();
                if p.inputs.is_empty() || outs != 1 {
                    return Err(GraphError::Corrupt(format!(
                        "program {} has malformed edges",
                        p.id
                    )));
                }
            }
        }
        for id in self.state.capsules.keys() {
            if !self.policies.contains_key(id) {
                return Err(GraphError::Corrupt(format!("capsule {id} has no policy")));
            }
        }
        // Kahn's algorithm.
        let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, to) in &edges {
            *indeg.get_mut(to.as_str()).expect("endpoint checked") += 1;
        }
        let mut ready: Vec<&str> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for (from, to) in &edges {
                if from == n {
                    let d = indeg.get_mut(to.as_str()).expect("endpoint checked");
                    *d -= 1;
                    if *d == 0 {
                        ready.push(to);
                    }
                }
            }
        }
        if visited != nodes.len() {
            return Err(GraphError::Corrupt("graph has a cycle".into()));
        }
        Ok(())
    }

    /// Input edges (capsule → program) of executed programs and output
    /// edges (program → capsule).
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for p in self.state.programs.values() {
            if p.status != ProgramStatus::Executed {
                continue;
            }
            for i in self.program_inputs(p) {
                out.push((i.to_string(), p.id.to_string()));
            }
            if let Some(o) = &p.output {
                out.push((p.id.to_string(), o.to_string()));
            }
        }
        out
    }
}
