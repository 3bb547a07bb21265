//! Data capsules: datasets paired with machine-checkable privacy policies.
//!
//! The crate is layered bottom-up:
//!
//! * [`lattice`], [`interval`] and [`attr`] define the attribute abstract
//!   domains policies are built from.
//! * [`policy`] holds clauses and disjunctive normal form; [`parser`] is the
//!   policy surface syntax.
//! * [`program`] parses analysis programs, derives their policy effect by
//!   abstract interpretation and evaluates them over tables.
//! * [`residual`] combines input policies and computes residual policies.
//! * [`graph`] is the persistent capsule lineage graph tying it together.
//! * [`bench`] is the policy-ingestion benchmark harness.

pub mod attr;
pub mod bench;
pub mod graph;
pub mod interval;
pub mod lattice;
mod lex;
pub mod parser;
pub mod policy;
pub mod program;
pub mod residual;

pub use attr::{AttrError, AttrKind, AttributeValue, Declass, LabelSet, RedactMode, RoleExpr};
pub use graph::{CapsuleGraph, GraphError, ProgramId};
pub use interval::Interval;
pub use lattice::{FiniteLattice, LatticeError, Lattices};
pub use parser::{parse_dnf, parse_policy, print_ast, print_dnf, PolicyParseError, SourcePolicy};
pub use policy::{clause_leq, Formula, PolicyAst, PolicyClause, PolicyDnf};
pub use program::{
    abstract_interpret, evaluate, parse_program, AbstractCapsule, AnalysisError, CapsuleEnv,
    CapsuleId, EvalError, PolicyEffect, ProgramExpr, ProgramParseError, Schema, Table, Value,
};
pub use residual::{
    declassifiable, ingest, metadata_discharge, policy_join, residual_clause, residual_policy,
    satisfies, Analyst, Evidence, InputPolicy, ResidualError, ResidualPolicy,
};
