//! JSON and DOT renderings of the capsule graph.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::CapsuleGraph;
use crate::parser::print_dnf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Capsule,
    Program,
    DeletedCapsule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeExport {
    pub id: String,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub schema: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub status: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeExport {
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<NodeExport>,
    pub edges: Vec<EdgeExport>,
}

impl GraphExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("export serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph capsules {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let (shape, style) = match n.kind {
                NodeKind::Capsule => ("box", ""),
                NodeKind::Program => ("ellipse", ""),
                NodeKind::DeletedCapsule => ("box", ", style=dashed"),
            };
            let mut label = n.id.clone();
            if let Some(p) = &n.policy {
                label.push_str("\\n");
                label.push_str(&p.trim_end().replace('\n', "\\n"));
            }
            writeln!(
                out,
                "  {} [shape={shape}{style}, label={}];",
                quote(&n.id),
                quote(&label)
            )
            .expect("string write");
        }
        for e in &self.edges {
            writeln!(out, "  {} -> {};", quote(&e.from), quote(&e.to)).expect("string write");
        }
        out.push_str("}\n");
        out
    }

    pub fn node(&self, id: &str) -> Option<&NodeExport> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

fn quote(s: &str) -> String {
    // Backslashes are kept so `\n` line breaks survive in labels.
    format!("\"{}\"", s.replace('"', "\\\""))
}

impl CapsuleGraph {
    /// The whole graph.
    pub fn export(&self) -> GraphExport {
        self.export_filtered(|_| true)
    }

    pub(super) fn export_filtered(&self, keep: impl Fn(&str) -> bool) -> GraphExport {
        let mut nodes = Vec::new();
        for c in self.state.capsules.values() {
            if keep(c.id.as_str()) {
                nodes.push(NodeExport {
                    id: c.id.to_string(),
                    kind: NodeKind::Capsule,
                    policy: self.policies.get(&c.id).map(print_dnf),
                    schema: Some(c.schema.to_string()),
                    status: None,
                });
            }
        }
        for (id, schema) in &self.state.tombstones {
            if keep(id.as_str()) {
                nodes.push(NodeExport {
                    id: id.to_string(),
                    kind: NodeKind::DeletedCapsule,
                    policy: None,
                    schema: Some(schema.to_string()),
                    status: None,
                });
            }
        }
        let mut programs: Vec<_> = self.state.programs.values().collect();
        programs.sort_by_key(|p| p.seq);
        for p in programs {
            if keep(p.id.as_str()) {
                nodes.push(NodeExport {
                    id: p.id.to_string(),
                    kind: NodeKind::Program,
                    policy: None,
                    schema: None,
                    status: Some(p.status.to_string()),
                });
            }
        }
        let edges = self
            .edges()
            .into_iter()
            .filter(|(f, t)| keep(f) && keep(t))
            .map(|(from, to)| EdgeExport { from, to })
            .collect();
        GraphExport { nodes, edges }
    }
}
