//! Finite lattices loaded from configuration.
//!
//! Datatype, role and purpose hierarchies are all finite lattices described
//! by a small line-oriented format:
//!
//! ```text
//! # comment
//! top Any
//! bottom Nothing
//! edge PII Any
//! edge Name PII
//! edge Nothing Name
//! ```
//!
//! `edge <child> <parent>` states `child ⊑ parent`. The reflexive-transitive
//! closure of the edges must be a partial order in which every pair of labels
//! has a least upper bound and a greatest lower bound.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `{0}` declaration")]
    Missing(&'static str),
    #[error("order is cyclic: `{0}` and `{1}` are mutually below each other")]
    Cycle(String, String),
    #[error("label `{label}` is not below top `{top}`")]
    NotBelowTop { label: String, top: String },
    #[error("label `{label}` is not above bottom `{bottom}`")]
    NotAboveBottom { label: String, bottom: String },
    #[error("`{0}` and `{1}` have no least upper bound")]
    NoJoin(String, String),
    #[error("`{0}` and `{1}` have no greatest lower bound")]
    NoMeet(String, String),
    #[error("cannot read lattice file {path}: {message}")]
    Io { path: String, message: String },
}

/// A validated finite lattice over string labels.
///
/// Order, join and meet are precomputed tables, so every query is O(1) after
/// the label lookup.
#[derive(Clone)]
pub struct FiniteLattice {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    leq: Vec<Vec<bool>>,
    join: Vec<Vec<usize>>,
    meet: Vec<Vec<usize>>,
    top: usize,
    bottom: usize,
}

impl fmt::Debug for FiniteLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteLattice")
            .field("labels", &self.labels)
            .field("top", &self.labels[self.top])
            .field("bottom", &self.labels[self.bottom])
            .finish()
    }
}

impl FiniteLattice {
    pub fn parse(text: &str) -> Result<Self, LatticeError> {
        let mut labels: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut top = None;
        let mut bottom = None;

        let mut intern = |name: &str, labels: &mut Vec<String>| -> usize {
            if let Some(&i) = index.get(name) {
                return i;
            }
            labels.push(name.to_string());
            index.insert(name.to_string(), labels.len() - 1);
            labels.len() - 1
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let syntax = |message: String| LatticeError::Syntax {
                line: lineno + 1,
                message,
            };
            for w in &words[1..] {
                if !is_label(w) {
                    return Err(syntax(format!("`{w}` is not a valid label")));
                }
            }
            match words.as_slice() {
                ["edge", child, parent] => {
                    let c = intern(child, &mut labels);
                    let p = intern(parent, &mut labels);
                    edges.push((c, p));
                }
                ["top", label] => {
                    if top.is_some() {
                        return Err(syntax("duplicate `top`".into()));
                    }
                    top = Some(intern(label, &mut labels));
                }
                ["bottom", label] => {
                    if bottom.is_some() {
                        return Err(syntax("duplicate `bottom`".into()));
                    }
                    bottom = Some(intern(label, &mut labels));
                }
                ["label", label] => {
                    intern(label, &mut labels);
                }
                _ => return Err(syntax(format!("unrecognised directive `{line}`"))),
            }
        }

        let top = top.ok_or(LatticeError::Missing("top"))?;
        let bottom = bottom.ok_or(LatticeError::Missing("bottom"))?;
        let index: HashMap<String, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self::from_edges(labels, index, &edges, top, bottom)
    }

    pub fn load(path: &Path) -> Result<Self, LatticeError> {
        let text = std::fs::read_to_string(path).map_err(|e| LatticeError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    fn from_edges(
        labels: Vec<String>,
        index: HashMap<String, usize>,
        edges: &[(usize, usize)],
        top: usize,
        bottom: usize,
    ) -> Result<Self, LatticeError> {
        let n = labels.len();
        let mut leq = vec![vec![false; n]; n];
        for (i, row) in leq.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(c, p) in edges {
            leq[c][p] = true;
        }
        // Warshall closure.
        for k in 0..n {
            for i in 0..n {
                if leq[i][k] {
                    let via = leq[k].clone();
                    for (cell, reach) in leq[i].iter_mut().zip(via) {
                        *cell |= reach;
                    }
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if leq[i][j] && leq[j][i] {
                    return Err(LatticeError::Cycle(labels[i].clone(), labels[j].clone()));
                }
            }
        }
        for i in 0..n {
            if !leq[i][top] {
                return Err(LatticeError::NotBelowTop {
                    label: labels[i].clone(),
                    top: labels[top].clone(),
                });
            }
            if !leq[bottom][i] {
                return Err(LatticeError::NotAboveBottom {
                    label: labels[i].clone(),
                    bottom: labels[bottom].clone(),
                });
            }
        }

        let mut join = vec![vec![0; n]; n];
        let mut meet = vec![vec![0; n]; n];
        for a in 0..n {
            for b in a..n {
                let uppers: Vec<usize> = (0..n).filter(|&u| leq[a][u] && leq[b][u]).collect();
                let least = uppers
                    .iter()
                    .copied()
                    .find(|&u| uppers.iter().all(|&v| leq[u][v]))
                    .ok_or_else(|| LatticeError::NoJoin(labels[a].clone(), labels[b].clone()))?;
                let lowers: Vec<usize> = (0..n).filter(|&l| leq[l][a] && leq[l][b]).collect();
                let greatest = lowers
                    .iter()
                    .copied()
                    .find(|&l| lowers.iter().all(|&v| leq[v][l]))
                    .ok_or_else(|| LatticeError::NoMeet(labels[a].clone(), labels[b].clone()))?;
                join[a][b] = least;
                join[b][a] = least;
                meet[a][b] = greatest;
                meet[b][a] = greatest;
            }
        }

        Ok(Self {
            labels,
            index,
            leq,
            join,
            meet,
            top,
            bottom,
        })
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn top(&self) -> &str {
        &self.labels[self.top]
    }

    pub fn bottom(&self) -> &str {
        &self.labels[self.bottom]
    }

    /// `a ⊑ b`. Labels outside the lattice are only related to themselves.
    pub fn leq(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.leq[i][j],
            _ => a == b,
        }
    }

    /// Least upper bound. Unknown labels join to top.
    pub fn join<'a>(&'a self, a: &'a str, b: &'a str) -> &'a str {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => &self.labels[self.join[i][j]],
            _ if a == b => a,
            _ => self.top(),
        }
    }

    /// Greatest lower bound. Unknown labels meet to bottom.
    pub fn meet<'a>(&'a self, a: &'a str, b: &'a str) -> &'a str {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => &self.labels[self.meet[i][j]],
            _ if a == b => a,
            _ => self.bottom(),
        }
    }
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub const SAMPLE_DATATYPES: &str = include_str!("../data/lattices/datatypes.lattice");
pub const SAMPLE_ROLES: &str = include_str!("../data/lattices/roles.lattice");
pub const SAMPLE_PURPOSES: &str = include_str!("../data/lattices/purposes.lattice");

/// The three configured hierarchies every policy operation is evaluated
/// against.
#[derive(Debug, Clone)]
pub struct Lattices {
    pub datatypes: FiniteLattice,
    pub roles: FiniteLattice,
    pub purposes: FiniteLattice,
}

impl Lattices {
    /// The lattices shipped with the crate.
    pub fn sample() -> Self {
        Self {
            datatypes: FiniteLattice::parse(SAMPLE_DATATYPES).expect("bundled datatype lattice"),
            roles: FiniteLattice::parse(SAMPLE_ROLES).expect("bundled role lattice"),
            purposes: FiniteLattice::parse(SAMPLE_PURPOSES).expect("bundled purpose lattice"),
        }
    }

    /// Loads `datatypes.lattice`, `roles.lattice` and `purposes.lattice` from
    /// `dir`, falling back to the bundled lattice for any missing file.
    pub fn load_dir(dir: &Path) -> Result<Self, LatticeError> {
        let load = |name: &str, fallback: &str| {
            let path = dir.join(name);
            if path.exists() {
                FiniteLattice::load(&path)
            } else {
                FiniteLattice::parse(fallback)
            }
        };
        Ok(Self {
            datatypes: load("datatypes.lattice", SAMPLE_DATATYPES)?,
            roles: load("roles.lattice", SAMPLE_ROLES)?,
            purposes: load("purposes.lattice", SAMPLE_PURPOSES)?,
        })
    }
}

impl Default for Lattices {
    fn default() -> Self {
        Self::sample()
    }
}
