//! In-memory tables with row provenance, and their CSV form.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CapsuleId;

/// Optional leading CSV column naming each row's data subject.
pub const SUBJECT_COLUMN: &str = "_subject";

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    /// Integers, then floats, then text. A cell becomes a number only if
    /// printing the number gives back the same text, so CSV round trips are
    /// byte-exact (`007` stays text).
    pub fn parse(cell: &str) -> Value {
        if let Ok(i) = cell.parse::<i64>() {
            if i.to_string() == cell {
                return Value::Int(i);
            }
        }
        if let Ok(x) = cell.parse::<f64>() {
            if x.is_finite() && x.to_string() == cell {
                return Value::Float(x);
            }
        }
        Value::Text(cell.to_string())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// Row `row` (0-based, excluding the header) of ingested capsule `capsule`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowRef {
    pub capsule: CapsuleId,
    pub row: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub cells: Vec<Value>,
    pub provenance: BTreeSet<RowRef>,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row} has {found} cells, expected {expected}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("provenance covers {found} rows, table has {expected}")]
    ProvenanceLength { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Row>,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Row>) -> Result<Self, TableError> {
        let unique: BTreeSet<&String> = columns.iter().collect();
        if unique.len() != columns.len() {
            let dup = columns
                .iter()
                .enumerate()
                .find(|(i, c)| columns[..*i].contains(c))
                .map(|(_, c)| c.clone())
                .unwrap_or_default();
            return Err(TableError::DuplicateColumn(dup));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.cells.len() != columns.len() {
                return Err(TableError::Arity {
                    row: i,
                    expected: columns.len(),
                    found: r.cells.len(),
                });
            }
        }
        Ok(Self { columns, rows })
    }

    pub fn empty(columns: Vec<String>) -> Result<Self, TableError> {
        Self::new(columns, Vec::new())
    }

    /// Builds a table whose rows are provenance-stamped as rows of `capsule`.
    pub fn from_values(
        capsule: &CapsuleId,
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
    ) -> Result<Self, TableError> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, cells)| Row {
                cells,
                provenance: BTreeSet::from([RowRef {
                    capsule: capsule.clone(),
                    row: i,
                }]),
            })
            .collect();
        Self::new(columns, rows)
    }

    /// Reads CSV with a header row. A leading `_subject` column is removed
    /// and its values returned separately. Rows are stamped as rows of
    /// `capsule`.
    pub fn read_csv<R: Read>(
        reader: R,
        capsule: &CapsuleId,
    ) -> Result<(Table, Option<Vec<String>>), TableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let mut columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let has_subject = columns.first().map(String::as_str) == Some(SUBJECT_COLUMN);
        if has_subject {
            columns.remove(0);
        }
        let mut subjects = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut cells = rec.iter();
            if has_subject {
                subjects.push(cells.next().unwrap_or_default().to_string());
            }
            rows.push(cells.map(Value::parse).collect());
        }
        let table = Self::from_values(capsule, columns, rows)?;
        Ok((table, has_subject.then_some(subjects)))
    }

    /// Writes header and cells; provenance is not part of the CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.cells.iter().map(ToString::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_values(&self, name: &str) -> Option<impl Iterator<Item = &Value>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(move |r| &r.cells[i]))
    }

    pub fn provenance(&self) -> Vec<BTreeSet<RowRef>> {
        self.rows.iter().map(|r| r.provenance.clone()).collect()
    }

    /// Replaces per-row provenance, e.g. after reloading a stored CSV.
    pub fn with_provenance(
        mut self,
        provenance: Vec<BTreeSet<RowRef>>,
    ) -> Result<Self, TableError> {
        if provenance.len() != self.rows.len() {
            return Err(TableError::ProvenanceLength {
                expected: self.rows.len(),
                found: provenance.len(),
            });
        }
        for (r, p) in self.rows.iter_mut().zip(provenance) {
            r.provenance = p;
        }
        Ok(self)
    }
}
