//! Tabular data model and CSV ingestion.
//!
//! A [`TableSchema`] declares every column as numerical or categorical and
//! names one categorical column as the classification target. A
//! [`DataTable`] holds raw text cells in schema order; numerical cells stay
//! as text until preprocessing parses them.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numerical,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
        }
    }
}

fn default_missing_values() -> Vec<String> {
    vec![String::new(), "NA".to_string()]
}

/// Column layout, target column and class labels.
///
/// Serialized as the schema file:
///
/// ```json
/// {
///   "columns": [{"name": "temperature", "kind": "numerical"},
///               {"name": "disposition", "kind": "categorical"}],
///   "target": "disposition",
///   "class_labels": ["home", "admitted"],
///   "missing_values": ["", "NA"]
/// }
/// ```
///
/// `missing_values` is optional and defaults to the empty string and `NA`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct TableSchema {
    columns: Vec<ColumnSpec>,
    target: String,
    target_index: usize,
    class_labels: Vec<String>,
    missing_values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    columns: Vec<ColumnSpec>,
    target: String,
    class_labels: Vec<String>,
    #[serde(default = "default_missing_values")]
    missing_values: Vec<String>,
}

impl TryFrom<RawSchema> for TableSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        TableSchema::with_missing_values(raw.columns, raw.target, raw.class_labels, raw.missing_values)
    }
}

impl From<TableSchema> for RawSchema {
    fn from(schema: TableSchema) -> Self {
        RawSchema {
            columns: schema.columns,
            target: schema.target,
            class_labels: schema.class_labels,
            missing_values: schema.missing_values,
        }
    }
}

impl TableSchema {
    pub fn new(
        columns: Vec<ColumnSpec>,
        target: impl Into<String>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        Self::with_missing_values(columns, target, class_labels, default_missing_values())
    }

    pub fn with_missing_values(
        columns: Vec<ColumnSpec>,
        target: impl Into<String>,
        class_labels: Vec<String>,
        missing_values: Vec<String>,
    ) -> Result<Self> {
        let target = target.into();
        let mut names = HashSet::new();
        for column in &columns {
            if column.name.is_empty() {
                return Err(Error::Schema("column name is empty".into()));
            }
            if !names.insert(column.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {:?}", column.name)));
            }
        }
        let target_index = columns
            .iter()
            .position(|c| c.name == target)
            .ok_or_else(|| Error::Schema(format!("target {target:?} is not a declared column")))?;
        if columns[target_index].kind != ColumnKind::Categorical {
            return Err(Error::Schema(format!("target {target:?} must be categorical")));
        }
        if class_labels.len() < 2 {
            return Err(Error::Schema(format!(
                "need at least 2 class labels, got {}",
                class_labels.len()
            )));
        }
        let distinct: HashSet<&str> = class_labels.iter().map(String::as_str).collect();
        if distinct.len() != class_labels.len() {
            return Err(Error::Schema("class labels are not distinct".into()));
        }
        if let Some(label) = class_labels.iter().find(|l| missing_values.contains(l)) {
            return Err(Error::Schema(format!(
                "class label {label:?} collides with a missing-value marker"
            )));
        }
        Ok(Self {
            columns,
            target,
            target_index,
            class_labels,
            missing_values,
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization cannot fail")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn missing_values(&self) -> &[String] {
        &self.missing_values
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }

    pub fn is_missing(&self, raw: &str) -> bool {
        self.missing_values.iter().any(|m| m == raw)
    }

    /// Indices of non-target columns of the given kind, in schema order.
    pub fn feature_indices(&self, kind: ColumnKind) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(i, c)| *i != self.target_index && c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// A 26-column layout shaped like an emergency-department extract:
    /// 14 numerical columns and 12 categorical ones, the last of which is
    /// the 8-way disposition target.
    pub fn emergency_department() -> Self {
        let numerical = [
            "subject_id",
            "hadm_id",
            "stay_id",
            "temperature",
            "heartrate",
            "resprate",
            "o2sat",
            "sbp",
            "dbp",
            "icd_version",
            "gsn",
            "ndc",
            "etccode",
            "acuity",
        ];
        let categorical = [
            "gender",
            "race",
            "arrival_transport",
            "charttime",
            "rhythm",
            "pain",
            "chiefcomplaint",
            "icd_code",
            "icd_title",
            "name",
            "etcdescription",
            "disposition",
        ];
        let columns = numerical
            .iter()
            .map(|n| ColumnSpec::numerical(*n))
            .chain(categorical.iter().map(|n| ColumnSpec::categorical(*n)))
            .collect();
        let labels = [
            "admitted",
            "home",
            "transfer",
            "eloped",
            "left against medical advice",
            "left without being seen",
            "expired",
            "other",
        ];
        Self::new(
            columns,
            "disposition",
            labels.iter().map(|s| s.to_string()).collect(),
        )
        .expect("built-in schema is valid")
    }
}

/// Raw cells, row-major, one `Option<String>` per schema column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataTable {
    schema: TableSchema,
    cells: Vec<Vec<Option<String>>>,
}

impl DataTable {
    /// Validates arity and target membership.
    pub fn new(schema: TableSchema, cells: Vec<Vec<Option<String>>>) -> Result<Self> {
        let width = schema.columns().len();
        for (row, values) in cells.iter().enumerate() {
            if values.len() != width {
                return Err(Error::RowArity {
                    row: row + 1,
                    expected: width,
                    found: values.len(),
                });
            }
            if let Some(label) = &values[schema.target_index()] {
                if schema.class_index(label).is_none() {
                    return Err(Error::InvalidLabel {
                        row: row + 1,
                        value: label.clone(),
                    });
                }
            }
        }
        Ok(Self { schema, cells })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.cells.len()
    }

    pub fn rows(&self) -> &[Vec<Option<String>>] {
        &self.cells
    }

    pub fn cell(&self, row: usize, column: usize) -> Option<&str> {
        self.cells[row][column].as_deref()
    }

    pub fn column(&self, column: usize) -> impl Iterator<Item = Option<&str>> + '_ {
        self.cells.iter().map(move |r| r[column].as_deref())
    }

    pub fn missing_count(&self, column: usize) -> usize {
        self.column(column).filter(Option::is_none).count()
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            cells: indices.iter().map(|&i| self.cells[i].clone()).collect(),
        }
    }

    /// Writes RFC 4180 CSV; missing cells are written as empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().from_writer(writer);
        out.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for row in &self.cells {
            out.write_record(row.iter().map(|c| c.as_deref().unwrap_or("")))?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// How strictly [`load_csv`] treats the target column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetPolicy {
    /// Target column must be present in the header; cells may be missing.
    #[default]
    Present,
    /// Target column must be present and every row labelled.
    Required,
    /// Target column may be absent from the header (unlabelled input).
    Optional,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &TableSchema) -> Result<DataTable> {
    load_csv_with(path, schema, TargetPolicy::Present)
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    schema: &TableSchema,
    policy: TargetPolicy,
) -> Result<DataTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, policy)
}

/// Reads CSV from any source; the header may list columns in any order.
pub fn read_csv<R: Read>(reader: R, schema: &TableSchema, policy: TargetPolicy) -> Result<DataTable> {
    let mut input = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();

    let positions: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let declared: BTreeSet<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
    let target_absent_ok = policy == TargetPolicy::Optional;
    let missing: Vec<String> = schema
        .columns()
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| !positions.contains_key(n))
        .filter(|n| !(target_absent_ok && *n == schema.target()))
        .map(str::to_string)
        .collect();
    let mut extra: Vec<String> = header
        .iter()
        .filter(|h| !declared.contains(h.as_str()))
        .cloned()
        .collect();
    if header.len() != positions.len() {
        let mut seen = HashSet::new();
        extra.extend(header.iter().filter(|h| !seen.insert(h.as_str())).map(|h| format!("{h} (duplicate)")));
    }
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::HeaderMismatch { missing, extra });
    }

    let source: Vec<Option<usize>> = schema
        .columns()
        .iter()
        .map(|c| positions.get(c.name.as_str()).copied())
        .collect();

    let mut cells = Vec::new();
    for (i, record) in input.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != header.len() {
            return Err(Error::RowArity {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let values: Vec<Option<String>> = source
            .iter()
            .map(|pos| {
                pos.and_then(|p| {
                    let raw = &record[p];
                    (!schema.is_missing(raw)).then(|| raw.to_string())
                })
            })
            .collect();
        match &values[schema.target_index()] {
            Some(label) if schema.class_index(label).is_none() => {
                return Err(Error::InvalidLabel {
                    row,
                    value: label.clone(),
                })
            }
            None if policy == TargetPolicy::Required => return Err(Error::MissingLabel { row }),
            _ => {}
        }
        cells.push(values);
    }
    Ok(DataTable {
        schema: schema.clone(),
        cells,
    })
}
