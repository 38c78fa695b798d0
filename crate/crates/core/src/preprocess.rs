//! Fitted preprocessing: mean/mode imputation, z-scoring, lowercase
//! tokenisation, per-column vocabularies with padding, and the whole-value
//! category dictionaries used for frequency encoding.
//!
//! Token index layout across the concatenated token matrix:
//!
//! | global index | meaning |
//! |---|---|
//! | 0 | padding |
//! | 1 | unknown token |
//! | `offset_j + (i - 2)` | local index `i ≥ 2` of categorical column `j` |
//!
//! where `offset_0 = 2` and each column's range follows the previous one, so
//! one embedding table serves every column without collisions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{IndexMatrix, Matrix};
use crate::schema::{ColumnKind, ColumnSpec, DataTable};

pub const PAD_INDEX: usize = 0;
pub const UNKNOWN_INDEX: usize = 1;
const FIRST_TOKEN_INDEX: usize = 2;
const STATE_FORMAT_VERSION: u32 = 1;

/// Lowercases, then splits on every run of characters that are neither
/// letters nor digits.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Case- and separator-insensitive form of a categorical value.
fn canonical(raw: &str) -> String {
    tokenize(raw).join(" ")
}

fn parse_numeric(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation; 0 marks a constant column.
    pub std: Vec<f64>,
}

impl NumericStats {
    pub fn is_constant(&self, j: usize) -> bool {
        self.std[j] == 0.0
    }

    pub fn standardize(&self, j: usize, value: f64) -> f64 {
        if self.is_constant(j) {
            0.0
        } else {
            (value - self.mean[j]) / self.std[j]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnVocabulary {
    pub column: String,
    /// Lowercase token → local index (≥ 2).
    pub token_to_index: BTreeMap<String, usize>,
    pub pad_length: usize,
    pub mode_value: String,
    /// Global index of this column's local index 2.
    pub offset: usize,
    /// Canonical whole value → category id (≥ 1); 0 means unseen.
    pub categories: BTreeMap<String, usize>,
}

impl ColumnVocabulary {
    pub fn len(&self) -> usize {
        self.token_to_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_to_index.is_empty()
    }

    /// Local index for one token (unknown → 1).
    pub fn local_index(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(UNKNOWN_INDEX)
    }

    /// Maps a local index into the shared global range.
    pub fn global_index(&self, local: usize) -> usize {
        if local < FIRST_TOKEN_INDEX {
            local
        } else {
            self.offset + (local - FIRST_TOKEN_INDEX)
        }
    }

    /// Encodes one raw cell to exactly `pad_length` global indices:
    /// right-padded with 0, truncated to the first `pad_length` tokens.
    pub fn encode(&self, raw: &str) -> Vec<usize> {
        let mut out: Vec<usize> = tokenize(raw)
            .iter()
            .take(self.pad_length)
            .map(|t| self.global_index(self.local_index(t)))
            .collect();
        out.resize(self.pad_length, PAD_INDEX);
        out
    }

    pub fn category_id(&self, raw: &str) -> usize {
        self.categories.get(&canonical(raw)).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub format_version: u32,
    /// Full column layout the state was fitted on.
    pub columns: Vec<ColumnSpec>,
    pub target: String,
    pub numeric_stats: NumericStats,
    pub vocabularies: Vec<ColumnVocabulary>,
    pub total_padded_width: usize,
    /// Class labels in index order.
    pub label_map: Vec<String>,
}

impl PreprocessState {
    pub fn numeric_width(&self) -> usize {
        self.numeric_stats.columns.len()
    }

    pub fn categorical_width(&self) -> usize {
        self.vocabularies.len()
    }

    /// Size of the shared token index space, pad and unknown included.
    pub fn token_vocab_size(&self) -> usize {
        FIRST_TOKEN_INDEX + self.vocabularies.iter().map(ColumnVocabulary::len).sum::<usize>()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_map.iter().position(|l| l == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: PreprocessState =
            serde_json::from_str(text).map_err(|e| Error::json("preprocess state", e))?;
        if state.format_version != STATE_FORMAT_VERSION {
            return Err(Error::Bundle(format!(
                "preprocess state format {} is not supported (expected {STATE_FORMAT_VERSION})",
                state.format_version
            )));
        }
        Ok(state)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_table(&self, table: &DataTable) -> Result<()> {
        let schema = table.schema();
        if schema.columns() == self.columns.as_slice()
            && schema.target() == self.target
            && schema.class_labels() == self.label_map.as_slice()
        {
            return Ok(());
        }
        let fitted: BTreeSet<String> = self
            .columns
            .iter()
            .map(|c| format!("{}:{:?}", c.name, c.kind))
            .collect();
        let given: BTreeSet<String> = schema
            .columns()
            .iter()
            .map(|c| format!("{}:{:?}", c.name, c.kind))
            .collect();
        let missing: Vec<String> = fitted.difference(&given).cloned().collect();
        let extra: Vec<String> = given.difference(&fitted).cloned().collect();
        Err(Error::Schema(format!(
            "table does not match the fitted layout (missing [{}], unexpected [{}], target {:?} vs {:?}, labels differ: {})",
            missing.join(", "),
            extra.join(", "),
            schema.target(),
            self.target,
            schema.class_labels() != self.label_map.as_slice()
        )))
    }
}

/// Features only; used for unlabelled prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures {
    /// B × N standardized numerics.
    pub numeric: Matrix,
    /// B × S padded global token indices.
    pub tokens: IndexMatrix,
    /// B × C whole-value category ids (0 = unseen).
    pub categories: IndexMatrix,
}

impl EncodedFeatures {
    pub fn len(&self) -> usize {
        self.numeric.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> EncodedFeatures {
        EncodedFeatures {
            numeric: self.numeric.select_rows(indices),
            tokens: self.tokens.select_rows(indices),
            categories: self.categories.select_rows(indices),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub features: EncodedFeatures,
    pub labels: Vec<usize>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> EncodedDataset {
        EncodedDataset {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Parsed numeric cell; non-numeric text counts as missing and is logged.
fn numeric_cell(raw: Option<&str>, column: &str, row: usize) -> Option<f64> {
    let raw = raw?;
    let parsed = parse_numeric(raw);
    if parsed.is_none() {
        log::warn!("column {column:?} row {}: {raw:?} is not numeric, treating as missing", row + 1);
    }
    parsed
}

pub fn fit(table: &DataTable) -> Result<PreprocessState> {
    let schema = table.schema();
    let numeric_cols = schema.feature_indices(ColumnKind::Numerical);
    let categorical_cols = schema.feature_indices(ColumnKind::Categorical);

    let mut stats = NumericStats {
        columns: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for &c in &numeric_cols {
        let name = &schema.columns()[c].name;
        let values: Vec<f64> = table
            .column(c)
            .enumerate()
            .filter_map(|(r, v)| numeric_cell(v, name, r))
            .collect();
        if values.is_empty() {
            return Err(Error::AllMissing {
                column: name.clone(),
            });
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let constant = values.iter().all(|&v| v == values[0]);
        // Spread of the mean-imputed column: missing rows add zero deviation.
        let std = if constant {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / table.row_count() as f64).sqrt()
        };
        stats.columns.push(name.clone());
        stats.mean.push(mean);
        stats.std.push(std);
    }

    let mut vocabularies = Vec::with_capacity(categorical_cols.len());
    let mut offset = FIRST_TOKEN_INDEX;
    for &c in &categorical_cols {
        let name = &schema.columns()[c].name;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut tokens = BTreeSet::new();
        let mut canon = BTreeSet::new();
        let mut pad_length = 1;
        for raw in table.column(c).flatten() {
            *counts.entry(raw).or_default() += 1;
            let toks = tokenize(raw);
            pad_length = pad_length.max(toks.len());
            canon.insert(toks.join(" "));
            tokens.extend(toks);
        }
        // max_by_key keeps the last maximum; reverse order makes ties
        // resolve to the smallest value.
        let mode_value = counts
            .iter()
            .rev()
            .max_by_key(|(_, &n)| n)
            .map(|(v, _)| v.to_string())
            .ok_or_else(|| Error::AllMissing {
                column: name.clone(),
            })?;
        let token_to_index: BTreeMap<String, usize> = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i + FIRST_TOKEN_INDEX))
            .collect();
        let categories = canon.into_iter().enumerate().map(|(i, v)| (v, i + 1)).collect();
        let vocab = ColumnVocabulary {
            column: name.clone(),
            pad_length,
            mode_value,
            offset,
            categories,
            token_to_index,
        };
        offset += vocab.len();
        vocabularies.push(vocab);
    }

    let total_padded_width = vocabularies.iter().map(|v| v.pad_length).sum();
    Ok(PreprocessState {
        format_version: STATE_FORMAT_VERSION,
        columns: schema.columns().to_vec(),
        target: schema.target().to_string(),
        numeric_stats: stats,
        vocabularies,
        total_padded_width,
        label_map: schema.class_labels().to_vec(),
    })
}

pub fn transform_features(table: &DataTable, state: &PreprocessState) -> Result<EncodedFeatures> {
    state.check_table(table)?;
    let schema = table.schema();
    let numeric_cols = schema.feature_indices(ColumnKind::Numerical);
    let categorical_cols = schema.feature_indices(ColumnKind::Categorical);
    let rows = table.row_count();
    let stats = &state.numeric_stats;

    let mut numeric = Vec::with_capacity(rows * numeric_cols.len());
    let mut tokens = Vec::with_capacity(rows * state.total_padded_width);
    let mut categories = Vec::with_capacity(rows * categorical_cols.len());
    for r in 0..rows {
        for (j, &c) in numeric_cols.iter().enumerate() {
            let value = numeric_cell(table.cell(r, c), &stats.columns[j], r).unwrap_or(stats.mean[j]);
            numeric.push(stats.standardize(j, value));
        }
        for (vocab, &c) in state.vocabularies.iter().zip(&categorical_cols) {
            let raw = table.cell(r, c).unwrap_or(&vocab.mode_value);
            tokens.extend(vocab.encode(raw));
            categories.push(vocab.category_id(raw));
        }
    }
    Ok(EncodedFeatures {
        numeric: Matrix::from_vec(rows, numeric_cols.len(), numeric)?,
        tokens: IndexMatrix::new(rows, state.total_padded_width, tokens)?,
        categories: IndexMatrix::new(rows, categorical_cols.len(), categories)?,
    })
}

/// Encodes features and labels; every row must carry a target value.
pub fn transform(table: &DataTable, state: &PreprocessState) -> Result<EncodedDataset> {
    let features = transform_features(table, state)?;
    let target = table.schema().target_index();
    let labels = table
        .column(target)
        .enumerate()
        .map(|(r, v)| {
            let label = v.ok_or(Error::MissingLabel { row: r + 1 })?;
            state.label_index(label).ok_or_else(|| Error::InvalidLabel {
                row: r + 1,
                value: label.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedDataset { features, labels })
}
