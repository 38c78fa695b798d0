//! Versioned on-disk model bundle: schema, fitted preprocessing, member
//! parameters, vote weights and the run configuration that produced them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleModel, Member, VoteWeights};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::pipeline::RunConfig;
use crate::preprocess::{transform_features, PreprocessState};
use crate::schema::{DataTable, TableSchema};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Bundle format versions this build can read.
pub const COMPATIBLE_BUNDLE_VERSIONS: &[u32] = &[1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub toolkit_version: String,
    pub schema: TableSchema,
    pub preprocess: PreprocessState,
    pub preprocess_fingerprint: String,
    pub model: EnsembleModel,
    pub run_config: RunConfig,
}

impl ModelBundle {
    pub fn new(
        schema: TableSchema,
        preprocess: PreprocessState,
        model: EnsembleModel,
        run_config: RunConfig,
    ) -> Result<Self> {
        let bundle = Self {
            format_version: BUNDLE_FORMAT_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            preprocess_fingerprint: preprocess.fingerprint(),
            schema,
            preprocess,
            model,
            run_config,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if !COMPATIBLE_BUNDLE_VERSIONS.contains(&self.format_version) {
            return Err(Error::Bundle(format!(
                "bundle format {} is not supported (readable: {COMPATIBLE_BUNDLE_VERSIONS:?})",
                self.format_version
            )));
        }
        let actual = self.preprocess.fingerprint();
        if actual != self.preprocess_fingerprint {
            return Err(Error::Bundle(
                "preprocess state does not match its recorded fingerprint".into(),
            ));
        }
        for (i, member) in self.model.members.iter().enumerate() {
            if member.preprocess_fingerprint() != actual {
                return Err(Error::Bundle(format!(
                    "member {i} ({}) was trained with a different preprocess state",
                    member.name()
                )));
            }
            if member.num_classes() != self.preprocess.num_classes() {
                return Err(Error::Bundle(format!(
                    "member {i} ({}) predicts {} classes, preprocess state has {}",
                    member.name(),
                    member.num_classes(),
                    self.preprocess.num_classes()
                )));
            }
        }
        if self.schema.columns() != self.preprocess.columns.as_slice() {
            return Err(Error::Bundle("schema and preprocess state disagree on columns".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::json("bundle header", e))?;
        if !COMPATIBLE_BUNDLE_VERSIONS.contains(&header.format_version) {
            return Err(Error::Bundle(format!(
                "bundle format {} is not supported (readable: {COMPATIBLE_BUNDLE_VERSIONS:?})",
                header.format_version
            )));
        }
        let bundle: Self = serde_json::from_str(text).map_err(|e| Error::json("bundle", e))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn predict_proba(&self, table: &DataTable) -> Result<Matrix> {
        let x = transform_features(table, &self.preprocess)?;
        self.model.predict_proba(&x)
    }

    /// Human-readable metadata for `inspect`.
    pub fn summary(&self) -> String {
        let p = &self.preprocess;
        let mut out = String::new();
        let _ = writeln!(out, "bundle format     {}", self.format_version);
        let _ = writeln!(out, "toolkit version   {}", self.toolkit_version);
        let _ = writeln!(out, "model             {}", self.run_config.model.as_str());
        let members: Vec<&str> = self.model.members.iter().map(Member::name).collect();
        let _ = writeln!(out, "members           {}", members.join(", "));
        let weights = match &self.model.weights {
            VoteWeights::Uniform => "uniform".to_string(),
            VoteWeights::Custom(w) => format!("{w:?}"),
        };
        let _ = writeln!(out, "vote weights      {weights}");
        let _ = writeln!(out, "target            {}", p.target);
        let _ = writeln!(out, "classes           {}", p.label_map.join(", "));
        let _ = writeln!(out, "numeric columns   {}", p.numeric_width());
        let _ = writeln!(out, "categorical cols  {}", p.categorical_width());
        let _ = writeln!(out, "token vocabulary  {}", p.token_vocab_size());
        let _ = writeln!(out, "token width       {}", p.total_padded_width);
        for v in &p.vocabularies {
            let _ = writeln!(out, "  {:<28} tokens {:>5}  pad_length {}", v.column, v.len(), v.pad_length);
        }
        let _ = writeln!(out, "seed              {}", self.run_config.seed);
        let _ = writeln!(out, "fingerprint       {}", self.preprocess_fingerprint);
        out
    }
}
