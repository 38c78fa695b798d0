//! Soft voting over member class probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::GbdtModel;
use crate::models::{BaselineMlp, EfNetModel, NeuralClassifier};
use crate::nn::Matrix;
use crate::preprocess::EncodedFeatures;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteWeights {
    #[default]
    Uniform,
    /// Non-negative; normalized to sum to 1 before use.
    Custom(Vec<f64>),
}

impl VoteWeights {
    /// Normalized weights for `members` members, or `None` for uniform.
    pub fn normalized(&self, members: usize) -> Result<Option<Vec<f64>>> {
        match self {
            VoteWeights::Uniform => Ok(None),
            VoteWeights::Custom(w) => {
                if w.len() != members {
                    return Err(Error::Shape(format!("{} weights for {members} members", w.len())));
                }
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::Config("vote weights must be finite and non-negative".into()));
                }
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    return Err(Error::Config("vote weights must not all be zero".into()));
                }
                Ok(Some(w.iter().map(|v| v / total).collect()))
            }
        }
    }
}

/// Weighted average of member probability matrices. Uniform weights compute
/// `(Σ_m p_m) / M`.
pub fn soft_vote(members: &[Matrix], weights: &VoteWeights) -> Result<Matrix> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("soft vote needs at least one member".into()))?;
    let shape = first.shape();
    for (m, p) in members.iter().enumerate() {
        if p.shape() != shape {
            return Err(Error::Shape(format!(
                "member {m} has shape {:?}, expected {shape:?}",
                p.shape()
            )));
        }
        for (r, row) in p.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Numeric(format!("member {m} row {r} sums to {sum}")));
            }
        }
    }
    let normalized = weights.normalized(members.len())?;
    let mut out = Matrix::zeros(shape.0, shape.1);
    let acc = out.as_mut_slice();
    match normalized {
        None => {
            for p in members {
                acc.iter_mut().zip(p.as_slice()).for_each(|(a, v)| *a += v);
            }
            let m = members.len() as f64;
            acc.iter_mut().for_each(|a| *a /= m);
        }
        Some(w) => {
            for (p, wm) in members.iter().zip(&w) {
                acc.iter_mut().zip(p.as_slice()).for_each(|(a, v)| *a += wm * v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Member {
    Efnet(EfNetModel),
    Baseline(BaselineMlp),
    Gbdt(GbdtModel),
}

impl Member {
    pub fn name(&self) -> &'static str {
        match self {
            Member::Efnet(_) => "efnet",
            Member::Baseline(_) => "baseline",
            Member::Gbdt(_) => "gbdt",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Member::Efnet(m) => m.num_classes,
            Member::Baseline(m) => m.num_classes,
            Member::Gbdt(m) => m.num_classes,
        }
    }

    pub fn preprocess_fingerprint(&self) -> &str {
        match self {
            Member::Efnet(m) => &m.preprocess_fingerprint,
            Member::Baseline(m) => &m.preprocess_fingerprint,
            Member::Gbdt(m) => &m.preprocess_fingerprint,
        }
    }

    pub fn predict_proba(&self, x: &EncodedFeatures) -> Result<Matrix> {
        match self {
            Member::Efnet(m) => m.predict_proba(x),
            Member::Baseline(m) => m.predict_proba(x),
            Member::Gbdt(m) => m.predict_proba_encoded(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<Member>,
    pub weights: VoteWeights,
}

impl EnsembleModel {
    pub fn new(members: Vec<Member>, weights: VoteWeights) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
        if members.iter().any(|m| m.num_classes() != first.num_classes()) {
            return Err(Error::Config("ensemble members disagree on class count".into()));
        }
        weights.normalized(members.len())?;
        Ok(Self { members, weights })
    }

    pub fn single(member: Member) -> Self {
        Self {
            members: vec![member],
            weights: VoteWeights::Uniform,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    pub fn member_probabilities(&self, x: &EncodedFeatures) -> Result<Vec<Matrix>> {
        self.members.iter().map(|m| m.predict_proba(x)).collect()
    }

    pub fn predict_proba(&self, x: &EncodedFeatures) -> Result<Matrix> {
        soft_vote(&self.member_probabilities(x)?, &self.weights)
    }
}
