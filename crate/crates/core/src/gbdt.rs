//! Second-order gradient-boosted regression trees with a softmax objective.
//!
//! Each round computes, for every class `k`, gradients `g = p_k − y_k` and
//! hessians `h = p_k(1 − p_k)` at the current margins and fits one tree per
//! class. Trees grow best-first: the leaf whose best exact split has the
//! largest gain
//!
//! ```text
//! gain = ½ [ G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ) ]
//! ```
//!
//! is expanded next, until `max_leaves` is reached or no leaf can split.
//! Leaves hold `−G/(H+λ)`; predictions add `shrinkage · leaf` to the margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::FrequencyEncoder;
use crate::nn::{softmax, Matrix};
use crate::preprocess::EncodedFeatures;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub shrinkage: f64,
    pub l2_reg: f64,
    pub min_child_hessian: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_depth: 8,
            max_leaves: 100,
            shrinkage: 0.1,
            l2_reg: 1.0,
            min_child_hessian: 1e-3,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.max_leaves < 2 {
            return Err(Error::Config("max_depth must be ≥ 1 and max_leaves ≥ 2".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.shrinkage) || !positive(self.l2_reg) || !positive(self.min_child_hessian) {
            return Err(Error::Config(
                "shrinkage, l2_reg and min_child_hessian must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Root at index 0.
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// How encoded features are laid out as a dense matrix for the trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureView {
    /// Standardized numerics followed by padded token indices as ordinals.
    NumericAndTokens,
    /// Standardized numerics followed by whole-value category ids.
    NumericAndCategories,
    /// Standardized numerics followed by training-split category frequencies.
    NumericAndFrequency(FrequencyEncoder),
}

impl FeatureView {
    pub fn build(&self, x: &EncodedFeatures) -> Result<Matrix> {
        let ordinals = |m: &crate::nn::IndexMatrix| {
            Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&v| v as f64).collect())
        };
        let extra = match self {
            FeatureView::NumericAndTokens => ordinals(&x.tokens)?,
            FeatureView::NumericAndCategories => ordinals(&x.categories)?,
            FeatureView::NumericAndFrequency(enc) => enc.encode(&x.categories)?,
        };
        x.numeric.hstack(&extra)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    /// `trees[round][class]`
    pub trees: Vec<Vec<RegressionTree>>,
    pub base_score: f64,
    pub feature_count: usize,
    pub num_classes: usize,
    pub feature_view: FeatureView,
    /// Mean training log-loss after each round.
    pub train_log_loss: Vec<f64>,
    pub preprocess_fingerprint: String,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Number of rows going left.
    left_rows: usize,
}

struct Grower<'a> {
    config: &'a GbdtConfig,
    features: &'a Matrix,
    grad: &'a [f64],
    hess: &'a [f64],
}

struct OpenLeaf {
    node: usize,
    depth: usize,
    /// Row indices of this leaf sorted by each feature.
    sorted: Vec<Vec<usize>>,
    candidate: Option<Candidate>,
}

impl Grower<'_> {
    fn leaf_weight(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        -g / (h + self.config.l2_reg)
    }

    /// Best exact split over all features; ties keep the lowest feature,
    /// then the lowest threshold.
    fn best_split(&self, sorted: &[Vec<usize>]) -> Option<Candidate> {
        let lambda = self.config.l2_reg;
        let rows = sorted.first()?;
        let g_total: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h_total: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let parent = g_total * g_total / (h_total + lambda);
        let mut best: Option<Candidate> = None;
        for (feature, order) in sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for i in 0..order.len() - 1 {
                let r = order[i];
                gl += self.grad[r];
                hl += self.hess[r];
                let here = self.features.get(r, feature);
                let next = self.features.get(order[i + 1], feature);
                if here == next {
                    continue;
                }
                let hr = h_total - hl;
                if hl < self.config.min_child_hessian || hr < self.config.min_child_hessian {
                    continue;
                }
                let gr = g_total - gl;
                let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(Candidate {
                        feature,
                        threshold,
                        gain,
                        left_rows: i + 1,
                    });
                }
            }
        }
        best
    }

    fn open(&self, node: usize, depth: usize, sorted: Vec<Vec<usize>>) -> OpenLeaf {
        let candidate = if depth < self.config.max_depth {
            self.best_split(&sorted)
        } else {
            None
        };
        OpenLeaf {
            node,
            depth,
            sorted,
            candidate,
        }
    }

    /// Grows one tree over `rows_sorted` (all rows, presorted per feature).
    /// Returns the tree and, for each row, the leaf node it ends in.
    fn grow(&self, rows_sorted: Vec<Vec<usize>>) -> (RegressionTree, Vec<usize>) {
        let n = self.features.rows();
        let all_rows = rows_sorted.first().cloned().unwrap_or_default();
        let mut nodes = vec![TreeNode::Leaf {
            weight: self.leaf_weight(&all_rows),
        }];
        let mut leaf_of = vec![0usize; n];
        let mut open = vec![self.open(0, 0, rows_sorted)];
        let mut leaves = 1;
        let mut side = vec![false; n];

        while leaves < self.config.max_leaves {
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.candidate.as_ref().map(|c| (i, c.gain, l.node)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
            let Some((idx, _, _)) = pick else { break };
            let leaf = open.swap_remove(idx);
            let cand = leaf.candidate.expect("picked leaf has a split");

            for &r in &leaf.sorted[cand.feature][..cand.left_rows] {
                side[r] = true;
            }
            let mut left_sorted = Vec::with_capacity(leaf.sorted.len());
            let mut right_sorted = Vec::with_capacity(leaf.sorted.len());
            for order in &leaf.sorted {
                let (l, r): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&row| side[row]);
                left_sorted.push(l);
                right_sorted.push(r);
            }
            for &r in &leaf.sorted[cand.feature][..cand.left_rows] {
                side[r] = false;
            }

            let left = nodes.len();
            let right = left + 1;
            nodes.push(TreeNode::Leaf {
                weight: self.leaf_weight(&left_sorted[0]),
            });
            nodes.push(TreeNode::Leaf {
                weight: self.leaf_weight(&right_sorted[0]),
            });
            nodes[leaf.node] = TreeNode::Split {
                feature: cand.feature,
                threshold: cand.threshold,
                left,
                right,
                gain: cand.gain,
            };
            for &r in &left_sorted[0] {
                leaf_of[r] = left;
            }
            for &r in &right_sorted[0] {
                leaf_of[r] = right;
            }
            open.push(self.open(left, leaf.depth + 1, left_sorted));
            open.push(self.open(right, leaf.depth + 1, right_sorted));
            leaves += 1;
        }
        (RegressionTree { nodes }, leaf_of)
    }
}

fn mean_log_loss(margins: &Matrix, labels: &[usize]) -> f64 {
    let p = softmax(margins);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -p.get(i, y).max(f64::MIN_POSITIVE).ln())
        .sum();
    total / labels.len() as f64
}

impl GbdtModel {
    /// Fits `config.rounds` rounds of K trees on a dense feature matrix.
    pub fn fit(
        features: &Matrix,
        labels: &[usize],
        num_classes: usize,
        config: &GbdtConfig,
        feature_view: FeatureView,
    ) -> Result<Self> {
        config.validate()?;
        let (n, f) = features.shape();
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if n < 2 {
            return Err(Error::Config("boosting needs at least two rows".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                limit: num_classes,
            });
        }
        let mut present = vec![false; num_classes];
        labels.iter().for_each(|&l| present[l] = true);
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(Error::Config("boosting needs at least two classes present".into()));
        }

        let presorted: Vec<Vec<usize>> = (0..f)
            .map(|j| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| features.get(a, j).total_cmp(&features.get(b, j)).then(a.cmp(&b)));
                idx
            })
            .collect();
        // A zero-feature matrix still needs a row list to compute leaf weights.
        let root_sorted = if f == 0 { vec![(0..n).collect()] } else { presorted };

        let base_score = 0.0;
        let mut margins = Matrix::zeros(n, num_classes);
        margins.fill(base_score);
        let mut trees = Vec::with_capacity(config.rounds);
        let mut train_log_loss = Vec::with_capacity(config.rounds);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];

        for _ in 0..config.rounds {
            let p = softmax(&margins);
            let mut round = Vec::with_capacity(num_classes);
            let mut updates = Vec::with_capacity(num_classes);
            for k in 0..num_classes {
                for i in 0..n {
                    let pk = p.get(i, k);
                    grad[i] = pk - if labels[i] == k { 1.0 } else { 0.0 };
                    hess[i] = pk * (1.0 - pk);
                }
                let grower = Grower {
                    config,
                    features,
                    grad: &grad,
                    hess: &hess,
                };
                let sorted = if f == 0 { Vec::new() } else { root_sorted.clone() };
                let (tree, leaf_of) = if f == 0 {
                    let w = grower.leaf_weight(&root_sorted[0]);
                    (
                        RegressionTree {
                            nodes: vec![TreeNode::Leaf { weight: w }],
                        },
                        vec![0; n],
                    )
                } else {
                    grower.grow(sorted)
                };
                let delta: Vec<f64> = leaf_of
                    .iter()
                    .map(|&leaf| match tree.nodes[leaf] {
                        TreeNode::Leaf { weight } => config.shrinkage * weight,
                        TreeNode::Split { .. } => unreachable!("rows end in leaves"),
                    })
                    .collect();
                updates.push(delta);
                round.push(tree);
            }
            for (k, delta) in updates.iter().enumerate() {
                for (i, d) in delta.iter().enumerate() {
                    let m = margins.get(i, k);
                    margins.set(i, k, m + d);
                }
            }
            let loss = mean_log_loss(&margins, labels);
            if !loss.is_finite() {
                return Err(Error::Numeric("boosting log-loss is not finite".into()));
            }
            train_log_loss.push(loss);
            trees.push(round);
        }

        Ok(Self {
            config: *config,
            trees,
            base_score,
            feature_count: f,
            num_classes,
            feature_view,
            train_log_loss,
            preprocess_fingerprint: String::new(),
        })
    }

    pub fn fit_encoded(
        x: &EncodedFeatures,
        labels: &[usize],
        num_classes: usize,
        config: &GbdtConfig,
        feature_view: FeatureView,
    ) -> Result<Self> {
        let features = feature_view.build(x)?;
        Self::fit(&features, labels, num_classes, config, feature_view)
    }

    pub fn margins(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_count {
            return Err(Error::Shape(format!(
                "model was trained on {} features, got {}",
                self.feature_count,
                features.cols()
            )));
        }
        let mut margins = Matrix::zeros(features.rows(), self.num_classes);
        for (i, row) in features.iter_rows().enumerate() {
            let out = margins.row_mut(i);
            out.fill(self.base_score);
            for round in &self.trees {
                for (k, tree) in round.iter().enumerate() {
                    out[k] += self.config.shrinkage * tree.predict(row);
                }
            }
        }
        Ok(margins)
    }

    pub fn predict_proba(&self, features: &Matrix) -> Result<Matrix> {
        Ok(softmax(&self.margins(features)?))
    }

    pub fn predict_proba_encoded(&self, x: &EncodedFeatures) -> Result<Matrix> {
        self.predict_proba(&self.feature_view.build(x)?)
    }

    pub fn tree_count(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }
}
