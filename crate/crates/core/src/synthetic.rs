//! Schema-driven synthetic tables with learnable class signal.
//!
//! Every non-target column carries class-dependent structure:
//!
//! * numerical columns draw from a per-class Gaussian whose centre is spread
//!   by `numeric_signal` standard deviations;
//! * categorical columns hold short multi-token phrases. Each token comes from
//!   a small class-specific pool with probability `token_signal`, otherwise
//!   from a pool shared by all classes. Tokens are randomly capitalised and
//!   joined with mixed separators, so the text only becomes informative after
//!   lowercasing and tokenisation.
//!
//! All randomness comes from [`SplitMix64`] streams derived from the seed, so
//! output is identical across runs and platforms.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::schema::{ColumnKind, DataTable, TableSchema};

const SYLLABLES: [&str; 28] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "da", "fe", "go", "hu", "ji", "ke", "la",
    "mo", "nu", "pi", "qua", "re", "so", "tu", "ve", "wy", "xa", "yo", "ze",
];
const SEPARATORS: [&str; 4] = [" ", " ", ", ", "/"];
const CLASS_POOL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub seed: u64,
    /// One positive weight per class; empty means uniform.
    pub class_weights: Vec<f64>,
    pub missing_fraction: f64,
    /// Spread of per-class numeric centres, in within-class standard deviations.
    pub numeric_signal: f64,
    /// Probability that a categorical token comes from the class-specific pool.
    pub token_signal: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 1000,
            seed: 0,
            class_weights: Vec::new(),
            missing_fraction: 0.02,
            numeric_signal: 0.3,
            token_signal: 0.12,
        }
    }
}

/// Splits `total` into parts proportional to `weights` (largest remainder,
/// ties to the lower index), giving every part at least one unit.
pub(crate) fn proportional_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let largest = (0..counts.len())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("non-empty");
        if counts[largest] <= 1 {
            break;
        }
        counts[largest] -= 1;
        counts[empty] += 1;
    }
    counts
}

struct CategoricalPools {
    max_tokens: usize,
    shared: Vec<String>,
    per_class: Vec<Vec<String>>,
}

fn make_word(rng: &mut SplitMix64) -> String {
    let syllables = 2 + rng.below(2);
    (0..syllables)
        .map(|_| SYLLABLES[rng.below(SYLLABLES.len())])
        .collect()
}

fn build_pools(rng: &mut SplitMix64, classes: usize) -> CategoricalPools {
    let max_tokens = 1 + rng.below(4);
    let shared_size = 8 + rng.below(13);
    let mut used = HashSet::new();
    let mut fresh = |rng: &mut SplitMix64| loop {
        let w = make_word(rng);
        if used.insert(w.clone()) {
            return w;
        }
    };
    let shared = (0..shared_size).map(|_| fresh(rng)).collect();
    let per_class = (0..classes)
        .map(|_| (0..CLASS_POOL).map(|_| fresh(rng)).collect())
        .collect();
    CategoricalPools {
        max_tokens,
        shared,
        per_class,
    }
}

fn capitalise(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn generate_synthetic(schema: &TableSchema, spec: &SyntheticSpec) -> Result<DataTable> {
    let k = schema.num_classes();
    let weights = if spec.class_weights.is_empty() {
        vec![1.0; k]
    } else {
        spec.class_weights.clone()
    };
    if weights.len() != k {
        return Err(Error::Config(format!(
            "expected {k} class weights, got {}",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Config(format!("class weights must be positive, got {w}")));
    }
    if spec.rows < k {
        return Err(Error::Config(format!(
            "need at least {k} rows (one per class), got {}",
            spec.rows
        )));
    }
    if !(0.0..1.0).contains(&spec.missing_fraction) {
        return Err(Error::Config(format!(
            "missing fraction must be in [0, 1), got {}",
            spec.missing_fraction
        )));
    }
    if !(0.0..=1.0).contains(&spec.token_signal) || !(spec.numeric_signal >= 0.0) {
        return Err(Error::Config("signal parameters out of range".into()));
    }

    let counts = proportional_counts(spec.rows, &weights);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    SplitMix64::derive(spec.seed, 1).shuffle(&mut labels);

    enum Generator {
        Numeric { base: f64, scale: f64, centres: Vec<f64> },
        Text(CategoricalPools),
        Target,
    }
    let generators: Vec<Generator> = schema
        .columns()
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let mut rng = SplitMix64::derive(spec.seed, 1000 + j as u64);
            if j == schema.target_index() {
                Generator::Target
            } else if col.kind == ColumnKind::Numerical {
                let base = rng.uniform(-50.0, 200.0);
                let scale = rng.uniform(0.5, 20.0);
                let centres = (0..k).map(|_| spec.numeric_signal * rng.normal()).collect();
                Generator::Numeric {
                    base,
                    scale,
                    centres,
                }
            } else {
                Generator::Text(build_pools(&mut rng, k))
            }
        })
        .collect();

    let mut rng = SplitMix64::derive(spec.seed, 2);
    let mut cells = Vec::with_capacity(spec.rows);
    for &class in &labels {
        let row = generators
            .iter()
            .map(|generator| match generator {
                Generator::Target => Some(schema.class_labels()[class].clone()),
                Generator::Numeric {
                    base,
                    scale,
                    centres,
                } => {
                    let value = base + scale * (centres[class] + rng.normal());
                    let missing = rng.bernoulli(spec.missing_fraction);
                    (!missing).then(|| format!("{value:.3}"))
                }
                Generator::Text(pools) => {
                    let n = 1 + rng.below(pools.max_tokens);
                    let mut text = String::new();
                    for t in 0..n {
                        if t > 0 {
                            text.push_str(SEPARATORS[rng.below(SEPARATORS.len())]);
                        }
                        let word = if rng.bernoulli(spec.token_signal) {
                            &pools.per_class[class][rng.below(CLASS_POOL)]
                        } else {
                            &pools.shared[rng.below(pools.shared.len())]
                        };
                        if rng.bernoulli(0.3) {
                            text.push_str(&capitalise(word));
                        } else {
                            text.push_str(word);
                        }
                    }
                    let missing = rng.bernoulli(spec.missing_fraction);
                    (!missing).then_some(text)
                }
            })
            .collect();
        cells.push(row);
    }
    DataTable::new(schema.clone(), cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rows: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            rows,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_table() {
        let schema = TableSchema::emergency_department();
        let a = generate_synthetic(&schema, &spec(1000, 7)).unwrap();
        let b = generate_synthetic(&schema, &spec(1000, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&schema, &spec(1000, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_counts_follow_weights() {
        let schema = TableSchema::new(
            vec![
                crate::schema::ColumnSpec::numerical("x"),
                crate::schema::ColumnSpec::categorical("y"),
            ],
            "y",
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let table = generate_synthetic(
            &schema,
            &SyntheticSpec {
                class_weights: vec![9.0, 1.0],
                ..spec(1000, 1)
            },
        )
        .unwrap();
        let a = table.column(1).filter(|v| *v == Some("a")).count();
        assert_eq!(a, 900);
        assert_eq!(table.row_count() - a, 100);
    }

    #[test]
    fn zero_missing_fraction_has_no_missing_cells() {
        let schema = TableSchema::emergency_department();
        let table = generate_synthetic(
            &schema,
            &SyntheticSpec {
                missing_fraction: 0.0,
                ..spec(300, 3)
            },
        )
        .unwrap();
        for c in 0..schema.columns().len() {
            assert_eq!(table.missing_count(c), 0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let schema = TableSchema::emergency_department();
        assert!(generate_synthetic(&schema, &spec(5, 0)).is_err());
        let bad = SyntheticSpec {
            class_weights: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
            ..spec(100, 0)
        };
        assert!(generate_synthetic(&schema, &bad).is_err());
        let short = SyntheticSpec {
            class_weights: vec![1.0, 2.0],
            ..spec(100, 0)
        };
        assert!(generate_synthetic(&schema, &short).is_err());
    }

    #[test]
    fn every_class_present_even_when_rare() {
        let counts = proportional_counts(10, &[100.0, 1.0, 1.0]);
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert!(counts.iter().all(|&c| c >= 1));
        assert_eq!(proportional_counts(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
    }
}
