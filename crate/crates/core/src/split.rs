//! Stratified train/validation/test partitioning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::EncodedDataset;
use crate::rng::SplitMix64;

/// Stream tag for the split shuffle, kept apart from model seeds.
const SPLIT_STREAM: u64 = 0x5917;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {parts:?}")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Row indices of each part, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-part counts for a class of size `n`: floor of the exact share, then
/// leftover units to the largest remainders (ties to the earlier part), then
/// any empty part borrows one from the largest.
pub(crate) fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Index-level stratified split over `labels` (classes `0..num_classes`).
///
/// Each class is shuffled with a seeded stream and cut by [`allocate`], so
/// per-class counts are within one sample of the requested share whenever
/// every share is at least one sample.
pub fn stratified_split_indices(
    labels: &[usize],
    num_classes: usize,
    fractions: SplitFractions,
    seed: u64,
    class_names: Option<&[String]>,
) -> Result<SplitIndices> {
    fractions.validate()?;
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: l,
                limit: num_classes,
            });
        }
        by_class[l].push(i);
    }
    let mut rng = SplitMix64::derive(seed, SPLIT_STREAM);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            let class = class_names
                .and_then(|names| names.get(class).cloned())
                .unwrap_or_else(|| class.to_string());
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                required: 3,
            });
        }
        rng.shuffle(&mut members);
        let [n_train, n_val, _] = allocate(members.len(), fractions.as_array());
        out.train.extend_from_slice(&members[..n_train]);
        out.val.extend_from_slice(&members[n_train..n_train + n_val]);
        out.test.extend_from_slice(&members[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn stratified_split(
    data: &EncodedDataset,
    num_classes: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(EncodedDataset, EncodedDataset, EncodedDataset)> {
    let idx = stratified_split_indices(&data.labels, num_classes, fractions, seed, None)?;
    Ok((data.select(&idx.train), data.select(&idx.val), data.select(&idx.test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(labels: &[usize], idx: &[usize], k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &i in idx {
            c[labels[i]] += 1;
        }
        c
    }

    #[test]
    fn sixty_forty_example() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 60)).collect();
        let s = stratified_split_indices(&labels, 2, SplitFractions::default(), 1, None).unwrap();
        assert_eq!(counts(&labels, &s.train, 2), vec![48, 32]);
        assert_eq!(counts(&labels, &s.val, 2), vec![6, 4]);
        assert_eq!(counts(&labels, &s.test, 2), vec![6, 4]);
    }

    #[test]
    fn single_class_degenerates_to_plain_split() {
        let labels = vec![0; 100];
        let s = stratified_split_indices(&labels, 1, SplitFractions::default(), 5, None).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn deterministic_and_partitioning() {
        let labels: Vec<usize> = (0..57).map(|i| i % 3).collect();
        let a = stratified_split_indices(&labels, 3, SplitFractions::default(), 9, None).unwrap();
        let b = stratified_split_indices(&labels, 3, SplitFractions::default(), 9, None).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
        let c = stratified_split_indices(&labels, 3, SplitFractions::default(), 10, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let labels = vec![0, 0, 0, 0, 1, 1];
        let names = vec!["home".to_string(), "expired".to_string()];
        let err = stratified_split_indices(&labels, 2, SplitFractions::default(), 0, Some(&names)).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { ref class, count: 2, .. } if class == "expired"));
    }

    #[test]
    fn three_members_land_in_every_part() {
        assert_eq!(allocate(3, [0.8, 0.1, 0.1]), [1, 1, 1]);
        assert_eq!(allocate(4, [0.8, 0.1, 0.1]), [2, 1, 1]);
    }

    #[test]
    fn bad_fractions() {
        assert!(SplitFractions::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitFractions::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitFractions::new(0.7, 0.15, 0.15).is_ok());
    }
}
