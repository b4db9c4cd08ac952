//! Deterministic train/validation splits and stratified folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PairedSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Shuffled split with `round(n * r)` items in the first part.
    Ratio(f64),
    /// [`SplitMode::Ratio`] applied within each class.
    StratifiedRatio(f64),
    /// `k` folds with per-class counts differing by at most one.
    StratifiedKFold(usize),
}

/// Index sets into the input. Ratio modes yield `[first, second]`; k-fold
/// yields one part per fold. Each part is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub parts: Vec<Vec<usize>>,
}

impl Partition {
    /// Every index outside `parts[i]`, ascending.
    pub fn complement(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .parts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }
}

fn ratio_count(n: usize, r: f64) -> Result<usize> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {r}")));
    }
    Ok(((n as f64 * r).round() as usize).clamp(1, n - 1))
}

fn classes(labels: &[u8]) -> Result<[Vec<usize>; 2]> {
    let mut by = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        match y {
            0 | 1 => by[y as usize].push(i),
            _ => return Err(Error::invalid(format!("label {y} at index {i} is not 0 or 1"))),
        }
    }
    if by[0].is_empty() || by[1].is_empty() {
        return Err(Error::invalid("stratified split needs both classes present"));
    }
    Ok(by)
}

/// Splits indices `0..labels.len()`; `labels` is needed only by the
/// stratified modes.
pub fn split_indices(n: usize, labels: Option<&[u8]>, mode: SplitMode, seed: u64) -> Result<Partition> {
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stratified = || -> Result<[Vec<usize>; 2]> {
        let labels = labels.ok_or_else(|| Error::invalid("stratified split needs labels"))?;
        if labels.len() != n {
            return Err(Error::shape("labels", n, labels.len()));
        }
        classes(labels)
    };
    let mut parts = match mode {
        SplitMode::Ratio(r) => {
            let cut = ratio_count(n, r)?;
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let second = idx.split_off(cut);
            vec![idx, second]
        }
        SplitMode::StratifiedRatio(r) => {
            let mut out = vec![Vec::new(), Vec::new()];
            for mut class in stratified()? {
                if class.len() < 2 {
                    return Err(Error::invalid("stratified ratio split needs >= 2 items per class"));
                }
                let cut = ratio_count(class.len(), r)?;
                class.shuffle(&mut rng);
                out[1].extend_from_slice(&class[cut..]);
                out[0].extend_from_slice(&class[..cut]);
            }
            out
        }
        SplitMode::StratifiedKFold(k) => {
            if k < 2 {
                return Err(Error::invalid("k-fold split needs k >= 2"));
            }
            let mut out = vec![Vec::new(); k];
            // one running counter across classes keeps fold sizes balanced too
            let mut slot = 0;
            for (c, mut class) in stratified()?.into_iter().enumerate() {
                if class.len() < k {
                    return Err(Error::invalid(format!(
                        "class {c} has {} items, fewer than {k} folds",
                        class.len()
                    )));
                }
                class.shuffle(&mut rng);
                for i in class {
                    out[slot % k].push(i);
                    slot += 1;
                }
            }
            out
        }
    };
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(Partition { parts })
}

/// [`split_indices`] over samples, reading labels for the stratified modes.
pub fn split<S>(samples: &[PairedSample<S>], mode: SplitMode, seed: u64) -> Result<Partition> {
    let labels = match mode {
        SplitMode::Ratio(_) => None,
        _ => Some(
            samples
                .iter()
                .map(|s| s.label.ok_or_else(|| Error::invalid(format!("sample {} has no label", s.id))))
                .collect::<Result<Vec<u8>>>()?,
        ),
    };
    split_indices(samples.len(), labels.as_deref(), mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn covers(p: &Partition, n: usize) -> bool {
        let mut all: Vec<usize> = p.parts.concat();
        all.sort_unstable();
        all == (0..n).collect::<Vec<_>>()
    }

    #[test]
    fn ratio_sizes() {
        let p = split_indices(10, None, SplitMode::Ratio(0.9), 0).unwrap();
        assert_eq!((p.parts[0].len(), p.parts[1].len()), (9, 1));
        assert_eq!(p, split_indices(10, None, SplitMode::Ratio(0.9), 0).unwrap());
        assert!(split_indices(1, None, SplitMode::Ratio(0.9), 0).is_err());
    }

    #[test]
    fn balanced_folds() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let p = split_indices(100, Some(&labels), SplitMode::StratifiedKFold(10), 3).unwrap();
        for fold in &p.parts {
            let pos = fold.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((pos, fold.len() - pos), (5, 5));
        }
        assert!(covers(&p, 100));
        assert_eq!(p.complement(0).len(), 90);
    }

    #[test]
    fn impossible_stratification() {
        let labels = vec![0u8; 10];
        assert!(split_indices(10, Some(&labels), SplitMode::StratifiedKFold(2), 0).is_err());
        let mut labels = vec![0u8; 10];
        labels[0] = 1;
        assert!(split_indices(10, Some(&labels), SplitMode::StratifiedKFold(2), 0).is_err());
        assert!(split_indices(10, None, SplitMode::StratifiedKFold(2), 0).is_err());
    }

    proptest! {
        #[test]
        fn partitions_are_exact(
            labels in proptest::collection::vec(0u8..2, 20..120),
            k in 2usize..6,
            r in 0.05f64..0.95,
            seed in 0u64..1000,
        ) {
            let n = labels.len();
            let p = split_indices(n, None, SplitMode::Ratio(r), seed).unwrap();
            prop_assert!(covers(&p, n));
            let pos = labels.iter().filter(|&&y| y == 1).count();
            if pos >= k && n - pos >= k {
                let p = split_indices(n, Some(&labels), SplitMode::StratifiedKFold(k), seed).unwrap();
                prop_assert!(covers(&p, n));
                for c in 0..2u8 {
                    let counts: Vec<usize> = p.parts.iter()
                        .map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
                    prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
                }
            }
            if pos >= 2 && n - pos >= 2 {
                let p = split_indices(n, Some(&labels), SplitMode::StratifiedRatio(r), seed).unwrap();
                prop_assert!(covers(&p, n));
            }
        }
    }
}
