use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks (Mann-Whitney U).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("labels", scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("label {y} is not 0 or 1")));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, kept integral so ties stay exact
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average (i + j + 2) / 2
        let twice_avg = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_avg * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Fraction of items where `logit > threshold` agrees with the label.
pub fn accuracy(logits: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    if logits.len() != labels.len() {
        return Err(Error::shape("labels", logits.len(), labels.len()));
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(&l, &y)| u8::from(l > threshold) == y)
        .count();
    Ok(hits as f64 / logits.len() as f64)
}

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// From a mean and a row-major covariance, which must be symmetric to
    /// within 1e-10.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("feature statistics need at least one dimension"));
        }
        if cov.len() != d * d {
            return Err(Error::shape("covariance entries", d * d, cov.len()));
        }
        let cov = DMatrix::from_row_slice(d, d, &cov);
        if (&cov - cov.transpose()).amax() > 1e-10 {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        Ok(Self { mean: DVector::from_vec(mean), cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("feature statistics need at least 2 vectors"));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::invalid("feature vectors are empty"));
    }
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::shape("feature dimension", d, f.len()));
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    Ok(GaussianStats { mean, cov })
}

/// Symmetric PSD square root with eigenvalues below zero clamped.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The cross term uses `Tr (A^(1/2) B A^(1/2))^(1/2)`, which equals
/// `Tr (A B)^(1/2)` and only needs symmetric eigendecompositions.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("feature dimension", a.dim(), b.dim()));
    }
    let dm = (&a.mean - &b.mean).norm_squared();
    let ra = sqrt_psd(&a.cov);
    let cross = sqrt_psd(&(&ra * &b.cov * &ra)).trace();
    let d = dm + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if d < -1e-6 {
        return Err(Error::Numeric(format!("negative Frechet distance {d}")));
    }
    Ok(d.max(0.0))
}

/// Welch's unequal-variance t-test; returns `(t, two-sided p)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let moments = |x: &[f64], name: &str| -> Result<(f64, f64, f64)> {
        if x.len() < 2 {
            return Err(Error::invalid(format!("sample {name} needs at least 2 values")));
        }
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        Ok((n, m, v))
    };
    let (na, ma, va) = moments(a, "a")?;
    let (nb, mb, vb) = moments(b, "b")?;
    let (sa, sb) = (va / na, vb / nb);
    if sa + sb <= 0.0 {
        if ma == mb {
            return Ok((0.0, 1.0));
        }
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok((t, p))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 0, 0]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[1.0, 1.0], &[0, 1]).unwrap(), 0.5);
        assert!(auroc(&[1.0, 2.0], &[1, 1]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1.0, -1.0], &[1, 0], 0.0).unwrap(), 1.0);
        assert_eq!(accuracy(&[1.0, -1.0], &[0, 1], 0.0).unwrap(), 0.0);
        assert_eq!(accuracy(&[1.0, -1.0, 2.0, 0.0], &[1, 0, 1, 1], 0.0).unwrap(), 0.75);
    }

    #[test]
    fn stats_and_frechet_examples() {
        let s = gaussian_stats(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!((s.mean[0], s.cov[(0, 0)]), (1.0, 2.0));
        let c = gaussian_stats(&vec![vec![3.0, 1.0]; 5]).unwrap();
        assert!(c.cov.iter().all(|&v| v == 0.0));
        assert_eq!(c.dim(), 2);
        assert!(gaussian_stats(&[vec![1.0]]).is_err());

        let g = |m: f64, v: f64| GaussianStats { mean: DVector::from_element(1, m), cov: DMatrix::from_element(1, 1, v) };
        assert!((frechet_distance(&g(0.0, 1.0), &g(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&g(0.0, 1.0), &g(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        let x = gaussian_stats(&[vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, -1.0]]).unwrap();
        assert!(frechet_distance(&x, &x).unwrap().abs() < 1e-8);
        assert!(frechet_distance(&x, &g(0.0, 1.0)).is_err());
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let (t, p) = welch_t_test(&a, &a).unwrap();
        assert_eq!((t, p), (0.0, 1.0));
        let (t, p) = welch_t_test(&[0.0, 0.0, 1.0, 1.0], &[10.0, 10.0, 11.0, 11.0]).unwrap();
        // t = -10 / sqrt(1/6), df = 6
        assert!((t + 24.494897427831781).abs() < 1e-9);
        assert!((p - 3.044423064042542e-07).abs() < 1e-10, "{p}");
        let (t2, p2) = welch_t_test(&[10.0, 10.0, 11.0, 11.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!((t2, p2), (-t, p));
        // reference value from an independent Welch implementation
        let (t, p) = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]).unwrap();
        assert!((t + 2.3763541031440183).abs() < 1e-9, "{t}");
        assert!((p - 0.04928433820673049).abs() < 1e-6, "{p}");
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn auroc_matches_brute_force(
            pairs in proptest::collection::vec((0u8..6, 0u8..2), 2..50),
            shift in -3.0f64..3.0,
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 2.0).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let a = auroc(&scores, &labels).unwrap();
            prop_assert_eq!(a, brute_auroc(&scores, &labels));
            // strictly increasing transform
            let moved: Vec<f64> = scores.iter().map(|s| (s + shift).exp()).collect();
            prop_assert_eq!(auroc(&moved, &labels).unwrap(), a);
        }

        #[test]
        fn auroc_complement(scores in proptest::collection::btree_set(-1000i32..1000, 2..40), seed in 0u64..100) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let labels: Vec<u8> = (0..scores.len()).map(|i| ((i as u64 * 7 + seed) % 3 == 0) as u8).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
            let s = auroc(&scores, &labels).unwrap() + auroc(&scores, &flipped).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn frechet_symmetric(v in proptest::collection::vec(-3.0f64..3.0, 12), w in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let a = gaussian_stats(&v.chunks(2).map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap();
            let b = gaussian_stats(&w.chunks(2).map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap();
            let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
            prop_assert!(ab >= 0.0);
        }
    }
}
