use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{split_indices, PairedSample, SplitMode};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, auroc, mean_std};
use crate::model::{dropout_mask, extract_features, head_backward, head_forward, FeatureMode, ModelParams};
use crate::objectives::{bce_grad, bce_loss};
use crate::scalar::Scalar;
use crate::training::{adam_step_where, derive_seed, rng_for, OptimState, RunConfig, Split, Stream};

const HEAD_PREFIX: &str = "head.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneRow {
    pub epoch: usize,
    pub split: Split,
    /// Mean BCE with the head in evaluation mode (no dropout).
    pub bce: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult<S> {
    /// The input parameters with only `head.*` changed.
    pub params: ModelParams<S>,
    pub history: Vec<FinetuneRow>,
}

/// Posterior-mean features of every sample. Only the modality the mode
/// reads is touched.
pub fn extract_all_features<S: Scalar>(
    params: &ModelParams<S>,
    samples: &[PairedSample<S>],
    mode: FeatureMode,
) -> Result<Vec<Vec<S>>> {
    samples
        .iter()
        .map(|s| {
            let (image, signal) = match mode {
                FeatureMode::Cxr => (s.image.as_ref(), None),
                FeatureMode::Ecg => (None, s.signal.as_ref()),
                FeatureMode::Joint => (s.image.as_ref(), s.signal.as_ref()),
            };
            extract_features(image, signal, params, mode).map_err(|e| Error::invalid(format!("sample {}: {e}", s.id)))
        })
        .collect()
}

/// Evaluation-mode head logits.
pub fn head_logits<S: Scalar>(params: &ModelParams<S>, features: &[Vec<S>]) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|f| Ok(head_forward(params, f, None)?.logit.f64()))
        .collect()
}

fn labels_of<S>(samples: &[PairedSample<S>]) -> Result<Vec<u8>> {
    samples
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::invalid(format!("sample {} has no label", s.id))))
        .collect()
}

fn both_classes(labels: &[u8]) -> Result<()> {
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::invalid("fine-tuning needs both classes in the training data"));
    }
    Ok(())
}

fn score_rows<S: Scalar>(params: &ModelParams<S>, features: &[Vec<S>], labels: &[u8]) -> Result<(f64, f64)> {
    let logits = head_logits(params, features)?;
    let bce = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| bce_loss(l, f64::from(y)))
        .sum::<f64>()
        / logits.len() as f64;
    Ok((bce, accuracy(&logits, labels, 0.0)?))
}

/// Trains only the head on fixed features with Adam on the batch-mean BCE.
/// With `val` set, each epoch also logs a validation row.
pub fn train_head<S: Scalar>(
    params: &ModelParams<S>,
    features: &[Vec<S>],
    labels: &[u8],
    run: &RunConfig,
    val: Option<(&[Vec<S>], &[u8])>,
) -> Result<FinetuneResult<S>> {
    run.validate()?;
    if features.len() != labels.len() {
        return Err(Error::shape("labels", features.len(), labels.len()));
    }
    both_classes(labels)?;
    let arch = params.arch().clone();
    let mut out = params.clone();
    let mut grads = params.zeros_like();
    let mut opt = OptimState::new(params, run.adam);
    let mut shuffle_rng = rng_for(run.seed, Stream::Shuffle);
    let mut dropout_rng = rng_for(run.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::new();
    for epoch in 1..=run.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(run.batch_size) {
            for name in ["head.fc1", "head.fc2"] {
                let g = grads.layer_mut(name)?;
                g.weight.fill_zero();
                g.bias.fill_zero();
            }
            let scale = S::of(1.0 / batch.len() as f64);
            for &i in batch {
                let mask = dropout_mask(arch.head_hidden, arch.head_dropout, &mut dropout_rng);
                let trace = head_forward(&out, &features[i], Some(mask))?;
                let y = S::of(f64::from(labels[i]));
                let dlogit = bce_grad(trace.logit, y) * scale;
                head_backward(&out, &trace, dlogit, &mut grads)?;
            }
            adam_step_where(&mut out, &grads, &mut opt, |n| n.starts_with(HEAD_PREFIX))?;
        }
        let (bce, acc) = score_rows(&out, features, labels)?;
        history.push(FinetuneRow { epoch, split: Split::Train, bce, accuracy: acc });
        if let Some((vf, vl)) = val {
            let (bce, acc) = score_rows(&out, vf, vl)?;
            history.push(FinetuneRow { epoch, split: Split::Val, bce, accuracy: acc });
        }
        if run.verbose {
            eprintln!("finetune epoch {epoch}/{} train bce {bce:.5} acc {acc:.3}", run.epochs);
        }
    }
    for prefix in ["cxr_", "ecg_"] {
        if !out.bit_eq_prefix(params, prefix) {
            return Err(Error::Numeric(format!("frozen {prefix}* parameters changed during fine-tuning")));
        }
    }
    Ok(FinetuneResult { params: out, history })
}

/// Fine-tunes the head on a labeled dataset with the encoders frozen.
/// Features are extracted once, in `run.feature_mode`.
pub fn finetune<S: Scalar>(
    params: &ModelParams<S>,
    dataset: &[PairedSample<S>],
    run: &RunConfig,
) -> Result<FinetuneResult<S>> {
    let labels = labels_of(dataset)?;
    both_classes(&labels)?;
    let features = extract_all_features(params, dataset, run.feature_mode)?;
    train_head(params, &features, &labels, run, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    /// AUROC on the fold's 20% validation slice.
    pub auroc: f64,
    pub accuracy: f64,
    /// Training BCE per epoch.
    pub loss_curve: Vec<f64>,
    /// Metrics on the held-out fold itself, reported alongside.
    pub heldout_auroc: f64,
    pub heldout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub folds: Vec<FoldResult>,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

/// Stratified k-fold evaluation of head fine-tuning. For fold `i` the data
/// outside fold `i` is split 80:20 (stratified); the head trains on the 80%
/// and the 20% slice is scored. Means and standard deviations are over
/// folds.
pub fn cross_validate<S: Scalar>(
    params: &ModelParams<S>,
    dataset: &[PairedSample<S>],
    run: &RunConfig,
    k: usize,
) -> Result<CvSummary> {
    let labels = labels_of(dataset)?;
    let features = extract_all_features(params, dataset, run.feature_mode)?;
    cross_validate_features(params, &features, &labels, run, k)
}

/// [`cross_validate`] over precomputed features.
pub fn cross_validate_features<S: Scalar>(
    params: &ModelParams<S>,
    features: &[Vec<S>],
    labels: &[u8],
    run: &RunConfig,
    k: usize,
) -> Result<CvSummary> {
    if features.len() != labels.len() {
        return Err(Error::shape("labels", features.len(), labels.len()));
    }
    let folds = split_indices(features.len(), Some(labels), SplitMode::StratifiedKFold(k), run.seed)?;
    let gather = |idx: &[usize]| -> (Vec<Vec<S>>, Vec<u8>) {
        (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let mut results = Vec::with_capacity(k);
    for (fold, held) in folds.parts.iter().enumerate() {
        let rest = folds.complement(fold);
        let rest_labels: Vec<u8> = rest.iter().map(|&i| labels[i]).collect();
        let fold_seed = derive_seed(run.seed, fold as u64);
        let inner = split_indices(rest.len(), Some(&rest_labels), SplitMode::StratifiedRatio(0.8), fold_seed)
            .map_err(|e| Error::invalid(format!("fold {fold}: {e}")))?;
        let pick = |part: &[usize]| -> Vec<usize> { part.iter().map(|&j| rest[j]).collect() };
        let (tf, tl) = gather(&pick(&inner.parts[0]));
        let (vf, vl) = gather(&pick(&inner.parts[1]));
        let (hf, hl) = gather(held);
        let fold_run = RunConfig { seed: fold_seed, ..run.clone() };
        let fit = train_head(params, &tf, &tl, &fold_run, None).map_err(|e| Error::invalid(format!("fold {fold}: {e}")))?;
        let v_logits = head_logits(&fit.params, &vf)?;
        let h_logits = head_logits(&fit.params, &hf)?;
        results.push(FoldResult {
            fold,
            auroc: auroc(&v_logits, &vl)?,
            accuracy: accuracy(&v_logits, &vl, 0.0)?,
            loss_curve: fit.history.iter().map(|r| r.bce).collect(),
            heldout_auroc: auroc(&h_logits, &hl)?,
            heldout_accuracy: accuracy(&h_logits, &hl, 0.0)?,
        });
        if run.verbose {
            let r = results.last().expect("pushed");
            eprintln!("fold {fold}: auroc {:.4} accuracy {:.4}", r.auroc, r.accuracy);
        }
    }
    let (auroc_mean, auroc_std) = mean_std(&results.iter().map(|r| r.auroc).collect::<Vec<_>>());
    let (accuracy_mean, accuracy_std) = mean_std(&results.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    Ok(CvSummary { folds: results, auroc_mean, auroc_std, accuracy_mean, accuracy_std })
}

/// Shuffles labels with a seeded permutation (used to build null tasks).
pub fn shuffled_labels(labels: &[u8], seed: u64) -> Vec<u8> {
    let mut v = labels.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
