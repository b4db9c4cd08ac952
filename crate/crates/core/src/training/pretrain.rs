use rand::seq::SliceRandom;

use crate::data::{split_indices, PairedSample, SplitMode};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelParams};
use crate::numerics::Tensor;
use crate::objectives::{beta_at, sample_objective, LossBreakdown, ObjectiveConfig, StreamNoise};
use crate::scalar::Scalar;
use crate::training::{adam_step, rng_for, HistoryRow, OptimState, RunConfig, Split, Stream};

#[derive(Debug, Clone)]
pub struct PretrainResult<S> {
    pub params: ModelParams<S>,
    /// Parameters at the epoch with the lowest validation `-total` (training
    /// `-total` when there is no validation split).
    pub best: ModelParams<S>,
    pub best_epoch: usize,
    pub history: Vec<HistoryRow>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

struct Pair<'a, S> {
    id: &'a str,
    image: &'a Tensor<S>,
    signal: &'a Tensor<S>,
}

fn pairs<'a, S: Scalar>(dataset: &'a [PairedSample<S>], arch: &ArchConfig) -> Result<Vec<Pair<'a, S>>> {
    if dataset.is_empty() {
        return Err(Error::invalid("pre-training dataset is empty"));
    }
    dataset
        .iter()
        .map(|s| match (&s.image, &s.signal) {
            (Some(image), Some(signal)) => {
                if image.dims() != arch.image_dims() || signal.len() != arch.signal_len {
                    return Err(Error::invalid(format!(
                        "sample {} has image {:?} and signal length {}, arch expects {:?} and {}",
                        s.id,
                        image.dims(),
                        signal.len(),
                        arch.image_dims(),
                        arch.signal_len
                    )));
                }
                Ok(Pair { id: &s.id, image, signal })
            }
            _ => Err(Error::invalid(format!("sample {} lacks a modality; pre-training needs pairs", s.id))),
        })
        .collect()
}

/// Mean loss terms over `set` with noise from a fresh validation stream, so
/// successive calls on the same parameters agree exactly.
pub fn validation_loss<S: Scalar>(
    params: &ModelParams<S>,
    set: &[PairedSample<S>],
    beta: f64,
    obj: &ObjectiveConfig,
    run: &RunConfig,
) -> Result<LossBreakdown> {
    let p = pairs(set, params.arch())?;
    let idx: Vec<usize> = (0..p.len()).collect();
    eval_mean(params, &p, &idx, beta, obj, run)
}

fn eval_mean<S: Scalar>(
    params: &ModelParams<S>,
    data: &[Pair<'_, S>],
    idx: &[usize],
    beta: f64,
    obj: &ObjectiveConfig,
    run: &RunConfig,
) -> Result<LossBreakdown> {
    let d = params.arch().latent_dim;
    let mut rng = rng_for(run.seed, Stream::ValNoise);
    let mut sum = LossBreakdown::default();
    for &i in idx {
        let noise = StreamNoise::draw(&mut rng, d);
        let s = &data[i];
        let l = sample_objective(params, s.image, s.signal, beta, obj, run.stream_mode, &noise, 0.0, None)
            .map_err(|e| Error::Numeric(format!("validation sample {}: {e}", s.id)))?;
        sum.accumulate(&l);
    }
    Ok(LossBreakdown::mean_of(&sum, idx.len()))
}

/// Tri-stream (or joint-only) pre-training with Adam on the batch-mean
/// `-total`. Splits 90:10 by default; a single sample trains without a
/// validation set.
pub fn pretrain<S: Scalar>(
    dataset: &[PairedSample<S>],
    arch: &ArchConfig,
    obj: &ObjectiveConfig,
    run: &RunConfig,
) -> Result<PretrainResult<S>> {
    run.validate()?;
    obj.validate()?;
    arch.validate()?;
    let data = pairs(dataset, arch)?;
    let n = data.len();
    let (train, val) = if n >= 2 && run.val_fraction > 0.0 {
        let p = split_indices(n, None, SplitMode::Ratio(1.0 - run.val_fraction), run.seed)?;
        (p.parts[0].clone(), p.parts[1].clone())
    } else {
        ((0..n).collect::<Vec<_>>(), Vec::new())
    };

    let mut params = ModelParams::<S>::init(arch, run.seed)?;
    let mut grads = params.zeros_like();
    let mut opt = OptimState::new(&params, run.adam);
    let steps_per_epoch = train.len().div_ceil(run.batch_size);
    let schedule = obj.beta.resolved(steps_per_epoch * run.epochs);
    let mut shuffle_rng = rng_for(run.seed, Stream::Shuffle);
    let mut noise_rng = rng_for(run.seed, Stream::Noise);
    let d = arch.latent_dim;

    let mut history = Vec::with_capacity(run.epochs * 2);
    let mut best: Option<(f64, usize, ModelParams<S>)> = None;
    let mut order = train.clone();
    for epoch in 1..=run.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossBreakdown::default();
        for (b, batch) in order.chunks(run.batch_size).enumerate() {
            let beta = beta_at(opt.step as usize, &schedule);
            let scale = -1.0 / batch.len() as f64;
            grads.fill_zero();
            let fail = |e: Error| {
                let ids: Vec<&str> = batch.iter().map(|&i| data[i].id).collect();
                Error::Numeric(format!("epoch {epoch} batch {b} (samples {}): {e}", ids.join(" ")))
            };
            for &i in batch {
                let noise = StreamNoise::draw(&mut noise_rng, d);
                let s = &data[i];
                let l = sample_objective(&params, s.image, s.signal, beta, obj, run.stream_mode, &noise, scale, Some(&mut grads))
                    .map_err(fail)?;
                sum.accumulate(&l);
            }
            adam_step(&mut params, &grads, &mut opt).map_err(fail)?;
        }
        let train_row = LossBreakdown::mean_of(&sum, train.len());
        history.push(HistoryRow { epoch, split: Split::Train, losses: train_row });
        // validation always uses the full KL weight so epochs stay comparable
        let score = if val.is_empty() {
            -train_row.total
        } else {
            let v = eval_mean(&params, &data, &val, schedule.max_beta, obj, run)
                .map_err(|e| Error::Numeric(format!("epoch {epoch} {e}")))?;
            history.push(HistoryRow { epoch, split: Split::Val, losses: v });
            -v.total
        };
        if run.verbose {
            eprintln!(
                "pretrain epoch {epoch}/{} beta {:.4} train -total {:.4} {}",
                run.epochs,
                beta_at(opt.step as usize, &schedule),
                -train_row.total,
                if val.is_empty() { String::new() } else { format!("val -total {score:.4}") }
            );
        }
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("epochs >= 1");
    let ids = |v: &[usize]| v.iter().map(|&i| data[i].id.to_string()).collect();
    Ok(PretrainResult {
        train_ids: ids(&train),
        val_ids: ids(&val),
        params,
        best,
        best_epoch,
        history,
    })
}
