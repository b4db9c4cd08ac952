//! Adam, tri-stream pre-training, frozen-encoder fine-tuning,
//! cross-validation, and the λ grid search.
//!
//! Everything here runs sequentially. Each source of randomness (split,
//! batch order, reparameterization noise, dropout) has its own ChaCha
//! stream derived from the run seed, so a run is bitwise reproducible for
//! a fixed build.

mod adam;
mod finetune;
mod grid;
mod history;
mod pretrain;

pub use adam::{adam_step, adam_step_where, adam_update, AdamConfig, OptimState};
pub use finetune::{
    cross_validate, cross_validate_features, extract_all_features, finetune, head_logits, train_head, CvSummary, FinetuneResult,
    FinetuneRow, FoldResult, shuffled_labels,
};
pub use grid::{grid_search_lambda, select_best, GridCell, GridResult};
pub use history::{finetune_history_csv, history_csv, write_finetune_history, write_history};
pub use pretrain::{pretrain, validation_loss, PretrainResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::FeatureMode;
use crate::objectives::{LossBreakdown, StreamMode};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub stream_mode: StreamMode,
    pub feature_mode: FeatureMode,
    pub adam: AdamConfig,
    /// Share of the data held out for validation during pre-training.
    pub val_fraction: f64,
    /// Print one progress line per epoch to standard error.
    pub verbose: bool,
}

impl RunConfig {
    /// Batch 128 for 100 epochs.
    pub fn pretrain_default() -> Self {
        Self {
            batch_size: 128,
            epochs: 100,
            seed: 0,
            stream_mode: StreamMode::Tri,
            feature_mode: FeatureMode::Joint,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
            verbose: false,
        }
    }

    /// Batch 32 for 50 epochs.
    pub fn finetune_default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            ..Self::pretrain_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("val_fraction must lie in [0, 1)"));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One epoch's mean loss terms on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: Split,
    pub losses: LossBreakdown,
}

/// Independent RNG streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Stream {
    Shuffle = 1,
    Noise = 2,
    ValNoise = 3,
    Dropout = 4,
}

pub(crate) fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for an indexed sub-run (a fold or a grid cell).
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
