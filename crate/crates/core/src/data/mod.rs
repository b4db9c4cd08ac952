//! Paired samples, the synthetic benchmark, on-disk formats, manifests, and
//! splits.

pub mod format;
pub mod manifest;
pub mod split;
pub mod synth;

pub use format::{
    read_checkpoint, read_tensor, write_checkpoint, write_checkpoint_with, write_tensor, Checkpoint,
};
pub use manifest::{pair_by_key, read_dataset, read_modality_manifest, write_dataset, ModalityRecord, MANIFEST_FILE};
pub use split::{split, split_indices, Partition, SplitMode};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// One subject's image and/or signal, with an optional binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample<S = f32> {
    pub id: String,
    /// `[h, w, c]` with values in `[0, 1]`.
    pub image: Option<Tensor<S>>,
    /// `[1, L]`.
    pub signal: Option<Tensor<S>>,
    pub label: Option<u8>,
}

impl<S: Scalar> PairedSample<S> {
    pub fn validate(&self) -> Result<()> {
        if self.image.is_none() && self.signal.is_none() {
            return Err(Error::invalid(format!("sample {} has neither modality", self.id)));
        }
        if self.id.is_empty() || self.id.contains(['/', '\\', ',', '\n']) {
            return Err(Error::invalid(format!("sample id {:?} is not filename-safe", self.id)));
        }
        if let Some(img) = &self.image {
            if img.dims().len() != 3 || img.data().iter().any(|&v| v < S::zero() || v > S::one()) {
                return Err(Error::invalid(format!("sample {}: image must be [h, w, c] in [0, 1]", self.id)));
            }
        }
        if let Some(sig) = &self.signal {
            if sig.dims().len() != 2 || sig.dims()[0] != 1 {
                return Err(Error::invalid(format!("sample {}: signal must be [1, L]", self.id)));
            }
        }
        if matches!(self.label, Some(l) if l > 1) {
            return Err(Error::invalid(format!("sample {}: label must be 0 or 1", self.id)));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> PairedSample<T> {
        PairedSample {
            id: self.id.clone(),
            image: self.image.as_ref().map(Tensor::cast),
            signal: self.signal.as_ref().map(Tensor::cast),
            label: self.label,
        }
    }
}
