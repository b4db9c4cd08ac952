//! The two-encoder, two-decoder network with a product-of-experts latent and
//! a classification head.

mod arch;
mod head;
pub mod network;
mod params;

use rand::Rng;

pub use arch::{ArchConfig, Modality, KERNEL, PADDING, STRIDE};
pub use head::{dropout_mask, head_backward, head_forward, HeadTrace};
pub use params::{LayerParams, ModelParams};

use crate::error::{Error, Result};
use crate::latent::{poe_fuse, DiagonalGaussian};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Which posterior feeds the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    Cxr,
    Ecg,
    Joint,
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Cxr => "cxr",
            FeatureMode::Ecg => "ecg",
            FeatureMode::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cxr" => Ok(FeatureMode::Cxr),
            "ecg" => Ok(FeatureMode::Ecg),
            "joint" => Ok(FeatureMode::Joint),
            _ => Err(Error::invalid(format!("unknown modality mode {s:?}"))),
        }
    }
}

pub fn init_params<S: Scalar>(arch: &ArchConfig, seed: u64) -> Result<ModelParams<S>> {
    ModelParams::init(arch, seed)
}

/// Image posterior `q(z | image)`. Pixels must lie in `[0, 1]`.
pub fn encode_cxr<S: Scalar>(x: &Tensor<S>, params: &ModelParams<S>) -> Result<DiagonalGaussian<S>> {
    Ok(network::encode_traced(params, Modality::Cxr, x)?.posterior)
}

/// Signal posterior `q(z | signal)`; the signal is `[1, L]`.
pub fn encode_ecg<S: Scalar>(x: &Tensor<S>, params: &ModelParams<S>) -> Result<DiagonalGaussian<S>> {
    Ok(network::encode_traced(params, Modality::Ecg, x)?.posterior)
}

/// Bernoulli means with the image's dims.
pub fn decode_cxr<S: Scalar>(z: &[S], params: &ModelParams<S>) -> Result<Tensor<S>> {
    network::decode_traced(params, Modality::Cxr, z)?.means(params)
}

/// Gaussian means with dims `[1, L]`.
pub fn decode_ecg<S: Scalar>(z: &[S], params: &ModelParams<S>) -> Result<Tensor<S>> {
    network::decode_traced(params, Modality::Ecg, z)?.means(params)
}

/// Posterior-mean features for the head. Joint mode fuses whichever
/// modalities are present with the unit prior.
pub fn extract_features<S: Scalar>(
    image: Option<&Tensor<S>>,
    signal: Option<&Tensor<S>>,
    params: &ModelParams<S>,
    mode: FeatureMode,
) -> Result<Vec<S>> {
    Ok(feature_posterior(image, signal, params, mode)?.mean)
}

/// The posterior whose mean [`extract_features`] returns.
pub fn feature_posterior<S: Scalar>(
    image: Option<&Tensor<S>>,
    signal: Option<&Tensor<S>>,
    params: &ModelParams<S>,
    mode: FeatureMode,
) -> Result<DiagonalGaussian<S>> {
    let missing = |what: &str| Error::invalid(format!("{} mode needs the {what} modality", mode.name()));
    match mode {
        FeatureMode::Cxr => encode_cxr(image.ok_or_else(|| missing("image"))?, params),
        FeatureMode::Ecg => encode_ecg(signal.ok_or_else(|| missing("signal"))?, params),
        FeatureMode::Joint => {
            let mut experts = Vec::new();
            if let Some(x) = image {
                experts.push(encode_cxr(x, params)?);
            }
            if let Some(x) = signal {
                experts.push(encode_ecg(x, params)?);
            }
            if experts.is_empty() {
                return Err(missing("image or signal"));
            }
            let refs: Vec<&DiagonalGaussian<S>> = experts.iter().collect();
            poe_fuse(&refs, true)
        }
    }
}

/// Head logit. Dropout is applied only when `train_mode` is set, with masks
/// drawn from `dropout_rng`.
pub fn classify<S: Scalar, R: Rng + ?Sized>(
    features: &[S],
    params: &ModelParams<S>,
    train_mode: bool,
    dropout_rng: &mut R,
) -> Result<S> {
    let mask = train_mode.then(|| dropout_mask(params.arch().head_hidden, params.arch().head_dropout, dropout_rng));
    Ok(head_forward(params, features, mask)?.logit)
}
