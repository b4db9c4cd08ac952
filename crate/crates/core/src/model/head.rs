//! Classification head: `fc1 -> ReLU -> dropout -> fc2`, one logit out.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::params::ModelParams;
use crate::numerics::{backward, backward_pre, forward, preactivate, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct HeadTrace<S> {
    features: Tensor<S>,
    hidden: Tensor<S>,
    /// Per-unit multiplier: 0 or `1/(1-p)` in training, absent at eval.
    mask: Option<Vec<S>>,
    dropped: Tensor<S>,
    pub logit: S,
}

/// Inverted-dropout mask drawn from `rng`.
pub fn dropout_mask<S: Scalar, R: Rng + ?Sized>(width: usize, rate: f64, rng: &mut R) -> Vec<S> {
    let keep = S::of(1.0 / (1.0 - rate));
    (0..width)
        .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
        .collect()
}

pub fn head_forward<S: Scalar>(
    params: &ModelParams<S>,
    features: &[S],
    mask: Option<Vec<S>>,
) -> Result<HeadTrace<S>> {
    let arch = params.arch();
    if features.len() != arch.latent_dim {
        return Err(Error::shape("features", arch.latent_dim, features.len()));
    }
    let layers = arch.head_layers();
    let f = Tensor::new(vec![features.len()], features.to_vec())?;
    let p1 = params.layer(&layers[0].0)?;
    let hidden = forward(&layers[0].1, &p1.weight, &p1.bias, &f)?;
    let dropped = match &mask {
        Some(m) => {
            if m.len() != hidden.len() {
                return Err(Error::shape("dropout mask", hidden.len(), m.len()));
            }
            let mut d = hidden.clone();
            d.data_mut().iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
            d
        }
        None => hidden.clone(),
    };
    let p2 = params.layer(&layers[1].0)?;
    let logit = preactivate(&layers[1].1, &p2.weight, &p2.bias, &dropped)?.data()[0];
    Ok(HeadTrace { features: f, hidden, mask, dropped, logit })
}

/// Backpropagates `dlogit`, accumulating head gradients; returns the
/// feature gradient.
pub fn head_backward<S: Scalar>(
    params: &ModelParams<S>,
    trace: &HeadTrace<S>,
    dlogit: S,
    grads: &mut ModelParams<S>,
) -> Result<Vec<S>> {
    let layers = params.arch().head_layers();
    let p2 = params.layer(&layers[1].0)?;
    let g2 = grads.layer_mut(&layers[1].0)?;
    let mut dh = backward_pre(&layers[1].1, &p2.weight, &trace.dropped, &[1], &[dlogit], &mut g2.weight, &mut g2.bias, true)?
        .expect("requested");
    if let Some(m) = &trace.mask {
        dh.data_mut().iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
    }
    let p1 = params.layer(&layers[0].0)?;
    let g1 = grads.layer_mut(&layers[0].0)?;
    let df = backward(&layers[0].1, &p1.weight, &trace.features, &trace.hidden, &dh, &mut g1.weight, &mut g1.bias, true)?
        .expect("requested");
    Ok(df.into_data())
}
