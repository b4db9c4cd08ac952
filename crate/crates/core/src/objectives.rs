//! Stream ELBOs, their sum, likelihoods, the KL-weight schedule, and the
//! fine-tuning loss.
//!
//! Log-likelihoods and KL terms are summed over dimensions; callers average
//! over the batch. Image likelihoods are Bernoulli, signal likelihoods are
//! unit-variance Gaussian.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::latent::{
    kl_backward, kl_standard_normal, poe_backward, poe_fuse, reparameterize, reparameterize_backward, GaussianGrad,
};
use crate::model::network::{decode_traced, decoder_backward, encode_traced, encoder_backward, EncoderTrace};
use crate::model::{Modality, ModelParams};
use crate::numerics::{sigmoid, softplus, Tensor};
use crate::scalar::Scalar;

/// Image means are clamped into `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamMode {
    /// Image-only, signal-only, and joint streams.
    Tri,
    /// Joint stream only (single-stream PoE baseline).
    JointOnly,
}

impl StreamMode {
    pub fn name(self) -> &'static str {
        match self {
            StreamMode::Tri => "tri",
            StreamMode::JointOnly => "joint-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tri" => Ok(StreamMode::Tri),
            "joint-only" | "joint" => Ok(StreamMode::JointOnly),
            _ => Err(Error::invalid(format!("unknown stream mode {s:?}"))),
        }
    }
}

/// Linear KL-weight ramp from 0 to `max_beta` over `anneal_steps` optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaSchedule {
    /// `None` resolves to 20% of the planned optimizer steps.
    pub anneal_steps: Option<usize>,
    pub max_beta: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            anneal_steps: None,
            max_beta: 1.0,
        }
    }
}

impl BetaSchedule {
    pub fn resolved(self, planned_steps: usize) -> Self {
        let steps = self
            .anneal_steps
            .unwrap_or_else(|| (planned_steps as f64 * 0.2).ceil() as usize)
            .max(1);
        Self {
            anneal_steps: Some(steps),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda_cxr: f64,
    pub lambda_ecg: f64,
    pub beta: BetaSchedule,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_cxr: 1.0,
            lambda_ecg: 1.0,
            beta: BetaSchedule::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cxr >= 0.0 && self.lambda_ecg >= 0.0) {
            return Err(Error::invalid("lambda weights must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.beta.max_beta) {
            return Err(Error::invalid("max_beta must lie in [0, 1]"));
        }
        if self.beta.anneal_steps == Some(0) {
            return Err(Error::invalid("anneal_steps must be >= 1"));
        }
        Ok(())
    }
}

/// `min(step / anneal_steps, 1) * max_beta`.
pub fn beta_at(step: usize, schedule: &BetaSchedule) -> f64 {
    let steps = schedule.anneal_steps.unwrap_or(1).max(1);
    (step as f64 / steps as f64).min(1.0) * schedule.max_beta
}

/// Per-sample (or batch-mean) terms of the three ELBO streams.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub recon_cxr: f64,
    pub recon_ecg: f64,
    pub recon_joint_cxr: f64,
    pub recon_joint_ecg: f64,
    pub kl_cxr: f64,
    pub kl_ecg: f64,
    pub kl_joint: f64,
    pub elbo_cxr: f64,
    pub elbo_ecg: f64,
    pub elbo_joint: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 11] = [
        "recon_cxr",
        "recon_ecg",
        "recon_joint_cxr",
        "recon_joint_ecg",
        "kl_cxr",
        "kl_ecg",
        "kl_joint",
        "elbo_cxr",
        "elbo_ecg",
        "elbo_joint",
        "total",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.recon_cxr,
            self.recon_ecg,
            self.recon_joint_cxr,
            self.recon_joint_ecg,
            self.kl_cxr,
            self.kl_ecg,
            self.kl_joint,
            self.elbo_cxr,
            self.elbo_ecg,
            self.elbo_joint,
            self.total,
        ]
    }

    pub fn from_values(v: [f64; 11]) -> Self {
        Self {
            recon_cxr: v[0],
            recon_ecg: v[1],
            recon_joint_cxr: v[2],
            recon_joint_ecg: v[3],
            kl_cxr: v[4],
            kl_ecg: v[5],
            kl_joint: v[6],
            elbo_cxr: v[7],
            elbo_ecg: v[8],
            elbo_joint: v[9],
            total: v[10],
        }
    }

    /// Merges stream fragments and recomputes the total.
    pub fn combine(cxr: &Self, ecg: &Self, joint: &Self) -> Self {
        let mut out = Self {
            recon_cxr: cxr.recon_cxr,
            kl_cxr: cxr.kl_cxr,
            elbo_cxr: cxr.elbo_cxr,
            recon_ecg: ecg.recon_ecg,
            kl_ecg: ecg.kl_ecg,
            elbo_ecg: ecg.elbo_ecg,
            recon_joint_cxr: joint.recon_joint_cxr,
            recon_joint_ecg: joint.recon_joint_ecg,
            kl_joint: joint.kl_joint,
            elbo_joint: joint.elbo_joint,
            total: 0.0,
        };
        out.finalize();
        out
    }

    /// `total = (elbo_cxr + elbo_ecg) + elbo_joint`, the one summation order
    /// used everywhere.
    pub fn finalize(&mut self) {
        self.total = self.elbo_cxr + self.elbo_ecg + self.elbo_joint;
    }

    pub fn accumulate(&mut self, other: &Self) {
        let mut v = self.values();
        for (a, b) in v.iter_mut().zip(other.values()) {
            *a += b;
        }
        *self = Self::from_values(v);
    }

    /// Field-wise mean of `sum` over `n` items, with the total recomputed.
    pub fn mean_of(sum: &Self, n: usize) -> Self {
        let mut v = sum.values();
        v.iter_mut().for_each(|a| *a /= n as f64);
        let mut out = Self::from_values(v);
        out.finalize();
        out
    }
}

/// Standard-normal noise for each stream's reparameterized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamNoise<S> {
    pub cxr: Vec<S>,
    pub ecg: Vec<S>,
    pub joint: Vec<S>,
}

impl<S: Scalar> StreamNoise<S> {
    /// Draws image, signal, then joint noise, in that order.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        let mut v = || -> Vec<S> {
            (0..d)
                .map(|_| S::of(StandardNormal.sample(&mut *rng)))
                .collect()
        };
        let cxr = v();
        let ecg = v();
        let joint = v();
        Self { cxr, ecg, joint }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            cxr: vec![S::zero(); d],
            ecg: vec![S::zero(); d],
            joint: vec![S::zero(); d],
        }
    }
}

fn same_len<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.dims().iter().product::<usize>() != b.dims().iter().product::<usize>() {
        return Err(Error::shape("reconstruction", a.dims().iter().product(), b.dims().iter().product()));
    }
    Ok(())
}

/// `sum x log xhat + (1 - x) log(1 - xhat)`, with `xhat` clamped into
/// `[1e-7, 1 - 1e-7]`.
pub fn recon_loglik_cxr<S: Scalar>(x: &Tensor<S>, x_hat: &Tensor<S>) -> Result<f64> {
    same_len(x, x_hat)?;
    Ok(x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(&x, &p)| {
            let (x, p) = (x.f64(), p.f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));
            x * p.ln() + (1.0 - x) * (1.0 - p).ln()
        })
        .sum())
}

/// Bernoulli log-likelihood from logits: `sum x l - softplus(l)`. Equals
/// [`recon_loglik_cxr`] at `xhat = sigmoid(l)` away from the clamp.
pub fn recon_loglik_cxr_logits<S: Scalar>(x: &Tensor<S>, logits: &Tensor<S>) -> Result<f64> {
    same_len(x, logits)?;
    Ok(x.data()
        .iter()
        .zip(logits.data())
        .map(|(&x, &l)| (x * l - softplus(l)).f64())
        .sum())
}

/// `-0.5 sum (x - xhat)^2 - (L/2) log 2 pi`.
pub fn recon_loglik_ecg<S: Scalar>(x: &Tensor<S>, x_hat: &Tensor<S>) -> Result<f64> {
    same_len(x, x_hat)?;
    let sq: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let d = a.f64() - b.f64();
            d * d
        })
        .sum();
    Ok(-0.5 * sq - 0.5 * x.len() as f64 * (2.0 * PI).ln())
}

/// Numerically stable `-[y log sigmoid(l) + (1 - y) log(1 - sigmoid(l))]`.
pub fn bce_loss<S: Scalar>(logit: S, label: S) -> S {
    logit.max(S::zero()) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Derivative of [`bce_loss`] with respect to the logit.
pub fn bce_grad<S: Scalar>(logit: S, label: S) -> S {
    sigmoid(logit) - label
}

/// Everything the objective needs about one paired sample.
struct Encoded<S> {
    cxr: EncoderTrace<S>,
    ecg: EncoderTrace<S>,
}

/// Reconstruction log-likelihood of `x` through the decoder of `m` at `z`,
/// backpropagating `weight * grad_scale * d loglik` into `grads` and
/// returning `dz` when gradients are requested.
fn decode_term<S: Scalar>(
    params: &ModelParams<S>,
    m: Modality,
    x: &Tensor<S>,
    z: &[S],
    weight: f64,
    grad_scale: f64,
    grads: Option<&mut ModelParams<S>>,
) -> Result<(f64, Option<Vec<S>>)> {
    let trace = decode_traced(params, m, z)?;
    let ll = match m {
        Modality::Cxr => recon_loglik_cxr_logits(x, &trace.output)?,
        Modality::Ecg => {
            let means = trace.output.clone().reshape(x.dims())?;
            recon_loglik_ecg(x, &means)?
        }
    };
    let Some(grads) = grads else {
        return Ok((ll, None));
    };
    let k = S::of(weight * grad_scale);
    let d_out: Vec<S> = match m {
        Modality::Cxr => x
            .data()
            .iter()
            .zip(trace.output.data())
            .map(|(&x, &l)| k * (x - sigmoid(l)))
            .collect(),
        Modality::Ecg => x
            .data()
            .iter()
            .zip(trace.output.data())
            .map(|(&x, &mu)| k * (x - mu))
            .collect(),
    };
    let dz = decoder_backward(params, &trace, &d_out, grads)?;
    Ok((ll, Some(dz)))
}

/// ELBO terms for one paired sample. When `grads` is given, accumulates
/// `grad_scale * d total / d params` into it (pass a negative scale to
/// descend on `-total`).
#[allow(clippy::too_many_arguments)]
pub fn sample_objective<S: Scalar>(
    params: &ModelParams<S>,
    image: &Tensor<S>,
    signal: &Tensor<S>,
    beta: f64,
    cfg: &ObjectiveConfig,
    mode: StreamMode,
    noise: &StreamNoise<S>,
    grad_scale: f64,
    mut grads: Option<&mut ModelParams<S>>,
) -> Result<LossBreakdown> {
    let enc = Encoded {
        cxr: encode_traced(params, Modality::Cxr, image)?,
        ecg: encode_traced(params, Modality::Ecg, signal)?,
    };
    let d = params.arch().latent_dim;
    let (qc, qe) = (&enc.cxr.posterior, &enc.ecg.posterior);
    let mut gc = GaussianGrad::zeros(d);
    let mut ge = GaussianGrad::zeros(d);
    let mut out = LossBreakdown::default();
    let kl_scale = S::of(-beta * grad_scale);

    if mode == StreamMode::Tri {
        for (m, q, eps, x, lambda, g) in [
            (Modality::Cxr, qc, &noise.cxr, image, cfg.lambda_cxr, &mut gc),
            (Modality::Ecg, qe, &noise.ecg, signal, cfg.lambda_ecg, &mut ge),
        ] {
            let z = reparameterize(q, eps)?;
            let (ll, dz) = decode_term(params, m, x, &z, lambda, grad_scale, grads.as_deref_mut())?;
            let kl = kl_standard_normal(q).f64();
            let elbo = lambda * ll - beta * kl;
            match m {
                Modality::Cxr => (out.recon_cxr, out.kl_cxr, out.elbo_cxr) = (ll, kl, elbo),
                Modality::Ecg => (out.recon_ecg, out.kl_ecg, out.elbo_ecg) = (ll, kl, elbo),
            }
            if let Some(dz) = dz {
                g.add_assign(&reparameterize_backward(q, eps, &dz));
                g.add_assign(&kl_backward(q, kl_scale));
            }
        }
    }

    let qj = poe_fuse(&[qc, qe], true)?;
    let z = reparameterize(&qj, &noise.joint)?;
    let (ll_c, dz_c) = decode_term(params, Modality::Cxr, image, &z, cfg.lambda_cxr, grad_scale, grads.as_deref_mut())?;
    let (ll_e, dz_e) = decode_term(params, Modality::Ecg, signal, &z, cfg.lambda_ecg, grad_scale, grads.as_deref_mut())?;
    let kl_j = kl_standard_normal(&qj).f64();
    out.recon_joint_cxr = ll_c;
    out.recon_joint_ecg = ll_e;
    out.kl_joint = kl_j;
    out.elbo_joint = cfg.lambda_cxr * ll_c + cfg.lambda_ecg * ll_e - beta * kl_j;
    out.finalize();
    if !out.total.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }

    if let (Some(grads), Some(dz_c), Some(dz_e)) = (grads, dz_c, dz_e) {
        let dz: Vec<S> = dz_c.iter().zip(&dz_e).map(|(&a, &b)| a + b).collect();
        let mut gj = reparameterize_backward(&qj, &noise.joint, &dz);
        gj.add_assign(&kl_backward(&qj, kl_scale));
        let back = poe_backward(&[qc, qe], &qj, &gj);
        gc.add_assign(&back[0]);
        ge.add_assign(&back[1]);
        encoder_backward(params, &enc.cxr, &gc, grads, false, None)?;
        encoder_backward(params, &enc.ecg, &ge, grads, false, None)?;
    }
    Ok(out)
}

/// Image-only stream: `lambda * loglik(x | z) - beta * KL(q(z|x) || p)`
/// with `z` drawn from the raw image posterior (no prior expert).
pub fn stream_loss_cxr<S: Scalar>(
    x: &Tensor<S>,
    params: &ModelParams<S>,
    beta: f64,
    cfg: &ObjectiveConfig,
    epsilon: &[S],
) -> Result<LossBreakdown> {
    unimodal_stream(Modality::Cxr, x, params, beta, cfg.lambda_cxr, epsilon)
}

/// Signal-only stream, mirroring [`stream_loss_cxr`].
pub fn stream_loss_ecg<S: Scalar>(
    x: &Tensor<S>,
    params: &ModelParams<S>,
    beta: f64,
    cfg: &ObjectiveConfig,
    epsilon: &[S],
) -> Result<LossBreakdown> {
    unimodal_stream(Modality::Ecg, x, params, beta, cfg.lambda_ecg, epsilon)
}

fn unimodal_stream<S: Scalar>(
    m: Modality,
    x: &Tensor<S>,
    params: &ModelParams<S>,
    beta: f64,
    lambda: f64,
    epsilon: &[S],
) -> Result<LossBreakdown> {
    let q = encode_traced(params, m, x)?.posterior;
    let z = reparameterize(&q, epsilon)?;
    let (ll, _) = decode_term(params, m, x, &z, lambda, 0.0, None)?;
    let kl = kl_standard_normal(&q).f64();
    let elbo = lambda * ll - beta * kl;
    let mut out = LossBreakdown::default();
    match m {
        Modality::Cxr => (out.recon_cxr, out.kl_cxr, out.elbo_cxr) = (ll, kl, elbo),
        Modality::Ecg => (out.recon_ecg, out.kl_ecg, out.elbo_ecg) = (ll, kl, elbo),
    }
    out.finalize();
    Ok(out)
}

/// Joint stream: PoE of both posteriors with the prior; one `z` feeds both decoders.
pub fn stream_loss_joint<S: Scalar>(
    image: &Tensor<S>,
    signal: &Tensor<S>,
    params: &ModelParams<S>,
    beta: f64,
    cfg: &ObjectiveConfig,
    epsilon: &[S],
) -> Result<LossBreakdown> {
    let noise = StreamNoise {
        cxr: vec![S::zero(); epsilon.len()],
        ecg: vec![S::zero(); epsilon.len()],
        joint: epsilon.to_vec(),
    };
    sample_objective(params, image, signal, beta, cfg, StreamMode::JointOnly, &noise, 0.0, None)
}

/// Sum of the stream ELBOs for one sample (only the joint stream in
/// [`StreamMode::JointOnly`]). Training minimizes `-total`.
pub fn total_loss<S: Scalar>(
    image: &Tensor<S>,
    signal: &Tensor<S>,
    params: &ModelParams<S>,
    beta: f64,
    cfg: &ObjectiveConfig,
    mode: StreamMode,
    noise: &StreamNoise<S>,
) -> Result<LossBreakdown> {
    sample_objective(params, image, signal, beta, cfg, mode, noise, 0.0, None)
}
