//! Diagonal-Gaussian algebra: product-of-experts fusion, KL against the
//! standard normal prior, and reparameterized sampling, together with the
//! reverse-mode derivatives the trainer needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Variances are floored here after `exp(log_var)`.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Posterior or prior over the latent code, parameterized by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian<S> {
    pub mean: Vec<S>,
    pub log_var: Vec<S>,
}

/// Gradient of some scalar with respect to a [`DiagonalGaussian`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad<S> {
    pub mean: Vec<S>,
    pub log_var: Vec<S>,
}

impl<S: Scalar> GaussianGrad<S> {
    pub fn zeros(d: usize) -> Self {
        Self {
            mean: vec![S::zero(); d],
            log_var: vec![S::zero(); d],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.mean.iter_mut().zip(&other.mean) {
            *a = *a + b;
        }
        for (a, &b) in self.log_var.iter_mut().zip(&other.log_var) {
            *a = *a + b;
        }
    }
}

fn ln_floor<S: Scalar>() -> S {
    S::of(VARIANCE_FLOOR.ln())
}

impl<S: Scalar> DiagonalGaussian<S> {
    pub fn new(mean: Vec<S>, log_var: Vec<S>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::shape("log_var", mean.len(), log_var.len()));
        }
        if mean.is_empty() {
            return Err(Error::invalid("latent dimension must be >= 1"));
        }
        if mean.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        Ok(Self { mean, log_var })
    }

    /// `N(0, I)` in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![S::zero(); d],
            log_var: vec![S::zero(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Whether the floor is inactive for dimension `i`, i.e. the log-variance
    /// parameter reaches the variance.
    #[inline]
    fn live(&self, i: usize) -> bool {
        self.log_var[i] >= ln_floor::<S>()
    }

    /// Log-variance after the floor.
    pub fn effective_log_var(&self) -> Vec<S> {
        let f = ln_floor::<S>();
        self.log_var.iter().map(|&v| v.max(f)).collect()
    }

    pub fn variance(&self) -> Vec<S> {
        self.effective_log_var().into_iter().map(|v| v.exp()).collect()
    }

    pub fn cast<T: Scalar>(&self) -> DiagonalGaussian<T> {
        DiagonalGaussian {
            mean: self.mean.iter().map(|v| T::of(v.f64())).collect(),
            log_var: self.log_var.iter().map(|v| T::of(v.f64())).collect(),
        }
    }
}

/// Product of experts: precisions add, means are precision-weighted.
/// With `include_prior` the unit Gaussian joins as one more expert.
pub fn poe_fuse<S: Scalar>(
    experts: &[&DiagonalGaussian<S>],
    include_prior: bool,
) -> Result<DiagonalGaussian<S>> {
    let d = match experts.first() {
        Some(e) => e.dim(),
        None if include_prior => {
            return Err(Error::invalid(
                "prior-only fusion needs a dimension; use DiagonalGaussian::standard",
            ))
        }
        None => return Err(Error::invalid("no experts to fuse")),
    };
    poe_fuse_dim(experts, include_prior, d)
}

/// [`poe_fuse`] with an explicit dimension, so an empty expert list with the
/// prior yields `N(0, I)`.
pub fn poe_fuse_dim<S: Scalar>(
    experts: &[&DiagonalGaussian<S>],
    include_prior: bool,
    d: usize,
) -> Result<DiagonalGaussian<S>> {
    if experts.is_empty() && !include_prior {
        return Err(Error::invalid("no experts to fuse"));
    }
    for e in experts {
        if e.dim() != d {
            return Err(Error::shape("expert dimension", d, e.dim()));
        }
    }
    let prior_precision = if include_prior { S::one() } else { S::zero() };
    let mut precision = vec![prior_precision; d];
    let mut weighted = vec![S::zero(); d];
    for e in experts {
        for (i, lv) in e.effective_log_var().into_iter().enumerate() {
            let t = (-lv).exp();
            precision[i] = precision[i] + t;
            weighted[i] = weighted[i] + e.mean[i] * t;
        }
    }
    let mean = weighted.iter().zip(&precision).map(|(&w, &t)| w / t).collect();
    let log_var = precision.iter().map(|&t| -t.ln()).collect();
    DiagonalGaussian::new(mean, log_var)
}

/// Reverse mode of [`poe_fuse_dim`]: maps the gradient on the fused
/// Gaussian back onto each expert.
pub fn poe_backward<S: Scalar>(
    experts: &[&DiagonalGaussian<S>],
    fused: &DiagonalGaussian<S>,
    upstream: &GaussianGrad<S>,
) -> Vec<GaussianGrad<S>> {
    let d = fused.dim();
    // fused precision T = exp(-fused.log_var)
    let total: Vec<S> = fused.log_var.iter().map(|&v| (-v).exp()).collect();
    experts
        .iter()
        .map(|e| {
            let lv = e.effective_log_var();
            let mut g = GaussianGrad::zeros(d);
            for i in 0..d {
                let t = (-lv[i]).exp();
                g.mean[i] = upstream.mean[i] * t / total[i];
                if e.live(i) {
                    let d_t = (upstream.mean[i] * (e.mean[i] - fused.mean[i]) - upstream.log_var[i])
                        / total[i];
                    g.log_var[i] = -d_t * t;
                }
            }
            g
        })
        .collect()
}

/// `0.5 * sum(var + mean^2 - 1 - log var)`.
pub fn kl_standard_normal<S: Scalar>(q: &DiagonalGaussian<S>) -> S {
    let half = S::of(0.5);
    q.effective_log_var()
        .into_iter()
        .zip(&q.mean)
        .map(|(lv, &m)| half * (lv.exp() + m * m - S::one() - lv))
        .sum()
}

/// Gradient of `scale * KL(q || N(0, I))`.
pub fn kl_backward<S: Scalar>(q: &DiagonalGaussian<S>, scale: S) -> GaussianGrad<S> {
    let half = S::of(0.5);
    let var = q.variance();
    let mut g = GaussianGrad::zeros(q.dim());
    for i in 0..q.dim() {
        g.mean[i] = scale * q.mean[i];
        if q.live(i) {
            g.log_var[i] = scale * half * (var[i] - S::one());
        }
    }
    g
}

/// `z = mean + sqrt(var) * epsilon`.
pub fn reparameterize<S: Scalar>(q: &DiagonalGaussian<S>, epsilon: &[S]) -> Result<Vec<S>> {
    if epsilon.len() != q.dim() {
        return Err(Error::shape("epsilon", q.dim(), epsilon.len()));
    }
    let half = S::of(0.5);
    Ok(q.effective_log_var()
        .into_iter()
        .zip(&q.mean)
        .zip(epsilon)
        .map(|((lv, &m), &e)| m + (half * lv).exp() * e)
        .collect())
}

/// Reverse mode of [`reparameterize`] given `dz`.
pub fn reparameterize_backward<S: Scalar>(
    q: &DiagonalGaussian<S>,
    epsilon: &[S],
    dz: &[S],
) -> GaussianGrad<S> {
    let half = S::of(0.5);
    let lv = q.effective_log_var();
    let mut g = GaussianGrad::zeros(q.dim());
    for i in 0..q.dim() {
        g.mean[i] = dz[i];
        if q.live(i) {
            g.log_var[i] = dz[i] * half * (half * lv[i]).exp() * epsilon[i];
        }
    }
    g
}
