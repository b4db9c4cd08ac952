use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::invalid("adam needs lr > 0, betas in [0, 1), eps > 0"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of a flat parameter slice, where `t` is
/// the 1-based step number.
pub fn adam_update<S: Scalar>(param: &mut [S], grad: &[S], m: &mut [S], v: &mut [S], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let c1 = S::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = S::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (S::of(cfg.lr), S::of(cfg.eps));
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam moments for every tensor of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<S> {
    pub m: ModelParams<S>,
    pub v: ModelParams<S>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(params: &ModelParams<S>, cfg: AdamConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            cfg,
        }
    }
}

/// Applies one Adam step to every layer of `params`.
pub fn adam_step<S: Scalar>(params: &mut ModelParams<S>, grads: &ModelParams<S>, state: &mut OptimState<S>) -> Result<()> {
    adam_step_where(params, grads, state, |_| true)
}

/// Applies one Adam step to the layers whose names satisfy `train`; the
/// rest keep their values and moments bit for bit.
pub fn adam_step_where<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    state: &mut OptimState<S>,
    train: impl Fn(&str) -> bool,
) -> Result<()> {
    for (name, g) in grads.layers() {
        if !train(name) {
            continue;
        }
        for (tensor, t) in [("weight", &g.weight), ("bias", &g.bias)] {
            if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}.{tensor} at element {i}")));
            }
        }
        let p = params.layer(name)?;
        if p.weight.dims() != g.weight.dims() || p.bias.dims() != g.bias.dims() {
            return Err(Error::invalid(format!("gradient of {name} has mismatched shape")));
        }
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.cfg;
    let names: Vec<String> = grads.layers().map(|(n, _)| n.clone()).filter(|n| train(n)).collect();
    for name in names {
        let g = grads.layer(&name)?;
        let m = state.m.layer_mut(&name)?;
        let v = state.v.layer_mut(&name)?;
        let p = params.layer_mut(&name)?;
        adam_update(p.weight.data_mut(), g.weight.data(), m.weight.data_mut(), v.weight.data_mut(), t, &cfg);
        adam_update(p.bias.data_mut(), g.bias.data(), m.bias.data_mut(), v.bias.data_mut(), t, &cfg);
    }
    Ok(())
}
