//! Encoder and decoder passes with the activations kept for reverse mode.

use crate::error::{Error, Result};
use crate::latent::{DiagonalGaussian, GaussianGrad};
use crate::model::arch::Modality;
use crate::model::params::ModelParams;
use crate::numerics::{backward, backward_pre, forward, preactivate, Activation, LayerSpec, Tensor};
use crate::scalar::Scalar;

/// Activations of one encoder pass: the (internally shaped) input and each
/// conv output, plus the resulting posterior.
#[derive(Debug, Clone)]
pub struct EncoderTrace<S> {
    pub modality: Modality,
    acts: Vec<Tensor<S>>,
    pub posterior: DiagonalGaussian<S>,
}

/// Activations of one decoder pass. `output` is the pre-activation of the
/// final layer: Bernoulli logits for images, Gaussian means for signals.
#[derive(Debug, Clone)]
pub struct DecoderTrace<S> {
    pub modality: Modality,
    z: Tensor<S>,
    acts: Vec<Tensor<S>>,
    pub output: Tensor<S>,
}

/// Reshapes a modality input into the layout the first conv expects.
fn internal_input<S: Scalar>(params: &ModelParams<S>, m: Modality, x: &Tensor<S>) -> Result<Tensor<S>> {
    let arch = params.arch();
    match m {
        Modality::Cxr => {
            let want = arch.image_dims();
            if x.dims() != want {
                return Err(image_shape_error(x.dims(), &want));
            }
            if x.data().iter().any(|&v| v < S::zero() || v > S::one()) {
                return Err(Error::invalid("image pixels must lie in [0, 1]"));
            }
            Ok(x.clone())
        }
        Modality::Ecg => {
            let l = arch.signal_len;
            let ok = matches!(x.dims(), [1, n] | [n, 1] if *n == l) || x.dims() == [l];
            if !ok {
                return Err(Error::shape("length", l, x.len()));
            }
            if !x.all_finite() {
                return Err(Error::NonFinite("signal".into()));
            }
            x.clone().reshape(&[l, 1])
        }
    }
}

fn image_shape_error(got: &[usize], want: &[usize; 3]) -> Error {
    if got.len() != 3 {
        return Error::shape("rank", 3, got.len());
    }
    let axes = ["height", "width", "channels"];
    for i in 0..3 {
        if got[i] != want[i] {
            return Error::shape(axes[i], want[i], got[i]);
        }
    }
    Error::shape("image", want.iter().product(), got.iter().product())
}

fn layer_specs<S: Scalar>(params: &ModelParams<S>, m: Modality, encoder: bool) -> Result<Vec<(String, LayerSpec)>> {
    if encoder {
        params.arch().encoder_layers(m)
    } else {
        params.arch().decoder_layers(m)
    }
}

pub fn encode_traced<S: Scalar>(
    params: &ModelParams<S>,
    m: Modality,
    x: &Tensor<S>,
) -> Result<EncoderTrace<S>> {
    let layers = layer_specs(params, m, true)?;
    let mut acts = vec![internal_input(params, m, x)?];
    for (name, spec) in &layers[..3] {
        let p = params.layer(name)?;
        let y = forward(spec, &p.weight, &p.bias, acts.last().expect("nonempty"))?;
        acts.push(y);
    }
    let flat = acts.last().expect("nonempty");
    let (mu_name, mu_spec) = &layers[3];
    let (lv_name, lv_spec) = &layers[4];
    let mu = params.layer(mu_name)?;
    let lv = params.layer(lv_name)?;
    let mean = forward(mu_spec, &mu.weight, &mu.bias, flat)?.into_data();
    let log_var = forward(lv_spec, &lv.weight, &lv.bias, flat)?.into_data();
    let posterior = DiagonalGaussian::new(mean, log_var)
        .map_err(|_| Error::Numeric(format!("{} encoder produced a non-finite posterior", m.name())))?;
    Ok(EncoderTrace { modality: m, acts, posterior })
}

/// Backpropagates a posterior gradient through the encoder, accumulating
/// parameter gradients into `grads`. Returns the input gradient (in the
/// caller's input layout) when `need_dx` is set.
pub fn encoder_backward<S: Scalar>(
    params: &ModelParams<S>,
    trace: &EncoderTrace<S>,
    upstream: &GaussianGrad<S>,
    grads: &mut ModelParams<S>,
    need_dx: bool,
    input_dims: Option<&[usize]>,
) -> Result<Option<Tensor<S>>> {
    let m = trace.modality;
    let layers = layer_specs(params, m, true)?;
    let flat = &trace.acts[3];
    let mut dflat = Tensor::zeros(flat.dims());
    for ((name, spec), g) in layers[3..5].iter().zip([&upstream.mean, &upstream.log_var]) {
        let p = params.layer(name)?;
        let out = Tensor::new(vec![g.len()], g.clone())?;
        let gp = grads.layer_mut(name)?;
        // linear heads: pre-activation gradient is the upstream gradient
        let dx = backward_pre(spec, &p.weight, flat, out.dims(), g, &mut gp.weight, &mut gp.bias, true)?
            .expect("requested");
        dflat.axpy(S::one(), &dx);
    }
    let mut dy = dflat.reshape(flat.dims())?;
    for i in (0..3).rev() {
        let (name, spec) = &layers[i];
        let p = params.layer(name)?;
        let gp = grads.layer_mut(name)?;
        let want_dx = i > 0 || need_dx;
        match backward(spec, &p.weight, &trace.acts[i], &trace.acts[i + 1], &dy, &mut gp.weight, &mut gp.bias, want_dx)? {
            Some(dx) => dy = dx,
            None => return Ok(None),
        }
    }
    match input_dims {
        Some(d) => Ok(Some(dy.reshape(d)?)),
        None => Ok(Some(dy)),
    }
}

pub fn decode_traced<S: Scalar>(params: &ModelParams<S>, m: Modality, z: &[S]) -> Result<DecoderTrace<S>> {
    let arch = params.arch();
    if z.len() != arch.latent_dim {
        return Err(Error::shape("latent", arch.latent_dim, z.len()));
    }
    let layers = layer_specs(params, m, false)?;
    let z = Tensor::new(vec![z.len()], z.to_vec())?;
    let (fc_name, fc_spec) = &layers[0];
    let fc = params.layer(fc_name)?;
    let h = forward(fc_spec, &fc.weight, &fc.bias, &z)?;
    let h = match m {
        Modality::Cxr => h.reshape(&arch.cxr_feature_dims()?)?,
        Modality::Ecg => h.reshape(&arch.ecg_feature_dims()?)?,
    };
    let mut acts = vec![h];
    for (name, spec) in &layers[1..3] {
        let p = params.layer(name)?;
        let y = forward(spec, &p.weight, &p.bias, acts.last().expect("nonempty"))?;
        acts.push(y);
    }
    let (last_name, last_spec) = &layers[3];
    let p = params.layer(last_name)?;
    let output = preactivate(last_spec, &p.weight, &p.bias, acts.last().expect("nonempty"))?;
    Ok(DecoderTrace { modality: m, z, acts, output })
}

/// Backpropagates the gradient on the final pre-activation to the latent code.
pub fn decoder_backward<S: Scalar>(
    params: &ModelParams<S>,
    trace: &DecoderTrace<S>,
    d_output: &[S],
    grads: &mut ModelParams<S>,
) -> Result<Vec<S>> {
    let layers = layer_specs(params, trace.modality, false)?;
    let (last_name, last_spec) = &layers[3];
    let p = params.layer(last_name)?;
    let gp = grads.layer_mut(last_name)?;
    let mut dy = backward_pre(
        last_spec,
        &p.weight,
        &trace.acts[2],
        trace.output.dims(),
        d_output,
        &mut gp.weight,
        &mut gp.bias,
        true,
    )?
    .expect("requested");
    for i in (1..3).rev() {
        let (name, spec) = &layers[i];
        let p = params.layer(name)?;
        let gp = grads.layer_mut(name)?;
        dy = backward(spec, &p.weight, &trace.acts[i - 1], &trace.acts[i], &dy, &mut gp.weight, &mut gp.bias, true)?
            .expect("requested");
    }
    let (fc_name, fc_spec) = &layers[0];
    let p = params.layer(fc_name)?;
    let gp = grads.layer_mut(fc_name)?;
    let h = trace.acts[0].clone().reshape(&[trace.acts[0].len()])?;
    let dh = dy.reshape(&[h.len()])?;
    let dz = backward(fc_spec, &p.weight, &trace.z, &h, &dh, &mut gp.weight, &mut gp.bias, true)?
        .expect("requested");
    Ok(dz.into_data())
}

/// Final-layer activation of a decoder.
pub fn decoder_activation(m: Modality) -> Activation {
    match m {
        Modality::Cxr => Activation::Sigmoid,
        Modality::Ecg => Activation::None,
    }
}

impl<S: Scalar> DecoderTrace<S> {
    /// Decoder output after the final activation, in the modality's on-disk layout.
    pub fn means(&self, params: &ModelParams<S>) -> Result<Tensor<S>> {
        let act = decoder_activation(self.modality);
        let t = self.output.map(|v| act.apply(v));
        match self.modality {
            Modality::Cxr => Ok(t),
            Modality::Ecg => t.reshape(&params.arch().signal_dims()),
        }
    }
}
