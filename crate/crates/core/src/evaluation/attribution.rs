use std::io::Write;
use std::path::Path;

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::latent::{poe_backward, poe_fuse, DiagonalGaussian, GaussianGrad};
use crate::model::network::{encode_traced, encoder_backward, EncoderTrace};
use crate::model::{head_backward, head_forward, FeatureMode, Modality, ModelParams};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Fewest interpolation steps accepted.
pub const MIN_IG_STEPS: usize = 8;

/// Integrated-gradients attributions for one sample. Attributions are in
/// 64-bit and share the dims of the corresponding input; a modality the
/// mode does not read has no map.
#[derive(Debug, Clone)]
pub struct AttributionMap {
    pub mode: FeatureMode,
    pub image: Option<Tensor<f64>>,
    pub signal: Option<Tensor<f64>>,
    pub baseline_image: Option<Tensor<f64>>,
    pub baseline_signal: Option<Tensor<f64>>,
    pub steps: usize,
    /// Head logit at the input.
    pub f_input: f64,
    /// Head logit at the baseline.
    pub f_baseline: f64,
    /// `|sum of attributions - (f_input - f_baseline)|`.
    pub residual: f64,
}

impl AttributionMap {
    /// Residual as a fraction of `|f_input - f_baseline|`.
    pub fn relative_residual(&self) -> f64 {
        self.residual / (self.f_input - self.f_baseline).abs()
    }

    pub fn total(&self) -> f64 {
        let sum = |t: &Option<Tensor<f64>>| t.as_ref().map_or(0.0, |t| t.data().iter().sum::<f64>());
        sum(&self.image) + sum(&self.signal)
    }
}

/// Result of [`integrated_gradients_fn`] over a flat input.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAttribution {
    pub attributions: Vec<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
    pub residual: f64,
}

/// Integrated gradients of an arbitrary differentiable scalar function.
///
/// `f` returns the value and gradient at a point. Gradients are averaged at
/// `baseline + (k/steps)(x - baseline)` for `k = 1..=steps`.
pub fn integrated_gradients_fn<F>(mut f: F, x: &[f64], baseline: &[f64], steps: usize) -> Result<PathAttribution>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if steps < MIN_IG_STEPS {
        return Err(Error::invalid(format!("integrated gradients needs at least {MIN_IG_STEPS} steps, got {steps}")));
    }
    if x.len() != baseline.len() {
        return Err(Error::shape("baseline", x.len(), baseline.len()));
    }
    let (f_baseline, _) = f(baseline)?;
    let mut avg = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    let mut f_input = f_baseline;
    for k in 1..=steps {
        let alpha = k as f64 / steps as f64;
        for ((p, &xi), &bi) in point.iter_mut().zip(x).zip(baseline) {
            *p = if k == steps { xi } else { bi + alpha * (xi - bi) };
        }
        let (value, grad) = f(&point)?;
        if grad.len() != x.len() {
            return Err(Error::shape("gradient", x.len(), grad.len()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient element {i} at step {k}")));
        }
        avg.iter_mut().zip(&grad).for_each(|(a, g)| *a += g);
        if k == steps {
            f_input = value;
        }
    }
    if !f_input.is_finite() || !f_baseline.is_finite() {
        return Err(Error::NonFinite("attributed function value".into()));
    }
    let n = steps as f64;
    let attributions: Vec<f64> = avg.iter().zip(x).zip(baseline).map(|((a, xi), bi)| (xi - bi) * a / n).collect();
    let residual = (attributions.iter().sum::<f64>() - (f_input - f_baseline)).abs();
    Ok(PathAttribution { attributions, f_input, f_baseline, residual })
}

/// Eval-mode head logit through the frozen encoders and its gradients with
/// respect to the inputs the mode reads. `grads` is scratch space for the
/// parameter gradients that fall out of the backward pass.
pub fn logit_input_gradients(
    params: &ModelParams<f64>,
    image: Option<&Tensor<f64>>,
    signal: Option<&Tensor<f64>>,
    mode: FeatureMode,
    grads: &mut ModelParams<f64>,
) -> Result<(f64, Option<Tensor<f64>>, Option<Tensor<f64>>)> {
    let (image, signal) = used_inputs(image, signal, mode)?;
    let traces: Vec<(EncoderTrace<f64>, &Tensor<f64>)> = [(Modality::Cxr, image), (Modality::Ecg, signal)]
        .into_iter()
        .filter_map(|(m, x)| x.map(|x| encode_traced(params, m, x).map(|t| (t, x))))
        .collect::<Result<_>>()?;

    let experts: Vec<&DiagonalGaussian<f64>> = traces.iter().map(|(t, _)| &t.posterior).collect();
    let fused = match mode {
        FeatureMode::Joint => Some(poe_fuse(&experts, true)?),
        _ => None,
    };
    let features = fused.as_ref().unwrap_or(experts[0]);
    let head = head_forward(params, &features.mean, None)?;
    let dfeat = head_backward(params, &head, 1.0, grads)?;
    let d = dfeat.len();
    let upstream = GaussianGrad { mean: dfeat, log_var: vec![0.0; d] };
    let per_expert = match &fused {
        Some(f) => poe_backward(&experts, f, &upstream),
        None => vec![upstream],
    };

    let (mut dimage, mut dsignal) = (None, None);
    for ((trace, x), g) in traces.iter().zip(&per_expert) {
        let dx = encoder_backward(params, trace, g, grads, true, Some(x.dims()))?.expect("requested");
        match trace.modality {
            Modality::Cxr => dimage = Some(dx),
            Modality::Ecg => dsignal = Some(dx),
        }
    }
    Ok((head.logit, dimage, dsignal))
}

fn used_inputs<'a, S>(
    image: Option<&'a Tensor<S>>,
    signal: Option<&'a Tensor<S>>,
    mode: FeatureMode,
) -> Result<(Option<&'a Tensor<S>>, Option<&'a Tensor<S>>)> {
    let missing = |what: &str| Error::invalid(format!("{} mode needs the {what} modality", mode.name()));
    match mode {
        FeatureMode::Cxr => Ok((Some(image.ok_or_else(|| missing("image"))?), None)),
        FeatureMode::Ecg => Ok((None, Some(signal.ok_or_else(|| missing("signal"))?))),
        FeatureMode::Joint if image.is_none() && signal.is_none() => Err(missing("image or signal")),
        FeatureMode::Joint => Ok((image, signal)),
    }
}

/// Integrated gradients of the classifier logit for one sample, computed in
/// 64-bit whatever the parameter precision. The baseline defaults to zeros
/// for every modality the mode reads.
pub fn integrated_gradients<S: Scalar>(
    params: &ModelParams<S>,
    sample: &PairedSample<S>,
    baseline: Option<&PairedSample<S>>,
    steps: usize,
    mode: FeatureMode,
) -> Result<AttributionMap> {
    if steps < MIN_IG_STEPS {
        return Err(Error::invalid(format!("integrated gradients needs at least {MIN_IG_STEPS} steps, got {steps}")));
    }
    let p64: ModelParams<f64> = params.cast();
    let (image, signal) = used_inputs(sample.image.as_ref(), sample.signal.as_ref(), mode)?;
    let image = image.map(Tensor::cast::<f64>);
    let signal = signal.map(Tensor::cast::<f64>);

    let pick = |x: &Option<Tensor<f64>>, b: Option<&Tensor<S>>, what: &str| -> Result<Option<Tensor<f64>>> {
        let Some(x) = x else { return Ok(None) };
        match b {
            None => Ok(Some(Tensor::zeros(x.dims()))),
            Some(b) if b.dims() == x.dims() => Ok(Some(b.cast())),
            Some(b) => Err(Error::invalid(format!("{what} baseline has dims {:?}, input has {:?}", b.dims(), x.dims()))),
        }
    };
    let base_image = pick(&image, baseline.and_then(|b| b.image.as_ref()), "image")?;
    let base_signal = pick(&signal, baseline.and_then(|b| b.signal.as_ref()), "signal")?;

    let n_img = image.as_ref().map_or(0, Tensor::len);
    let flat = |a: &Option<Tensor<f64>>, b: &Option<Tensor<f64>>| {
        let mut v = a.as_ref().map_or_else(Vec::new, |t| t.data().to_vec());
        v.extend(b.as_ref().map_or(&[][..], |t| t.data()));
        v
    };
    let x = flat(&image, &signal);
    let x0 = flat(&base_image, &base_signal);

    let mut scratch = p64.zeros_like();
    let mut eval = |point: &[f64]| -> Result<(f64, Vec<f64>)> {
        let img = image
            .as_ref()
            .map(|t| Tensor::new(t.dims().to_vec(), point[..n_img].iter().map(|v| v.clamp(0.0, 1.0)).collect()))
            .transpose()?;
        let sig = signal.as_ref().map(|t| Tensor::new(t.dims().to_vec(), point[n_img..].to_vec())).transpose()?;
        let (logit, di, ds) = logit_input_gradients(&p64, img.as_ref(), sig.as_ref(), mode, &mut scratch)?;
        let mut g = di.map_or_else(Vec::new, Tensor::into_data);
        g.extend(ds.map_or_else(Vec::new, Tensor::into_data));
        Ok((logit, g))
    };
    let path = integrated_gradients_fn(&mut eval, &x, &x0, steps)?;

    let attr_image = image.as_ref().map(|t| Tensor::new(t.dims().to_vec(), path.attributions[..n_img].to_vec())).transpose()?;
    let attr_signal = signal.as_ref().map(|t| Tensor::new(t.dims().to_vec(), path.attributions[n_img..].to_vec())).transpose()?;
    Ok(AttributionMap {
        mode,
        image: attr_image,
        signal: attr_signal,
        baseline_image: base_image,
        baseline_signal: base_signal,
        steps,
        f_input: path.f_input,
        f_baseline: path.f_baseline,
        residual: path.residual,
    })
}

/// Binary graymap (P5) of attribution magnitude. Channels are summed, then
/// `|a|` is scaled so the largest magnitude maps to 255.
pub fn write_attribution_pgm(path: impl AsRef<Path>, attribution: &Tensor<f64>) -> Result<()> {
    let [h, w, c] = match attribution.dims() {
        &[h, w, c] => [h, w, c],
        d => return Err(Error::shape("rank", 3, d.len())),
    };
    let mag: Vec<f64> = attribution.data().chunks(c).map(|px| px.iter().sum::<f64>().abs()).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mag.iter().map(|&m| if max > 0.0 { (255.0 * m / max).round() as u8 } else { 0 }));
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// CSV with columns `index,value,attribution` for a 1D signal.
pub fn write_signal_attribution_csv<S: Scalar>(path: impl AsRef<Path>, signal: &Tensor<S>, attribution: &Tensor<f64>) -> Result<()> {
    if signal.len() != attribution.len() {
        return Err(Error::shape("attribution length", signal.len(), attribution.len()));
    }
    let mut out = String::from("index,value,attribution\n");
    for (i, (v, a)) in signal.data().iter().zip(attribution.data()).enumerate() {
        out.push_str(&format!("{i},{},{a}\n", v.to_f64().unwrap_or(f64::NAN)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::ArchConfig;
    use crate::numerics::relative_error;

    fn arch() -> ArchConfig {
        ArchConfig { image_h: 8, image_w: 8, signal_len: 32, channels: [2, 3, 4], latent_dim: 3, head_hidden: 5, ..ArchConfig::desk() }
    }

    fn sample() -> PairedSample<f64> {
        let s = synth_generate::<f32>(&SynthConfig { n: 2, image_h: 8, image_w: 8, signal_len: 32, seed: 3, ..SynthConfig::default() }).unwrap();
        s[0].cast()
    }

    #[test]
    fn linear_function_is_exact() {
        let w: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 1.3).cos()).collect();
        let b: Vec<f64> = (0..40).map(|i| 0.1 * i as f64).collect();
        let f = |p: &[f64]| Ok((p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.5, w.clone()));
        let r = integrated_gradients_fn(f, &x, &b, 8).unwrap();
        for i in 0..40 {
            assert!((r.attributions[i] - w[i] * (x[i] - b[i])).abs() <= 1e-12);
        }
        assert!(r.residual <= 1e-10, "{}", r.residual);
    }

    #[test]
    fn rejects_few_steps_and_non_finite_gradients() {
        let f = |_: &[f64]| Ok((0.0, vec![1.0]));
        assert!(integrated_gradients_fn(f, &[1.0], &[0.0], 7).is_err());
        let bad = |p: &[f64]| Ok((0.0, vec![if p[0] > 0.5 { f64::NAN } else { 1.0 }]));
        assert!(matches!(integrated_gradients_fn(bad, &[1.0], &[0.0], 8), Err(Error::NonFinite(_))));
        let p = ModelParams::<f64>::init(&arch(), 0).unwrap();
        assert!(integrated_gradients(&p, &sample(), None, 4, FeatureMode::Joint).is_err());
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let p = ModelParams::<f64>::init(&arch(), 1).unwrap();
        let s = sample();
        let (img, sig) = (s.image.clone().unwrap(), s.signal.clone().unwrap());
        let mut scratch = p.zeros_like();
        let logit = |i: &Tensor<f64>, g: &Tensor<f64>| {
            let mut sc = p.zeros_like();
            logit_input_gradients(&p, Some(i), Some(g), FeatureMode::Joint, &mut sc).unwrap().0
        };
        let (_, di, ds) = logit_input_gradients(&p, Some(&img), Some(&sig), FeatureMode::Joint, &mut scratch).unwrap();
        let (di, ds) = (di.unwrap(), ds.unwrap());
        assert_eq!(di.dims(), img.dims());
        assert_eq!(ds.dims(), sig.dims());
        let h = 1e-6;
        for k in [0, 17, 40, 63] {
            let (mut a, mut b) = (img.clone(), img.clone());
            // stay inside [0, 1]
            let c = img.data()[k].clamp(h, 1.0 - h);
            a.data_mut()[k] = c + h;
            b.data_mut()[k] = c - h;
            let mut mid = img.clone();
            mid.data_mut()[k] = c;
            let mut sc = p.zeros_like();
            let g = logit_input_gradients(&p, Some(&mid), Some(&sig), FeatureMode::Joint, &mut sc).unwrap().1.unwrap();
            let fd = (logit(&a, &sig) - logit(&b, &sig)) / (2.0 * h);
            assert!(relative_error(g.data()[k], fd) < 1e-5, "pixel {k}: {} vs {fd}", g.data()[k]);
        }
        for k in [0, 9, 31] {
            let (mut a, mut b) = (sig.clone(), sig.clone());
            a.data_mut()[k] += h;
            b.data_mut()[k] -= h;
            let fd = (logit(&img, &a) - logit(&img, &b)) / (2.0 * h);
            assert!(relative_error(ds.data()[k], fd) < 1e-5, "signal {k}: {} vs {fd}", ds.data()[k]);
        }
    }

    #[test]
    fn baseline_equal_to_input_gives_zeros() {
        let p = ModelParams::<f64>::init(&arch(), 2).unwrap();
        let mut s = sample();
        s.image.as_mut().unwrap().fill_zero();
        s.signal.as_mut().unwrap().fill_zero();
        let m = integrated_gradients(&p, &s, None, 8, FeatureMode::Joint).unwrap();
        assert!(m.image.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(m.signal.unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(m.residual, 0.0);
    }

    #[test]
    fn modes_attribute_only_what_they_read() {
        let p = ModelParams::<f64>::init(&arch(), 2).unwrap();
        let s = sample();
        let c = integrated_gradients(&p, &s, None, 16, FeatureMode::Cxr).unwrap();
        assert!(c.image.is_some() && c.signal.is_none());
        assert_eq!(c.image.unwrap().dims(), s.image.as_ref().unwrap().dims());
        let e = integrated_gradients(&p, &s, None, 16, FeatureMode::Ecg).unwrap();
        assert!(e.image.is_none());
        assert_eq!(e.signal.unwrap().dims(), &[1, 32]);
        let mut only_sig = s.clone();
        only_sig.image = None;
        assert!(integrated_gradients(&p, &only_sig, None, 16, FeatureMode::Cxr).is_err());
    }

    #[test]
    fn residual_shrinks_with_more_steps() {
        let p = ModelParams::<f64>::init(&arch(), 5).unwrap();
        let s = sample();
        let r: Vec<f64> = [32, 64, 128, 256]
            .iter()
            .map(|&n| integrated_gradients(&p, &s, None, n, FeatureMode::Joint).unwrap().residual)
            .collect();
        assert!(r[2] <= r[0] * 1.05 && r[3] <= r[1] * 1.05, "{r:?}");
        let m = integrated_gradients(&p, &s, None, 256, FeatureMode::Joint).unwrap();
        assert!((m.total() - (m.f_input - m.f_baseline)).abs() - m.residual < 1e-12);
    }

    #[test]
    fn writers() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::new(vec![2, 3, 1], vec![0.0, -2.0, 1.0, 0.5, 0.0, 0.25]).unwrap();
        let path = dir.path().join("a.pgm");
        write_attribution_pgm(&path, &a).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 255, 128, 64, 0, 32]);

        let sig = Tensor::new(vec![1, 2], vec![0.5f32, -1.0]).unwrap();
        let at = Tensor::new(vec![1, 2], vec![0.125, -3.0]).unwrap();
        let csv = dir.path().join("s.csv");
        write_signal_attribution_csv(&csv, &sig, &at).unwrap();
        assert_eq!(std::fs::read_to_string(&csv).unwrap(), "index,value,attribution\n0,0.5,0.125\n1,-1,-3\n");
    }
}
