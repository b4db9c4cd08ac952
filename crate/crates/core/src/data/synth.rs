//! Synthetic paired-modality benchmark.
//!
//! Each sample draws a shared factor vector `s ~ N(0, I)` plus nuisance
//! factors private to each modality. `s[0]` is the severity that both
//! modalities show and that the label thresholds:
//!
//! * image: a centered ellipse whose area grows with severity, a striped
//!   background texture set by the image nuisance, then pixel noise;
//! * signal: a Gaussian-bump spike train whose amplitude and spacing grow
//!   with severity, a sinusoidal drift set by the signal nuisance, then
//!   additive noise.
//!
//! Factors come from one ChaCha stream (`seed`) and rendering noise from
//! another (`noise_seed`), so re-rendering with a new noise seed keeps every
//! label.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Severity is clamped to this range before rendering so sizes stay positive.
const SEVERITY_LIMIT: f64 = 3.0;
const STRIPE_LEVEL: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub shared_dim: usize,
    pub image_noise: f64,
    pub signal_noise: f64,
    /// Label is 1 iff `s[0] > threshold`. `None` derives the threshold from
    /// `positive_fraction`.
    pub threshold: Option<f64>,
    pub positive_fraction: f64,
    /// Per-modality perturbation of the severity each view renders, as a
    /// multiple of a standard normal. Zero makes both views exact.
    pub view_jitter: f64,
    pub image_h: usize,
    pub image_w: usize,
    pub signal_len: usize,
    pub seed: u64,
    /// Seed for rendering noise; `None` derives it from `seed`.
    pub noise_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            shared_dim: 2,
            image_noise: 0.05,
            signal_noise: 0.1,
            threshold: None,
            positive_fraction: 0.5,
            view_jitter: 0.3,
            image_h: 64,
            image_w: 64,
            signal_len: 4096,
            seed: 0,
            noise_seed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("synthetic dataset needs n >= 2"));
        }
        if self.shared_dim == 0 {
            return Err(Error::invalid("shared_dim must be >= 1"));
        }
        for (name, v) in [
            ("image_noise", self.image_noise),
            ("signal_noise", self.signal_noise),
            ("view_jitter", self.view_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::invalid("positive_fraction must lie in (0, 1)"));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::invalid("threshold must be finite"));
            }
        }
        if self.image_h < 4 || self.image_w < 4 || self.signal_len < 16 {
            return Err(Error::invalid("synthetic images need >= 4x4 pixels and signals >= 16 samples"));
        }
        Ok(())
    }

    /// The label threshold on `s[0]`.
    pub fn resolved_threshold(&self) -> f64 {
        self.threshold.unwrap_or_else(|| {
            let std = Normal::standard();
            std.inverse_cdf(1.0 - self.positive_fraction)
        })
    }

    fn resolved_noise_seed(&self) -> u64 {
        self.noise_seed.unwrap_or(self.seed ^ 0x9e37_79b9_7f4a_7c15)
    }
}

/// Latent factors of one synthetic sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFactors {
    pub shared: Vec<f64>,
    pub u_img: [f64; 2],
    pub u_sig: [f64; 2],
    /// Standard-normal draws scaled by `view_jitter` for image and signal.
    pub jitter: [f64; 2],
}

impl SampleFactors {
    fn draw<R: Rng + ?Sized>(rng: &mut R, shared_dim: usize) -> Self {
        let mut g = || -> f64 { StandardNormal.sample(&mut *rng) };
        let shared = (0..shared_dim).map(|_| g()).collect();
        Self {
            shared,
            u_img: [g(), g()],
            u_sig: [g(), g()],
            jitter: [g(), g()],
        }
    }

    fn severity(&self, view: usize, view_jitter: f64) -> f64 {
        (self.shared[0] + view_jitter * self.jitter[view]).clamp(-SEVERITY_LIMIT, SEVERITY_LIMIT)
    }

    fn secondary(&self) -> f64 {
        self.shared.get(1).copied().unwrap_or(0.0).clamp(-SEVERITY_LIMIT, SEVERITY_LIMIT)
    }
}

/// Renders the image view `[h, w, 1]` in `[0, 1]`.
pub fn render_image<R: Rng + ?Sized>(f: &SampleFactors, cfg: &SynthConfig, noise: &mut R) -> Vec<f64> {
    let (h, w) = (cfg.image_h, cfg.image_w);
    let sev = f.severity(0, cfg.view_jitter);
    let r = 0.25 * h.min(w) as f64 * (1.0 + 0.2 * sev);
    // aspect ratio from the nuisance, keeping the area set by `r`
    let aspect = (0.15 * f.u_img[1].tanh()).exp();
    let (ry, rx) = (r / aspect, r * aspect);
    let cy = (h as f64 - 1.0) / 2.0 + 0.05 * h as f64 * f.secondary();
    let cx = (w as f64 - 1.0) / 2.0;
    let period = 4.0 + 2.0 * f.u_img[0].abs().min(3.0);
    let phase = f.u_img[0] * period;
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let dy = (i as f64 - cy) / ry;
            let dx = (j as f64 - cx) / rx;
            let base = if dy * dy + dx * dx <= 1.0 {
                1.0
            } else if ((j as f64 + phase) / period).floor().rem_euclid(2.0) == 0.0 {
                STRIPE_LEVEL
            } else {
                0.0
            };
            let eps: f64 = if cfg.image_noise > 0.0 { StandardNormal.sample(&mut *noise) } else { 0.0 };
            out.push((base + cfg.image_noise * eps).clamp(0.0, 1.0));
        }
    }
    out
}

/// Renders the signal view (length `signal_len`).
pub fn render_signal<R: Rng + ?Sized>(f: &SampleFactors, cfg: &SynthConfig, noise: &mut R) -> Vec<f64> {
    let l = cfg.signal_len;
    let sev = f.severity(1, cfg.view_jitter);
    let amplitude = 1.0 + 0.25 * sev;
    let interval = l as f64 / 16.0 * (1.0 + 0.1 * sev);
    let width = (interval / 20.0) * (1.0 + 0.1 * f.secondary()).max(0.5);
    let phase = 0.5 * interval;
    let drift_freq = 1.0 + f.u_sig[1].abs().min(3.0);
    let mut out = Vec::with_capacity(l);
    for t in 0..l {
        let t = t as f64;
        // nearest spike centers on either side of t
        let k = ((t - phase) / interval).floor();
        let mut v = 0.0;
        for c in [k - 1.0, k, k + 1.0] {
            let d = t - (phase + c * interval);
            v += amplitude * (-0.5 * (d / width).powi(2)).exp();
        }
        v += 0.3 * f.u_sig[0] * (2.0 * PI * drift_freq * t / l as f64).sin();
        let eps: f64 = if cfg.signal_noise > 0.0 { StandardNormal.sample(&mut *noise) } else { 0.0 };
        out.push(v + cfg.signal_noise * eps);
    }
    out
}

/// The factors of all `cfg.n` samples, in sample order.
pub fn synth_factors(cfg: &SynthConfig) -> Result<Vec<SampleFactors>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.n).map(|_| SampleFactors::draw(&mut rng, cfg.shared_dim)).collect())
}

/// Generates the labeled paired dataset. Ids are `s00000`, `s00001`, ...
pub fn synth_generate<S: Scalar>(cfg: &SynthConfig) -> Result<Vec<PairedSample<S>>> {
    let factors = synth_factors(cfg)?;
    let threshold = cfg.resolved_threshold();
    let mut noise = ChaCha8Rng::seed_from_u64(cfg.resolved_noise_seed());
    let width = cfg.n.saturating_sub(1).to_string().len().max(5);
    factors
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let img = render_image(f, cfg, &mut noise);
            let sig = render_signal(f, cfg, &mut noise);
            Ok(PairedSample {
                id: format!("s{i:0width$}"),
                image: Some(Tensor::new(
                    vec![cfg.image_h, cfg.image_w, 1],
                    img.into_iter().map(S::of).collect(),
                )?),
                signal: Some(Tensor::new(vec![1, cfg.signal_len], sig.into_iter().map(S::of).collect())?),
                label: Some(u8::from(f.shared[0] > threshold)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n,
            image_h: 32,
            image_w: 32,
            signal_len: 512,
            seed,
            ..SynthConfig::default()
        }
    }

    fn factors(s0: f64) -> SampleFactors {
        SampleFactors {
            shared: vec![s0, 0.0],
            u_img: [0.4, -0.3],
            u_sig: [0.5, 0.2],
            jitter: [0.0, 0.0],
        }
    }

    #[test]
    fn severity_is_monotone_in_both_views() {
        let cfg = SynthConfig { image_noise: 0.0, signal_noise: 0.0, ..small(2, 0) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lo = factors(-2.0);
        let hi = factors(2.0);
        let count = |v: &[f64]| v.iter().filter(|&&p| p == 1.0).count();
        let (a, b) = (render_image(&lo, &cfg, &mut rng), render_image(&hi, &cfg, &mut rng));
        assert!(count(&b) > count(&a), "{} vs {}", count(&b), count(&a));
        let peak = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
        let (sa, sb) = (render_signal(&lo, &cfg, &mut rng), render_signal(&hi, &cfg, &mut rng));
        assert!(peak(&sb) > peak(&sa));
    }

    #[test]
    fn noise_free_images_are_in_range() {
        let cfg = SynthConfig { image_noise: 0.0, ..small(4, 1) };
        for s in synth_generate::<f32>(&cfg).unwrap() {
            let img = s.image.unwrap();
            assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0 || v == STRIPE_LEVEL as f32));
        }
        let noisy = synth_generate::<f32>(&small(4, 1)).unwrap();
        assert!(noisy.iter().all(|s| s.image.as_ref().unwrap().data().iter().all(|&v| (0.0..=1.0).contains(&v))));
    }

    #[test]
    fn median_threshold_balances_classes() {
        for seed in 0..5 {
            let cfg = SynthConfig { n: 1000, threshold: Some(0.0), ..small(1000, seed) };
            let f = synth_factors(&cfg).unwrap();
            let pos = f.iter().filter(|f| f.shared[0] > 0.0).count();
            assert!((450..=550).contains(&pos), "seed {seed}: {pos}");
        }
        let cfg = SynthConfig { positive_fraction: 0.3, ..small(2, 0) };
        assert!((cfg.resolved_threshold() - 0.5244005127080407).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_label_stable_under_noise_seed() {
        let cfg = small(6, 9);
        let a = synth_generate::<f32>(&cfg).unwrap();
        let b = synth_generate::<f32>(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_generate::<f32>(&SynthConfig { noise_seed: Some(1234), ..cfg }).unwrap();
        assert_ne!(a[0].image, c[0].image);
        assert!(a.iter().zip(&c).all(|(x, y)| x.label == y.label));
    }

    #[test]
    fn config_validation() {
        assert!(synth_generate::<f32>(&small(1, 0)).is_err());
        assert!(synth_generate::<f32>(&SynthConfig { image_noise: -1.0, ..small(2, 0) }).is_err());
        assert!(synth_generate::<f32>(&SynthConfig { shared_dim: 0, ..small(2, 0) }).is_err());
    }
}
