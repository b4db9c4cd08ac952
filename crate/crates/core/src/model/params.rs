use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, FormatError, Result};
use crate::model::arch::ArchConfig;
use crate::numerics::{LayerSpec, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> LayerParams<S> {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            weight: Tensor::zeros(&spec.weight_dims()),
            bias: Tensor::zeros(&spec.bias_dims()),
        }
    }
}

/// All weights of the network, keyed by layer name (`cxr_encoder.conv1`,
/// `head.fc2`, ...). Serialized tensor names append `.weight` / `.bias`.
/// The same type doubles as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    arch: ArchConfig,
    layers: BTreeMap<String, LayerParams<S>>,
}

impl<S: Scalar> ModelParams<S> {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases,
    /// drawn in canonical layer order from a ChaCha8 stream seeded by `seed`.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = BTreeMap::new();
        for (name, spec) in arch.all_layers()? {
            let bound = (6.0 / spec.fan_in() as f64).sqrt();
            let dims = spec.weight_dims();
            let n = dims.iter().product();
            let w = (0..n).map(|_| S::of(rng.random_range(-bound..bound))).collect();
            layers.insert(
                name,
                LayerParams {
                    weight: Tensor::new(dims, w)?,
                    bias: Tensor::zeros(&spec.bias_dims()),
                },
            );
        }
        Ok(Self { arch: arch.clone(), layers })
    }

    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .all_layers()?
            .into_iter()
            .map(|(name, spec)| (name, LayerParams::zeros(&spec)))
            .collect();
        Ok(Self { arch: arch.clone(), layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        LayerParams {
                            weight: Tensor::zeros(v.weight.dims()),
                            bias: Tensor::zeros(v.bias.dims()),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layer(&self, name: &str) -> Result<&LayerParams<S>> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::Format(FormatError::MissingTensor(name.to_string())))
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut LayerParams<S>> {
        self.layers
            .get_mut(name)
            .ok_or_else(|| Error::Format(FormatError::MissingTensor(name.to_string())))
    }

    pub fn layers(&self) -> impl Iterator<Item = (&String, &LayerParams<S>)> {
        self.layers.iter()
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = (&String, &mut LayerParams<S>)> {
        self.layers.iter_mut()
    }

    /// `(tensor name, tensor)` pairs in sorted order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v = Vec::with_capacity(self.layers.len() * 2);
        for (name, p) in &self.layers {
            v.push((format!("{name}.bias"), &p.bias));
            v.push((format!("{name}.weight"), &p.weight));
        }
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Rebuilds params from named tensors, requiring exactly the tensors the
    /// arch calls for with matching dims.
    pub fn from_named_tensors(
        arch: &ArchConfig,
        mut tensors: BTreeMap<String, Tensor<S>>,
    ) -> Result<Self> {
        arch.validate()?;
        let mut layers = BTreeMap::new();
        for (name, spec) in arch.all_layers()? {
            let mut take = |suffix: &str, dims: Vec<usize>| -> Result<Tensor<S>> {
                let key = format!("{name}.{suffix}");
                let t = tensors
                    .remove(&key)
                    .ok_or_else(|| Error::Format(FormatError::MissingTensor(key.clone())))?;
                if t.dims() != dims.as_slice() {
                    return Err(Error::Format(FormatError::ArchMismatch(format!(
                        "{key} has dims {:?}, arch expects {dims:?}",
                        t.dims()
                    ))));
                }
                Ok(t)
            };
            let weight = take("weight", spec.weight_dims())?;
            let bias = take("bias", spec.bias_dims())?;
            layers.insert(name, LayerParams { weight, bias });
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(FormatError::ArchMismatch(format!(
                "unexpected tensor {extra}"
            ))));
        }
        Ok(Self { arch: arch.clone(), layers })
    }

    pub fn num_params(&self) -> usize {
        self.layers.values().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        LayerParams {
                            weight: v.weight.cast(),
                            bias: v.bias.cast(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for p in self.layers.values_mut() {
            p.weight.fill_zero();
            p.bias.fill_zero();
        }
    }

    /// `self += alpha * other`, layer by layer.
    pub fn axpy(&mut self, alpha: S, other: &Self) {
        for (k, p) in self.layers.iter_mut() {
            if let Some(o) = other.layers.get(k) {
                p.weight.axpy(alpha, &o.weight);
                p.bias.axpy(alpha, &o.bias);
            }
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for p in self.layers.values_mut() {
            p.weight.scale(alpha);
            p.bias.scale(alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .values()
            .all(|p| p.weight.all_finite() && p.bias.all_finite())
    }

    /// Bitwise equality of every tensor whose layer name starts with `prefix`
    /// (all tensors for an empty prefix).
    pub fn bit_eq_prefix(&self, other: &Self, prefix: &str) -> bool {
        let mine: Vec<_> = self.layers.iter().filter(|(k, _)| k.starts_with(prefix)).collect();
        let theirs: Vec<_> = other.layers.iter().filter(|(k, _)| k.starts_with(prefix)).collect();
        mine.len() == theirs.len()
            && mine.iter().zip(&theirs).all(|((ka, a), (kb, b))| {
                ka == kb && a.weight.bit_eq(&b.weight) && a.bias.bit_eq(&b.bias)
            })
    }

    /// All parameters flattened in canonical (sorted tensor name) order.
    pub fn flatten(&self) -> Vec<S> {
        self.named_tensors()
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn unflatten(&mut self, flat: &[S]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(Error::shape("flat parameter vector", expected, flat.len()));
        }
        let mut names: Vec<(String, bool)> = Vec::new();
        for name in self.layers.keys() {
            names.push((format!("{name}.bias"), true));
            names.push((format!("{name}.weight"), false));
        }
        names.sort();
        let mut offset = 0;
        for (full, is_bias) in names {
            let layer = full.rsplit_once('.').map(|(l, _)| l).unwrap_or(&full).to_string();
            let p = self.layers.get_mut(&layer).expect("layer exists");
            let t = if is_bias { &mut p.bias } else { &mut p.weight };
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
