use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{conv_out_len, output_padding_for, Activation, LayerSpec};

/// Every encoder convolution uses a 3-wide kernel, stride 2, padding 1.
pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Cxr,
    Ecg,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Cxr => "cxr",
            Modality::Ecg => "ecg",
        }
    }

    pub fn encoder_prefix(self) -> &'static str {
        match self {
            Modality::Cxr => "cxr_encoder",
            Modality::Ecg => "ecg_encoder",
        }
    }

    pub fn decoder_prefix(self) -> &'static str {
        match self {
            Modality::Cxr => "cxr_decoder",
            Modality::Ecg => "ecg_decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub signal_len: usize,
    pub channels: [usize; 3],
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub head_dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    /// 64x64 grayscale images, 4096-sample signals, 16 latent dims.
    pub fn desk() -> Self {
        Self {
            image_h: 64,
            image_w: 64,
            image_c: 1,
            signal_len: 4096,
            channels: [16, 32, 64],
            latent_dim: 16,
            head_hidden: 128,
            head_dropout: 0.5,
        }
    }

    /// 224x224 images, 60000-sample signals, 64 latent dims.
    pub fn paper() -> Self {
        Self {
            image_h: 224,
            image_w: 224,
            signal_len: 60_000,
            latent_dim: 64,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("image_c", self.image_c),
            ("signal_len", self.signal_len),
            ("latent_dim", self.latent_dim),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.channels.contains(&0) {
            return Err(Error::invalid("conv channels must be positive"));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::invalid("head_dropout must lie in [0, 1)"));
        }
        self.spatial_chain(self.image_h)?;
        self.spatial_chain(self.image_w)?;
        self.spatial_chain(self.signal_len)?;
        Ok(())
    }

    /// Lengths before and after each of the three strided convolutions.
    fn spatial_chain(&self, n: usize) -> Result<[usize; 4]> {
        let a = conv_out_len(n, KERNEL, STRIDE, PADDING)?;
        let b = conv_out_len(a, KERNEL, STRIDE, PADDING)?;
        let c = conv_out_len(b, KERNEL, STRIDE, PADDING)?;
        Ok([n, a, b, c])
    }

    /// `[h, w, c]` of the last image conv output.
    pub fn cxr_feature_dims(&self) -> Result<[usize; 3]> {
        Ok([
            self.spatial_chain(self.image_h)?[3],
            self.spatial_chain(self.image_w)?[3],
            self.channels[2],
        ])
    }

    /// `[l, c]` of the last signal conv output.
    pub fn ecg_feature_dims(&self) -> Result<[usize; 2]> {
        Ok([self.spatial_chain(self.signal_len)?[3], self.channels[2]])
    }

    pub fn cxr_flatten_width(&self) -> Result<usize> {
        Ok(self.cxr_feature_dims()?.iter().product())
    }

    pub fn ecg_flatten_width(&self) -> Result<usize> {
        Ok(self.ecg_feature_dims()?.iter().product())
    }

    pub fn image_dims(&self) -> [usize; 3] {
        [self.image_h, self.image_w, self.image_c]
    }

    /// On-disk signal dims.
    pub fn signal_dims(&self) -> [usize; 2] {
        [1, self.signal_len]
    }

    fn in_channels(&self, m: Modality) -> usize {
        match m {
            Modality::Cxr => self.image_c,
            Modality::Ecg => 1,
        }
    }

    fn flatten_width(&self, m: Modality) -> Result<usize> {
        match m {
            Modality::Cxr => self.cxr_flatten_width(),
            Modality::Ecg => self.ecg_flatten_width(),
        }
    }

    /// Named encoder layers: `conv1..3` then `fc_mu`, `fc_logvar`.
    pub fn encoder_layers(&self, m: Modality) -> Result<Vec<(String, LayerSpec)>> {
        let c = self.channels;
        let cin = self.in_channels(m);
        let conv = |i: usize, o: usize| {
            match m {
                Modality::Cxr => LayerSpec::conv2d(i, o, KERNEL, STRIDE, PADDING),
                Modality::Ecg => LayerSpec::conv1d(i, o, KERNEL, STRIDE, PADDING),
            }
            .with_activation(Activation::Relu)
        };
        let flat = self.flatten_width(m)?;
        let p = m.encoder_prefix();
        Ok(vec![
            (format!("{p}.conv1"), conv(cin, c[0])),
            (format!("{p}.conv2"), conv(c[0], c[1])),
            (format!("{p}.conv3"), conv(c[1], c[2])),
            (format!("{p}.fc_mu"), LayerSpec::fc(flat, self.latent_dim)),
            (format!("{p}.fc_logvar"), LayerSpec::fc(flat, self.latent_dim)),
        ])
    }

    /// Named decoder layers: `fc` then `tconv1..3`, mirroring the encoder.
    /// The image decoder ends in a sigmoid, the signal decoder is linear.
    pub fn decoder_layers(&self, m: Modality) -> Result<Vec<(String, LayerSpec)>> {
        let c = self.channels;
        let cout = self.in_channels(m);
        let (rows, cols) = match m {
            Modality::Cxr => (self.spatial_chain(self.image_h)?, Some(self.spatial_chain(self.image_w)?)),
            Modality::Ecg => (self.spatial_chain(self.signal_len)?, None),
        };
        // output padding restoring chain[step - 1] from chain[step], per axis
        let op = |step: usize| -> Result<(usize, usize)> {
            let r = output_padding_for(rows[step], rows[step - 1], KERNEL, STRIDE, PADDING)?;
            match cols {
                Some(cols) => Ok((r, output_padding_for(cols[step], cols[step - 1], KERNEL, STRIDE, PADDING)?)),
                None => Ok((0, r)),
            }
        };
        let tconv = |i: usize, o: usize, step: usize, act: Activation| -> Result<LayerSpec> {
            let spec = match m {
                Modality::Cxr => LayerSpec::tconv2d(i, o, KERNEL, STRIDE, PADDING),
                Modality::Ecg => LayerSpec::tconv1d(i, o, KERNEL, STRIDE, PADDING),
            };
            let (r, c) = op(step)?;
            Ok(spec.with_output_padding2(r, c).with_activation(act))
        };
        let last = match m {
            Modality::Cxr => Activation::Sigmoid,
            Modality::Ecg => Activation::None,
        };
        let p = m.decoder_prefix();
        Ok(vec![
            (
                format!("{p}.fc"),
                LayerSpec::fc(self.latent_dim, self.flatten_width(m)?).with_activation(Activation::Relu),
            ),
            (format!("{p}.tconv1"), tconv(c[2], c[1], 3, Activation::Relu)?),
            (format!("{p}.tconv2"), tconv(c[1], c[0], 2, Activation::Relu)?),
            (format!("{p}.tconv3"), tconv(c[0], cout, 1, last)?),
        ])
    }

    pub fn head_layers(&self) -> Vec<(String, LayerSpec)> {
        vec![
            (
                "head.fc1".to_string(),
                LayerSpec::fc(self.latent_dim, self.head_hidden).with_activation(Activation::Relu),
            ),
            ("head.fc2".to_string(), LayerSpec::fc(self.head_hidden, 1)),
        ]
    }

    /// Every layer in canonical order.
    pub fn all_layers(&self) -> Result<Vec<(String, LayerSpec)>> {
        let mut v = self.encoder_layers(Modality::Cxr)?;
        v.extend(self.encoder_layers(Modality::Ecg)?);
        v.extend(self.decoder_layers(Modality::Cxr)?);
        v.extend(self.decoder_layers(Modality::Ecg)?);
        v.extend(self.head_layers());
        Ok(v)
    }

    /// `key = value` lines, the config echo stored in checkpoints.
    pub fn to_config_lines(&self) -> Vec<(String, String)> {
        vec![
            ("arch.image_h".into(), self.image_h.to_string()),
            ("arch.image_w".into(), self.image_w.to_string()),
            ("arch.image_c".into(), self.image_c.to_string()),
            ("arch.signal_len".into(), self.signal_len.to_string()),
            (
                "arch.channels".into(),
                format!("{},{},{}", self.channels[0], self.channels[1], self.channels[2]),
            ),
            ("arch.latent_dim".into(), self.latent_dim.to_string()),
            ("arch.head_hidden".into(), self.head_hidden.to_string()),
            ("arch.head_dropout".into(), self.head_dropout.to_string()),
        ]
    }

    /// Applies one `arch.*` key (without the prefix). Returns `false` for
    /// unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let parse_usize = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("{key}: expected a non-negative integer, got {v:?}")))
        };
        match key {
            "image_h" => self.image_h = parse_usize(value)?,
            "image_w" => self.image_w = parse_usize(value)?,
            "image_c" => self.image_c = parse_usize(value)?,
            "signal_len" => self.signal_len = parse_usize(value)?,
            "latent_dim" => self.latent_dim = parse_usize(value)?,
            "head_hidden" => self.head_hidden = parse_usize(value)?,
            "head_dropout" => {
                self.head_dropout = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("head_dropout: bad float {value:?}")))?
            }
            "channels" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 3 {
                    return Err(Error::invalid("channels: expected three comma-separated values"));
                }
                for (slot, p) in self.channels.iter_mut().zip(parts) {
                    *slot = parse_usize(p)?;
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_config_lines() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
