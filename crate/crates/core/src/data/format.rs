//! Binary tensor (`TNSR`) and checkpoint (`CVXG`) files.
//!
//! ```text
//! TNSR: "TNSR" | u32 version=1 | u32 dtype | u32 ndims | ndims x u64 dims | payload
//! CVXG: "CVXG" | u32 version=1 | u32 count | count x (u16 len, name, TNSR) | config echo
//! ```
//!
//! Everything is little-endian. dtype 0 is `f32`, dtype 1 is `f64`. The
//! checkpoint's config echo is UTF-8 `key = value` lines running to EOF.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::model::{ArchConfig, ModelParams};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CVXG";
pub const FORMAT_VERSION: u32 = 1;

/// Appends the TNSR encoding of `t` to `out`.
pub fn encode_tensor<S: Scalar>(t: &Tensor<S>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&S::DTYPE.to_le_bytes());
    out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.len() * S::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
            .into()),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            }
            .into());
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        match self.u32("version")? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::UnsupportedVersion(v).into()),
        }
    }

    fn tensor<S: Scalar>(&mut self) -> Result<Tensor<S>> {
        self.magic(TENSOR_MAGIC)?;
        self.version()?;
        let dtype = self.u32("dtype")?;
        if dtype != S::DTYPE {
            return Err(FormatError::UnsupportedDtype { expected: S::DTYPE, found: dtype }.into());
        }
        let ndims = self.u32("ndims")? as usize;
        if ndims == 0 {
            return Err(FormatError::EmptyDims.into());
        }
        // every dim takes 8 bytes, so a huge ndims is caught as truncation
        self.take(0, "dims")?;
        if ndims.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(FormatError::Truncated(format!("{ndims} dims do not fit in the file")).into());
        }
        let mut dims = Vec::with_capacity(ndims);
        let mut count: usize = 1;
        for axis in 0..ndims {
            let d = self.u64("dims")?;
            let d = usize::try_from(d)
                .map_err(|_| FormatError::DimOverflow(format!("dim {axis} = {d} exceeds usize")))?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| FormatError::DimOverflow(format!("element count overflows at dim {axis}")))?;
            dims.push(d);
        }
        let nbytes = count
            .checked_mul(S::BYTES)
            .ok_or_else(|| FormatError::DimOverflow("payload size overflows".into()))?;
        let payload = self.take(nbytes, "payload")?;
        let data = payload.chunks_exact(S::BYTES).map(S::read_le).collect();
        Tensor::new(dims, data)
    }
}

/// Decodes one TNSR tensor that must span all of `bytes`.
pub fn decode_tensor<S: Scalar>(bytes: &[u8]) -> Result<Tensor<S>> {
    let mut r = Reader { bytes, pos: 0 };
    let t = r.tensor()?;
    if r.pos != bytes.len() {
        return Err(Error::invalid(format!("{} trailing bytes after tensor", bytes.len() - r.pos)));
    }
    Ok(t)
}

pub fn write_tensor<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_tensor<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    decode_tensor(&fs::read(path)?)
}

/// A loaded checkpoint: the parameters plus the echoed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub params: ModelParams<S>,
    pub seed: u64,
    /// Every `key = value` line of the config echo, in file order.
    pub config: Vec<(String, String)>,
}

/// Serializes `params` with an echo of its arch, the seed, and any `extra`
/// config lines.
pub fn encode_checkpoint<S: Scalar>(params: &ModelParams<S>, seed: u64, extra: &[(String, String)]) -> Result<Vec<u8>> {
    let named = params.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        let len = u16::try_from(name.len()).map_err(|_| FormatError::BadName(name.clone()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out);
    }
    let mut echo = String::new();
    for (k, v) in params.arch().to_config_lines() {
        echo.push_str(&format!("{k} = {v}\n"));
    }
    echo.push_str(&format!("seed = {seed}\n"));
    for (k, v) in extra {
        if k.contains(['\n', '=']) || v.contains('\n') {
            return Err(Error::invalid(format!("config echo entry {k:?} is not a single key = value line")));
        }
        echo.push_str(&format!("{k} = {v}\n"));
    }
    out.extend_from_slice(echo.as_bytes());
    Ok(out)
}

pub fn write_checkpoint<S: Scalar>(path: impl AsRef<Path>, params: &ModelParams<S>, seed: u64) -> Result<()> {
    write_checkpoint_with(path, params, seed, &[])
}

/// [`write_checkpoint`] with extra config-echo lines (objective and run
/// settings, for instance).
pub fn write_checkpoint_with<S: Scalar>(
    path: impl AsRef<Path>,
    params: &ModelParams<S>,
    seed: u64,
    extra: &[(String, String)],
) -> Result<()> {
    fs::write(path, encode_checkpoint(params, seed, extra)?)?;
    Ok(())
}

/// Parses a checkpoint. With `expected` set, the embedded arch must match it.
pub fn decode_checkpoint<S: Scalar>(bytes: &[u8], expected: Option<&ArchConfig>) -> Result<Checkpoint<S>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let count = r.u32("entry count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let raw = r.take(len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| FormatError::BadName(String::from_utf8_lossy(raw).into_owned()))?
            .to_string();
        if name.is_empty() || tensors.contains_key(&name) {
            return Err(FormatError::BadName(name).into());
        }
        let t = r.tensor::<S>()?;
        tensors.insert(name, t);
    }
    let echo = std::str::from_utf8(&bytes[r.pos..])
        .map_err(|_| FormatError::Truncated("config echo is not UTF-8".into()))?;
    let mut config = Vec::new();
    for line in echo.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::Truncated(format!("malformed config echo line {line:?}")))?;
        config.push((k.trim().to_string(), v.trim().to_string()));
    }

    let mut arch = ArchConfig::desk();
    let mut seen = 0;
    let mut seed = None;
    for (k, v) in &config {
        if let Some(key) = k.strip_prefix("arch.") {
            if !arch.set(key, v)? {
                return Err(FormatError::ArchMismatch(format!("unknown arch key {k}")).into());
            }
            seen += 1;
        } else if k == "seed" {
            seed = Some(v.parse().map_err(|_| FormatError::Truncated(format!("bad seed {v:?}")))?);
        }
    }
    if seen != arch.to_config_lines().len() {
        return Err(FormatError::Truncated("config echo lacks the arch block".into()).into());
    }
    let seed = seed.ok_or_else(|| FormatError::Truncated("config echo lacks the seed".into()))?;
    if let Some(want) = expected {
        if *want != arch {
            return Err(FormatError::ArchMismatch(format!("checkpoint holds {arch}, requested {want}")).into());
        }
    }
    let params = ModelParams::from_named_tensors(&arch, tensors)?;
    Ok(Checkpoint { params, seed, config })
}

pub fn read_checkpoint<S: Scalar>(path: impl AsRef<Path>, expected: Option<&ArchConfig>) -> Result<Checkpoint<S>> {
    decode_checkpoint(&fs::read(path)?, expected)
}
