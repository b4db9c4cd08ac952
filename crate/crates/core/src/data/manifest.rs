//! Dataset manifests (`id,image_path,signal_path,label`) and pairing of
//! per-modality record lists by subject and time.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::format::{read_tensor, write_tensor};
use crate::data::PairedSample;
use crate::error::{Error, FormatError, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const MANIFEST_HEADER: [&str; 4] = ["id", "image_path", "signal_path", "label"];
pub const MANIFEST_FILE: &str = "manifest.csv";

fn manifest_err(msg: impl Into<String>) -> Error {
    FormatError::Manifest(msg.into()).into()
}

fn csv_err(e: csv::Error) -> Error {
    manifest_err(e.to_string())
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes `dir/manifest.csv` plus `images/<id>.tnsr` and
/// `signals/<id>.tnsr`, all tensors in `f32`. Returns the manifest path.
pub fn write_dataset<S: Scalar>(dir: impl AsRef<Path>, samples: &[PairedSample<S>]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("signals"))?;
    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for s in samples {
        s.validate()?;
        let rel = |sub: &str, t: &Option<Tensor<S>>| -> Result<String> {
            match t {
                Some(t) => {
                    let rel = format!("{sub}/{}.tnsr", s.id);
                    write_tensor(dir.join(&rel), &t.cast::<f32>())?;
                    Ok(rel)
                }
                None => Ok(String::new()),
            }
        };
        let image = rel("images", &s.image)?;
        let signal = rel("signals", &s.signal)?;
        let label = s.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([s.id.as_str(), &image, &signal, &label]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

/// Loads every sample listed in a manifest. Relative paths resolve against
/// the manifest's directory.
pub fn read_dataset<S: Scalar>(manifest: impl AsRef<Path>) -> Result<Vec<PairedSample<S>>> {
    let manifest = manifest.as_ref();
    let base = base_dir(manifest);
    let mut r = csv::Reader::from_path(manifest).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("cannot open manifest {}", manifest.display()),
        )),
        _ => csv_err(e),
    })?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(manifest_err(format!("header must be {}", MANIFEST_HEADER.join(","))));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row + 2;
        let id = rec[0].to_string();
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(manifest_err(format!("line {line}: empty or duplicate id {id:?}")));
        }
        let load = |field: &str| -> Result<Option<Tensor<S>>> {
            if field.is_empty() {
                return Ok(None);
            }
            let t = read_tensor::<f32>(base.join(field))
                .map_err(|e| manifest_err(format!("line {line}: sample {id}: {field}: {e}")))?;
            Ok(Some(t.cast()))
        };
        let label = match &rec[3] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(manifest_err(format!("line {line}: label {other:?} is not 0 or 1"))),
        };
        let sample = PairedSample { image: load(&rec[1])?, signal: load(&rec[2])?, label, id };
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

/// One per-modality file reference for [`pair_by_key`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityRecord {
    pub subject_id: String,
    /// Acquisition time in any consistent unit (the window uses the same one).
    pub time: f64,
    pub path: PathBuf,
}

/// Reads a `subject_id,timestamp,path` CSV; relative paths resolve against
/// its directory.
pub fn read_modality_manifest(path: impl AsRef<Path>) -> Result<Vec<ModalityRecord>> {
    let path = path.as_ref();
    let base = base_dir(path);
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 3 {
            return Err(manifest_err(format!("line {}: expected subject_id,timestamp,path", row + 2)));
        }
        let time: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| manifest_err(format!("line {}: bad timestamp {:?}", row + 2, &rec[1])))?;
        out.push(ModalityRecord {
            subject_id: rec[0].to_string(),
            time,
            path: base.join(&rec[2]),
        });
    }
    Ok(out)
}

/// Index pairs `(image, signal)` joined on subject id within `window`.
/// Candidate pairs are taken closest-in-time first, each record at most
/// once; ties fall back to record order. Output is sorted by image index.
pub fn match_by_key(images: &[ModalityRecord], signals: &[ModalityRecord], window: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, a) in images.iter().enumerate() {
        for (j, b) in signals.iter().enumerate() {
            let dt = (a.time - b.time).abs();
            if a.subject_id == b.subject_id && dt <= window {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let (mut used_i, mut used_j) = (BTreeSet::new(), BTreeSet::new());
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_i.contains(&i) && !used_j.contains(&j) {
            used_i.insert(i);
            used_j.insert(j);
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// Pairs records with [`match_by_key`] and loads both files of every pair.
/// Sample ids are `<subject>@<image time>`; labels are left absent.
pub fn pair_by_key<S: Scalar>(
    images: &[ModalityRecord],
    signals: &[ModalityRecord],
    window: f64,
) -> Result<Vec<PairedSample<S>>> {
    if !(window >= 0.0) {
        return Err(Error::invalid("pairing window must be >= 0"));
    }
    let mut failed = Vec::new();
    let mut out = Vec::new();
    for (i, j) in match_by_key(images, signals, window) {
        let (a, b) = (&images[i], &signals[j]);
        match (read_tensor::<f32>(&a.path), read_tensor::<f32>(&b.path)) {
            (Ok(img), Ok(sig)) => out.push(PairedSample {
                id: format!("{}@{}", a.subject_id, a.time),
                image: Some(img.cast()),
                signal: Some(sig.cast()),
                label: None,
            }),
            _ => failed.push(a.subject_id.clone()),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Io(std::io::Error::other(format!(
            "unreadable files for subjects: {}",
            failed.join(", ")
        ))));
    }
    Ok(out)
}
