//! The `key = value` run configuration.
//!
//! Values are layered: the architecture preset, then the config file, then
//! command-line flags. [`CliConfig::to_text`] writes the fully resolved
//! result in the same syntax, so a run directory's `config.txt` replays the
//! run through `--config`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cardiovae::data::SynthConfig;
use cardiovae::model::{ArchConfig, FeatureMode};
use cardiovae::objectives::{ObjectiveConfig, StreamMode};
use cardiovae::training::RunConfig;

use crate::error::{CliError, CliResult};

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag(String),
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag(name) => write!(f, "flag {name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub seed: u64,
    pub preset: String,
    pub arch: ArchConfig,
    pub objective: ObjectiveConfig,
    pub streams: StreamMode,
    pub modality: FeatureMode,
    pub pretrain: RunConfig,
    pub finetune: RunConfig,
    pub synth: SynthConfig,
    pub folds: usize,
    pub ig_steps: usize,
    pub sample: Option<String>,
    /// λ values searched on both axes before pre-training; empty skips the
    /// search.
    pub grid: Vec<f64>,
    pub grid_epochs: usize,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub verbose: bool,
}

impl CliConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let arch = match name {
            "desk" => ArchConfig::desk(),
            "paper" => ArchConfig::paper(),
            _ => return None,
        };
        let mut c = Self {
            seed: 0,
            preset: name.to_string(),
            synth: SynthConfig::default(),
            arch,
            objective: ObjectiveConfig::default(),
            streams: StreamMode::Tri,
            modality: FeatureMode::Joint,
            pretrain: RunConfig::pretrain_default(),
            finetune: RunConfig::finetune_default(),
            folds: 10,
            ig_steps: 256,
            sample: None,
            grid: Vec::new(),
            grid_epochs: 5,
            data: None,
            checkpoint: None,
            out: PathBuf::from("runs"),
            verbose: false,
        };
        c.sync();
        Some(c)
    }

    /// Propagates shared settings into the per-stage configs.
    fn sync(&mut self) {
        for run in [&mut self.pretrain, &mut self.finetune] {
            run.seed = self.seed;
            run.stream_mode = self.streams;
            run.feature_mode = self.modality;
            run.verbose = self.verbose;
        }
        self.synth.seed = self.seed;
        self.synth.image_h = self.arch.image_h;
        self.synth.image_w = self.arch.image_w;
        self.synth.signal_len = self.arch.signal_len;
    }

    /// Builds the config from a preset name (from the settings, else
    /// `desk`) and then applies every other setting in order.
    pub fn resolve(settings: &[Setting]) -> CliResult<Self> {
        let preset = settings.iter().rev().find(|s| s.key == "arch");
        let name = preset.map_or("desk", |s| s.value.as_str());
        let mut cfg = Self::preset(name).ok_or_else(|| {
            let origin = preset.map(|s| s.origin.to_string()).unwrap_or_default();
            CliError::config(format!("{origin}: unknown arch preset {name:?} (expected desk or paper)"))
        })?;
        for s in settings.iter().filter(|s| s.key != "arch") {
            cfg.apply(&s.key, &s.value).map_err(|e| CliError::config(format!("{}: {e}", s.origin)))?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let check = |r: cardiovae::Result<()>, what: &str| r.map_err(|e| CliError::config(format!("{what}: {e}")));
        check(self.arch.validate(), "arch")?;
        check(self.objective.validate(), "objective")?;
        check(self.pretrain.validate(), "pretrain")?;
        check(self.finetune.validate(), "finetune")?;
        check(self.synth.validate(), "synth")?;
        if self.folds < 2 {
            return Err(CliError::config("evaluate.folds must be >= 2"));
        }
        if self.grid_epochs == 0 {
            return Err(CliError::config("grid.epochs must be >= 1"));
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        if let Some(rest) = key.strip_prefix("arch.") {
            return match self.arch.set(rest, v) {
                Ok(true) => Ok(()),
                Ok(false) => Err(format!("unknown key {key:?}")),
                Err(e) => Err(e.to_string()),
            };
        }
        match key {
            "seed" => self.seed = num(key, v)?,
            "streams" => self.streams = StreamMode::parse(v).map_err(|e| e.to_string())?,
            "modality" => self.modality = FeatureMode::parse(v).map_err(|e| e.to_string())?,
            "verbose" => self.verbose = flag(key, v)?,
            "data" => self.data = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "out" => self.out = path(v).ok_or_else(|| "out must not be empty".to_string())?,

            "objective.lambda_cxr" => self.objective.lambda_cxr = num(key, v)?,
            "objective.lambda_ecg" => self.objective.lambda_ecg = num(key, v)?,
            "objective.max_beta" => self.objective.beta.max_beta = num(key, v)?,
            "objective.anneal_steps" => self.objective.beta.anneal_steps = auto(key, v)?,

            "pretrain.batch_size" => self.pretrain.batch_size = num(key, v)?,
            "pretrain.epochs" => self.pretrain.epochs = num(key, v)?,
            "pretrain.lr" => self.pretrain.adam.lr = num(key, v)?,
            "pretrain.val_fraction" => self.pretrain.val_fraction = num(key, v)?,
            "finetune.batch_size" => self.finetune.batch_size = num(key, v)?,
            "finetune.epochs" => self.finetune.epochs = num(key, v)?,
            "finetune.lr" => self.finetune.adam.lr = num(key, v)?,
            "adam.beta1" | "adam.beta2" | "adam.eps" => {
                let x: f64 = num(key, v)?;
                for run in [&mut self.pretrain, &mut self.finetune] {
                    match key {
                        "adam.beta1" => run.adam.beta1 = x,
                        "adam.beta2" => run.adam.beta2 = x,
                        _ => run.adam.eps = x,
                    }
                }
            }

            "synth.n" => self.synth.n = num(key, v)?,
            "synth.shared_dim" => self.synth.shared_dim = num(key, v)?,
            "synth.image_noise" => self.synth.image_noise = num(key, v)?,
            "synth.signal_noise" => self.synth.signal_noise = num(key, v)?,
            "synth.threshold" => self.synth.threshold = auto(key, v)?,
            "synth.positive_fraction" => self.synth.positive_fraction = num(key, v)?,
            "synth.view_jitter" => self.synth.view_jitter = num(key, v)?,
            "synth.noise_seed" => self.synth.noise_seed = auto(key, v)?,

            "evaluate.folds" => self.folds = num(key, v)?,
            "attribute.steps" => self.ig_steps = num(key, v)?,
            "attribute.sample" => self.sample = (!v.is_empty()).then(|| v.to_string()),
            "grid.lambdas" => {
                self.grid = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|p| num(key, p.trim())).collect::<Result<_, _>>()?
                }
            }
            "grid.epochs" => self.grid_epochs = num(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every setting, resolved, one `key = value` per line.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let opt = |o: Option<String>| o.unwrap_or_else(|| "auto".into());
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut v: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("arch".into(), self.preset.clone()),
        ];
        v.extend(self.arch.to_config_lines());
        let more: Vec<(&str, String)> = vec![
            ("streams", self.streams.name().into()),
            ("modality", self.modality.name().into()),
            ("objective.lambda_cxr", self.objective.lambda_cxr.to_string()),
            ("objective.lambda_ecg", self.objective.lambda_ecg.to_string()),
            ("objective.max_beta", self.objective.beta.max_beta.to_string()),
            ("objective.anneal_steps", opt(self.objective.beta.anneal_steps.map(|s| s.to_string()))),
            ("pretrain.batch_size", self.pretrain.batch_size.to_string()),
            ("pretrain.epochs", self.pretrain.epochs.to_string()),
            ("pretrain.lr", self.pretrain.adam.lr.to_string()),
            ("pretrain.val_fraction", self.pretrain.val_fraction.to_string()),
            ("finetune.batch_size", self.finetune.batch_size.to_string()),
            ("finetune.epochs", self.finetune.epochs.to_string()),
            ("finetune.lr", self.finetune.adam.lr.to_string()),
            ("adam.beta1", self.pretrain.adam.beta1.to_string()),
            ("adam.beta2", self.pretrain.adam.beta2.to_string()),
            ("adam.eps", self.pretrain.adam.eps.to_string()),
            ("synth.n", self.synth.n.to_string()),
            ("synth.shared_dim", self.synth.shared_dim.to_string()),
            ("synth.image_noise", self.synth.image_noise.to_string()),
            ("synth.signal_noise", self.synth.signal_noise.to_string()),
            ("synth.threshold", opt(self.synth.threshold.map(|t| t.to_string()))),
            ("synth.positive_fraction", self.synth.positive_fraction.to_string()),
            ("synth.view_jitter", self.synth.view_jitter.to_string()),
            ("synth.noise_seed", opt(self.synth.noise_seed.map(|t| t.to_string()))),
            ("evaluate.folds", self.folds.to_string()),
            ("attribute.steps", self.ig_steps.to_string()),
            ("attribute.sample", self.sample.clone().unwrap_or_default()),
            ("grid.lambdas", self.grid.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
            ("grid.epochs", self.grid_epochs.to_string()),
            ("data", p(&self.data)),
            ("checkpoint", p(&self.checkpoint)),
            ("out", self.out.display().to_string()),
            ("verbose", self.verbose.to_string()),
        ];
        v.extend(more.into_iter().map(|(k, v)| (k.to_string(), v)));
        v
    }

    pub fn to_text(&self, command: &str) -> String {
        let mut s = format!("# cardiovae {command}\n");
        for (k, v) in self.to_pairs() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

/// `auto` (or empty) means "derive the default".
fn auto<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>, String> {
    if v.is_empty() || v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Parses config text. Blank lines and `#` comments are skipped; a key may
/// appear only once.
pub fn parse_config_text(text: &str) -> CliResult<Vec<Setting>> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::config(format!("line {n}: expected `key = value`, got {line:?}")));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(CliError::config(format!("line {n}: empty key")));
        }
        if let Some(first) = seen.insert(key.to_string(), n) {
            return Err(CliError::config(format!("line {n}: duplicate key {key:?} (first set on line {first})")));
        }
        out.push(Setting { key: key.to_string(), value: v.trim().to_string(), origin: Origin::Line(n) });
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> CliResult<Vec<Setting>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("config {}: {e}", path.display())))?;
    parse_config_text(&text).map_err(|e| e.context(path.display()))
}
