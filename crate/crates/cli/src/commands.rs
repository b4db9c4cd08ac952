use std::fs;
use std::path::{Path, PathBuf};

use cardiovae::data::{read_checkpoint, read_dataset, synth_generate, write_checkpoint_with, write_dataset, write_tensor, PairedSample, MANIFEST_FILE};
use cardiovae::evaluation::{frechet_distance, gaussian_stats, integrated_gradients, write_attribution_pgm, write_signal_attribution_csv};
use cardiovae::model::{decode_cxr, decode_ecg, encode_cxr, encode_ecg, ModelParams};
use cardiovae::training::{cross_validate, finetune, grid_search_lambda, pretrain, write_finetune_history, write_history, RunConfig};

use crate::config::CliConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SynthData,
    Pretrain,
    Finetune,
    Evaluate,
    Attribute,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Evaluate => "evaluate",
            Command::Attribute => "attribute",
        }
    }

    fn needs_checkpoint(self) -> bool {
        matches!(self, Command::Finetune | Command::Evaluate | Command::Attribute)
    }

    fn needs_data(self) -> bool {
        self != Command::SynthData
    }
}

/// Runs one command and returns the run directory it wrote.
pub fn run(cmd: Command, cfg: CliConfig) -> CliResult<PathBuf> {
    if cmd.needs_checkpoint() && cfg.checkpoint.is_none() {
        return Err(CliError::usage(format!("{} requires --checkpoint", cmd.name())));
    }
    if cmd.needs_data() && cfg.data.is_none() {
        return Err(CliError::usage(format!("{} requires --data", cmd.name())));
    }
    match cmd {
        Command::SynthData => synth_data(cfg),
        Command::Pretrain => cmd_pretrain(cfg),
        Command::Finetune => cmd_finetune(cfg),
        Command::Evaluate => cmd_evaluate(cfg),
        Command::Attribute => cmd_attribute(cfg),
    }
}

/// Creates `<out>/<timestamp>-seed<N>`, adding a numeric suffix rather than
/// reusing an existing directory.
pub fn create_run_dir(out: &Path, seed: u64) -> CliResult<PathBuf> {
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-seed{seed}");
    for k in 1.. {
        let name = if k == 1 { base.clone() } else { format!("{base}-{k}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(format!("{}: {e}", dir.display()))),
        }
    }
    unreachable!("unbounded suffix search")
}

fn start(cmd: Command, cfg: &CliConfig) -> CliResult<PathBuf> {
    let dir = create_run_dir(&cfg.out, cfg.seed)?;
    fs::write(dir.join("config.txt"), cfg.to_text(cmd.name()))?;
    Ok(dir)
}

fn load_dataset(cfg: &CliConfig) -> CliResult<Vec<PairedSample<f32>>> {
    let path = cfg.data.as_ref().expect("checked by run");
    let manifest = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.clone() };
    if !manifest.exists() {
        return Err(CliError::io(format!("dataset manifest {} does not exist", manifest.display())));
    }
    read_dataset(&manifest).map_err(|e| CliError::from(e).context(manifest.display()))
}

fn load_params(cfg: &mut CliConfig) -> CliResult<ModelParams<f32>> {
    let path = cfg.checkpoint.as_ref().expect("checked by run");
    if !path.is_file() {
        return Err(CliError::io(format!("missing checkpoint {}", path.display())));
    }
    let ckpt = read_checkpoint::<f32>(path, None).map_err(|e| CliError::from(e).context(path.display()))?;
    // the checkpoint's architecture is authoritative for everything downstream
    cfg.arch = ckpt.params.arch().clone();
    Ok(ckpt.params)
}

/// Resolved settings stored alongside the weights in a checkpoint.
fn echo(cfg: &CliConfig) -> Vec<(String, String)> {
    cfg.to_pairs()
        .into_iter()
        .filter(|(k, _)| k != "seed" && !k.starts_with("arch."))
        .collect()
}

fn synth_data(cfg: CliConfig) -> CliResult<PathBuf> {
    let samples = synth_generate::<f32>(&cfg.synth)?;
    let dir = start(Command::SynthData, &cfg)?;
    write_dataset(&dir, &samples)?;
    let positives = samples.iter().filter(|s| s.label == Some(1)).count();
    println!("samples = {}", samples.len());
    println!("positives = {positives}");
    Ok(dir)
}

fn cmd_pretrain(mut cfg: CliConfig) -> CliResult<PathBuf> {
    let data = load_dataset(&cfg)?;
    let dir = start(Command::Pretrain, &cfg)?;
    let mut run = cfg.pretrain.clone();
    if !cfg.grid.is_empty() {
        let cells: Vec<(f64, f64)> = cfg.grid.iter().flat_map(|&a| cfg.grid.iter().map(move |&b| (a, b))).collect();
        let grid_run = RunConfig { epochs: cfg.grid_epochs, ..run.clone() };
        let res = grid_search_lambda(&data, &cells, &cfg.arch, &cfg.objective, &grid_run)?;
        let mut csv = String::from("lambda_cxr,lambda_ecg,val_loss\n");
        for c in &res.table {
            csv.push_str(&format!("{},{},{}\n", c.lambda_cxr, c.lambda_ecg, c.val_loss));
        }
        fs::write(dir.join("grid.csv"), csv)?;
        (cfg.objective.lambda_cxr, cfg.objective.lambda_ecg) = res.best;
        // the selected weights are then trained on every sample
        run.val_fraction = 0.0;
        println!("grid_best = {},{}", res.best.0, res.best.1);
    }
    let res = pretrain(&data, &cfg.arch, &cfg.objective, &run)?;
    let extra = echo(&cfg);
    write_checkpoint_with(dir.join("checkpoint.cvxg"), &res.params, cfg.seed, &extra)?;
    write_checkpoint_with(dir.join("best.cvxg"), &res.best, cfg.seed, &extra)?;
    write_history(dir.join("history.csv"), &res.history)?;

    let ids: &[String] = if res.val_ids.len() >= 2 { &res.val_ids } else { &res.train_ids };
    let held: Vec<&PairedSample<f32>> = data.iter().filter(|s| ids.contains(&s.id)).collect();
    let split = if res.val_ids.len() >= 2 { "val" } else { "train" };
    let mut report = String::from("modality,split,samples,frechet_distance\n");
    for (name, fd) in frechet_report(&res.best, &held)? {
        report.push_str(&format!("{name},{split},{},{fd}\n", held.len()));
        println!("frechet_{name} = {fd}");
    }
    fs::write(dir.join("frechet.csv"), report)?;
    println!("best_epoch = {}", res.best_epoch);
    Ok(dir)
}

/// Fréchet distance in the model's own feature space between real samples
/// and their reconstructions from the posterior mean, per modality.
fn frechet_report(params: &ModelParams<f32>, samples: &[&PairedSample<f32>]) -> CliResult<Vec<(&'static str, f64)>> {
    if samples.len() < 2 {
        return Ok(Vec::new());
    }
    let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
    let (mut real_c, mut fake_c, mut real_e, mut fake_e) = (vec![], vec![], vec![], vec![]);
    for s in samples {
        let (image, signal) = (s.image.as_ref().expect("paired"), s.signal.as_ref().expect("paired"));
        let qc = encode_cxr(image, params)?;
        let recon = decode_cxr(&qc.mean, params)?;
        fake_c.push(widen(encode_cxr(&recon, params)?.mean));
        real_c.push(widen(qc.mean));
        let qe = encode_ecg(signal, params)?;
        let recon = decode_ecg(&qe.mean, params)?;
        fake_e.push(widen(encode_ecg(&recon, params)?.mean));
        real_e.push(widen(qe.mean));
    }
    let fd = |a: &[Vec<f64>], b: &[Vec<f64>]| -> CliResult<f64> { Ok(frechet_distance(&gaussian_stats(a)?, &gaussian_stats(b)?)?) };
    Ok(vec![("cxr", fd(&real_c, &fake_c)?), ("ecg", fd(&real_e, &fake_e)?)])
}

fn cmd_finetune(mut cfg: CliConfig) -> CliResult<PathBuf> {
    let params = load_params(&mut cfg)?;
    let data = load_dataset(&cfg)?;
    let dir = start(Command::Finetune, &cfg)?;
    let res = finetune(&params, &data, &cfg.finetune)?;
    write_checkpoint_with(dir.join("finetuned.cvxg"), &res.params, cfg.seed, &echo(&cfg))?;
    write_finetune_history(dir.join("finetune_history.csv"), &res.history)?;
    if let Some(last) = res.history.last() {
        println!("train_bce = {}", last.bce);
        println!("train_accuracy = {}", last.accuracy);
    }
    Ok(dir)
}

fn cmd_evaluate(mut cfg: CliConfig) -> CliResult<PathBuf> {
    let params = load_params(&mut cfg)?;
    let data = load_dataset(&cfg)?;
    let dir = start(Command::Evaluate, &cfg)?;
    let cv = cross_validate(&params, &data, &cfg.finetune, cfg.folds)?;
    let mut csv = String::from("fold,auroc,accuracy,heldout_auroc,heldout_accuracy\n");
    for f in &cv.folds {
        csv.push_str(&format!("{},{},{},{},{}\n", f.fold, f.auroc, f.accuracy, f.heldout_auroc, f.heldout_accuracy));
    }
    csv.push_str(&format!("mean,{},{},,\n", cv.auroc_mean, cv.accuracy_mean));
    csv.push_str(&format!("std,{},{},,\n", cv.auroc_std, cv.accuracy_std));
    fs::write(dir.join("metrics.csv"), csv)?;
    let summary = format!(
        "modality = {}\nfolds = {}\nauroc = {:.4} +/- {:.4}\naccuracy = {:.4} +/- {:.4}\n",
        cfg.modality.name(),
        cv.folds.len(),
        cv.auroc_mean,
        cv.auroc_std,
        cv.accuracy_mean,
        cv.accuracy_std
    );
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(dir)
}

fn cmd_attribute(mut cfg: CliConfig) -> CliResult<PathBuf> {
    let params = load_params(&mut cfg)?;
    let data = load_dataset(&cfg)?;
    let sample = match &cfg.sample {
        Some(id) => data
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| CliError::config(format!("sample {id:?} is not in the dataset")))?,
        None => data.first().ok_or_else(|| CliError::config("dataset is empty"))?,
    };
    let map = integrated_gradients(&params, sample, None, cfg.ig_steps, cfg.modality)?;
    let dir = start(Command::Attribute, &cfg)?;
    let id = &sample.id;
    if let Some(a) = &map.image {
        write_tensor(dir.join(format!("{id}_image_attribution.tnsr")), a)?;
        write_attribution_pgm(dir.join(format!("{id}_image_attribution.pgm")), a)?;
    }
    if let (Some(a), Some(sig)) = (&map.signal, &sample.signal) {
        write_tensor(dir.join(format!("{id}_signal_attribution.tnsr")), a)?;
        write_signal_attribution_csv(dir.join(format!("{id}_signal_attribution.csv")), sig, a)?;
    }
    let summary = format!(
        "sample = {id}\nmodality = {}\nsteps = {}\nbaseline = zeros\nlogit_input = {}\nlogit_baseline = {}\nresidual = {}\nrelative_residual = {}\n",
        cfg.modality.name(),
        map.steps,
        map.f_input,
        map.f_baseline,
        map.residual,
        map.relative_residual()
    );
    fs::write(dir.join("attribution.txt"), &summary)?;
    print!("{summary}");
    Ok(dir)
}
