use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mfdmc::baselines::{fit_baseline, BaselineKind};
use mfdmc::checkpoint::{read_header, Checkpoint, SavedModel};
use mfdmc::data::{generate_synthetic, load_ratings, split_dataset, InteractionDataset, KeyIndex, SplitParts};
use mfdmc::eval::{evaluate_rmse, export_assignments, interpretability_report, planted_recovery, ItemMetadata};
use mfdmc::gradcheck::run_gradcheck;
use mfdmc::training::fit_with;
use mfdmc::{Error, Result, Scalar};
use serde::Serialize;

use crate::config::{Precision, RunConfig};

/// Tab-separated `dataset d v b t rmse`; `-` where a field does not apply.
pub fn summary_line(dataset: &str, d: usize, vbt: Option<(usize, usize, usize)>, rmse: f64) -> String {
    match vbt {
        Some((v, b, t)) => format!("{dataset}\t{d}\t{v}\t{b}\t{t}\t{rmse:.6}"),
        None => format!("{dataset}\t{d}\t-\t-\t-\t{rmse:.6}"),
    }
}

#[derive(Serialize)]
struct SplitRecord<'a> {
    seed: u64,
    fractions: [f64; 3],
    sizes: [usize; 3],
    fingerprint: &'a str,
}

#[derive(Serialize)]
struct Metrics {
    model_kind: String,
    best_epoch: usize,
    valid_rmse: f64,
    test_rmse: f64,
    split_fingerprint: String,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_split(cfg: &RunConfig, data_dir: &Path) -> Result<(InteractionDataset, SplitParts)> {
    let path = cfg.data_path(data_dir);
    let ds = load_ratings(&path, cfg.dataset.format).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })?;
    let parts = split_dataset(&ds, &cfg.split)?;
    log::info!(
        "{}: {} users, {} items, {} ratings; split {}",
        cfg.dataset.name,
        ds.n_users,
        ds.n_items,
        ds.len(),
        parts.fingerprint
    );
    Ok((ds, parts))
}

fn prepare_output(dir: &Path, cfg: &RunConfig, parts: &SplitParts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(
        &dir.join("split.json"),
        &SplitRecord {
            seed: cfg.split.seed,
            fractions: [cfg.split.train, cfg.split.valid, cfg.split.test],
            sizes: [parts.train.len(), parts.valid.len(), parts.test.len()],
            fingerprint: &parts.fingerprint,
        },
    )
}

pub fn train(cfg: &RunConfig, data_dir: &Path) -> Result<String> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, data_dir),
        Precision::F64 => train_as::<f64>(cfg, data_dir),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, data_dir: &Path) -> Result<String> {
    let (ds, parts) = load_split(cfg, data_dir)?;
    let out = &cfg.output_dir;
    prepare_output(out, cfg, &parts)?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let ckpt_path = out.join("checkpoint.json");
    let outcome = fit_with::<T>(&cfg.model, &parts.train, Some(&parts.valid), |report, model, improved| {
        serde_json::to_writer(&mut log, report)?;
        log.write_all(b"\n")?;
        if improved {
            Checkpoint::mfdmc(model.clone()).with_dataset(&ds).save(&ckpt_path)?;
        }
        log::info!(
            "epoch {}: train {:.4} valid {:.4} live {:?}",
            report.epoch,
            report.train_rmse,
            report.valid_rmse.unwrap_or(f64::NAN),
            report.live_centers.user
        );
        Ok(())
    })?;
    log.flush()?;
    if outcome.history.is_empty() {
        Checkpoint::mfdmc(outcome.model.clone()).with_dataset(&ds).save(&ckpt_path)?;
    }
    let test_rmse = evaluate_rmse(&outcome.model, &parts.test)?;
    let valid_rmse = evaluate_rmse(&outcome.model, &parts.valid)?;
    write_json(
        &out.join("metrics.json"),
        &Metrics {
            model_kind: "mfdmc".into(),
            best_epoch: outcome.best_epoch,
            valid_rmse,
            test_rmse,
            split_fingerprint: parts.fingerprint.clone(),
        },
    )?;
    let m = &cfg.model;
    Ok(summary_line(&cfg.dataset.name, m.latent_dim, Some((m.views, m.center_dim, m.centers)), test_rmse))
}

pub fn baseline(cfg: &RunConfig, kind: &str, data_dir: &Path) -> Result<String> {
    let kind: BaselineKind = kind.parse()?;
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => baseline_as::<f32>(cfg, kind, data_dir),
        Precision::F64 => baseline_as::<f64>(cfg, kind, data_dir),
    }
}

fn baseline_as<T: Scalar>(cfg: &RunConfig, kind: BaselineKind, data_dir: &Path) -> Result<String> {
    let (ds, parts) = load_split(cfg, data_dir)?;
    let out = &cfg.output_dir;
    let outcome = fit_baseline::<T>(kind, &parts.train, Some(&parts.valid), &cfg.baseline)?;
    prepare_output(out, cfg, &parts)?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    for row in &outcome.history {
        serde_json::to_writer(&mut log, row)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    let test_rmse = evaluate_rmse(&outcome.model, &parts.test)?;
    let valid_rmse = evaluate_rmse(&outcome.model, &parts.valid)?;
    let ckpt = Checkpoint::flat(outcome.model).with_dataset(&ds);
    ckpt.save(&out.join("checkpoint.json"))?;
    write_json(
        &out.join("metrics.json"),
        &Metrics {
            model_kind: ckpt.model.kind_name().into(),
            best_epoch: outcome.best_epoch,
            valid_rmse,
            test_rmse,
            split_fingerprint: parts.fingerprint.clone(),
        },
    )?;
    Ok(summary_line(&cfg.dataset.name, cfg.baseline.dim, None, test_rmse))
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let text = std::fs::read_to_string(path)?;
    match read_header(&text)?.scalar.as_str() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(Error::Checkpoint(format!("unsupported scalar type {other:?}"))),
    }
}

fn check_keys<T>(ckpt: &Checkpoint<T>, ds: &InteractionDataset) -> Result<()> {
    if let Some(keys) = &ckpt.keys {
        if keys.users != ds.users.keys() || keys.items != ds.items.keys() {
            return Err(Error::Checkpoint("checkpoint key maps do not match the configured dataset".into()));
        }
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, data_dir: &Path) -> Result<String> {
    cfg.split.validate()?;
    match checkpoint_precision(checkpoint)? {
        Precision::F32 => evaluate_as::<f32>(cfg, checkpoint, data_dir),
        Precision::F64 => evaluate_as::<f64>(cfg, checkpoint, data_dir),
    }
}

fn evaluate_as<T: Scalar>(cfg: &RunConfig, checkpoint: &Path, data_dir: &Path) -> Result<String> {
    let ckpt = Checkpoint::<T>::load(checkpoint)?;
    let (ds, parts) = load_split(cfg, data_dir)?;
    check_keys(&ckpt, &ds)?;
    match &ckpt.model {
        SavedModel::Mfdmc(m) => {
            let rmse = evaluate_rmse(m, &parts.test)?;
            let c = &m.config;
            Ok(summary_line(&cfg.dataset.name, c.latent_dim, Some((c.views, c.center_dim, c.centers)), rmse))
        }
        SavedModel::Flat(m) => Ok(summary_line(&cfg.dataset.name, m.dim, None, evaluate_rmse(m, &parts.test)?)),
    }
}

pub struct ExportRequest<'a> {
    pub checkpoint: &'a Path,
    pub metadata: Option<PathBuf>,
    pub output: &'a Path,
    /// Dataset used for the per-user-cluster rating summaries.
    pub ratings: Option<(RunConfig, PathBuf)>,
}

pub fn export(req: &ExportRequest) -> Result<Vec<PathBuf>> {
    match checkpoint_precision(req.checkpoint)? {
        Precision::F32 => export_as::<f32>(req),
        Precision::F64 => export_as::<f64>(req),
    }
}

fn export_as<T: Scalar>(req: &ExportRequest) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::<T>::load(req.checkpoint)?;
    let SavedModel::Mfdmc(model) = &ckpt.model else {
        return Err(Error::Checkpoint(format!("export needs an mfdmc checkpoint, found {}", ckpt.model.kind_name())));
    };
    let metadata = req.metadata.as_deref().map(ItemMetadata::load).transpose()?;
    let ratings = match &req.ratings {
        Some((cfg, data_dir)) => {
            let ds = load_ratings(&cfg.data_path(data_dir), cfg.dataset.format)?;
            check_keys(&ckpt, &ds)?;
            Some(ds)
        }
        None => None,
    };
    let report = match &metadata {
        Some(meta) => {
            let keys = ckpt
                .keys
                .as_ref()
                .ok_or_else(|| Error::Metadata("checkpoint carries no item keys to join metadata on".into()))?;
            Some(interpretability_report(model, &KeyIndex::from_keys(keys.items.clone())?, meta, ratings.as_ref())?)
        }
        None => {
            eprintln!("warning: no item metadata given; writing cluster assignments only");
            None
        }
    };
    let paths = export_assignments(model, req.output)?;
    let mut written = vec![paths.assignments_csv, paths.centers_json];
    if let Some(report) = report {
        let path = req.output.join("interpretability.json");
        write_json(&path, &report)?;
        written.push(path);
    }
    Ok(written)
}

/// Per-block table and overall verdict of the finite-difference suite.
pub fn gradcheck(cfg: &RunConfig) -> Result<(String, bool)> {
    let report = run_gradcheck(&cfg.gradcheck)?;
    let mut table = String::from("block\tchecked\tskipped\tmax_rel_error\n");
    for b in &report.blocks {
        table.push_str(&format!("{}\t{}\t{}\t{:.3e}\n", b.block, b.checked, b.skipped, b.max_rel_error));
    }
    let failing: Vec<&str> = report.failing().iter().map(|b| b.block.as_str()).collect();
    if failing.is_empty() {
        table.push_str(&format!("ok: {} coordinates, max relative error {:.3e}\n", report.checked(), report.max_rel_error()));
    } else {
        table.push_str(&format!("FAILED blocks (tolerance {:.0e}): {}\n", report.tolerance, failing.join(", ")));
    }
    Ok((table, report.passed()))
}

#[derive(Serialize)]
struct SynthMetrics {
    train_rmse: f64,
    recovery: f64,
    planted_residual_rmse: f64,
}

/// Writes a planted dataset; with `fit` also trains on all of it and scores
/// cluster recovery.
pub fn synth(cfg: &RunConfig, fit: bool) -> Result<String> {
    if fit {
        cfg.model.validate()?;
    }
    let (ds, planted) = generate_synthetic(&cfg.synthetic)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let mut csv = String::from("user,item,rating\n");
    for r in &ds.records {
        let u = ds.users.key_of(r.user as usize).unwrap_or_default();
        let i = ds.items.key_of(r.item as usize).unwrap_or_default();
        csv.push_str(&format!("{u},{i},{}\n", r.rating));
    }
    std::fs::write(out.join("ratings.csv"), csv)?;
    write_json(&out.join("planted.json"), &planted)?;
    if !fit {
        return Ok(format!("synthetic\t{} ratings written to {}", ds.len(), out.display()));
    }
    let outcome = match cfg.precision {
        Precision::F32 => return Err(Error::Config("synth --fit runs in f64 only".into())),
        Precision::F64 => fit_with::<f64>(&cfg.model, &ds, None, |_, _, _| Ok(()))?,
    };
    let train_rmse = evaluate_rmse(&outcome.model, &ds)?;
    let recovery = planted_recovery(&outcome.model, &planted)?;
    Checkpoint::mfdmc(outcome.model).with_dataset(&ds).save(&out.join("checkpoint.json"))?;
    write_json(
        &out.join("metrics.json"),
        &SynthMetrics { train_rmse, recovery, planted_residual_rmse: planted.residual_rmse(&ds) },
    )?;
    eprintln!("planted-structure recovery {recovery:.4}");
    let m = &cfg.model;
    Ok(summary_line("synthetic", m.latent_dim, Some((m.views, m.center_dim, m.centers)), train_rmse))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_is_tab_separated() {
        assert_eq!(summary_line("ml-100k", 16, Some((8, 2, 10)), 0.91), "ml-100k\t16\t8\t2\t10\t0.910000");
        assert_eq!(summary_line("x", 16, None, 1.0).split('\t').count(), 6);
    }
}
