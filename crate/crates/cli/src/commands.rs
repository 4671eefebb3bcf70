use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use flowcast_core::estimators::{fit, EstimatorKind, FitContext, TrainedEstimator};
use flowcast_core::eval::{run_trials, sweep_csv, sweep_svg, table1_csv, table3_csv, TrialReport, TrialSpec};
use flowcast_core::lse::{lse_noise_study, LseErrors};
use flowcast_core::measurement::{GmmNoiseModel, NoiseSpec};
use flowcast_core::netmodel::read_case;
use flowcast_core::nn::TrainHistory;
use flowcast_core::par::Execution;
use flowcast_core::placement::{incremental_search, PlacementSearchResult, SearchConfig};
use flowcast_core::scenario::{build_dataset, generate_scenarios, Dataset};
use flowcast_core::{Error, Grid};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::InputError;

pub fn load_grid(cfg: &RunConfig) -> anyhow::Result<Grid> {
    if !cfg.case.is_file() {
        anyhow::bail!(InputError(format!("case file not found: {}", cfg.case.display())));
    }
    let model = read_case(&cfg.case)?;
    Ok(Grid::new(model)?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn noise_model(cfg: &RunConfig, stage: &str) -> anyhow::Result<GmmNoiseModel> {
    Ok(cfg.noise_spec()?.model(cfg.seeds().noise_for(stage))?)
}

/// Solves the scenarios and writes `dataset/`.
pub fn cmd_gen(cfg: &RunConfig, exec: Execution) -> anyhow::Result<Dataset> {
    cfg.validate()?;
    let grid = load_grid(cfg)?;
    let placement = cfg.placement.resolve(&grid.model)?;
    let seeds = cfg.seeds();
    let scenarios = generate_scenarios(&grid.model, cfg.dataset.oversampled(), cfg.scenario, seeds.scenario)?;
    let mut ds = build_dataset(&grid, &scenarios, &placement, cfg.dataset, seeds.shuffle, exec)?;
    ds.meta.noise = Some(cfg.noise_spec()?);
    ds.meta.noise_seed = Some(seeds.noise_for("train"));
    ds.write(cfg.dataset_dir())?;
    log::info!(
        "wrote {} rows x {} features to {}",
        ds.len(),
        ds.z.ncols(),
        cfg.dataset_dir().display()
    );
    Ok(ds)
}

pub fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let dir = cfg.dataset_dir();
    if !dir.join("meta.json").is_file() {
        return Err(Error::MissingArtifacts(vec![format!("{} (run `flowcast gen`)", dir.display())]).into());
    }
    Ok(Dataset::read(&dir)?)
}

fn model_path(cfg: &RunConfig, kind: EstimatorKind) -> PathBuf {
    cfg.models_dir().join(format!("{kind}.json"))
}

fn loss_csv(h: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    writeln!(out, "0,,{}", h.initial_val_loss).unwrap();
    for e in &h.epochs {
        writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss).unwrap();
    }
    out
}

/// Trains each of `kinds` and writes `models/<kind>.json` plus, for
/// networks, `models/<kind>-loss.csv`.
pub fn cmd_train(cfg: &RunConfig, kinds: &[EstimatorKind], exec: Execution) -> anyhow::Result<Vec<TrainedEstimator>> {
    cfg.validate()?;
    let grid = load_grid(cfg)?;
    let ds = load_dataset(cfg)?;
    let noise = noise_model(cfg, "train")?;
    let ctx = FitContext {
        grid: &grid,
        dataset: &ds,
        noise: &noise,
        exec,
    };
    let train = cfg.train_config();
    std::fs::create_dir_all(cfg.models_dir()).with_context(|| format!("creating {}", cfg.models_dir().display()))?;
    let mut out = Vec::new();
    for &kind in kinds {
        log::info!("training {}", kind.title());
        let fitted = fit(kind, ctx, &train, cfg.train.n_bin).with_context(|| format!("training {kind}"))?;
        fitted.estimator.write(model_path(cfg, kind))?;
        if let Some(h) = &fitted.history {
            log::info!(
                "{kind}: best epoch {} (validation loss {:.6})",
                h.best_epoch,
                h.best_val_loss
            );
            write(&cfg.models_dir().join(format!("{kind}-loss.csv")), loss_csv(h))?;
        }
        out.push(fitted.estimator);
    }
    Ok(out)
}

pub fn load_estimator(cfg: &RunConfig, kind: EstimatorKind) -> anyhow::Result<TrainedEstimator> {
    let path = model_path(cfg, kind);
    if !path.is_file() {
        return Err(Error::MissingArtifacts(vec![format!("{kind}.json")]).into());
    }
    Ok(TrainedEstimator::read(&path)?)
}

/// Repeated-trial evaluation; writes `report/trials.json` and `report/table3.csv`.
pub fn cmd_eval(cfg: &RunConfig, kinds: &[EstimatorKind], exec: Execution) -> anyhow::Result<Vec<TrialReport>> {
    cfg.validate()?;
    let grid = load_grid(cfg)?;
    let ds = load_dataset(cfg)?;
    let missing: Vec<String> = kinds
        .iter()
        .filter(|k| !model_path(cfg, **k).is_file())
        .map(|k| format!("{k}.json"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing).into());
    }
    let noise = noise_model(cfg, "eval")?;
    let spec = TrialSpec {
        trials: cfg.eval.trials,
        subset_size: cfg.eval.subset,
        seed: cfg.seeds().trials,
    };
    let mut reports = Vec::new();
    for &kind in kinds {
        let est = load_estimator(cfg, kind)?;
        let r = run_trials(&est, &grid, &ds, &noise, spec, exec)?;
        log::info!("{}: RMSE {:.4} +- {:.4} MW", kind.title(), r.rmse_mean, r.rmse_std);
        reports.push(r);
    }
    let dir = cfg.report_dir();
    write_json(&dir.join("trials.json"), &reports)?;
    match table3_csv(&reports) {
        Ok(table) => write(&dir.join("table3.csv"), table)?,
        Err(Error::MissingArtifacts(names)) => {
            log::warn!("table3.csv not written; not evaluated: {}", names.join(", "))
        }
        Err(e) => return Err(e.into()),
    }
    Ok(reports)
}

/// LSE noise study on the test split; writes `report/table1.csv` and `report/lse.json`.
pub fn cmd_lse(cfg: &RunConfig, exec: Execution) -> anyhow::Result<Vec<LseErrors>> {
    cfg.validate()?;
    let grid = load_grid(cfg)?;
    let ds = load_dataset(cfg)?;
    let placement = cfg.lse.placement.resolve(&grid.model)?;
    let test = ds.split().test.clone();
    let n = cfg.lse.samples.min(test.len());
    if n == 0 {
        anyhow::bail!(InputError("lse needs a nonempty test split".into()));
    }
    let rows = test.start..test.start + n;
    let states: Vec<_> = rows.clone().map(|i| ds.state_at(i)).collect();
    let seed = cfg.seeds().noise_for("lse");
    let noises = vec![
        ("noise_free".to_string(), NoiseSpec::None.model(seed)?),
        (
            "gaussian".to_string(),
            NoiseSpec::Gaussian {
                tve: cfg.lse.gaussian_tve,
            }
            .model(seed)?,
        ),
        ("gmm".to_string(), NoiseSpec::Gmm.model(seed)?),
    ];
    let rows = lse_noise_study(&grid, &placement, &states, ds.sample_keys(rows), &noises, exec)?;
    let dir = cfg.report_dir();
    write(&dir.join("table1.csv"), table1_csv(&rows))?;
    write_json(&dir.join("lse.json"), &rows)?;
    Ok(rows)
}

/// Incremental placement search per model; writes `report/sweep.{csv,svg,json}`.
pub fn cmd_sweep(
    cfg: &RunConfig,
    kinds: &[EstimatorKind],
    exec: Execution,
) -> anyhow::Result<Vec<PlacementSearchResult>> {
    cfg.validate()?;
    let grid = load_grid(cfg)?;
    let base = load_dataset(cfg)?;
    let start = cfg.sweep.start.resolve(&grid.model)?;
    let full = cfg.train_config();
    let search = SearchConfig {
        steps: cfg.sweep.steps,
        pool: cfg.sweep.candidate_pool(),
        candidate_train: flowcast_core::nn::TrainConfig {
            epochs: cfg.sweep.candidate_epochs,
            ..full
        },
        adopted_train: cfg.sweep.retrain_adopted.then_some(full),
        n_bin: cfg.train.n_bin,
        noise: noise_model(cfg, "sweep")?,
    };
    let mut results = Vec::new();
    for &kind in kinds {
        if kind == EstimatorKind::Lse {
            return Err(Error::Unsupported("sweep over the state estimator".into()).into());
        }
        log::info!("placement search for {}", kind.title());
        results.push(incremental_search(&grid, &base, kind, &start, &search, exec)?);
    }
    let dir = cfg.report_dir();
    write(&dir.join("sweep.csv"), sweep_csv(&results))?;
    write(&dir.join("sweep.svg"), sweep_svg(&results))?;
    write_json(&dir.join("sweep.json"), &results)?;
    Ok(results)
}

/// Report files `report` requires.
pub const REPORT_FILES: [&str; 4] = ["table1.csv", "table3.csv", "sweep.csv", "sweep.svg"];

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub seeds: crate::config::Seeds,
    pub config: RunConfig,
    /// SHA-256 of every artifact, keyed by path relative to the output directory.
    pub files: BTreeMap<String, String>,
}

fn relative_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            relative_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "run-manifest.json") {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Checks the report files exist and writes `report/run-manifest.json`.
pub fn cmd_report(cfg: &RunConfig) -> anyhow::Result<Manifest> {
    let dir = cfg.report_dir();
    let missing: Vec<String> = REPORT_FILES
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing).into());
    }
    let mut paths = Vec::new();
    for sub in ["dataset", "models", "report"] {
        relative_files(&cfg.output, &cfg.output.join(sub), &mut paths)?;
    }
    let mut files = BTreeMap::new();
    for p in paths {
        let bytes = std::fs::read(cfg.output.join(&p))?;
        let digest = Sha256::digest(&bytes);
        let hex = digest.iter().fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        });
        files.insert(p.to_string_lossy().replace('\\', "/"), hex);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seeds: cfg.seeds(),
        config: cfg.clone(),
        files,
    };
    write_json(&dir.join("run-manifest.json"), &manifest)?;
    Ok(manifest)
}
