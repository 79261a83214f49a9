//! `qienet`: the operator surface of the pipeline.
//!
//! Every subcommand prints a machine-readable JSON report to stdout and a
//! short human summary to stderr. Commands that write an artifact also
//! write a `<artifact>.manifest.json` sidecar recording the command, the
//! effective configuration, input digests, the seed, the tool version,
//! and wall time. Exit codes: 0 success, 2 configuration error, 3
//! data/format error, 4 training divergence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, NaiveDateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use qienet::error::{Error, Result};
use qienet::eval;
use qienet::manifest::RunManifest;
use qienet::model::{gradient_check, Model, ModelConfig, Sample};
use qienet::pipeline::dataset::{build_dataset, read_dataset, write_dataset, BuildOptions};
use qienet::pipeline::grid::{read_tile, GridTile};
use qienet::pipeline::qc::{iqr_filter, physical_threshold_filter};
use qienet::pipeline::solar::truncate_to_hour;
use qienet::pipeline::station::{read_stations, write_stations};
use qienet::pipeline::stats::{pcc_table, select_by_pcc_mean};
use qienet::pipeline::synth::synthesize;
use qienet::reconstruct::{
    integrate_energy, predict_grid, read_grid, write_grid, GapPolicy, Period,
};
use qienet::training::{cross_validate, fit, TrainConfig};

#[derive(Parser)]
#[command(name = "qienet", version, about = "Hourly GHI estimation from satellite image time series")]
struct Cli {
    /// Worker threads (falls back to QIENET_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quality-control station records: physical upper bound, then
    /// per-hour IQR outlier rejection.
    Qc(QcArgs),
    /// Join QC-passed station records with satellite tiles into a
    /// labeled sample dataset.
    BuildDataset(BuildDatasetArgs),
    /// Correlate per-channel slice statistics with the target and select
    /// channels by mean correlation.
    Pcc(PccArgs),
    /// Generate a synthetic dataset with a known cloud/irradiance
    /// structure.
    Synth(SynthArgs),
    /// Fit a model variant on a dataset with early stopping.
    Train(TrainArgs),
    /// K-fold cross-validation of a model variant.
    CrossValidate(CrossValidateArgs),
    /// Score a trained model on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Reconstruct hourly GHI grids over the tile domain.
    PredictGrid(PredictGridArgs),
    /// Integrate hourly GHI grids into period energy (kWh/m²).
    Integrate(IntegrateArgs),
    /// Compare analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(clap::Args)]
struct QcArgs {
    /// Station record CSV.
    #[arg(long)]
    stations: PathBuf,
    /// Write the retained records here (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BuildDatasetArgs {
    /// QC-passed station record CSV.
    #[arg(long)]
    stations: PathBuf,
    /// Directory of .qtil tiles (or one tile file).
    #[arg(long)]
    tiles: PathBuf,
    /// Output dataset path (.qdst).
    #[arg(long)]
    out: PathBuf,
    /// Skip records whose hour has zero extraterrestrial irradiance.
    #[arg(long)]
    daylight_only: bool,
    /// Keep samples the slice fault detector would drop.
    #[arg(long)]
    keep_faulty: bool,
}

#[derive(clap::Args)]
struct PccArgs {
    /// Dataset path (.qdst).
    #[arg(long)]
    dataset: PathBuf,
    /// Selection threshold on |PCC_mean|.
    #[arg(long, default_value_t = 0.24)]
    threshold: f64,
    /// Frame the statistics are computed on (default: last).
    #[arg(long)]
    timestep: Option<usize>,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Moving cloud fields instead of spatially uniform planes.
    #[arg(long)]
    spatial: bool,
    /// Output dataset path (.qdst).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset path (.qdst).
    #[arg(long)]
    dataset: PathBuf,
    /// Model variant (FC1..FC8, Conv1..Conv8).
    #[arg(long, default_value = "Conv6")]
    variant: String,
    /// Training configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint path (.qien).
    #[arg(long)]
    out: PathBuf,
    /// Fraction of samples held out for early stopping.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    val_every: Option<usize>,
    /// Seed for shuffling, the train/validation split, and model init.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct CrossValidateArgs {
    /// Dataset path (.qdst).
    #[arg(long)]
    dataset: PathBuf,
    /// Model variant (FC1..FC8, Conv1..Conv8).
    #[arg(long, default_value = "Conv6")]
    variant: String,
    /// Training configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    val_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Labeled dataset path (.qdst).
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint path (.qien).
    #[arg(long)]
    model: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-station metrics as CSV here.
    #[arg(long)]
    station_csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PredictGridArgs {
    /// Directory of .qtil tiles (or one tile file).
    #[arg(long)]
    tiles: PathBuf,
    /// Checkpoint path (.qien).
    #[arg(long)]
    model: PathBuf,
    /// Altitude layer as an .asc grid matching the tile geometry
    /// (default: 0 everywhere).
    #[arg(long)]
    dem: Option<PathBuf>,
    /// Directory the hourly grids are written into.
    #[arg(long)]
    out_dir: PathBuf,
    /// Reconstruct only this hour (e.g. 2019-04-12T05); default, every
    /// complete hour found.
    #[arg(long)]
    hour: Option<String>,
}

#[derive(clap::Args)]
struct IntegrateArgs {
    /// Directory holding hourly ghi_YYYY-MM-DDTHH.asc grids.
    #[arg(long)]
    grids: PathBuf,
    /// YYYY, YYYY-MM, or YYYY-{spring,summer,autumn,winter}.
    #[arg(long)]
    period: String,
    #[arg(long, value_enum, default_value_t = PolicyArg::Strict)]
    policy: PolicyArg,
    /// Output energy grid path (.asc).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Every hour of the period must be present.
    Strict,
    /// Integrate whatever hours are present.
    Skip,
}

#[derive(clap::Args)]
struct GradCheckArgs {
    /// Model variant (FC1..FC8, Conv1..Conv8).
    #[arg(long, default_value = "Conv6")]
    variant: String,
    /// Random parameter coordinates to probe.
    #[arg(long, default_value_t = 60)]
    coords: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Maximum tolerated relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthetic samples the loss is evaluated on.
    #[arg(long, default_value_t = 3)]
    samples: usize,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!(
            "{}",
            json!({"error": {"kind": e.kind(), "message": e.to_string(), "exit": e.exit_code()}})
        );
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    let report = match cli.command {
        Command::Qc(a) => cmd_qc(a)?,
        Command::BuildDataset(a) => cmd_build_dataset(a)?,
        Command::Pcc(a) => cmd_pcc(a)?,
        Command::Synth(a) => cmd_synth(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::CrossValidate(a) => cmd_cross_validate(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::PredictGrid(a) => cmd_predict_grid(a)?,
        Command::Integrate(a) => cmd_integrate(a)?,
        Command::GradCheck(a) => cmd_grad_check(a)?,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report"));
    Ok(())
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("QIENET_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| {
                Error::Config(format!("QIENET_THREADS={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write_manifest(
    command: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: &[&Path],
    started: Instant,
    artifact: &Path,
) -> Result<PathBuf> {
    let mut m = RunManifest::new(command, config, seed);
    for p in inputs {
        m.add_input(p)?;
    }
    m.wall_time_s = started.elapsed().as_secs_f64();
    m.write_beside(artifact)
}

fn cmd_qc(a: QcArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let records = read_stations(&a.stations)?;
    let physical = physical_threshold_filter(&records)?;
    let iqr = iqr_filter(&physical.retained)?;

    if let Some(out) = &a.out {
        write_stations(out, &iqr.retained)?;
        write_manifest(
            "qc",
            json!({"stations": a.stations, "out": out}),
            0,
            &[&a.stations],
            started,
            out,
        )?;
    }
    eprintln!(
        "qc: retained {} of {} records ({} above the physical cap, {} IQR outliers)",
        iqr.retained.len(),
        records.len(),
        physical.rejected.len(),
        iqr.rejected.len()
    );
    Ok(json!({
        "command": "qc",
        "input_records": records.len(),
        "threshold_rejected": physical.rejected.len(),
        "iqr_rejected": iqr.rejected.len(),
        "retained": iqr.retained.len(),
        "whiskers": iqr.whiskers,
        "out": a.out,
    }))
}

/// Reads one .qtil file, or every .qtil in a directory in name order.
fn read_tiles(path: &Path) -> Result<(Vec<GridTile>, Vec<PathBuf>)> {
    let mut paths = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "qtil") {
                paths.push(p);
            }
        }
        paths.sort();
    } else {
        paths.push(path.to_path_buf());
    }
    if paths.is_empty() {
        return Err(Error::Input(format!(
            "no .qtil tiles under {}",
            path.display()
        )));
    }
    let tiles = paths.iter().map(|p| read_tile(p)).collect::<Result<_>>()?;
    Ok((tiles, paths))
}

fn cmd_build_dataset(a: BuildDatasetArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let stations = read_stations(&a.stations)?;
    let (tiles, tile_paths) = read_tiles(&a.tiles)?;
    let opts = BuildOptions {
        daylight_only: a.daylight_only,
        drop_faulty: !a.keep_faulty,
    };
    let (ds, report) = build_dataset(&stations, &tiles, &opts)?;
    write_dataset(&a.out, &ds)?;

    let mut inputs: Vec<&Path> = vec![&a.stations];
    inputs.extend(tile_paths.iter().map(|p| p.as_path()));
    write_manifest(
        "build-dataset",
        json!({
            "stations": a.stations,
            "tiles": a.tiles,
            "out": a.out,
            "daylight_only": a.daylight_only,
            "keep_faulty": a.keep_faulty,
        }),
        0,
        &inputs,
        started,
        &a.out,
    )?;
    eprintln!(
        "build-dataset: {} samples from {} records and {} tiles -> {}",
        ds.len(),
        stations.len(),
        tiles.len(),
        a.out.display()
    );
    Ok(json!({
        "command": "build-dataset",
        "samples": ds.len(),
        "report": report,
        "out": a.out,
    }))
}

fn cmd_pcc(a: PccArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let ds = read_dataset(&a.dataset)?;
    let table = pcc_table(&ds.samples, &ds.channels, a.timestep)?;
    let means: Vec<f64> = table.rows.iter().map(|r| r.pcc_mean).collect();
    let picked = select_by_pcc_mean(&means, a.threshold);
    let selected: Vec<&str> = picked
        .iter()
        .map(|&i| table.rows[i].channel_id.as_str())
        .collect();

    eprintln!(
        "pcc: threshold {} selects {}",
        a.threshold,
        selected.join(",")
    );
    let report = json!({
        "command": "pcc",
        "threshold": a.threshold,
        "table": table,
        "selected_indices": picked,
        "selected": selected,
    });
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        write_manifest(
            "pcc",
            json!({"dataset": a.dataset, "threshold": a.threshold, "timestep": a.timestep}),
            0,
            &[&a.dataset],
            started,
            out,
        )?;
    }
    Ok(report)
}

fn cmd_synth(a: SynthArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let ds = synthesize(a.n, a.seed, a.spatial)?;
    write_dataset(&a.out, &ds)?;
    write_manifest(
        "synth",
        json!({"n": a.n, "seed": a.seed, "spatial": a.spatial, "out": a.out}),
        a.seed,
        &[],
        started,
        &a.out,
    )?;
    eprintln!(
        "synth: {} samples (seed {}, {}) -> {}",
        ds.len(),
        a.seed,
        if a.spatial { "spatial" } else { "uniform" },
        a.out.display()
    );
    Ok(json!({
        "command": "synth",
        "samples": ds.len(),
        "seed": a.seed,
        "spatial": a.spatial,
        "out": a.out,
    }))
}

/// Training config from an optional JSON file with flag overrides.
#[allow(clippy::too_many_arguments)]
fn resolve_train_config(
    file: Option<&Path>,
    folds: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    val_every: Option<usize>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match file {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                Error::Config(format!("training config {}: {e}", p.display()))
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = folds {
        cfg.fold_count = v;
    }
    if let Some(v) = learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = patience {
        cfg.patience = v;
    }
    if let Some(v) = val_every {
        cfg.val_every = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Deterministic held-out split: shuffle indices, take the head as
/// validation.
fn split_train_val(samples: &[Sample], fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = samples.len();
    let n_val = ((n as f64 * fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::Input(format!(
            "{n} samples cannot support a {fraction} validation split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let val = idx[..n_val].iter().map(|&i| samples[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, val))
}

fn cmd_train(a: TrainArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let cfg = resolve_train_config(
        a.config.as_deref(),
        None,
        a.learning_rate,
        a.batch_size,
        a.max_epochs,
        a.patience,
        a.val_every,
        a.seed,
    )?;
    let mut model_cfg = ModelConfig::variant(&a.variant)?;
    model_cfg.seed = cfg.seed;

    let ds = read_dataset(&a.dataset)?;
    let (train, val) = split_train_val(&ds.samples, a.val_fraction, cfg.seed)?;
    let outcome = fit(&model_cfg, &train, &val, &cfg)?;
    outcome.model.save(&a.out)?;

    let mut est = Vec::with_capacity(val.len());
    let mut obs = Vec::with_capacity(val.len());
    for s in &val {
        est.push(outcome.model.predict(s)?);
        obs.push(s.target_ghi.expect("validated in fit"));
    }
    let metrics = eval::metrics_report("validation", &est, &obs)?;

    let config_json = json!({
        "variant": a.variant,
        "train": cfg,
        "val_fraction": a.val_fraction,
        "dataset": a.dataset,
    });
    let mut inputs: Vec<&Path> = vec![&a.dataset];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    write_manifest("train", config_json, cfg.seed, &inputs, started, &a.out)?;
    eprintln!(
        "train: best epoch {} (val MSE {:.3e}), stopped at {}; val RMSE {:.1} W/m2 -> {}",
        outcome.report.best_epoch,
        outcome.report.best_val_mse,
        outcome.report.stopping_epoch,
        metrics.rmse,
        a.out.display()
    );
    Ok(json!({
        "command": "train",
        "variant": a.variant,
        "train_samples": train.len(),
        "val_samples": val.len(),
        "report": outcome.report,
        "val_metrics": metrics,
        "out": a.out,
    }))
}

fn cmd_cross_validate(a: CrossValidateArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let cfg = resolve_train_config(
        a.config.as_deref(),
        a.folds,
        a.learning_rate,
        a.batch_size,
        a.max_epochs,
        a.patience,
        a.val_every,
        a.seed,
    )?;
    let mut model_cfg = ModelConfig::variant(&a.variant)?;
    model_cfg.seed = cfg.seed;

    let ds = read_dataset(&a.dataset)?;
    let cv = cross_validate(&model_cfg, &ds.samples, &cfg)?;

    let folds: Vec<serde_json::Value> = cv
        .folds
        .iter()
        .map(|f| {
            json!({
                "fold": f.fold,
                "best_epoch": f.report.best_epoch,
                "stopping_epoch": f.report.stopping_epoch,
                "metrics": f.metrics,
            })
        })
        .collect();
    let report = json!({
        "command": "cross-validate",
        "variant": a.variant,
        "folds": folds,
        "rmse": cv.rmse,
        "mbe": cv.mbe,
        "r2": cv.r2,
        "r": cv.r,
    });
    eprintln!(
        "cross-validate: {} folds, RMSE {:.1} ± {:.1} W/m2, R2 {:.3} ± {:.3}",
        cv.folds.len(),
        cv.rmse.mean,
        cv.rmse.std,
        cv.r2.mean,
        cv.r2.std
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        let mut inputs: Vec<&Path> = vec![&a.dataset];
        if let Some(c) = &a.config {
            inputs.push(c);
        }
        write_manifest(
            "cross-validate",
            json!({"variant": a.variant, "train": cfg, "dataset": a.dataset}),
            cfg.seed,
            &inputs,
            started,
            out,
        )?;
    }
    Ok(report)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let model = Model::load(&a.model)?;
    let ds = read_dataset(&a.dataset)?;

    let mut triples = Vec::new();
    let mut unlabeled = 0usize;
    for s in &ds.samples {
        match s.target_ghi {
            Some(obs) => triples.push((s.station_id.clone(), model.predict(s)?, obs)),
            None => unlabeled += 1,
        }
    }
    let est: Vec<f64> = triples.iter().map(|t| t.1).collect();
    let obs: Vec<f64> = triples.iter().map(|t| t.2).collect();
    let overall = eval::metrics_report("all", &est, &obs)?;
    // The per-station breakdown is best-effort: datasets can lack
    // stations with two or more varied samples.
    let stations = match eval::per_station_report(&triples) {
        Ok(s) => Some(s),
        Err(Error::UndefinedMetric(msg)) => {
            eprintln!("evaluate: no per-station table: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    if let (Some(csv), Some(s)) = (&a.station_csv, &stations) {
        eval::write_station_csv(csv, s)?;
    }

    let report = json!({
        "command": "evaluate",
        "overall": overall,
        "stations": stations,
        "unlabeled_skipped": unlabeled,
        "station_csv": a.station_csv,
    });
    eprintln!(
        "evaluate: {} pairs, RMSE {:.1} W/m2, MBE {:+.1} W/m2, R2 {:.3}, r {:.3}",
        overall.n, overall.rmse, overall.mbe, overall.r2, overall.r
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        write_manifest(
            "evaluate",
            json!({"dataset": a.dataset, "model": a.model}),
            0,
            &[&a.dataset, &a.model],
            started,
            out,
        )?;
    }
    Ok(report)
}

fn parse_hour(s: &str) -> Result<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(&format!("{s}:00"), "%Y-%m-%dT%H:%M")
        .map(|n| n.and_utc())
        .map_err(|_| Error::Config(format!("cannot parse hour {s:?}; expected YYYY-MM-DDTHH")))
}

fn hour_file_name(hour: DateTime<Utc>) -> String {
    hour.format("ghi_%Y-%m-%dT%H.asc").to_string()
}

fn cmd_predict_grid(a: PredictGridArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let model = Model::load(&a.model)?;
    let (tiles, tile_paths) = read_tiles(&a.tiles)?;
    let dem = a.dem.as_deref().map(read_grid).transpose()?;
    let only = a.hour.as_deref().map(parse_hour).transpose()?;

    let mut by_hour: BTreeMap<DateTime<Utc>, Vec<GridTile>> = BTreeMap::new();
    for t in tiles {
        by_hour.entry(truncate_to_hour(t.timestamp)).or_default().push(t);
    }
    if let Some(hour) = only {
        match by_hour.remove(&hour) {
            Some(frames) => by_hour = BTreeMap::from([(hour, frames)]),
            None => {
                return Err(Error::Gap(format!(
                    "no tiles for the requested hour {hour}"
                )))
            }
        }
    }

    fs::create_dir_all(&a.out_dir)?;
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for (hour, mut frames) in by_hour {
        frames.sort_by_key(|t| t.timestamp);
        let result = predict_grid(&frames, &model, dem.as_ref().map(|g| &g.values));
        match result {
            Ok(grid) => {
                let path = a.out_dir.join(hour_file_name(hour));
                write_grid(&path, &grid)?;
                written.push(path);
            }
            // An incomplete hour is only an error when explicitly asked for.
            Err(Error::Gap(msg)) if only.is_none() => {
                eprintln!("predict-grid: skipping {hour}: {msg}");
                skipped.push(hour.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if written.is_empty() {
        return Err(Error::Gap("no complete hour of tiles found".into()));
    }

    let mut inputs: Vec<&Path> = vec![&a.model];
    if let Some(d) = &a.dem {
        inputs.push(d);
    }
    inputs.extend(tile_paths.iter().map(|p| p.as_path()));
    write_manifest(
        "predict-grid",
        json!({
            "tiles": a.tiles,
            "model": a.model,
            "dem": a.dem,
            "out_dir": a.out_dir,
            "hour": a.hour,
            "grids": written,
        }),
        0,
        &inputs,
        started,
        &a.out_dir.join("predict-grid"),
    )?;
    eprintln!(
        "predict-grid: wrote {} hourly grids to {} ({} incomplete hours skipped)",
        written.len(),
        a.out_dir.display(),
        skipped.len()
    );
    Ok(json!({
        "command": "predict-grid",
        "grids": written,
        "skipped_hours": skipped,
    }))
}

fn cmd_integrate(a: IntegrateArgs) -> Result<serde_json::Value> {
    let started = Instant::now();
    let period: Period = a.period.parse()?;
    let policy = match a.policy {
        PolicyArg::Strict => GapPolicy::Strict,
        PolicyArg::Skip => GapPolicy::Skip,
    };

    let mut consumed = Vec::new();
    let mut hourly = Vec::new();
    for entry in fs::read_dir(&a.grids)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        let stamp = match name
            .strip_prefix("ghi_")
            .and_then(|r| r.strip_suffix(".asc"))
        {
            Some(s) => s,
            None => continue,
        };
        let hour = parse_hour(stamp)
            .map_err(|_| Error::Format {
                offset: 0,
                message: format!("grid file name {name:?} is not ghi_YYYY-MM-DDTHH.asc"),
            })?;
        if !period.contains(hour) {
            continue;
        }
        hourly.push((hour, read_grid(&path)?));
        consumed.push(path);
    }
    consumed.sort();
    hourly.sort_by_key(|(h, _)| *h);

    let energy = integrate_energy(&hourly, period, policy)?;
    write_grid(&a.out, &energy)?;

    let inputs: Vec<&Path> = consumed.iter().map(|p| p.as_path()).collect();
    write_manifest(
        "integrate",
        json!({
            "grids": a.grids,
            "period": a.period,
            "policy": match a.policy { PolicyArg::Strict => "strict", PolicyArg::Skip => "skip" },
            "out": a.out,
            "consumed": consumed,
        }),
        0,
        &inputs,
        started,
        &a.out,
    )?;
    let expected = period.hours()?.len();
    eprintln!(
        "integrate: {} of {} hours of {} -> {}",
        hourly.len(),
        expected,
        period,
        a.out.display()
    );
    Ok(json!({
        "command": "integrate",
        "period": a.period,
        "hours_used": hourly.len(),
        "hours_expected": expected,
        "out": a.out,
    }))
}

fn cmd_grad_check(a: GradCheckArgs) -> Result<serde_json::Value> {
    let mut cfg = ModelConfig::variant(&a.variant)?;
    cfg.seed = a.seed;
    let ds = synthesize(a.samples.max(1), a.seed, true)?;
    let normalizer = qienet::pipeline::normalizer::Normalizer::fit(&ds.samples)?;
    let model = Model::init(cfg, normalizer)?;
    let report = gradient_check(&model, &ds.samples, a.coords, a.epsilon, a.seed)?;

    eprintln!(
        "grad-check: {} coords, max rel err {:.2e} (tolerance {:.0e})",
        report.coords_checked, report.max_rel_err, a.tolerance
    );
    if report.max_rel_err > a.tolerance {
        return Err(Error::State(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_err, a.tolerance
        )));
    }
    Ok(json!({
        "command": "grad-check",
        "variant": a.variant,
        "report": report,
        "tolerance": a.tolerance,
        "pass": true,
    }))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
