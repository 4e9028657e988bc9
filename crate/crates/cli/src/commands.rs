//! The subcommands, as library functions returning what they wrote.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use cl4st_core::config::{AnnealSchedule, LossConfig, TrainConfig, Variant};
use cl4st_core::data::{
    load_dataset, write_dataset, CrimeSynth, Dataset, DatasetKind, DatasetMeta, DatasetSpec, NormalizationStats,
    SplitPart, TrafficSynth,
};
use cl4st_core::generator::{EdgeAction, NodeAction};
use cl4st_core::model::{load_checkpoint, save_checkpoint, Checkpoint, Cl4st, ModelSpec};
use cl4st_core::train::{evaluate_store, historical_average_metrics, EvalOptions, PreparedData, Trainer};
use cl4st_core::{FeatureTensor, Neighborhood, ParamStore, Tape};
use image::Rgb;
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::plot;
use crate::report::{Baselines, DatasetSummary, ParamCounts, Report};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "log.ndjson";
pub const REPORT_FILE: &str = "report.json";

/// Exported attention rows must sum to one within this.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Everything besides parameters that evaluation and export need, stored in
/// the checkpoint's `extra.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub dataset: DatasetSpec,
    pub normalization: NormalizationStats,
    pub loss: LossConfig,
    pub anneal: AnnealSchedule,
    pub train: TrainConfig,
    pub variant: Variant,
    pub best_epoch: usize,
    pub seed: u64,
}

impl RunInfo {
    pub fn to_extra(&self) -> anyhow::Result<BTreeMap<String, serde_json::Value>> {
        match serde_json::to_value(self)? {
            serde_json::Value::Object(m) => Ok(m.into_iter().collect()),
            _ => unreachable!("struct serialises to an object"),
        }
    }

    pub fn from_extra(extra: &BTreeMap<String, serde_json::Value>) -> anyhow::Result<Self> {
        let obj: serde_json::Map<String, serde_json::Value> = extra.clone().into_iter().collect();
        serde_json::from_value(serde_json::Value::Object(obj)).context("checkpoint lacks run metadata")
    }
}

fn dataset_summary(spec: &DatasetSpec, ds: &Dataset) -> DatasetSummary {
    let (steps, nodes, features) = ds.signals.shape();
    DatasetSummary {
        kind: spec.kind,
        path: spec.path.display().to_string(),
        nodes,
        steps,
        features,
        grid: ds.meta.grid().map(|(i, j)| [i, j]),
        t_in: spec.t_in,
        t_out: spec.t_out,
    }
}

fn param_counts(store: &ParamStore<f64>) -> ParamCounts {
    ParamCounts {
        total: store.numel(),
        generator: store.iter().filter(|(_, n, _)| n.starts_with("gen_")).map(|(_, _, v)| v.len()).sum(),
    }
}

/// Train per `cfg`, writing `best.ckpt`, `log.ndjson` and `report.json` to `cfg.out_dir`.
pub fn train(cfg: &ExperimentConfig, command: &str) -> CliResult<Report> {
    let spec = cfg.dataset.spec();
    let ds = load_dataset(&spec)?;
    let data = PreparedData::<f64>::new(&ds, spec.t_in, spec.t_out, &spec.split)?;
    let model_spec = ModelSpec {
        nodes: data.nodes(),
        steps: spec.t_in,
        horizon: spec.t_out,
        f_in: data.features(),
        f_out: data.features(),
        model: cfg.model.clone(),
        generator: cfg.generator.clone(),
        variant: cfg.variant,
    };
    let mut trainer = Trainer::<f64>::new(model_spec, cfg.loss.clone(), cfg.anneal.clone(), cfg.train.clone())?;

    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    let log_path = cfg.out_dir.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?);
    let summary = trainer.fit(&data, |r, _| {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
        log.flush()?;
        eprintln!(
            "epoch {:>3}  train {:.5}  val mae {:.4}  rmse {:.4}",
            r.epoch, r.train_loss, r.val_mae, r.val_rmse
        );
        Ok(())
    })?;

    let info = RunInfo {
        dataset: spec.clone(),
        normalization: data.stats.clone(),
        loss: cfg.loss.clone(),
        anneal: cfg.anneal.clone(),
        train: cfg.train.clone(),
        variant: cfg.variant,
        best_epoch: summary.best_epoch,
        seed: cfg.train.seed,
    };
    save_checkpoint(&cfg.out_dir.join(CHECKPOINT_FILE), &trainer.model, &trainer.store, &info.to_extra()?)?;

    let test = trainer.evaluate(&data, SplitPart::Test, EvalOptions::default())?;
    let report = Report {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        variant: cfg.variant,
        variant_description: cfg.variant.description().to_string(),
        dataset: dataset_summary(&spec, &ds),
        split: SplitPart::Test,
        windows: data.range(SplitPart::Test).len(),
        seed: cfg.train.seed,
        missing_rate: None,
        metrics: test.metrics,
        baseline: Baselines {
            historical_average: historical_average_metrics(&data, SplitPart::Test)?,
        },
        training: Some(summary),
        parameters: param_counts(&trainer.store),
    };
    report.write(&cfg.out_dir.join(REPORT_FILE))?;
    Ok(report)
}

/// Train one ablation variant (or all) into `out_dir/<variant>`.
pub fn ablate(cfg: &ExperimentConfig, variants: &[Variant]) -> CliResult<Vec<Report>> {
    variants
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            c.variant = v;
            c.out_dir = cfg.out_dir.join(v.name());
            c.finish()?;
            eprintln!("variant {}: {}", v.name(), v.description());
            train(&c, "ablate")
        })
        .collect()
}

/// A checkpoint with its metadata and the dataset prepared with the stored normalisation.
pub struct Opened {
    pub ckpt: Checkpoint<f64>,
    pub info: RunInfo,
    pub dataset: Dataset,
    pub data: PreparedData<f64>,
}

/// Load `ckpt` and the dataset at `data_dir` (the training dataset when `None`).
pub fn open(ckpt: &Path, data_dir: Option<&Path>) -> CliResult<Opened> {
    let ck = load_checkpoint::<f64>(ckpt)?;
    let info = RunInfo::from_extra(&ck.extra).map_err(CliError::usage)?;
    let mut spec = info.dataset.clone();
    if let Some(d) = data_dir {
        spec.path = d.to_path_buf();
    }
    let ds = load_dataset(&spec)?;
    let m = &ck.model.spec;
    let (_, n, f) = ds.signals.shape();
    if n != m.nodes || f != m.f_in {
        return Err(CliError::usage(anyhow!(
            "dataset {} has {n} nodes and {f} features; checkpoint expects {} and {}",
            spec.path.display(),
            m.nodes,
            m.f_in
        )));
    }
    let data = PreparedData::with_stats(&ds, spec.t_in, spec.t_out, &spec.split, info.normalization.clone())?;
    Ok(Opened {
        ckpt: ck,
        info,
        dataset: ds,
        data,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub missing_rate: Option<f64>,
    /// Corruption seed; the training seed when `None`.
    pub seed: Option<u64>,
    pub density_bins: bool,
}

/// Test-split metrics of a checkpoint, optionally on corrupted inputs.
pub fn evaluate(ckpt: &Path, data_dir: &Path, opts: &EvaluateOptions) -> CliResult<Report> {
    let Opened { ckpt: ck, info, dataset, data } = open(ckpt, Some(data_dir))?;
    let data = match opts.missing_rate {
        Some(r) => data
            .with_missing(r, opts.seed.unwrap_or(info.seed))
            .map_err(|e| CliError::usage(anyhow::Error::from(e)))?,
        None => data,
    };
    let eval = evaluate_store(
        &ck.model,
        &ck.store,
        &info.loss,
        &data,
        SplitPart::Test,
        EvalOptions {
            density_classes: opts.density_bins,
        },
    )?;
    let mut spec = info.dataset.clone();
    spec.path = data_dir.to_path_buf();
    Ok(Report {
        command: "evaluate".into(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        variant: ck.model.spec.variant,
        variant_description: ck.model.spec.variant.description().to_string(),
        dataset: dataset_summary(&spec, &dataset),
        split: SplitPart::Test,
        windows: data.range(SplitPart::Test).len(),
        seed: opts.seed.unwrap_or(info.seed),
        missing_rate: opts.missing_rate,
        metrics: eval.metrics,
        baseline: Baselines {
            historical_average: historical_average_metrics(&data, SplitPart::Test)?,
        },
        training: None,
        parameters: param_counts(&ck.store),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportWhat {
    Attention,
    Augmentations,
}

/// Files written by [`export`].
#[derive(Debug, Clone, Default)]
pub struct ExportSummary {
    pub files: Vec<PathBuf>,
    /// Largest `|row sum - 1|` over all exported attention matrices.
    pub max_row_error: f64,
}

fn window_of(data: &PreparedData<f64>, sample: usize) -> CliResult<usize> {
    let test = data.range(SplitPart::Test);
    if sample >= test.len() {
        return Err(CliError::usage(anyhow!(
            "sample {sample} out of range: the test split has {} windows",
            test.len()
        )));
    }
    Ok(test.start + sample)
}

fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

fn write_actions_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Colours of drop, keep and mask in grid maps.
pub const ACTION_PALETTE: [Rgb<u8>; 3] = [Rgb([215, 48, 39]), Rgb([26, 152, 80]), Rgb([69, 117, 180])];

/// Write attention matrices or sampled augmentations of test window `sample`.
pub fn export(
    ckpt: &Path,
    what: ExportWhat,
    sample: usize,
    data_dir: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> CliResult<ExportSummary> {
    let Opened { ckpt: ck, info, data, .. } = open(ckpt, data_dir)?;
    let k = window_of(&data, sample)?;
    let s = data.sample(k)?;
    ck.model.check_sample(&s)?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut summary = ExportSummary::default();
    match what {
        ExportWhat::Attention => {
            let t = Tape::<f64>::new();
            let x = t.leaf(Cl4st::input_matrix(&s));
            let o = ck.model.original_branch(&t, &ck.store, &data.ctx, x, ck.model.position_of(&s), None);
            for (pass, trace) in [("spatial", &o.spatial_attention), ("temporal", &o.temporal_attention)] {
                for (l, heads) in trace.iter().enumerate() {
                    for (h, &v) in heads.iter().enumerate() {
                        let a = t.value(v).clone();
                        let err = a.sum_axis(Axis(1)).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
                        if !(err <= ROW_SUM_TOL) {
                            return Err(CliError::runtime(anyhow!(
                                "{pass} attention layer {l} head {h}: row sums off by {err:e}"
                            )));
                        }
                        summary.max_row_error = summary.max_row_error.max(err);
                        let stem = format!("attention_{pass}_l{l}_h{h}");
                        let csv_path = out.join(format!("{stem}.csv"));
                        write_matrix_csv(&csv_path, &a)?;
                        let png = out.join(format!("{stem}.png"));
                        plot::save(&plot::heatmap(&a, plot::cell_size(a.nrows())), &png)?;
                        summary.files.extend([csv_path, png]);
                    }
                }
            }
        }
        ExportWhat::Augmentations => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(info.seed));
            rng.set_stream(2);
            let tau = ck.model.spec.generator.tau_at(info.best_epoch);
            let views = ck
                .model
                .sample_views(&ck.store, &data.ctx, &s, &mut rng, tau)
                .map_err(|e| CliError::usage(anyhow::Error::from(e)))?;
            let parts = [
                ("spatial", "node", &views.spatial_node, &views.spatial_edge, &data.ctx.spatial_edges),
                ("temporal", "step", &views.temporal_node, &views.temporal_edge, &data.ctx.temporal_edges),
            ];
            for (pass, unit, node, edge, edges) in parts {
                let actions = argmax_rows(node);
                let p = out.join(format!("augment_{pass}_nodes.csv"));
                write_actions_csv(
                    &p,
                    &[unit, "action"],
                    actions
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| vec![i.to_string(), NodeAction::from_index(a).name().to_string()]),
                )?;
                summary.files.push(p);
                let edge_actions = edge.as_ref().map(argmax_rows).unwrap_or_default();
                let p = out.join(format!("augment_{pass}_edges.csv"));
                write_actions_csv(
                    &p,
                    &["src", "dst", "action"],
                    edges.iter().zip(&edge_actions).map(|(&(u, v), &a)| {
                        vec![u.to_string(), v.to_string(), EdgeAction::from_index(a).name().to_string()]
                    }),
                )?;
                summary.files.push(p);
                if let (Some((rows, cols)), "spatial") = (data.grid, pass) {
                    let p = out.join("augment_spatial_grid.png");
                    plot::save(&plot::category_grid(rows, cols, &actions, &ACTION_PALETTE), &p)?;
                    summary.files.push(p);
                }
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub kind: DatasetKind,
    pub nodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Grid shape for crime data; a square grid of `nodes` cells when unset.
    pub grid: Option<(usize, usize)>,
    pub categories: usize,
    pub csv: bool,
}

/// Generate a synthetic dataset directory.
pub fn synth(out: &Path, o: &SynthOptions) -> CliResult<()> {
    let ds = match o.kind {
        DatasetKind::TrafficGraph => TrafficSynth {
            nodes: o.nodes,
            steps: o.steps,
            seed: o.seed,
            k_neighbors: TrafficSynth::default().k_neighbors.min(o.nodes.saturating_sub(1)).max(1),
            ..TrafficSynth::default()
        }
        .generate(),
        DatasetKind::CrimeGrid => {
            let (rows, cols) = match o.grid {
                Some(g) => g,
                None => {
                    let side = (o.nodes as f64).sqrt().round() as usize;
                    if side * side != o.nodes {
                        return Err(CliError::usage(anyhow!(
                            "{} nodes is not a square grid; pass --rows and --cols",
                            o.nodes
                        )));
                    }
                    (side, side)
                }
            };
            CrimeSynth {
                rows,
                cols,
                categories: o.categories,
                days: o.steps,
                seed: o.seed,
                ..CrimeSynth::default()
            }
            .generate()
        }
    }
    .map_err(|e| CliError::usage(anyhow::Error::from(e)))?;
    ds.write(out, !o.csv)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PemsOptions {
    /// Feature channels to keep; all when empty.
    pub channels: Vec<usize>,
    pub interval_minutes: u32,
    pub start: String,
}

fn read_npz_signals(path: &Path) -> anyhow::Result<Array3<f64>> {
    let open = || -> anyhow::Result<ndarray_npy::NpzReader<File>> {
        let f = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
        ndarray_npy::NpzReader::new(f).with_context(|| format!("{} is not an npz archive", path.display()))
    };
    let names = open()?.names()?;
    let name = names
        .iter()
        .find(|n| n.trim_end_matches(".npy") == "data")
        .or(names.first())
        .ok_or_else(|| anyhow!("{} holds no arrays", path.display()))?
        .clone();
    if let Ok(a) = open()?.by_name::<ndarray::OwnedRepr<f64>, ndarray::Ix3>(&name) {
        return Ok(a);
    }
    let a: Array3<f32> = open()?
        .by_name(&name)
        .with_context(|| format!("{name} in {} is not a 3-d float array", path.display()))?;
    Ok(a.mapv(f64::from))
}

/// Read a `from,to,cost` edge list into a dense distance matrix (infinite off the list).
fn read_edge_list(path: &Path, n: usize) -> anyhow::Result<Array2<f64>> {
    let mut d = Array2::from_elem((n, n), f64::INFINITY);
    d.diag_mut().fill(0.0);
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 3 {
            bail!("{} line {}: expected from,to,cost", path.display(), line + 2);
        }
        let idx = |k: usize| -> anyhow::Result<usize> {
            let v: f64 = rec[k].trim().parse()?;
            let i = v as usize;
            if i as f64 != v || i >= n {
                bail!("{} line {}: sensor {} out of range", path.display(), line + 2, &rec[k]);
            }
            Ok(i)
        };
        let (i, j) = (idx(0)?, idx(1)?);
        let c: f64 = rec[2].trim().parse()?;
        if i != j {
            d[[i, j]] = d[[i, j]].min(c);
            d[[j, i]] = d[[j, i]].min(c);
        }
    }
    Ok(d)
}

/// Convert a PEMS-style `.npz` signal archive and distance edge list to a dataset directory.
pub fn convert_pems(npz: &Path, distances: &Path, out: &Path, o: &PemsOptions) -> CliResult<()> {
    let raw = read_npz_signals(npz).map_err(CliError::usage)?;
    let signals = if o.channels.is_empty() {
        raw
    } else {
        if let Some(&c) = o.channels.iter().find(|&&c| c >= raw.dim().2) {
            return Err(CliError::usage(anyhow!("channel {c} out of range ({} channels)", raw.dim().2)));
        }
        raw.select(Axis(2), &o.channels)
    };
    let n = signals.dim().1;
    let dist = read_edge_list(distances, n).map_err(CliError::usage)?;
    let meta = DatasetMeta {
        kind: DatasetKind::TrafficGraph,
        n: Some(n),
        rows: None,
        cols: None,
        features: signals.dim().2,
        interval_minutes: o.interval_minutes,
        start_timestamp: o.start.clone(),
        neighborhood: Neighborhood::default(),
    };
    write_dataset(out, &meta, &FeatureTensor::new(signals)?, Some(&dist), true)?;
    Ok(())
}
