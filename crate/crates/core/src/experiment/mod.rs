//! Strategy sweeps over a field dataset and a synthetic pool.
//!
//! A run loads (or generates) the field dataset, simulates the synthetic
//! pool, draws one field-only split shared by every cell, then trains and
//! tests each `(strategy, setting, seed)` cell. Every cell writes its own
//! JSON report; the run manifest is written once at the end, also when a
//! cell fails.

pub mod benchmark;
pub mod detect;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use benchmark::{generate_benchmark, BenchmarkSources, BenchmarkSpec, Family, LABELS_FILE};
pub use detect::{detect, DetectSummary, Prediction};

use crate::dataset::{
    assemble_strategy, load_field_dataset, split, DatasetSplit, Label, LabeledEvent, Provenance, SplitRatios, Strategy,
    StrategyOptions, StrategySpec, TrainingSetting,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::nnet::{evaluate, fit, Model, Samples, TrainConfig};
use crate::sim::{build_sweep, simulate_sweep, ImpactConfig, SurrogateParams, SweepSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CELLS_DIR: &str = "cells";
const MANIFEST_FORMAT: &str = "headimpact-run";

/// Synthetic pool settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub sweep: SweepSpec,
    pub params: SurrogateParams,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sweep: SweepSpec {
                z_count: 2,
                ..Default::default()
            },
            params: SurrogateParams::default(),
        }
    }
}

/// Which cells a sweep trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepPlan {
    /// Synthetic additions in percent of the field true count; 0 is the
    /// field-only strategy.
    pub fractions: Vec<u32>,
    pub settings: Vec<TrainingSetting>,
    pub pretrain: bool,
    /// Restricts the sweep to these strategy names (empty runs all).
    pub only: Vec<String>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            fractions: vec![0, 25, 50, 75, 100],
            settings: TrainingSetting::ALL.to_vec(),
            pretrain: true,
            only: Vec::new(),
        }
    }
}

/// Existing labelled dataset used instead of a generated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldData {
    pub dir: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSpec,
    pub field_data: Option<FieldData>,
    pub synthetic: SyntheticSpec,
    pub sweep: SweepPlan,
    pub split: SplitRatios,
    /// Seed of the shared split.
    pub split_seed: u64,
    pub strategy: StrategyOptions,
    pub train: TrainConfig,
    /// One training run per seed for every cell.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Cells trained concurrently.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkSpec::default(),
            field_data: None,
            synthetic: SyntheticSpec::default(),
            sweep: SweepPlan::default(),
            split: SplitRatios::default(),
            split_seed: 0,
            strategy: StrategyOptions {
                synthetic_lin_noise: 0.5,
                synthetic_ang_noise: 0.02,
                ..Default::default()
            },
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/default"),
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.field_data.is_none() {
            self.benchmark.validate()?;
        }
        for &f in &self.sweep.fractions {
            if !(0..=100).contains(&f) {
                return Err(Error::invalid(format!("synthetic fraction {f}% outside 0..=100")));
            }
        }
        let mut sorted = self.sweep.fractions.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.sweep.fractions.len() {
            return Err(Error::invalid("duplicate synthetic fractions"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        self.train.validate()?;
        self.synthetic.params.validate()?;
        if self.planned_specs().is_empty() {
            return Err(Error::invalid("the sweep selects no cells"));
        }
        Ok(())
    }

    /// Strategies of the sweep in report order, with their synthetic
    /// fraction (`None` for pre-training).
    pub fn planned_specs(&self) -> Vec<(StrategySpec, Option<u32>)> {
        let mut out = Vec::new();
        for &setting in &self.sweep.settings {
            for &f in &self.sweep.fractions {
                let strategy = if f == 0 {
                    Strategy::FieldOnly
                } else {
                    Strategy::SynthMix { percent: f }
                };
                out.push((StrategySpec::new(strategy, setting), Some(f)));
            }
        }
        if self.sweep.pretrain {
            out.push((StrategySpec::new(Strategy::Pretrain, TrainingSetting::Balanced), None));
        }
        if !self.sweep.only.is_empty() {
            out.retain(|(s, _)| self.sweep.only.contains(&s.name()));
        }
        out
    }

    /// Cell identifiers `strategy/seedN` in run order.
    pub fn planned_cells(&self) -> Vec<String> {
        self.planned_specs()
            .iter()
            .flat_map(|(s, _)| self.seeds.iter().map(move |seed| cell_id(&s.name(), *seed)))
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

pub fn cell_id(strategy: &str, seed: u64) -> String {
    format!("{strategy}/seed{seed}")
}

/// Field events, shared split and synthetic pool of one run.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub field: Vec<LabeledEvent>,
    pub split: DatasetSplit,
    pub synthetic: Vec<LabeledEvent>,
    pub field_dir: PathBuf,
    pub field_digest: String,
}

/// Simulated true events with the configuration of each.
#[derive(Debug, Clone)]
pub struct SyntheticPool {
    pub events: Vec<LabeledEvent>,
    pub configs: Vec<ImpactConfig>,
    /// Configurations dropped because they never reach the trigger.
    pub below_trigger: usize,
}

/// Simulates the synthetic pool.
pub fn simulate_pool(spec: &SyntheticSpec) -> Result<SyntheticPool> {
    let all = build_sweep(&spec.sweep, &spec.params)?;
    let mut pool = SyntheticPool {
        events: Vec::with_capacity(all.len()),
        configs: Vec::with_capacity(all.len()),
        below_trigger: 0,
    };
    for (i, r) in simulate_sweep(&all, &spec.params).into_iter().enumerate() {
        match r {
            Ok(e) => {
                pool.events
                    .push(LabeledEvent::new(format!("syn{i:05}"), e.signal, Label::TrueImpact, Provenance::Synthetic));
                pool.configs.push(e.config);
            }
            Err(Error::BelowTrigger { .. }) => pool.below_trigger += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(pool)
}

/// Loads or generates the field dataset, draws the shared split and builds
/// the synthetic pool.
pub fn prepare(config: &ExperimentConfig) -> Result<ExperimentData> {
    let (dir, labels) = match &config.field_data {
        Some(f) => (f.dir.clone(), f.labels.clone()),
        None => {
            let dir = config.out_dir.join("benchmark");
            let sources = generate_benchmark(&config.benchmark, &dir)?;
            info!("benchmark: {} true, {} false events in {}", sources.n_true, sources.n_false, dir.display());
            (dir.clone(), dir.join(LABELS_FILE))
        }
    };
    let field = load_field_dataset(&dir, &labels)?;
    let field_digest = directory_digest(&dir)?;
    let split = split(&field, config.split, config.split_seed)?;
    let needs_synthetic = config
        .planned_specs()
        .iter()
        .any(|(s, _)| !matches!(s.strategy, Strategy::FieldOnly));
    let synthetic = if needs_synthetic {
        let pool = simulate_pool(&config.synthetic)?;
        info!("synthetic pool: {} events ({} below trigger)", pool.events.len(), pool.below_trigger);
        pool.events
    } else {
        Vec::new()
    };
    Ok(ExperimentData {
        field,
        split,
        synthetic,
        field_dir: dir,
        field_digest,
    })
}

/// Test result of one trained cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub strategy: String,
    pub setting: TrainingSetting,
    /// Synthetic addition in percent; `None` for pre-training.
    pub fraction_pct: Option<u32>,
    pub seed: u64,
    pub test: MetricsReport,
    /// Validation metrics of the selected epoch.
    pub val: Option<MetricsReport>,
    pub selected_epoch: usize,
    pub train_loss: Vec<f64>,
    /// `(phase name, training events)`.
    pub phase_sizes: Vec<(String, usize)>,
    pub test_ids_digest: String,
    pub seconds: f64,
}

fn ids_digest(ids: &[String]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Assembles, trains and tests one cell.
pub fn run_cell(
    data: &ExperimentData,
    config: &ExperimentConfig,
    spec: StrategySpec,
    fraction_pct: Option<u32>,
    seed: u64,
) -> Result<(Model, CellResult)> {
    let start = Instant::now();
    let plan = assemble_strategy(spec, &data.field, &data.split, &data.synthetic, &config.strategy, seed)?;
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let (model, history) = fit(&plan, &train_config)?;
    let test = evaluate(&model, &Samples::from_events(plan.events(&plan.plan.test_ids)))?;
    let val = history
        .epochs
        .iter()
        .find(|e| e.epoch == history.selected_epoch)
        .and_then(|e| e.val);
    let result = CellResult {
        cell: cell_id(&spec.name(), seed),
        strategy: spec.name(),
        setting: spec.setting,
        fraction_pct,
        seed,
        test,
        val,
        selected_epoch: history.selected_epoch,
        train_loss: history.train_losses(),
        phase_sizes: plan.plan.phases.iter().map(|p| (p.name.clone(), p.ids.len())).collect(),
        test_ids_digest: ids_digest(&plan.plan.test_ids),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((model, result))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Done,
    Failed { error: String },
    NotRun,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub code_version: String,
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub field_dir: PathBuf,
    pub field_digest: String,
    pub n_field_true: usize,
    pub n_field_false: usize,
    pub n_synthetic: usize,
    pub test_ids: Vec<String>,
    pub cells: BTreeMap<String, CellStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub manifest: RunManifest,
    pub cells: Vec<CellResult>,
}

impl ResultsBundle {
    pub fn get(&self, strategy: &str, seed: u64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.strategy == strategy && c.seed == seed)
    }

    /// Cells the configuration plans but the bundle lacks.
    pub fn missing_cells(&self) -> Vec<String> {
        self.manifest
            .config
            .planned_cells()
            .into_iter()
            .filter(|id| !self.cells.iter().any(|c| &c.cell == id))
            .collect()
    }

    /// Median of `metric` over the seeds of `strategy`, ignoring undefined
    /// values.
    pub fn median(&self, strategy: &str, metric: impl Fn(&MetricsReport) -> Option<f64>) -> Option<f64> {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.strategy == strategy)
            .filter_map(|c| metric(&c.test))
            .collect();
        median(&values)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn cell_path(out_dir: &Path, cell: &str) -> PathBuf {
    out_dir.join(CELLS_DIR).join(format!("{}.json", cell.replace('/', "_")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::file(path, e))
}

/// Runs every planned cell with `config.jobs` workers. A failing cell stops
/// the remaining ones; finished cell reports and the manifest stay on disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsBundle> {
    config.validate()?;
    let data = prepare(config)?;
    run_with_data(config, &data)
}

pub fn run_with_data(config: &ExperimentConfig, data: &ExperimentData) -> Result<ResultsBundle> {
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let jobs: Vec<(StrategySpec, Option<u32>, u64)> = config
        .planned_specs()
        .into_iter()
        .flat_map(|(s, f)| config.seeds.iter().map(move |&seed| (s, f, seed)))
        .collect();

    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..config.jobs.min(jobs.len()) {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(spec, fraction, seed)) = jobs.get(i) else { break };
                let id = cell_id(&spec.name(), seed);
                info!("cell {id}: start");
                let outcome = run_cell(data, config, spec, fraction, seed).and_then(|(_, r)| {
                    write_json(&cell_path(out, &id), &r)?;
                    Ok(r)
                });
                match &outcome {
                    Ok(r) => info!("cell {id}: F2 {:?} in {:.1} s", r.test.f2, r.seconds),
                    Err(e) => {
                        warn!("cell {id} failed: {e}");
                        failed.store(true, Ordering::SeqCst);
                    }
                }
                slots.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });

    let mut statuses = BTreeMap::new();
    let mut cells = Vec::new();
    let mut first_error = None;
    for ((spec, _, seed), slot) in jobs.iter().zip(slots.into_inner().expect("results lock")) {
        let id = cell_id(&spec.name(), *seed);
        let status = match slot {
            Some(Ok(r)) => {
                cells.push(r);
                CellStatus::Done
            }
            Some(Err(e)) => {
                let status = CellStatus::Failed { error: e.to_string() };
                first_error.get_or_insert((id.clone(), e));
                status
            }
            None => CellStatus::NotRun,
        };
        statuses.insert(id, status);
    }
    let digests: Vec<&String> = cells.iter().map(|c| &c.test_ids_digest).collect();
    if digests.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::invalid("cells disagree on the shared test split"));
    }

    let (n_true, n_false) = crate::dataset::class_counts(&data.field);
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config_digest: config.digest()?,
        config: config.clone(),
        seeds: config.seeds.clone(),
        field_dir: data.field_dir.clone(),
        field_digest: data.field_digest.clone(),
        n_field_true: n_true,
        n_field_false: n_false,
        n_synthetic: data.synthetic.len(),
        test_ids: data.split.test.clone(),
        cells: statuses,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    if let Some((cell, e)) = first_error {
        return Err(Error::Cell {
            cell,
            source: Box::new(e),
        });
    }
    Ok(ResultsBundle { manifest, cells })
}

/// Reads a run directory written by [`run_experiment`].
pub fn load_results(out_dir: impl AsRef<Path>) -> Result<ResultsBundle> {
    let out_dir = out_dir.as_ref();
    let path = out_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::file(&path, e))?;
    let mut cells = Vec::new();
    for id in manifest.config.planned_cells() {
        let p = cell_path(out_dir, &id);
        if p.is_file() {
            let text = fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
            cells.push(serde_json::from_str(&text).map_err(|e| Error::file(&p, e))?);
        }
    }
    Ok(ResultsBundle { manifest, cells })
}

/// Published reference points `(setting, fraction, npv, ppv)`.
pub const REFERENCE_POINTS: [(TrainingSetting, u32, f64, f64); 3] = [
    (TrainingSetting::Unaugmented, 0, 0.69, 0.97),
    (TrainingSetting::Unaugmented, 100, 0.72, 1.0),
    (TrainingSetting::Balanced, 100, 0.87, 0.86),
];

fn reference(setting: TrainingSetting, fraction: u32) -> Option<(f64, f64)> {
    REFERENCE_POINTS
        .iter()
        .find(|(s, f, _, _)| *s == setting && *f == fraction)
        .map(|&(_, _, n, p)| (n, p))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes the figure tables: per setting, `fig_npv_ppv_<setting>.csv` and
/// `fig_f1_f2_<setting>.csv` with one row per synthetic fraction (medians
/// over seeds), plus `summary.csv` over every strategy. With
/// `with_reference`, the NPV/PPV tables gain `ref_npv,ref_ppv` columns
/// holding the published values where one exists.
pub fn emit_figures_data(bundle: &ResultsBundle, out_dir: impl AsRef<Path>, with_reference: bool) -> Result<Vec<PathBuf>> {
    let missing = bundle.missing_cells();
    if !missing.is_empty() {
        return Err(Error::IncompleteResults(missing));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let config = &bundle.manifest.config;
    let specs = config.planned_specs();
    let mut written = Vec::new();
    for &setting in &config.sweep.settings {
        let rows: Vec<(u32, String)> = specs
            .iter()
            .filter(|(s, f)| s.setting == setting && f.is_some() && s.strategy != Strategy::Pretrain)
            .map(|(s, f)| (f.unwrap_or(0), s.name()))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let mut npv_ppv = String::from("fraction_pct,npv,ppv");
        if with_reference {
            npv_ppv.push_str(",ref_npv,ref_ppv");
        }
        npv_ppv.push('\n');
        let mut f_scores = String::from("fraction_pct,f1,f2\n");
        for (fraction, name) in &rows {
            npv_ppv.push_str(&format!(
                "{fraction},{},{}",
                fmt_opt(bundle.median(name, |m| m.npv)),
                fmt_opt(bundle.median(name, |m| m.ppv))
            ));
            if with_reference {
                let r = reference(setting, *fraction);
                npv_ppv.push_str(&format!(",{},{}", fmt_opt(r.map(|r| r.0)), fmt_opt(r.map(|r| r.1))));
            }
            npv_ppv.push('\n');
            f_scores.push_str(&format!(
                "{fraction},{},{}\n",
                fmt_opt(bundle.median(name, |m| m.f1)),
                fmt_opt(bundle.median(name, |m| m.f2))
            ));
        }
        for (stem, text) in [("fig_npv_ppv", npv_ppv), ("fig_f1_f2", f_scores)] {
            let path = out_dir.join(format!("{stem}_{setting}.csv"));
            fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
            written.push(path);
        }
    }
    let mut summary = String::from("strategy,setting,fraction_pct,seeds,npv,ppv,recall,f1,f2,accuracy\n");
    for (spec, fraction) in &specs {
        let name = spec.name();
        let n = bundle.cells.iter().filter(|c| c.strategy == name).count();
        summary.push_str(&format!(
            "{name},{},{},{n},{},{},{},{},{},{}\n",
            spec.setting,
            fraction.map(|f| f.to_string()).unwrap_or_default(),
            fmt_opt(bundle.median(&name, |m| m.npv)),
            fmt_opt(bundle.median(&name, |m| m.ppv)),
            fmt_opt(bundle.median(&name, |m| m.recall)),
            fmt_opt(bundle.median(&name, |m| m.f1)),
            fmt_opt(bundle.median(&name, |m| m.f2)),
            fmt_opt(bundle.median(&name, |m| m.accuracy)),
        ));
    }
    let path = out_dir.join("summary.csv");
    fs::write(&path, summary).map_err(|e| Error::file(&path, e))?;
    written.push(path);
    Ok(written)
}

/// SHA-256 over the sorted file names and contents of a directory (not
/// recursive).
pub fn directory_digest(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        h.update([0]);
        h.update(fs::read(&f).map_err(|e| Error::file(&f, e))?);
        h.update([0]);
    }
    Ok(hex::encode(h.finalize()))
}
