//! Experiment orchestration: scenario groups, window-size sweeps, k-fold
//! runs, feature-importance reports and run directories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{seed, Dataset};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, KFoldResult, MeanScores};
use crate::features::{self, FeatureVector, N_FEATURES};
use crate::forest::{train_forest, ForestConfig, ForestModel};
use crate::ingest::{parse_binetflow_file, FlowRecord};
use crate::mlp::{train_mlp, MlpConfig};
use crate::persist::Model;
use crate::window::{build_windows, BackgroundMode, WindowSpec, DEFAULT_WINDOW_SIZES};

/// One row of the capture catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioInfo {
    pub id: u32,
    pub hours: f64,
    pub packets: &'static str,
    pub netflows: &'static str,
    pub size: &'static str,
    pub bot: &'static str,
    pub n_bots: u32,
    pub irc: bool,
    pub spam: bool,
    pub ddos: bool,
}

#[allow(clippy::too_many_arguments)]
const fn sc(
    id: u32,
    hours: f64,
    packets: &'static str,
    netflows: &'static str,
    size: &'static str,
    bot: &'static str,
    n_bots: u32,
    (irc, spam, ddos): (bool, bool, bool),
) -> ScenarioInfo {
    ScenarioInfo {
        id,
        hours,
        packets,
        netflows,
        size,
        bot,
        n_bots,
        irc,
        spam,
        ddos,
    }
}

pub const SCENARIOS: [ScenarioInfo; 9] = [
    sc(1, 6.15, "71.9M", "2M", "52GB", "Neris", 1, (true, true, false)),
    sc(2, 4.21, "71.8M", "1.8M", "60GB", "Neris", 1, (true, true, false)),
    sc(3, 66.85, "167.7M", "4.7M", "121GB", "Rbot", 1, (true, false, false)),
    sc(4, 4.21, "62M", "1.1M", "53GB", "Rbot", 1, (true, false, true)),
    sc(5, 11.63, "4.4M", "1.2M", "37.6GB", "Virut", 1, (false, true, false)),
    sc(6, 5.18, "115.4M", "2.7M", "94GB", "Neris", 10, (true, true, false)),
    sc(7, 4.75, "90.3M", "1.3M", "73GB", "Rbot", 10, (true, false, true)),
    sc(8, 0.26, "6.3M", "107K", "5.2GB", "Rbot", 3, (true, false, true)),
    sc(9, 16.36, "50.8M", "1.9M", "34GB", "Virut", 1, (false, true, false)),
];

pub fn scenario_info(id: u32) -> Option<&'static ScenarioInfo> {
    SCENARIOS.iter().find(|s| s.id == id)
}

/// A named set of scenario ids merged into one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioGroup {
    pub name: String,
    pub ids: BTreeSet<u32>,
}

impl ScenarioGroup {
    pub fn new(name: impl Into<String>, ids: impl IntoIterator<Item = u32>) -> ScenarioGroup {
        ScenarioGroup {
            name: name.into(),
            ids: ids.into_iter().collect(),
        }
    }

    pub fn ddos() -> ScenarioGroup {
        ScenarioGroup::new("DDoS", [4, 7, 8])
    }

    pub fn spam() -> ScenarioGroup {
        ScenarioGroup::new("SPAM", [1, 2, 5, 6, 9])
    }

    pub fn irc() -> ScenarioGroup {
        ScenarioGroup::new("IRC", [1, 2, 3, 4, 6, 7, 8])
    }

    pub fn all() -> ScenarioGroup {
        ScenarioGroup::new("ALL", 1..=9)
    }
}

impl FromStr for ScenarioGroup {
    type Err = Error;

    /// `ddos`, `spam`, `irc`, `all`, or a comma-separated id list.
    fn from_str(s: &str) -> Result<ScenarioGroup> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ddos" => return Ok(ScenarioGroup::ddos()),
            "spam" => return Ok(ScenarioGroup::spam()),
            "irc" => return Ok(ScenarioGroup::irc()),
            "all" => return Ok(ScenarioGroup::all()),
            _ => {}
        }
        let ids = s
            .split(',')
            .map(|t| t.trim().parse::<u32>())
            .collect::<std::result::Result<BTreeSet<u32>, _>>()
            .map_err(|_| Error::Config(format!("unknown scenario group {s:?}")))?;
        if ids.is_empty() {
            return Err(Error::Config("empty scenario group".into()));
        }
        let name = ids.iter().map(u32::to_string).collect::<Vec<_>>().join("+");
        Ok(ScenarioGroup { name, ids })
    }
}

/// Concatenates the group's scenarios. Each flow keeps its own scenario's
/// relative time axis and is stamped with its scenario id, so windows built
/// from the result never mix scenarios.
pub fn merge_scenarios(per_scenario: &BTreeMap<u32, Vec<FlowRecord>>, group: &ScenarioGroup) -> Result<Vec<FlowRecord>> {
    if let Some(missing) = group.ids.iter().find(|id| !per_scenario.contains_key(id)) {
        return Err(Error::Config(format!("scenario {missing} of group {} not loaded", group.name)));
    }
    let mut merged = Vec::new();
    for id in &group.ids {
        merged.extend(per_scenario[id].iter().cloned().map(|mut f| {
            f.scenario_id = *id;
            f
        }));
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<u32, PathBuf>,
    pub warnings: Vec<String>,
}

/// Parses `id path` lines. Blank lines and `#` comments are skipped;
/// relative paths resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut entries = BTreeMap::new();
    let mut warnings = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (id, path) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Config(format!("manifest line {}: expected `id path`", lineno + 1)))?;
        let id: u32 = id
            .parse()
            .map_err(|_| Error::Config(format!("manifest line {}: bad scenario id {id:?}", lineno + 1)))?;
        if scenario_info(id).is_none() {
            warnings.push(format!("scenario {id} is not in the catalog; loading it anyway"));
        }
        let path = PathBuf::from(path.trim());
        let path = if path.is_relative() { base_dir.join(path) } else { path };
        if entries.insert(id, path).is_some() {
            return Err(Error::Config(format!("manifest lists scenario {id} twice")));
        }
    }
    Ok(Manifest { entries, warnings })
}

/// Loads the group's scenarios from the manifest, in parallel.
pub fn load_group(manifest: &Manifest, group: &ScenarioGroup) -> Result<BTreeMap<u32, Vec<FlowRecord>>> {
    let ids: Vec<u32> = group.ids.iter().copied().collect();
    let loaded = ids
        .par_iter()
        .map(|&id| {
            let path = manifest
                .entries
                .get(&id)
                .ok_or_else(|| Error::Config(format!("manifest has no file for scenario {id}")))?;
            Ok((id, parse_binetflow_file(path, id)?.records))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(loaded.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Forest,
    Mlp,
}

impl ModelKind {
    fn code(self) -> u64 {
        match self {
            ModelKind::Forest => 1,
            ModelKind::Mlp => 2,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Forest => "forest",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s.to_ascii_lowercase().as_str() {
            "forest" | "rf" | "random_forest" => Ok(ModelKind::Forest),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Windows a flow set and extracts the feature vectors.
pub fn build_features(flows: &[FlowRecord], spec: &WindowSpec) -> Result<Vec<FeatureVector>> {
    let windows = build_windows(flows, spec)?;
    if windows.is_empty() {
        return Err(Error::EmptyInput("no windows after background filtering"));
    }
    features::extract_all(&windows)
}

/// Trains `kind` with its config's seed replaced by `model_seed`.
pub fn train_model(kind: ModelKind, data: &Dataset, forest: &ForestConfig, mlp: &MlpConfig, model_seed: u64) -> Result<Model> {
    match kind {
        ModelKind::Forest => {
            let config = ForestConfig {
                seed: model_seed,
                ..forest.clone()
            };
            Ok(Model::Forest(train_forest(data, &config)?))
        }
        ModelKind::Mlp => {
            let config = MlpConfig {
                seed: model_seed,
                ..mlp.clone()
            };
            Ok(Model::Mlp(train_mlp(data, &config)?.model))
        }
    }
}

/// Probabilities, then metrics and ROC at `threshold`.
pub fn evaluate_model(model: &Model, data: &Dataset, threshold: f64) -> Result<EvalReport> {
    let probas = model.predict_dataset(data)?;
    eval::evaluate(&probas, data.labels(), threshold)
}

/// One row per threshold, in the order given.
pub fn threshold_study(probas: &[f64], labels: &[u8], thresholds: &[f64]) -> Result<Vec<EvalReport>> {
    thresholds
        .iter()
        .map(|&t| eval::compute_metrics(probas, labels, t))
        .collect()
}

/// Settings shared by sweeps and k-fold runs. Parsed from TOML; every key is
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub group: String,
    pub window_sizes: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub repetitions: usize,
    pub background_mode: BackgroundMode,
    pub threshold: f64,
    pub train_fraction: f64,
    pub stratified: bool,
    pub folds: usize,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            group: "ddos".into(),
            window_sizes: DEFAULT_WINDOW_SIZES.to_vec(),
            models: vec![ModelKind::Forest, ModelKind::Mlp],
            seed: 0,
            repetitions: 3,
            background_mode: BackgroundMode::Exclude,
            threshold: 0.5,
            train_fraction: 0.7,
            stratified: false,
            folds: 10,
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_sizes.is_empty() || self.window_sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("window sizes must be a non-empty list of positive numbers".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub window_size: f64,
    pub model: ModelKind,
    pub n_windows: usize,
    pub n_attack_windows: usize,
    /// Per-repetition test reports; empty for a missing cell.
    pub reports: Vec<EvalReport>,
    pub mean: Option<MeanScores>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub group: String,
    /// Window-size-major, in configured order.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn cell(&self, window_size: f64, model: ModelKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.window_size == window_size && r.model == model)
    }

    pub fn mean_f1(&self, window_size: f64, model: ModelKind) -> Option<f64> {
        self.cell(window_size, model)?.mean.as_ref().map(|m| m.f1)
    }
}

fn run_cell(
    data: &Dataset,
    size: f64,
    model: ModelKind,
    config: &ExperimentConfig,
) -> Result<Vec<EvalReport>> {
    (0..config.repetitions as u64)
        .map(|rep| {
            let split_seed = seed::derive(config.seed, &[0x5EE9, size.to_bits(), rep]);
            let model_seed = seed::derive(config.seed, &[0x5EE9, size.to_bits(), model.code(), rep]);
            let (train, test) = eval::split_indices(data.labels(), config.train_fraction, split_seed, config.stratified)?;
            let trained = train_model(model, &data.subset(&train), &config.forest, &config.mlp, model_seed)?;
            evaluate_model(&trained, &data.subset(&test), config.threshold)
        })
        .collect()
}

/// Every (window size, model) cell: window, extract, split, train,
/// evaluate, repeated `config.repetitions` times. A failing stage marks the
/// cell missing and the sweep carries on. Cells run in parallel; rows come
/// back in configuration order.
pub fn run_sweep(flows: &[FlowRecord], config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let datasets: Vec<Result<Dataset>> = config
        .window_sizes
        .par_iter()
        .map(|&size| {
            let spec = WindowSpec::new(size, config.background_mode)?;
            Dataset::from_vectors(&build_features(flows, &spec)?)
        })
        .collect();
    let cells: Vec<(usize, ModelKind)> = (0..config.window_sizes.len())
        .flat_map(|s| config.models.iter().map(move |&m| (s, m)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(s, model)| {
            let size = config.window_sizes[s];
            let (n_windows, n_attack_windows, outcome) = match &datasets[s] {
                Ok(data) => (data.len(), data.n_attack(), run_cell(data, size, model, config)),
                Err(e) => (0, 0, Err(Error::Config(e.to_string()))),
            };
            match outcome {
                Ok(reports) => SweepRow {
                    window_size: size,
                    model,
                    n_windows,
                    n_attack_windows,
                    mean: Some(MeanScores::of(&reports)),
                    reports,
                    error: None,
                },
                Err(e) => SweepRow {
                    window_size: size,
                    model,
                    n_windows,
                    n_attack_windows,
                    reports: Vec::new(),
                    mean: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepResult {
        group: config.group.clone(),
        rows,
    })
}

/// k-fold means for one model; fold `f` trains with a seed derived from
/// `config.seed` and `f`.
pub fn kfold_model(data: &Dataset, model: ModelKind, config: &ExperimentConfig) -> Result<KFoldResult> {
    let fold_seed = seed::derive(config.seed, &[0xF01D]);
    eval::kfold(data, config.folds, fold_seed, config.stratified, |fold, train, test| {
        let model_seed = seed::derive(config.seed, &[0xF01D, model.code(), fold as u64]);
        let trained = train_model(model, train, &config.forest, &config.mlp, model_seed)?;
        evaluate_model(&trained, test, config.threshold)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceEntry {
    /// 1-based feature id.
    pub id: usize,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
    /// The forest never split, so there is nothing to rank.
    pub all_zero: bool,
}

/// Top `top_k` non-zero importances, highest first, ties by lower id.
pub fn importance_report(model: &ForestModel, top_k: usize) -> ImportanceReport {
    let all_zero = model.importances.iter().all(|&v| v == 0.0);
    let mut entries: Vec<ImportanceEntry> = model
        .importances
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &score)| ImportanceEntry {
            id: i + 1,
            name: if model.n_features == N_FEATURES {
                features::feature_name(i + 1).unwrap_or("?").to_string()
            } else {
                format!("x{}", i + 1)
            },
            score,
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    entries.truncate(top_k);
    ImportanceReport { entries, all_zero }
}

pub fn write_importance_csv<W: Write>(out: W, report: &ImportanceReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "id", "name", "score"])?;
    for (rank, e) in report.entries.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), e.id.to_string(), e.name.clone(), e.score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 13] = [
    "group",
    "window_size",
    "model",
    "status",
    "n_windows",
    "n_attack_windows",
    "repetitions",
    "f1",
    "accuracy",
    "precision",
    "recall",
    "auc",
    "error",
];

pub fn write_sweep_csv<W: Write>(out: W, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for row in &result.rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let m = row.mean.as_ref();
        w.write_record([
            result.group.clone(),
            row.window_size.to_string(),
            row.model.to_string(),
            if m.is_some() { "ok" } else { "missing" }.to_string(),
            row.n_windows.to_string(),
            row.n_attack_windows.to_string(),
            row.reports.len().to_string(),
            opt(m.map(|m| m.f1)),
            opt(m.map(|m| m.accuracy)),
            opt(m.map(|m| m.precision)),
            opt(m.map(|m| m.recall)),
            opt(m.and_then(|m| m.auc)),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `contents` under `dir` and returns the relative path.
pub fn write_run_file(dir: &Path, relative: &str, contents: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<String> {
    let path = dir.join(relative);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(&path)?);
    contents(&mut out)?;
    out.flush()?;
    Ok(relative.to_string())
}

/// `manifest.txt`: one relative path per line, sorted.
pub fn write_run_manifest(dir: &Path, files: &[String]) -> Result<()> {
    let mut sorted: Vec<&String> = files.iter().collect();
    sorted.sort();
    sorted.dedup();
    let mut text = String::new();
    for f in sorted {
        text.push_str(f);
        text.push('\n');
    }
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

/// Writes a sweep's run directory: resolved config, sweep table, one report
/// CSV per cell, and the manifest.
pub fn write_sweep_run(dir: &Path, config: &ExperimentConfig, result: &SweepResult) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let toml = config.to_toml()?;
    files.push(write_run_file(dir, "config.toml", |out| Ok(out.write_all(toml.as_bytes())?))?);
    files.push(write_run_file(dir, "sweep.csv", |out| write_sweep_csv(out, result))?);
    for row in &result.rows {
        if row.reports.is_empty() {
            continue;
        }
        let name = format!("reports/{}_w{}.csv", row.model, row.window_size);
        let named: Vec<(String, &EvalReport)> = row
            .reports
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("rep{i}"), r))
            .collect();
        files.push(write_run_file(dir, &name, |out| eval::write_report_csv(out, &named))?);
    }
    write_run_manifest(dir, &files)?;
    Ok(files)
}
