//! `botwin`: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input data or configuration,
//! 3 internal invariant violation. Every run writes its resolved settings to
//! a `.run.toml` file next to its main output (or `config.toml` inside an
//! output directory).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use botwin_core::dataset::{seed, Dataset};
use botwin_core::error::{Error, Result};
use botwin_core::eval::{self, EvalReport, MeanScores};
use botwin_core::features::{self, FeatureVector};
use botwin_core::forest::ForestConfig;
use botwin_core::harness::{self, ExperimentConfig, ModelKind, ScenarioGroup};
use botwin_core::ingest::{self, FlowRecord};
use botwin_core::mlp::{Activation, MlpConfig};
use botwin_core::persist::{self, Model};
use botwin_core::synth::{self, AttackKind, SynthSpec};
use botwin_core::window::{BackgroundMode, WindowSpec};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "botwin", version, about = "Time-window botnet detection over binetflow captures")]
struct Cli {
    /// Worker threads (default: logical CPU count).
    #[arg(long, global = true, env = "BOTWIN_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic binetflow trace.
    Synth(SynthArgs),
    /// Window flows and write the feature table.
    Extract(ExtractArgs),
    /// Train a model on a feature table.
    Train(TrainArgs),
    /// Score a feature table with a saved model.
    Eval(EvalArgs),
    /// Window-size × model sweep over a scenario group.
    Sweep(SweepArgs),
    /// Rank features by forest importance.
    Importance(ImportanceArgs),
    /// k-fold cross-validation on a feature table.
    Kfold(KfoldArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value = "ddos")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trace_seconds: Option<f64>,
    #[arg(long)]
    background_flows: Option<usize>,
    /// Fraction of segments that carry attack bursts.
    #[arg(long)]
    attack_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct InputArgs {
    /// A single binetflow file.
    #[arg(long = "in", conflicts_with = "manifest")]
    input: Option<PathBuf>,
    /// Scenario id stamped on flows read with --in.
    #[arg(long, default_value_t = 1)]
    scenario_id: u32,
    /// Manifest of `id path` lines; used with --group.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// ddos, spam, irc, all, or a comma-separated id list.
    #[arg(long, default_value = "ddos")]
    group: String,
}

#[derive(Args, Serialize)]
struct ExtractArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value = "exclude")]
    background: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ModelFlags {
    #[arg(long, default_value = "forest")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    estimators: Option<usize>,
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_split: Option<usize>,
    #[arg(long)]
    per_tree_features: bool,
    #[arg(long)]
    no_bootstrap: bool,
    /// Hidden layer widths, e.g. 64,32.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl ModelFlags {
    fn kind(&self) -> Result<ModelKind> {
        self.model.parse()
    }

    fn forest(&self, base: &ForestConfig) -> ForestConfig {
        ForestConfig {
            n_estimators: self.estimators.unwrap_or(base.n_estimators),
            max_features: self.max_features.unwrap_or(base.max_features),
            max_depth: self.max_depth.or(base.max_depth),
            min_samples_split: self.min_samples_split.unwrap_or(base.min_samples_split),
            seed: self.seed,
            per_tree_features: self.per_tree_features || base.per_tree_features,
            bootstrap: base.bootstrap && !self.no_bootstrap,
        }
    }

    fn mlp(&self, base: &MlpConfig) -> Result<MlpConfig> {
        let activation = match &self.activation {
            Some(a) => a.parse::<Activation>()?,
            None => base.activation,
        };
        Ok(MlpConfig {
            hidden_sizes: self.hidden.clone().unwrap_or_else(|| base.hidden_sizes.clone()),
            activation,
            dropout_rate: self.dropout.unwrap_or(base.dropout_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            seed: self.seed,
        })
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Feature table from `extract`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Hold out a test share: train on this fraction and write the rest to
    /// --test-out.
    #[arg(long, requires = "test_out")]
    train_fraction: Option<f64>,
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Decision threshold on the attack probability (0.3 is the tuned value).
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Extra thresholds reported as additional rows, e.g. 0.9,0.7,0.5,0.3,0.1.
    #[arg(long, value_delimiter = ',')]
    study: Vec<f64>,
    #[arg(long)]
    roc: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    /// TOML experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    background: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct KfoldArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    stratified: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

/// The settings a run actually used, written beside its outputs.
#[derive(Serialize)]
struct RunRecord<'a, A: Serialize, C: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a A,
    resolved: C,
}

fn write_run_record<A: Serialize, C: Serialize>(out: &Path, command: &str, args: &A, resolved: C) -> Result<()> {
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
        resolved,
    };
    let text = toml::to_string(&record).map_err(|e| Error::Config(e.to_string()))?;
    let mut name = out.as_os_str().to_owned();
    name.push(".run.toml");
    fs::write(PathBuf::from(name), text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    features::read_feature_csv(BufReader::new(File::open(path)?))
}

fn load_flows(input: &InputArgs) -> Result<Vec<FlowRecord>> {
    match (&input.input, &input.manifest) {
        (Some(path), _) => {
            let parsed = ingest::parse_binetflow_file(path, input.scenario_id)?;
            if parsed.stats.skipped > 0 {
                eprintln!("warning: skipped {} malformed lines of {}", parsed.stats.skipped, parsed.stats.total);
            }
            Ok(parsed.records)
        }
        (None, Some(manifest_path)) => {
            let text = fs::read_to_string(manifest_path)?;
            let base = manifest_path.parent().unwrap_or(Path::new("."));
            let manifest = harness::parse_manifest(&text, base)?;
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            let group: ScenarioGroup = input.group.parse()?;
            let loaded = harness::load_group(&manifest, &group)?;
            harness::merge_scenarios(&loaded, &group)
        }
        (None, None) => Err(Error::Config("give --in FILE or --manifest FILE".into())),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let kind: AttackKind = args.kind.parse()?;
    let base = SynthSpec::for_kind(kind, args.seed);
    let spec = SynthSpec {
        trace_seconds: args.trace_seconds.unwrap_or(base.trace_seconds),
        n_background_flows: args.background_flows.unwrap_or(base.n_background_flows),
        attack_segment_fraction: args.attack_fraction.unwrap_or(base.attack_segment_fraction),
        ..base
    };
    let mut out = create(&args.out)?;
    let trace = synth::write_synthetic(&mut out, &spec)?;
    out.flush()?;
    eprintln!("{} flows, {} attack", trace.n_flows, trace.n_attack_flows);
    write_run_record(&args.out, "synth", args, &spec)
}

fn cmd_extract(args: &ExtractArgs) -> Result<()> {
    let mode: BackgroundMode = args.background.parse()?;
    let spec = WindowSpec::new(args.window, mode)?;
    let flows = load_flows(&args.input)?;
    let vectors = harness::build_features(&flows, &spec)?;
    let mut out = create(&args.out)?;
    features::write_feature_csv(&mut out, &vectors)?;
    out.flush()?;
    eprintln!(
        "{} windows, {} attack",
        vectors.len(),
        vectors.iter().filter(|v| v.y == 1).count()
    );
    write_run_record(&args.out, "extract", args, spec)
}

#[derive(Serialize)]
enum ResolvedModel {
    #[serde(rename = "forest")]
    Forest(ForestConfig),
    #[serde(rename = "mlp")]
    Mlp(MlpConfig),
}

fn resolve_model(flags: &ModelFlags) -> Result<(ModelKind, ForestConfig, MlpConfig, ResolvedModel)> {
    let kind = flags.kind()?;
    let forest = flags.forest(&ForestConfig::default());
    let mlp = flags.mlp(&MlpConfig::default())?;
    let resolved = match kind {
        ModelKind::Forest => ResolvedModel::Forest(forest.clone()),
        ModelKind::Mlp => ResolvedModel::Mlp(mlp.clone()),
    };
    Ok((kind, forest, mlp, resolved))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (kind, forest, mlp, resolved) = resolve_model(&args.model)?;
    let vectors = read_features(&args.input)?;
    let data = Dataset::from_vectors(&vectors)?;
    let train = match (args.train_fraction, &args.test_out) {
        (Some(fraction), Some(test_out)) => {
            let split_seed = seed::derive(args.model.seed, &[0x5917]);
            let (train, test) = eval::split_indices(data.labels(), fraction, split_seed, false)?;
            let held_out: Vec<FeatureVector> = test.iter().map(|&i| vectors[i].clone()).collect();
            let mut out = create(test_out)?;
            features::write_feature_csv(&mut out, &held_out)?;
            out.flush()?;
            data.subset(&train)
        }
        _ => data,
    };
    if train.n_attack() == 0 || train.n_attack() == train.len() {
        eprintln!("warning: training data holds a single class");
    }
    let model = harness::train_model(kind, &train, &forest, &mlp, args.model.seed)?;
    persist::save_model(&args.out, &model)?;
    write_run_record(&args.out, "train", args, resolved)
}

#[derive(Serialize)]
struct EvalResolved {
    model_kind: &'static str,
    threshold: f64,
    n_rows: usize,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = persist::load_model(&args.model)?;
    let data = Dataset::from_vectors(&read_features(&args.input)?)?;
    let probas = model.predict_dataset(&data)?;
    let report = eval::evaluate(&probas, data.labels(), args.threshold)?;
    let study = harness::threshold_study(&probas, data.labels(), &args.study)?;
    let mut rows: Vec<(String, &EvalReport)> = vec![(model.kind().to_string(), &report)];
    rows.extend(study.iter().map(|r| (format!("threshold_{}", r.threshold), r)));
    let mut out = create(&args.out)?;
    eval::write_report_csv(&mut out, &rows)?;
    out.flush()?;
    if let Some(path) = &args.roc {
        let roc = report
            .roc
            .as_ref()
            .ok_or_else(|| Error::Format("ROC needs both classes in the evaluation set".into()))?;
        let mut out = create(path)?;
        eval::write_roc_csv(&mut out, roc)?;
        out.flush()?;
    }
    let s = &report.scores;
    println!(
        "accuracy={} precision={} recall={} f1={}",
        s.accuracy, s.precision, s.recall, s.f1
    );
    let resolved = EvalResolved {
        model_kind: model.kind(),
        threshold: args.threshold,
        n_rows: data.len(),
    };
    write_run_record(&args.out, "eval", args, resolved)
}

fn experiment_config(args: &SweepArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    config.group = args.input.group.parse::<ScenarioGroup>()?.name;
    if let Some(sizes) = &args.sizes {
        config.window_sizes = sizes.clone();
    }
    if let Some(models) = &args.models {
        config.models = models.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    if let Some(b) = &args.background {
        config.background_mode = b.parse()?;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let config = experiment_config(args)?;
    let flows = load_flows(&args.input)?;
    let result = harness::run_sweep(&flows, &config)?;
    for row in &result.rows {
        match (&row.mean, &row.error) {
            (Some(m), _) => println!("{}\t{}\tf1={}", row.window_size, row.model, m.f1),
            (None, Some(e)) => eprintln!("warning: cell {} {} missing: {e}", row.window_size, row.model),
            (None, None) => {}
        }
    }
    harness::write_sweep_run(&args.out_dir, &config, &result)?;
    Ok(())
}

#[derive(Serialize)]
struct ImportanceResolved {
    n_ranked: usize,
    all_zero: bool,
}

fn cmd_importance(args: &ImportanceArgs) -> Result<()> {
    let forest = match persist::load_model(&args.model)? {
        Model::Forest(f) => f,
        other => return Err(Error::Model(format!("importance needs a forest, got {}", other.kind()))),
    };
    let report = harness::importance_report(&forest, args.top_k);
    if report.all_zero {
        eprintln!("warning: every importance is zero (the forest never split)");
    }
    let mut out = create(&args.out)?;
    harness::write_importance_csv(&mut out, &report)?;
    out.flush()?;
    let resolved = ImportanceResolved {
        n_ranked: report.entries.len(),
        all_zero: report.all_zero,
    };
    write_run_record(&args.out, "importance", args, resolved)
}

#[derive(Serialize)]
struct KfoldResolved<'a> {
    model: ResolvedModel,
    mean: &'a MeanScores,
}

fn cmd_kfold(args: &KfoldArgs) -> Result<()> {
    let (kind, forest, mlp, resolved) = resolve_model(&args.model)?;
    let data = Dataset::from_vectors(&read_features(&args.input)?)?;
    let config = ExperimentConfig {
        models: vec![kind],
        seed: args.model.seed,
        threshold: args.threshold,
        stratified: args.stratified,
        folds: args.folds,
        forest,
        mlp,
        ..ExperimentConfig::default()
    };
    let result = harness::kfold_model(&data, kind, &config)?;
    let rows: Vec<(String, &EvalReport)> = result
        .folds
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("fold{i}"), r))
        .collect();
    let mut out = create(&args.out)?;
    eval::write_report_csv(&mut out, &rows)?;
    out.flush()?;
    let m = &result.mean;
    println!(
        "mean accuracy={} precision={} recall={} f1={}",
        m.accuracy, m.precision, m.recall, m.f1
    );
    write_run_record(&args.out, "kfold", args, KfoldResolved { model: resolved, mean: m })
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Importance(a) => cmd_importance(a),
        Command::Kfold(a) => cmd_kfold(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
