//! `meshgrade` command-line tool.
//!
//! Every option can also come from a TOML file passed with `--config`; keys
//! are the long flag names with dashes replaced by underscores. Flags given
//! on the command line win. Results go to the `--out` paths; nothing is
//! written to stdout unless `--stdout` is passed. Errors are reported as a
//! single JSON line on stderr with a non-zero exit status.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use meshgrade::features::{Aggregator, FeatureConfig};
use meshgrade::metrics::Property;
use meshgrade::models::{ModelKind, TrainConfig};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "meshgrade", version, about = "Element quality classification for shell meshes")]
struct Cli {
    /// TOML file with default values for any option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write the primary result to stdout.
    #[arg(long, global = true)]
    stdout: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a Wavefront OBJ file into a canonical mesh document.
    Convert {
        input: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check a mesh document against every structural invariant.
    Validate {
        input: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the per-element property table as CSV.
    Metrics {
        input: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write neighbourhood feature vectors as CSV.
    Featurize {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier on labelled meshes.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Predict element labels of a mesh with a trained model.
    Predict {
        input: PathBuf,
        #[arg(long = "model-file")]
        model_file: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Prediction table `element_id,probability,label`.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Mesh document carrying the predicted labels.
        #[arg(long)]
        labelled_out: Option<PathBuf>,
    },
    /// Score a trained model on labelled meshes.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long = "model-file")]
        model_file: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Mesh-grouped crossvalidation with pooled predictions.
    Crossval {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Generate labelled synthetic meshes.
    Synth(SynthArgs),
    /// Write a VTK file with predicted and true labels per element.
    ExportViz {
        input: PathBuf,
        /// Predict with this model.
        #[arg(long = "model-file", conflicts_with = "predictions")]
        model_file: Option<PathBuf>,
        /// Take probabilities from a `mesh_id,element_id,probability,...` CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Mesh id in the predictions table; defaults to the file stem.
        #[arg(long)]
        mesh_id: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Inputs {
    /// Mesh documents; the file stem is the mesh id.
    meshes: Vec<PathBuf>,
    /// Benchmark manifest listing mesh files.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct FeatureArgs {
    /// Largest neighbourhood ring K.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    aggregators: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    properties: Option<Vec<String>>,
    /// Keep only one copy of each ring-0 value.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    skip_k0_duplicates: Option<bool>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// `extratrees` or `fnn`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    attributes_per_split: Option<usize>,
    #[arg(long)]
    min_samples_split: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct ReportArgs {
    /// Thresholds of the report table.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Number of evenly spaced thresholds of the precision/recall curve.
    #[arg(long)]
    grid: Option<usize>,
    /// JSON report.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Text table with one row per threshold.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Precision/recall curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Per-element predictions CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SynthArgs {
    /// Generate the 60-mesh benchmark into `--out-dir`.
    #[arg(long)]
    bench: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Single mesh output path.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    spacing: Option<f64>,
    /// `flat`, `cylinder:RADIUS` or `ridge:DEGREES`.
    #[arg(long)]
    surface: Option<String>,
    #[arg(long)]
    jitter: Option<f64>,
    /// `KIND:COUNT:SEVERITY`, repeatable.
    #[arg(long = "defect")]
    defects: Vec<String>,
    #[arg(long)]
    dilation: Option<usize>,
}

/// Values read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    k: Option<usize>,
    aggregators: Option<Vec<String>>,
    properties: Option<Vec<String>>,
    skip_k0_duplicates: Option<bool>,
    model: Option<String>,
    trees: Option<usize>,
    attributes_per_split: Option<usize>,
    min_samples_split: Option<usize>,
    hidden: Option<Vec<usize>>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    patience: Option<usize>,
    validation_fraction: Option<f64>,
    threshold: Option<f64>,
    thresholds: Option<Vec<f64>>,
    grid: Option<usize>,
    folds: Option<usize>,
    rows: Option<usize>,
    cols: Option<usize>,
    spacing: Option<f64>,
    surface: Option<String>,
    jitter: Option<f64>,
    defects: Option<Vec<String>>,
    dilation: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Options after merging flags over the config file.
struct Settings {
    seed: u64,
    stdout: bool,
    file: FileConfig,
}

impl Settings {
    fn features(&self, args: &FeatureArgs) -> Result<FeatureConfig> {
        let f = &self.file;
        let mut config = FeatureConfig::default();
        if let Some(k) = args.k.or(f.k) {
            config.k_max = k;
        }
        if let Some(names) = args.aggregators.as_ref().or(f.aggregators.as_ref()) {
            config.aggregators = names
                .iter()
                .map(|n| Aggregator::from_name(n.trim()).with_context(|| format!("unknown aggregator {n:?}")))
                .collect::<Result<_>>()?;
        }
        if let Some(names) = args.properties.as_ref().or(f.properties.as_ref()) {
            config.properties = names
                .iter()
                .map(|n| Property::from_name(n.trim()).with_context(|| format!("unknown property {n:?}")))
                .collect::<Result<_>>()?;
        }
        if let Some(skip) = args.skip_k0_duplicates.or(f.skip_k0_duplicates) {
            config.skip_k0_duplicates = skip;
        }
        if config.aggregators.is_empty() || config.properties.is_empty() {
            bail!("at least one aggregator and one property are required");
        }
        Ok(config)
    }

    fn train(&self, args: &ModelArgs) -> Result<TrainConfig> {
        let f = &self.file;
        let mut config = TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        };
        if let Some(name) = args.model.as_ref().or(f.model.as_ref()) {
            config.kind = ModelKind::from_name(name).with_context(|| format!("unknown model {name:?}"))?;
        }
        let t = &mut config.extratrees;
        if let Some(v) = args.trees.or(f.trees) {
            t.n_trees = v;
        }
        if let Some(v) = args.attributes_per_split.or(f.attributes_per_split) {
            t.attributes_per_split = Some(v);
        }
        if let Some(v) = args.min_samples_split.or(f.min_samples_split) {
            t.min_samples_split = v;
        }
        let n = &mut config.fnn;
        if let Some(v) = args.hidden.as_ref().or(f.hidden.as_ref()) {
            n.hidden = v.clone();
            n.batch_norm_after.retain(|&i| i < v.len());
        }
        if let Some(v) = args.learning_rate.or(f.learning_rate) {
            n.learning_rate = v;
        }
        if let Some(v) = args.batch_size.or(f.batch_size) {
            n.batch_size = v;
        }
        if let Some(v) = args.epochs.or(f.epochs) {
            n.max_epochs = v;
        }
        if let Some(v) = args.patience.or(f.patience) {
            n.patience = v;
        }
        if let Some(v) = args.validation_fraction.or(f.validation_fraction) {
            n.validation_fraction = v;
        }
        config.validate()?;
        Ok(config)
    }

    fn threshold(&self, flag: Option<f64>) -> Result<f64> {
        let t = flag.or(self.file.threshold).unwrap_or(0.5);
        if !(0.0..=1.0).contains(&t) {
            bail!("threshold {t} outside [0, 1]");
        }
        Ok(t)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Convert { .. } => "convert",
        Command::Validate { .. } => "validate",
        Command::Metrics { .. } => "metrics",
        Command::Featurize { .. } => "featurize",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Evaluate { .. } => "evaluate",
        Command::Crossval { .. } => "crossval",
        Command::Synth(_) => "synth",
        Command::ExportViz { .. } => "export-viz",
    }
}

fn error_line(command: &str, message: &str) -> String {
    serde_json::json!({ "error": message, "command": command }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", error_line("", first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let name = command_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(name, &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_ref())?;
    let settings = Settings {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        stdout: cli.stdout,
        file,
    };
    commands::dispatch(cli.command, &settings)
}
