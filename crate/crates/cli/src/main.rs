//! `tinyforge`: the whole workflow over a project directory.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "tinyforge", version, about = "Desk-scale TinyML toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Project directory.
    #[arg(long, global = true, default_value = ".")]
    pub project: PathBuf,
    /// Seed override; defaults to the seed in project.json.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Device profile name; defaults to the one in impulse.json.
    /// Profiles are looked up in $TINYFORGE_PROFILE_DIR before the built-ins.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Print one JSON document on stdout instead of human-readable text.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Audio,
    Timeseries,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    I8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpaceChoice {
    Kws,
    Extended,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveChoice {
    Accuracy,
    Latency,
    Ram,
    Flash,
}

fn constraint(s: &str) -> Result<String, String> {
    let mut c = tinyforge::estimate::Constraints::default();
    c.apply(s).map_err(|e| e.to_string())?;
    Ok(s.to_string())
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create the project skeleton and a default impulse.json.
    Init {
        #[arg(long, value_enum, default_value_t = Kind::Audio)]
        kind: Kind,
        /// Populate the dataset with synthetic tones (three classes).
        #[arg(long)]
        synthetic: bool,
        /// Samples per class for --synthetic.
        #[arg(long, default_value_t = 20)]
        per_class: usize,
    },
    /// Import CSV, WAV or JSON samples into the dataset.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Class label; defaults to the file name up to the first '.'.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value = "train")]
        split: String,
        /// Force a format instead of using the file extension.
        #[arg(long)]
        format: Option<String>,
    },
    /// Reassign train/test splits, stratified by class.
    Split {
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Per-class and per-split sample counts.
    Stats,
    /// Compute feature matrices for both splits.
    Dsp,
    /// Train the impulse model on the train-split features.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Fixed learning rate; omitted means the learning-rate finder picks one.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Also fit a k-means anomaly model with this many clusters.
        #[arg(long)]
        anomaly_clusters: Option<usize>,
    },
    /// Confusion matrix and accuracy on the test split.
    Eval {
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        dtype: Precision,
    },
    /// Post-training int8 quantization calibrated on train features.
    Quantize {
        /// Number of representative train samples.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Generate C sources under deploy/.
    Build {
        #[arg(long, value_enum, default_value_t = Precision::I8)]
        dtype: Precision,
        /// Symbol and file-name prefix.
        #[arg(long, default_value = "model")]
        prefix: String,
        /// Call an externally defined `<prefix>_trace` after every layer.
        #[arg(long)]
        trace_hooks: bool,
    },
    /// Latency, RAM and flash estimate plus a fit verdict for the profile.
    Estimate {
        #[arg(long, value_enum, default_value_t = Precision::I8)]
        dtype: Precision,
    },
    /// Random search over DSP and model configurations.
    Tune {
        #[arg(long, default_value_t = 8)]
        trials: usize,
        /// Resource limit such as ram=256k, flash=1m or latency=100. Repeatable.
        #[arg(long = "constraint", value_parser = constraint)]
        constraints: Vec<String>,
        #[arg(long, value_enum, default_value_t = ObjectiveChoice::Accuracy)]
        objective: ObjectiveChoice,
        #[arg(long, value_enum, default_value_t = SpaceChoice::Kws)]
        space: SpaceChoice,
        /// Training epochs per trial; defaults to the impulse setting.
        #[arg(long)]
        epochs: Option<usize>,
        /// Write the DSP and model of this trial from reports/tuner.json
        /// into impulse.json instead of searching.
        #[arg(long)]
        select: Option<usize>,
    },
    /// Search post-processing settings on a synthetic event stream.
    Calibrate {
        /// Positive class; defaults to the first non-background class.
        #[arg(long)]
        positive: Option<String>,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        /// Mean events per minute.
        #[arg(long, default_value_t = 10.0)]
        rate: f64,
        /// Noise bed level in dBFS.
        #[arg(long, default_value_t = -30.0, allow_negative_numbers = true)]
        noise_db: f64,
        /// Hop between decisions in seconds.
        #[arg(long, default_value_t = 0.1)]
        hop: f64,
        #[arg(long, default_value_t = 3)]
        tolerance: usize,
        #[arg(long, default_value_t = 24)]
        population: usize,
        #[arg(long, default_value_t = 30)]
        generations: usize,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        dtype: Precision,
    },
    /// Classify one sample file, or a feature-vector file into another.
    Run {
        /// CSV, WAV or JSON sample.
        #[arg(required_unless_present = "features")]
        input: Option<PathBuf>,
        /// Binary feature-vector file to run in batch.
        #[arg(long, conflicts_with = "input", requires = "output")]
        features: Option<PathBuf>,
        /// Where to write batch outputs.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        dtype: Precision,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Init { .. } => "init",
            Command::Ingest { .. } => "ingest",
            Command::Split { .. } => "split",
            Command::Stats => "stats",
            Command::Dsp => "dsp",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Quantize { .. } => "quantize",
            Command::Build { .. } => "build",
            Command::Estimate { .. } => "estimate",
            Command::Tune { .. } => "tune",
            Command::Calibrate { .. } => "calibrate",
            Command::Run { .. } => "run",
        }
    }
}

/// Result of a command: a JSON document and its human rendering.
pub struct Outcome {
    pub json: serde_json::Value,
    pub human: String,
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use tinyforge::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::Parse { .. }) => "parse",
        Some(E::UnsupportedFormat(_)) => "unsupported_format",
        Some(E::InvalidInput(_)) => "invalid_input",
        Some(E::Config(_)) => "config",
        Some(E::Graph { .. }) => "graph",
        Some(E::Checksum(_)) => "checksum",
        Some(E::Version { .. }) => "version",
        Some(E::Training(_)) => "training",
        Some(E::Search(_)) => "search",
        Some(E::MissingArtifact { .. }) => "missing_artifact",
        Some(E::Io(_)) | None => "io",
        Some(E::Json(_)) => "json",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match commands::dispatch(&cli) {
        Ok(out) => {
            if cli.global.json {
                println!("{}", json!({ "command": name, "ok": true, "result": out.json }));
            } else {
                print!("{}", out.human);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if cli.global.json {
                println!(
                    "{}",
                    json!({ "command": name, "ok": false, "error": { "kind": error_kind(&e), "message": format!("{e:#}") } })
                );
            }
            ExitCode::from(1)
        }
    }
}
