mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CliError;

/// SPD covariance sequences: synthesis, preprocessing, training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "spdseq", version)]
struct Cli {
    /// Worker threads for per-recording and per-fold jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Increase log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-size model and training defaults.
    Default,
    /// Small model and rotating folds for the synthetic corpus.
    Desk,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a run configuration with every default spelled out.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Build rotating folds (one validation, one test recording) from this directory.
        #[arg(long)]
        recordings: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus of recording directories.
    Synth(SynthArgs),
    /// Filter, enrich and tokenize every recording into token caches.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and test every fold (or one) and write checkpoints, metrics and a manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this fold.
        #[arg(long)]
        fold: Option<usize>,
        /// Overrides `paths.output`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a checkpoint on clipped targets.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Epochs dropped at each end; defaults to `train.clip_test`.
        #[arg(long)]
        clip: Option<usize>,
        /// Recording ids; defaults to the test recordings of every fold.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        /// Defaults to `eval/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every primitive and the model.
    Gradcheck {
        /// Only the tiny model (skip the deeper one).
        #[arg(long)]
        tiny: bool,
    },
    /// Summarize run directories as a mean ± std table.
    Report {
        /// Run directories holding `aggregate.json` or `metrics.json`.
        #[arg(long, num_args = 1.., required = true)]
        aggregate: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the ablation configurations, and optionally run them.
    Ablations {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the variant configurations; defaults to `<output>/ablations`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Preprocess and train every variant.
        #[arg(long)]
        run: bool,
    },
    /// Per-channel mean enriched matrices of one recording, as CSV.
    Heatmap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        recording: String,
        /// Defaults to `<output>/heatmaps`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Take generator settings from this configuration's `[synthetic]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `paths.recordings`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    recordings: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    signals: Option<usize>,
    #[arg(long)]
    fs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    subject_variability: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    match cli.command {
        Command::Init {
            out,
            preset,
            recordings,
        } => commands::init(&out, matches!(preset, Preset::Desk), recordings.as_deref()),
        Command::Synth(args) => commands::synth(&args),
        Command::Preprocess { config } => commands::preprocess(&config),
        Command::Train { config, fold, output } => commands::train(&config, fold, output.as_deref()),
        Command::Eval {
            config,
            checkpoint,
            clip,
            ids,
            out,
        } => commands::eval(&config, &checkpoint, clip, &ids, out.as_deref()),
        Command::Gradcheck { tiny } => commands::gradcheck(tiny),
        Command::Report { aggregate, out } => commands::report(&aggregate, out.as_deref()),
        Command::Ablations { config, out, run } => commands::ablations(&config, out.as_deref(), run),
        Command::Heatmap { config, recording, out } => commands::heatmap(&config, &recording, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
