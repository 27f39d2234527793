//! `snrd`: synthesize corpora, train teachers and students, enhance and
//! evaluate.

mod commands;
mod exit;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snrd::distill::Precision;

#[derive(Parser)]
#[command(name = "snrd", version, about = "SNR-routed multi-teacher distillation for speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build teacher, student and test manifests and render their mixtures.
    Synth(SynthArgs),
    /// Train one band-specialist teacher on a rendered corpus.
    TrainTeacher(TrainArgs),
    /// Train a student, distilled from a teacher directory when given.
    TrainStudent(StudentArgs),
    /// Enhance a 16 kHz mono WAV file.
    Enhance(EnhanceArgs),
    /// Score noisy and enhanced test mixtures with STOI and SI-SDR.
    Evaluate(EvaluateArgs),
    /// Write a preset config to edit.
    InitConfig(InitArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis config (JSON). Defaults to the toy preset with `--toy`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Generate the toy source tree under `<out>/sources` and use the toy
    /// preset.
    #[arg(long)]
    toy: bool,
    /// Seed for the generated toy sources.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (JSON). Defaults to the paper preset, or the toy preset
    /// with `--toy`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rendered corpus manifest; mixtures are read from the directory of
    /// the same name without `.jsonl`.
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    toy: bool,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `train.precision`.
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Declared SNR set of the teacher band (comma separated); defaults to
    /// the SNRs present in the manifest.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_set: Option<Vec<f64>>,
}

#[derive(Args)]
struct StudentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding teacher run directories. Omit for a student
    /// trained on clean targets only.
    #[arg(long)]
    teachers: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Noisy input WAV.
    input: PathBuf,
    /// Enhanced output WAV.
    #[arg(long)]
    out: PathBuf,
    /// Samples per enhancement window.
    #[arg(long, default_value_t = 16384)]
    window: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model to evaluate; omit together with `--identity`.
    #[arg(long, required_unless_present = "identity")]
    checkpoint: Option<PathBuf>,
    /// Report the noisy input as the enhanced output.
    #[arg(long, conflicts_with = "checkpoint")]
    identity: bool,
    /// Rendered test manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Student training manifest, for seen/unseen tags.
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16384)]
    window: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Synth,
    Teacher,
    Student,
}

#[derive(Args)]
struct InitArgs {
    #[arg(value_enum)]
    kind: ConfigKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    toy: bool,
    /// Source tree root written into synthesis configs.
    #[arg(long, default_value = "sources")]
    sources: PathBuf,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SNRD_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| exit::usage(format!("SNRD_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(exit::usage("SNRD_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::TrainTeacher(a) => commands::train_teacher(a),
        Command::TrainStudent(a) => commands::train_student(a),
        Command::Enhance(a) => commands::enhance(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::InitConfig(a) => commands::init_config(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            if logging::active() {
                log::error!("{e:#}");
                logging::flush();
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit::classify(&e))
        }
    }
}
