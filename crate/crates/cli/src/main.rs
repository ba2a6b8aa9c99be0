mod bench;
mod data;
mod rundir;
mod tools;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ocrdistill::nn::DetectorPreset;

/// Desk-scale OCR training, mutual-learning distillation and verification.
///
/// Standard output carries only machine-readable results (one JSON line or
/// CSV); progress goes to standard error.
#[derive(Parser, Debug)]
#[command(name = "ocrdistill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic recognition or detection dataset.
    GenData(GenDataArgs),
    /// Train a single recognizer with CTC (optionally with the center term).
    TrainRec(TrainRecArgs),
    /// Train a single detector with the ground-truth DB loss.
    TrainDet(TrainDetArgs),
    /// Mutual learning of two recognizers with KL and feature terms.
    DistillUdml(UdmlArgs),
    /// Two student detectors learning from each other and a frozen teacher.
    DistillCml(CmlArgs),
    /// Sentence accuracy of a recognizer checkpoint.
    EvalRec(EvalRecArgs),
    /// Precision, recall and Hmean of a detector checkpoint.
    EvalDet(EvalDetArgs),
    /// CopyPaste augmentation of a detection dataset.
    Augment(AugmentArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
    /// Median wall time of core operations.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Optional validation dataset, evaluated after every epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    /// key=value training config; CLI flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra config overrides, `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Rec,
    Det,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Preset {
    Teacher,
    Student,
}

impl From<Preset> for DetectorPreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Teacher => DetectorPreset::Teacher,
            Preset::Student => DetectorPreset::Student,
        }
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian noise standard deviation as a fraction of full scale.
    #[arg(long)]
    noise: Option<f64>,
    /// Detection image side in pixels (even).
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Detection glyph magnification.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    glyph_scale: u64,
    /// Accepted for uniformity with the other commands; unused.
    #[arg(long, hide = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TrainRecArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Add the center term to CTC.
    #[arg(long)]
    enhanced_ctc: bool,
}

#[derive(Args, Debug)]
struct TrainDetArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "student")]
    preset: Preset,
}

#[derive(Args, Debug)]
struct UdmlArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Drop the backbone feature term.
    #[arg(long)]
    no_feat_loss: bool,
    /// Drop the KL term between the two networks.
    #[arg(long)]
    no_dml_loss: bool,
}

#[derive(Args, Debug)]
struct CmlArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint of a teacher-preset detector.
    #[arg(long)]
    teacher_ckpt: PathBuf,
    /// Drop the KL term between the two students.
    #[arg(long)]
    no_dml_loss: bool,
    /// Drop the teacher term.
    #[arg(long)]
    no_distill_loss: bool,
}

#[derive(Args, Debug)]
struct EvalRecArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct EvalDetArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "student")]
    preset: Preset,
    #[arg(long, default_value_t = ocrdistill::evalkit::DEFAULT_IOU_THRESH)]
    iou_thresh: f64,
    #[arg(long, default_value_t = ocrdistill::evalkit::DEFAULT_BIN_THRESH)]
    bin_thresh: f64,
    #[arg(long, default_value_t = ocrdistill::evalkit::DEFAULT_MIN_AREA)]
    min_area: usize,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Source detection dataset.
    #[arg(long)]
    data: PathBuf,
    /// Donor instances offered per image.
    #[arg(long, default_value_t = 2)]
    donors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_attempts: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random instances per loss.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of losses to check.
    #[arg(long, value_delimiter = ',')]
    losses: Vec<String>,
    /// Route every loss through a deliberately wrong backward rule.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit status for a failed command: 2 for invalid input, 3 when training
/// diverged, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use ocrdistill::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::Diverged { .. }) => 3,
        Some(E::InvalidArgument(_) | E::Config { .. } | E::Annotation { .. } | E::UnknownSymbol(_)) => 2,
        _ if err.chain().any(|e| e.downcast_ref::<rundir::UsageError>().is_some()) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => data::gen_data(a),
        Command::TrainRec(a) => train::train_rec(a),
        Command::TrainDet(a) => train::train_det(a),
        Command::DistillUdml(a) => train::distill_udml(a),
        Command::DistillCml(a) => train::distill_cml(a),
        Command::EvalRec(a) => train::eval_rec(a),
        Command::EvalDet(a) => train::eval_det(a),
        Command::Augment(a) => data::augment(a),
        Command::Gradcheck(a) => tools::gradcheck(a),
        Command::Bench(a) => bench::bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
