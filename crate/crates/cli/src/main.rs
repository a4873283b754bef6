mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad config file, flag value or field invariant.
    Config(String),
    Core(gigaseg::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{}: {e}", category(e).1),
        }
    }
}

impl From<gigaseg::Error> for CliError {
    fn from(e: gigaseg::Error) -> Self {
        match e {
            gigaseg::Error::InvalidConfig { .. } => CliError::Config(e.to_string()),
            e => CliError::Core(e),
        }
    }
}

fn category(e: &gigaseg::Error) -> (u8, &'static str) {
    use gigaseg::Error::*;
    match e {
        InvalidConfig { .. } => (2, "config error"),
        Io { .. } | Format { .. } | Truncated { .. } | Image { .. } | Parse { .. } => (3, "input error"),
        ShapeMismatch { .. }
        | Indivisible { .. }
        | KernelTooLarge { .. }
        | InvalidShape(_)
        | ElementCount { .. }
        | InvalidSpec(_)
        | InvalidArch(_)
        | ArchMismatch
        | NoSolution { .. }
        | BudgetTooSmall { .. }
        | Empty(_) => (4, "geometry error"),
        NonFiniteGradient { .. } | NonFiniteLoss { .. } => (5, "numerical error"),
        DanglingNode { .. } | Tape(_) | NonScalarLoss(_) => (1, "internal error"),
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => category(e).0,
        }
    }
}

/// Patch-free segmentation: architecture search, data preparation,
/// training, evaluation and memory planning.
#[derive(Debug, Parser)]
#[command(name = "gigaseg", version)]
struct Cli {
    /// Config file (TOML). Defaults to $GIGASEG_HOME/gigaseg.toml when that exists.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dataset root.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Architecture text file used instead of the pinned network.
    #[arg(long, global = true)]
    arch: Option<PathBuf>,
    /// Print the effective config after all overrides and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search for the smallest-order network with the target parameter count.
    FindArch(FindArchArgs),
    /// Convert RGB images to inverted grayscale f32 raw inputs.
    Preprocess(FileArgs),
    /// Generate tissue masks from RGB images with the label recipe.
    MakeLabels(FileArgs),
    /// Write a synthetic corpus of RGB images and reference masks.
    Synth(SynthArgs),
    /// Train from scratch, keeping the validation-loss minimizer.
    Train(TrainArgs),
    /// Mean Dice of a checkpoint on a split.
    Eval(EvalArgs),
    /// Predict a binary mask for one image.
    Predict(PredictArgs),
    /// Predict (and optionally measure) peak training memory.
    EstimateMem(EstimateArgs),
    /// Time training steps at several sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct FindArchArgs {
    #[arg(long)]
    target_params: Option<usize>,
    /// Also write the architecture text here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Crop {
    #[arg(long)]
    crop_height: Option<usize>,
    #[arg(long)]
    crop_width: Option<usize>,
}

/// Either a whole dataset (default) or one `--input`/`--output` pair.
#[derive(Debug, Args)]
struct FileArgs {
    #[arg(long, requires = "output")]
    input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    output: Option<PathBuf>,
    #[command(flatten)]
    crop: Crop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ImageFormat {
    /// Raw for images of 100 megapixels or more, PNG below.
    Auto,
    Png,
    Raw,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[command(flatten)]
    crop: Crop,
    #[arg(long, value_enum, default_value = "auto")]
    format: ImageFormat,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    val_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Defaults to best.ckpt in the configured checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = gigaseg::train::DICE_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    crop: Crop,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 4)]
    element_width: usize,
    /// Kernel workers to plan for; defaults to the thread count in use.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the per-tensor table here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also report the largest trainable input within this many bytes.
    #[arg(long)]
    budget: Option<u64>,
    /// Height:width ratio for `--budget`.
    #[arg(long, default_value = "1:4")]
    aspect: String,
    /// Run one real training step and report its measured peak.
    #[arg(long)]
    measure: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated HxW sizes.
    #[arg(long, default_value = "256x1024,512x2048,768x3072")]
    sizes: String,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Untimed steps before timing starts at each size.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    val_every: usize,
    #[arg(long, default_value_t = 1)]
    val_images: usize,
    #[arg(long)]
    json: bool,
}

fn apply_crop(cfg: &mut RunConfig, crop: &Crop) {
    if let Some(h) = crop.crop_height {
        cfg.dataset.crop_height = h;
    }
    if let Some(w) = crop.crop_width {
        cfg.dataset.crop_width = w;
    }
}

/// Folds command-line values over the file/default config.
fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(d) = &cli.data {
        cfg.paths.data = d.clone();
    }
    if let Some(a) = &cli.arch {
        cfg.paths.arch = Some(a.clone());
    }
    match &cli.command {
        Command::FindArch(a) => {
            if let Some(t) = a.target_params {
                cfg.arch.target_params = t;
            }
        }
        Command::Preprocess(a) | Command::MakeLabels(a) => apply_crop(&mut cfg, &a.crop),
        Command::Synth(a) => {
            apply_crop(&mut cfg, &a.crop);
            if let Some(s) = a.seed {
                cfg.data_seed = s;
            }
            for (field, v) in [(&mut cfg.dataset.train, a.train), (&mut cfg.dataset.val, a.val), (&mut cfg.dataset.test, a.test)] {
                if let Some(v) = v {
                    *field = v;
                }
            }
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            if let Some(v) = a.max_steps {
                t.max_steps = v;
            }
            if let Some(v) = a.val_every {
                t.val_every = v;
            }
            if let Some(v) = a.seed {
                t.seed = v;
            }
            if let Some(v) = a.learning_rate {
                t.learning_rate = v;
            }
            if let Some(v) = &a.checkpoint_dir {
                t.checkpoint_dir = v.clone();
            }
        }
        Command::Predict(a) => apply_crop(&mut cfg, &a.crop),
        Command::Eval(_) | Command::EstimateMem(_) | Command::Bench(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    match cli.command {
        Command::FindArch(a) => commands::find_arch(&cfg, a.out.as_deref()),
        Command::Preprocess(a) => commands::preprocess(&cfg, a.input.as_deref().zip(a.output.as_deref())),
        Command::MakeLabels(a) => commands::make_labels(&cfg, a.input.as_deref().zip(a.output.as_deref())),
        Command::Synth(a) => commands::synth(&cfg, a.format),
        Command::Train(_) => commands::train(&cfg),
        Command::Eval(a) => commands::eval(&cfg, a.checkpoint.as_deref(), &a.split, a.json),
        Command::Predict(a) => commands::predict(&cfg, &a.input, &a.output, a.checkpoint.as_deref(), a.threshold),
        Command::EstimateMem(a) => commands::estimate_mem(&cfg, &a),
        Command::Bench(a) => commands::bench(&cfg, &a),
    }
}

fn main() -> ExitCode {
    gigaseg::sysmem::tighten_allocator();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
