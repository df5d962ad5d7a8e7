use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use streaklab::imaging::{AitMode, Threshold};
use streaklab::io::SplitRole;
use streaklab::model::{Scale, Variant};
use streaklab::synth::Profile;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "streaklab", version, about = "Streak-tube carrier LiDAR-radar imaging toolkit")]
struct Cli {
    /// Worker threads (1 gives bit-for-bit reproducible runs).
    #[arg(long, global = true, env = "STREAKLAB_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Print precision, recall and F1.
    Eval(EvalArgs),
    /// Image every frame of a dataset.
    Image(ImageArgs),
    /// Attention distribution of a checkpoint's echo embedding.
    Aam(AamArgs),
    /// F1 of every fixed-width bandpass window.
    Bands(BandsArgs),
    /// Average imaging time against frame count.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mini", value_parser = parse_from_str::<Profile>)]
    profile: Profile,
    /// Override the profile's frame count.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    frames: Option<u32>,
    /// Override the profile's rows per frame.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    rows: Option<u32>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5.0, value_parser = finite)]
    snr_db: f64,
    /// Scatter RMS relative to the carrier RMS.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    scatter: f64,
    #[arg(long, default_value_t = 0.4, value_parser = fraction)]
    train_ratio: f64,
    #[arg(long, default_value_t = 0.05, value_parser = fraction)]
    val_ratio: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory for best.snkw, last.snkw and train_log.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "dbc", value_parser = parse_from_str::<Variant>)]
    variant: Variant,
    #[arg(long, default_value = "s", value_parser = parse_from_str::<Scale>)]
    scale: Scale,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    batch_size: u32,
    /// Learning rate per batch item.
    #[arg(long, default_value_t = 2e-6, value_parser = positive)]
    lr: f64,
    #[arg(long, default_value_t = 0.9998, value_parser = fraction)]
    ema_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the embedding width.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    embed_dim: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    depth: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    heads: Option<u32>,
    /// Tokens each branch is split into.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    tokens: Option<u32>,
}

#[derive(Debug, Args, Clone, Copy)]
struct FilterArgs {
    /// Bandpass window LO:HI in Hz, e.g. 450e6:550e6. Omit for no filter.
    #[arg(long, value_parser = band)]
    band: Option<(f64, f64)>,
    /// `otsu` or a fixed gray level.
    #[arg(long, default_value = "otsu", value_parser = threshold)]
    threshold: Threshold,
    /// Correlate with the conjugate template instead of the literal product.
    #[arg(long)]
    conjugate: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["pred", "data"])))]
struct EvalArgs {
    /// Predicted mask (SNKL).
    #[arg(long, requires = "truth", conflicts_with_all = ["data", "checkpoint"])]
    pred: Option<PathBuf>,
    /// Ground-truth mask (SNKL).
    #[arg(long, requires = "pred")]
    truth: Option<PathBuf>,
    /// Dataset to evaluate; uses the checkpoint if given, otherwise the
    /// traditional pipeline.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "holdout", value_parser = parse_from_str::<SplitRole>)]
    split: SplitRole,
    #[command(flatten)]
    filter: FilterArgs,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImageArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "traditional", value_parser = parse_from_str::<AitMode>)]
    mode: AitMode,
    /// Required in streaknet mode.
    #[arg(long, required_if_eq("mode", "streaknet"))]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Debug, Args)]
struct AamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take the sampling grid from this dataset instead of the default.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of peaks to report.
    #[arg(long, default_value_t = 5)]
    peaks: usize,
    /// Moving-average span used before peak picking, Hz.
    #[arg(long, default_value_t = streaklab::aam::DEFAULT_PEAK_WINDOW, value_parser = positive)]
    window: f64,
}

#[derive(Debug, Args)]
struct BandsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 200e6, value_parser = positive)]
    f_max: f64,
    #[arg(long, default_value_t = 5e6, value_parser = positive)]
    step: f64,
    /// CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Frame counts to test.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64", value_parser = clap::value_parser!(u32).range(1..))]
    frames: Vec<u32>,
    /// Simulated per-frame compute, milliseconds (ignored with --data).
    #[arg(long, default_value_t = 20.0, value_parser = non_negative)]
    work_ms: f64,
    /// Run the real pipelines on this dataset's frames instead.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Network for the streaknet mode with --data; without it only the
    /// traditional mode runs.
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
    /// Write every report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_from_str<T: std::str::FromStr<Err = streaklab::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: streaklab::Error| e.to_string())
}

fn finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not a finite number"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{s} must be >= 0"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{s} must be > 0"))
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{s} must lie in [0, 1]"))
    }
}

fn band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let (lo, hi) = (non_negative(lo)?, positive(hi)?);
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(format!("band {s:?} is empty"))
    }
}

fn threshold(s: &str) -> Result<Threshold, String> {
    if s == "otsu" {
        Ok(Threshold::Otsu)
    } else {
        finite(s).map(Threshold::Manual)
    }
}

/// The error chain on one line, skipping causes a message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.into()).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Image(a) => commands::image(a),
        Command::Aam(a) => commands::aam(a),
        Command::Bands(a) => commands::bands(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
