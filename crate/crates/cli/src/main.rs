//! `sqzt`: dataset generation, training, prediction, classical baselines and
//! degradation fits from the command line.

mod commands;
mod json;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use sqzt_core::degradation::FitMetric;
use sqzt_core::homodyne::{LabelKind, PhaseMode};

#[derive(Debug, Parser)]
#[command(name = "sqzt", version, about = "Homodyne tomography of squeezed thermal light")]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, env = "SQZT_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled dataset of simulated scans.
    Gen(GenArgs),
    /// Train a characteristic or reconstruction model on a dataset.
    Train(TrainArgs),
    /// Run a trained model on one scan.
    Predict(PredictArgs),
    /// Maximum-likelihood density matrix from one scan.
    Mle(MleArgs),
    /// Phase-binned variance fit from one scan.
    Covfit(CovfitArgs),
    /// Fit loss and phase noise to measured (SQZ, ASQZ) pairs.
    FitDegradation(FitDegradationArgs),
    /// Compare every available estimator on one scan.
    Report(ReportArgs),
    /// Write a dataset record or a simulated scan as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of records.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1024)]
    seq_len: usize,
    /// `params` or `cholesky`.
    #[arg(long, default_value = "params")]
    labels: LabelKind,
    /// Fock truncation for Cholesky labels.
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    r_min: f64,
    #[arg(long, default_value_t = 1.75)]
    r_max: f64,
    #[arg(long, default_value_t = 0.0)]
    theta_min: f64,
    #[arg(long, default_value_t = std::f64::consts::TAU)]
    theta_max: f64,
    #[arg(long, default_value_t = 0.0)]
    nth_min: f64,
    #[arg(long, default_value_t = 1.2)]
    nth_max: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Seeds weight init, the split and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    width_scale: f64,
    #[arg(long, default_value_t = 0.25)]
    input_scale: f64,
    /// Hidden widths of the head, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Feed phases as a second input channel.
    #[arg(long)]
    two_channel: bool,
    /// Epochs without a new best validation loss before the rate is halved.
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Train on the stored scans as they are, without random phase rolls,
    /// reflections and sign flips.
    #[arg(long)]
    no_augment: bool,
    /// Loss log, `<out>.log` by default.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["scan", "data"])))]
struct ScanArgs {
    /// `phase_rad,quadrature` CSV.
    #[arg(long)]
    scan: Option<PathBuf>,
    /// Dataset file; the record is chosen with --index.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: ScanArgs,
    /// Seed for thinning longer scans to the model's input length.
    #[arg(long, default_value_t = 0)]
    resample_seed: u64,
    /// JSON output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MleOpts {
    /// Reconstruction dimension.
    #[arg(long, default_value_t = 15)]
    m: usize,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 12.0)]
    x_max: f64,
    #[arg(long, default_value_t = 256)]
    x_bins: usize,
    #[arg(long, default_value_t = 24)]
    phase_bins: usize,
}

#[derive(Debug, Args)]
struct MleArgs {
    #[command(flatten)]
    source: ScanArgs,
    #[command(flatten)]
    opts: MleOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CovfitOpts {
    /// Phase bins for the variance estimates.
    #[arg(long, default_value_t = 24)]
    bins: usize,
    #[arg(long, default_value_t = 3)]
    reweight_passes: usize,
}

#[derive(Debug, Args)]
struct CovfitArgs {
    #[command(flatten)]
    source: ScanArgs,
    #[command(flatten)]
    opts: CovfitOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitDegradationArgs {
    /// CSV with `sqz_db,asqz_db` columns.
    #[arg(long)]
    points: PathBuf,
    /// `db` or `linear`.
    #[arg(long, default_value = "db")]
    metric: FitMetric,
    #[arg(long, default_value_t = 50)]
    curve_points: usize,
    #[arg(long, default_value_t = 2000)]
    max_iter: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    source: ScanArgs,
    /// Characteristic checkpoint.
    #[arg(long)]
    char_model: Option<PathBuf>,
    /// Reconstruction checkpoint.
    #[arg(long)]
    recon_model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    resample_seed: u64,
    #[command(flatten)]
    mle: MleOpts,
    #[command(flatten)]
    covfit: CovfitOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "r"])))]
struct ExportArgs {
    /// Dataset file; the record is chosen with --index.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Simulate a scan with this squeezing parameter instead.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.0)]
    nth: f64,
    #[arg(long, default_value_t = 4096)]
    points: usize,
    /// `uniform`, `ramp` or `triangle`.
    #[arg(long, default_value = "uniform")]
    phase_mode: PhaseMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = subcommand_name(&cli.command);
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(anyhow::Error::from)
        .and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": error_chain(&e), "subcommand": name });
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}

/// Context and causes joined by `: `, skipping causes whose text the
/// previous message already includes.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !last.contains(&s) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&s);
        }
        last = s;
    }
    out
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Train(_) => "train",
        Command::Predict(_) => "predict",
        Command::Mle(_) => "mle",
        Command::Covfit(_) => "covfit",
        Command::FitDegradation(_) => "fit-degradation",
        Command::Report(_) => "report",
        Command::Export(_) => "export",
    }
}
