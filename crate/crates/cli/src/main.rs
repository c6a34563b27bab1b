//! Command-line front end for the hierarchical forecasting engine.
//!
//! Exit codes: 0 success, 1 gradcheck threshold exceeded, 2 configuration
//! error, 3 data error, 4 divergence.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hgnn_core::Error;

#[derive(Parser)]
#[command(
    name = "hgnn",
    about = "Hierarchical time-series forecasting with graph-neural backbones",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchy and panel.
    Synth(SynthArgs),
    /// Train a backbone and write a checkpoint plus a training report.
    Train(TrainArgs),
    /// Forecast from the tail of a panel with a trained checkpoint.
    Forecast(ForecastArgs),
    /// Evaluate forecasts on the last window of a panel.
    Evaluate(EvaluateArgs),
    /// Bottom-up or top-down reconciliation of base forecasts.
    Reconcile(ReconcileArgs),
    /// Run the gradient verification suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Number of bottom-level series.
    #[arg(long, default_value_t = 16)]
    pub bottom: usize,
    /// Number of hierarchy levels (top and bottom included).
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Number of time steps.
    #[arg(long, default_value_t = 400)]
    pub len: usize,
    /// Number of shared latent factors.
    #[arg(long, default_value_t = 2)]
    pub factors: usize,
    /// Gaussian noise level on the bottom series.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path for the hierarchy (child,parent CSV).
    #[arg(long)]
    pub out_hierarchy: PathBuf,
    /// Output path for the panel (wide CSV).
    #[arg(long)]
    pub out_panel: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Backbone kind: diffusion_rnn, mixhop_tcn, gegenbauer_tgc,
    /// gcn_gru_attn, or spatial_ode.
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub panel: PathBuf,
    /// Optional key = value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub out_report: Option<PathBuf>,

    /// Forecast horizon (also the held-out test window).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Input window length.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hop count / diffusion steps / polynomial order.
    #[arg(long)]
    pub khops: Option<usize>,
    /// Mix-hop root-retention ratio.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Gegenbauer order.
    #[arg(long)]
    pub alpha_geg: Option<f64>,
    /// Dilation exponent of the temporal convolution schedule.
    #[arg(long)]
    pub dilation_q: Option<usize>,
    /// Graph fed to the backbone: full_hierarchy or bottom_only.
    #[arg(long)]
    pub graph_mode: Option<String>,

    /// Weight of the aggregate-level loss term.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Grow the supervised horizon across epochs (mixhop_tcn).
    #[arg(long)]
    pub curriculum: bool,
    /// Pointwise loss: mse or mae.
    #[arg(long)]
    pub loss: Option<String>,
    /// Input scaling: per_node_zscore or none.
    #[arg(long)]
    pub scaling: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of the (test-held-out) panel used for training.
    #[arg(long)]
    pub train_frac: Option<f64>,
}

#[derive(Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub panel: PathBuf,
    /// Steps to forecast (default: the trained horizon).
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// Panel holding the evaluation window as its last steps.
    #[arg(long)]
    pub panel: PathBuf,
    /// Trained checkpoint to forecast with.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Externally produced forecast file (wide CSV) to evaluate instead.
    #[arg(long)]
    pub forecasts: Option<PathBuf>,
    /// Evaluation horizon (default: trained horizon / forecast width).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// WAPE definition: standard or as_printed.
    #[arg(long, default_value = "standard")]
    pub metric_variant: String,
    /// Bottom-up reconcile an incoherent forecast file before evaluating.
    #[arg(long)]
    pub reconcile: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReconcileArgs {
    /// bu (bottom-up) or td (top-down with historical shares).
    #[arg(long)]
    pub method: String,
    /// Base forecasts in the wide panel format.
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// Historical panel for top-down shares.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds for the backbone sweep.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Sampled coordinates per parameter tensor.
    #[arg(long, default_value_t = 6)]
    pub max_coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Divergence { .. } | Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(args) => commands::run_synth(args).map(|_| 0),
        Command::Train(args) => commands::run_train(args).map(|_| 0),
        Command::Forecast(args) => commands::run_forecast(args).map(|_| 0),
        Command::Evaluate(args) => commands::run_evaluate(args).map(|_| 0),
        Command::Reconcile(args) => commands::run_reconcile(args).map(|_| 0),
        Command::Gradcheck(args) => {
            commands::run_gradcheck(args).map(|pass| if pass { 0 } else { 1 })
        }
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}
