use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modecast_cli::commands::{self, SweepGrid};
use modecast_cli::config::{Overrides, RunConfig};
use modecast_cli::synth::{self, SynthSpec};

/// Traffic forecasting from band-limited signal modes: decompose
/// per-sensor flow series, pick the mode count from reconstruction loss,
/// and train an attention-based spatio-temporal graph forecaster.
#[derive(Parser)]
#[command(name = "modecast", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long, default_value = "modecast.toml", global = true)]
    config: PathBuf,

    /// Override vmd.num_modes.
    #[arg(long)]
    num_modes: Option<usize>,

    /// Override vmd.alpha.
    #[arg(long)]
    alpha: Option<f64>,

    /// Override vmd.epsilon.
    #[arg(long)]
    epsilon: Option<f64>,

    /// Override vmd.tau.
    #[arg(long)]
    tau: Option<f64>,

    /// Override model.variant (v1, v2, v3).
    #[arg(long)]
    variant: Option<String>,

    /// Override training.seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the cache directory (also: MODECAST_CACHE_DIR).
    #[arg(long)]
    cache_dir: Option<PathBuf>,

    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let variant = self
            .variant
            .as_deref()
            .map(commands::parse_variant)
            .transpose()?;
        let overrides = Overrides {
            num_modes: self.num_modes,
            alpha: self.alpha,
            epsilon: self.epsilon,
            tau: self.tau,
            variant,
            seed: self.seed,
            cache_dir: self.cache_dir.clone(),
            out_dir: self.out_dir.clone(),
        };
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decompose every node's series into modes (cached).
    Decompose(CommonArgs),
    /// Pick the number of modes from the reconstruction-loss threshold.
    #[command(name = "select-k")]
    SelectK(CommonArgs),
    /// Build the road graph and export its spectral operators.
    #[command(name = "build-graph")]
    BuildGraph(CommonArgs),
    /// Train the forecaster (cached checkpoint per configuration).
    Train(CommonArgs),
    /// Evaluate the trained model on the test split.
    Evaluate(CommonArgs),
    /// Measure per-mode importance by zeroing mode channels.
    Ablate(CommonArgs),
    /// Train/evaluate a grid of decomposition hyper-parameters.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated bandwidth penalties to sweep.
        #[arg(long, value_delimiter = ',', default_value = "1000,2000")]
        alphas: Vec<f64>,
        /// Comma-separated convergence tolerances to sweep.
        #[arg(long, value_delimiter = ',', default_value = "1e-7")]
        epsilons: Vec<f64>,
        /// Also run a configuration with the highest-frequency mode
        /// dropped from the features.
        #[arg(long)]
        drop_highest: bool,
    },
    /// Time decomposition and model forward passes.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Smaller grid for quick checks.
        #[arg(long)]
        quick: bool,
    },
    /// Re-export cached plot data (no recomputation).
    #[command(name = "export-plots")]
    ExportPlots(CommonArgs),
    /// Generate a synthetic demo dataset (ring of sensors).
    #[command(name = "synth-data")]
    SynthData {
        /// Output directory for flows.csv, nodes.csv, edges.csv.
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        #[arg(long, default_value_t = 7)]
        days: usize,
        #[arg(long, default_value_t = 20190107)]
        seed: u64,
    },
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Decompose(c) => commands::cmd_decompose(&c.load()?),
        Command::SelectK(c) => commands::cmd_select_k(&c.load()?),
        Command::BuildGraph(c) => commands::cmd_build_graph(&c.load()?),
        Command::Train(c) => commands::cmd_train(&c.load()?),
        Command::Evaluate(c) => commands::cmd_evaluate(&c.load()?),
        Command::Ablate(c) => commands::cmd_ablate(&c.load()?),
        Command::Sweep {
            common,
            alphas,
            epsilons,
            drop_highest,
        } => commands::cmd_sweep(
            &common.load()?,
            &SweepGrid {
                alphas,
                epsilons,
                drop_highest,
            },
        ),
        Command::Bench { common, quick } => commands::cmd_bench(&common.load()?, quick),
        Command::ExportPlots(c) => commands::cmd_export_plots(&c.load()?),
        Command::SynthData {
            out,
            nodes,
            days,
            seed,
        } => {
            synth::generate(&out, &SynthSpec { nodes, days, seed })?;
            println!(
                "synthetic dataset ({nodes} nodes, {days} days) written to {}",
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
