//! `riverbed` command-line pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "riverbed", version, about = "Bathymetry inversion from velocity observations")]
struct Cli {
    /// Worker thread cap for data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample bathymetries from the prior and simulate their flow fields.
    Generate(GenerateArgs),
    /// Train a surrogate on a dataset.
    Train(TrainArgs),
    /// Estimate the bathymetry behind one set of observations.
    Invert(InvertArgs),
    /// Print reconstruction and inversion RMSE per split.
    Evaluate(EvaluateArgs),
    /// Run one of the diagnostic studies.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = ["sve", "pca"])]
    rom: Option<String>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InvertArgs {
    #[arg(long)]
    model: PathBuf,
    /// Observation file; replaces the dataset/record/mask options.
    #[arg(long, conflicts_with_all = ["dataset", "record", "mask_points", "noise_seed"])]
    obs: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    record: Option<usize>,
    /// Equispaced observation points; every node when omitted.
    #[arg(long)]
    mask_points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the synthesised observations here.
    #[arg(long)]
    save_obs: Option<PathBuf>,
    /// Directory for truth/estimate/error/std heatmaps.
    #[arg(long)]
    heatmaps: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training dataset; reported as train and validation splits.
    #[arg(long)]
    dataset: PathBuf,
    /// Held-out dataset for the test split.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    mask_points: Option<usize>,
    /// Records per split used for the inversion column.
    #[arg(long, default_value_t = 50)]
    max_inversions: usize,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(subcommand)]
    kind: DiagnoseKind,
}

#[derive(Debug, Subcommand)]
enum DiagnoseKind {
    /// Hessian spectra of the three reconstruction-loss terms.
    Hessian {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        record: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Mahalanobis distance against inversion RMSE for labelled test sets.
    Mahalanobis {
        #[arg(long)]
        model: PathBuf,
        /// Dataset the model was trained on.
        #[arg(long)]
        train: PathBuf,
        /// `label=path`, repeatable.
        #[arg(long = "test", required = true)]
        tests: Vec<String>,
        #[arg(long)]
        mask_points: Option<usize>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Inversion RMSE as the number of observation points shrinks.
    Sparsity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated, descending; `full` observes every node.
        #[arg(long, default_value = "full,200,50,20,10")]
        counts: String,
        #[arg(long)]
        max_records: Option<usize>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one surrogate per latent dimension and compare inversions.
    LatentSweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Comma-separated, ascending.
        #[arg(long, default_value = "5,10,20,40")]
        dims: String,
        #[arg(long)]
        mask_points: Option<usize>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    commands::configure_threads(cli.threads)?;
    match cli.command {
        Command::Generate(a) => commands::generate(a.config.as_deref(), a.n, a.seed, &a.out),
        Command::Train(a) => commands::train(&commands::TrainRequest {
            dataset: a.dataset,
            rom: a.rom,
            latent_dim: a.latent_dim,
            config: a.config,
            epochs: a.epochs,
            seed: a.seed,
            out: a.out,
        }),
        Command::Invert(a) => {
            let source = match a.obs {
                Some(path) => commands::ObsSource::File(path),
                None => commands::ObsSource::Synthesized {
                    dataset: a.dataset.ok_or_else(|| CliError::Validation("--dataset or --obs is required".into()))?,
                    record: a.record.ok_or_else(|| CliError::Validation("--record is required with --dataset".into()))?,
                    mask_points: a.mask_points,
                    noise_seed: a.noise_seed,
                },
            };
            commands::invert(&a.model, source, a.config.as_deref(), a.save_obs.as_deref(), a.heatmaps.as_deref(), &a.out)
        }
        Command::Evaluate(a) => commands::evaluate(&commands::EvaluateRequest {
            model: a.model,
            dataset: a.dataset,
            test: a.test,
            mask_points: a.mask_points,
            max_inversions: a.max_inversions,
            noise_seed: a.noise_seed,
            config: a.config,
            csv: a.csv,
        }),
        Command::Diagnose(d) => match d.kind {
            DiagnoseKind::Hessian { model, dataset, record, step, out_dir } => {
                commands::diagnose_hessian(&model, &dataset, record, step, &out_dir)
            }
            DiagnoseKind::Mahalanobis { model, train, tests, mask_points, noise_seed, config, out_dir } => {
                commands::diagnose_mahalanobis(&model, &train, &tests, mask_points, noise_seed, config.as_deref(), &out_dir)
            }
            DiagnoseKind::Sparsity { model, dataset, counts, max_records, noise_seed, config, out_dir } => {
                commands::diagnose_sparsity(&model, &dataset, &counts, max_records, noise_seed, config.as_deref(), &out_dir)
            }
            DiagnoseKind::LatentSweep { train, test, dims, mask_points, noise_seed, config, out_dir } => {
                commands::diagnose_latent_sweep(&train, &test, &dims, mask_points, noise_seed, config.as_deref(), &out_dir)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
