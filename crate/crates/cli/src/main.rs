use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cl4st_cli::commands::{self, EvaluateOptions, ExportWhat, PemsOptions, SynthOptions};
use cl4st_cli::{CliResult, ExperimentConfig, Report};
use cl4st_core::config::Variant;
use cl4st_core::data::DatasetKind;

#[derive(Parser)]
#[command(name = "cl4st", version, about = "Spatio-temporal graph forecasting with learnable contrastive augmentations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a config file; writes best.ckpt, log.ndjson and report.json.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on the test split of a dataset.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Zero each (step, node) input entry with this probability.
        #[arg(long)]
        missing_rate: Option<f64>,
        /// Corruption seed (defaults to the training seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Break errors down by node density quartile.
        #[arg(long)]
        density_bins: bool,
        /// Report path (defaults to eval_report.json next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an ablation variant (or `all`) into <out_dir>/<variant>.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: String,
    },
    /// Export attention matrices or sampled augmentations of a test window.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        what: ExportWhat,
        /// Window index within the test split.
        #[arg(long)]
        sample: usize,
        /// Dataset directory (defaults to the one used for training).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (defaults to export/ next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for augmentation sampling (defaults to the training seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        nodes: usize,
        /// Time steps (days for crime data).
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_kind, default_value = "traffic_graph")]
        kind: DatasetKind,
        #[arg(long, requires = "cols")]
        rows: Option<usize>,
        #[arg(long, requires = "rows")]
        cols: Option<usize>,
        #[arg(long, default_value_t = 4)]
        categories: usize,
        /// Write signals.csv instead of signals.bin.
        #[arg(long)]
        csv: bool,
    },
    /// Convert a PEMS .npz archive and distance edge list to a dataset directory.
    ConvertPems {
        #[arg(long)]
        npz: PathBuf,
        #[arg(long)]
        distances: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature channels to keep, e.g. `0` for flow only; all when omitted.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        interval_minutes: u32,
        #[arg(long, default_value = "2018-01-01T00:00:00")]
        start: String,
    },
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown dataset kind {s:?} (traffic_graph or crime_grid)"))
}

fn print_summary(r: &Report) {
    let mape = r.metrics.mape_percent.map_or("n/a".to_string(), |m| format!("{m:.2}%"));
    println!(
        "{} [{}]: MAE {:.4}  RMSE {:.4}  MAPE {}  (historical average MAE {:.4})",
        r.command,
        r.variant.name(),
        r.metrics.mae,
        r.metrics.rmse,
        mape,
        r.baseline.historical_average.mae
    );
}

fn beside(ckpt: &Path, name: &str) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join(name)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_summary(&commands::train(&cfg, "train")?);
        }
        Command::Evaluate {
            ckpt,
            data,
            missing_rate,
            seed,
            density_bins,
            out,
        } => {
            let opts = EvaluateOptions {
                missing_rate,
                seed,
                density_bins,
            };
            let report = commands::evaluate(&ckpt, &data, &opts)?;
            report.write(&out.unwrap_or_else(|| beside(&ckpt, "eval_report.json")))?;
            print_summary(&report);
        }
        Command::Ablate { config, variant } => {
            let cfg = ExperimentConfig::load(&config)?;
            let variants = if variant == "all" {
                Variant::ALL.to_vec()
            } else {
                vec![variant.parse::<Variant>()?]
            };
            for r in commands::ablate(&cfg, &variants)? {
                print_summary(&r);
            }
        }
        Command::Export {
            ckpt,
            what,
            sample,
            data,
            out,
            seed,
        } => {
            let out = out.unwrap_or_else(|| beside(&ckpt, "export"));
            let s = commands::export(&ckpt, what, sample, data.as_deref(), &out, seed)?;
            println!("wrote {} files to {}", s.files.len(), out.display());
        }
        Command::Synth {
            out,
            nodes,
            steps,
            seed,
            kind,
            rows,
            cols,
            categories,
            csv,
        } => {
            let opts = SynthOptions {
                kind,
                nodes,
                steps,
                seed,
                grid: rows.zip(cols),
                categories,
                csv,
            };
            commands::synth(&out, &opts)?;
            println!("wrote synthetic dataset to {}", out.display());
        }
        Command::ConvertPems {
            npz,
            distances,
            out,
            channels,
            interval_minutes,
            start,
        } => {
            let opts = PemsOptions {
                channels,
                interval_minutes,
                start,
            };
            commands::convert_pems(&npz, &distances, &out, &opts)?;
            println!("wrote dataset to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

