use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deuq::metrics::format_table;
use deuq::run::{self, EvalSplit, RunConfig};
use deuq::Error;

#[derive(Parser)]
#[command(
    name = "deuq",
    version,
    about = "Automated deep ensembles for regression uncertainty"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a model catalog with the joint architecture/hyperparameter search.
    Search {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Consume results in submission order for reproducible catalogs.
        #[arg(long)]
        deterministic: bool,
    },
    /// Greedily select an ensemble from a catalog.
    Select {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short)]
        k: Option<usize>,
    },
    /// Score the selected ensemble in original units.
    Eval {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value = "test")]
        split: EvalSplit,
    },
    /// Write plot-ready mean and variance curves for a 1-D dataset.
    ExportCurves {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Search {
            config,
            output,
            budget,
            workers,
            seed,
            epochs,
            deterministic,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(b) = budget {
                cfg.search.total_budget = b;
            }
            if let Some(w) = workers {
                cfg.search.workers = w;
            }
            if let Some(s) = seed {
                cfg.search.rng_seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.search.deterministic |= deterministic;
            if let Some(cap) = run::env_thread_cap()? {
                cfg.cap_threads(cap);
            }
            let out = output.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
                Error::Config("no output directory: pass -o or set output_dir".into())
            })?;
            let meta = run::cmd_search(&cfg, &out)?;
            println!(
                "{} models ({} failed) in {:.1}s -> {}",
                meta.budget,
                meta.num_failed,
                meta.wall_seconds,
                out.display()
            );
        }
        Command::Select { input, k } => {
            let m = run::cmd_select(&input, k)?;
            println!(
                "members {:?} (k={}), valid nll {:.4}, diversity {:.4}",
                m.member_ids, m.k, m.valid_nll, m.diversity
            );
        }
        Command::Eval { input, split } => {
            let e = run::cmd_eval(&input, split)?;
            print!("{}", format_table(&[e.ensemble, e.best_single]));
        }
        Command::ExportCurves { input, points } => {
            let rows = run::cmd_export_curves(&input, points)?;
            println!(
                "{} rows -> {}",
                rows.len(),
                input.join(run::CURVES_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = err.downcast_ref::<Error>().map_or(2, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
