use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vflhlp::experiment::{cmd_eval, cmd_grid, cmd_prepare, cmd_pretrain, cmd_train, RunConfig, Selection};
use vflhlp::federated::TrainMode;
use vflhlp::{Error, Result};

#[derive(Parser)]
#[command(name = "vflhlp", version, about = "Vertical federated learning with hybrid local pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides $VFLHLP_OUT and the config value.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to one of the configured seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one of the configured modes.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest the dataset and write the cache.
    Prepare(Common),
    /// Run local pre-training and write per-party checkpoints.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Only pre-train the passive parties.
        #[arg(long)]
        passive_only: bool,
    },
    /// Downstream training for every configured cell.
    Train(Common),
    /// Re-score saved checkpoints on the test split.
    Eval(Common),
    /// Full grid: prepare, pre-train, train, evaluate, write result tables.
    Grid(Common),
}

fn setup(c: &Common) -> Result<(RunConfig, PathBuf, Selection)> {
    let cfg = RunConfig::load(&c.config)?;
    let out = cfg.resolve_output(c.out.as_deref());
    let mode = c.mode.as_deref().map(TrainMode::parse).transpose()?;
    Ok((cfg, out, Selection { seed: c.seed, mode }))
}

fn print_cells<T: serde::Serialize>(items: &[T]) -> Result<()> {
    for item in items {
        println!("{}", serde_json::to_string(item)?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let (cfg, out, _) = setup(&c)?;
            println!("{}", cmd_prepare(&cfg, &out)?.display());
        }
        Command::Pretrain { common, passive_only } => {
            let (cfg, out, sel) = setup(&common)?;
            for p in cmd_pretrain(&cfg, &out, sel, passive_only)? {
                println!("{}", p.display());
            }
        }
        Command::Train(c) => {
            let (cfg, out, sel) = setup(&c)?;
            let cells = cmd_train(&cfg, &out, sel)?;
            print_cells(&cells)?;
            if let Some(bad) = cells.iter().find(|c| c.error.is_some()) {
                return Err(Error::Training(format!(
                    "{} cell(s) failed, first: {}",
                    cells.iter().filter(|c| c.error.is_some()).count(),
                    bad.error.as_deref().unwrap_or_default()
                )));
            }
        }
        Command::Eval(c) => {
            let (cfg, out, sel) = setup(&c)?;
            let records = cmd_eval(&cfg, &out, sel)?;
            print_cells(&records)?;
            let stale = records.iter().filter(|r| !r.reproduced).count();
            if stale > 0 {
                return Err(Error::Training(format!("{stale} checkpoint(s) do not reproduce their recorded AUC")));
            }
        }
        Command::Grid(c) => {
            let (cfg, out, _) = setup(&c)?;
            if c.seed.is_some() || c.mode.is_some() {
                log::warn!("grid runs every configured seed and mode; --seed/--mode are ignored");
            }
            let table = cmd_grid(&cfg, &out)?;
            print!("{}", table.render());
            println!("{}", Path::new(&out).join("results.csv").display());
            let failed = table.failures().count();
            if failed > 0 {
                return Err(Error::Training(format!("{failed} cell(s) failed; see results.json")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
