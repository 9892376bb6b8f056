use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hmnet::app::{self, Overrides, Sweep};
use hmnet::selfcheck::Faults;
use hmnet::train::MetricReport;
use hmnet::Error;

#[derive(Parser)]
#[command(name = "hmnet", version, about = "Hierarchical memorizing network for multivariate forecasting")]
struct Cli {
    /// Run configuration (TOML). Defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports, checkpoints and caches.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Independent runs executed in parallel by the sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and write its window cache.
    Ingest,
    /// Train, checkpoint and test one model per horizon.
    Train,
    /// Test a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Full model and the three ablations.
    Ablate,
    /// Full and no-denoise models under injected input noise.
    Noise,
    /// Memory size and top-K sweep.
    Memsweep,
    /// Gradient, retrieval, memory and shape checks.
    Selfcheck {
        #[arg(long, hide = true)]
        corrupt_mask: bool,
    },
}

fn print_reports(reports: &[MetricReport]) {
    println!("{:<14} {:>4} {:<32} {:>10} {:>10} {:>10} {:>10}", "dataset", "H", "variant", "mse", "mae", "mse(std)", "mae(std)");
    for r in reports {
        println!(
            "{:<14} {:>4} {:<32} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            r.dataset, r.horizon, r.variant, r.mse, r.mae, r.mse_standardized, r.mae_standardized
        );
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    if let Command::Selfcheck { corrupt_mask } = cli.command {
        let report = app::cmd_selfcheck(Faults { corrupt_diagonal: corrupt_mask });
        for c in &report.checks {
            println!("{c}");
        }
        // A failed check is a validation outcome.
        return Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) });
    }
    let overrides = Overrides { out: cli.out, seed: cli.seed, jobs: cli.jobs, horizon: cli.horizon };
    let cfg = app::resolve_config(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Ingest => {
            let s = app::ingest(&cfg)?;
            println!("dataset {}: {} rows x {} variables", s.dataset, s.rows, s.variables);
            println!("windows: train {} / val {} / test {}", s.train_windows, s.val_windows, s.test_windows);
            println!("cache {} sha256 {}", s.cache.display(), s.checksum);
        }
        Command::Train => print_reports(&app::cmd_train(&cfg)?),
        Command::Eval { checkpoint } => print_reports(&app::cmd_eval(&cfg, checkpoint.as_deref())?),
        Command::Ablate => print_reports(&app::cmd_sweep(&cfg, Sweep::Ablate)?),
        Command::Noise => print_reports(&app::cmd_sweep(&cfg, Sweep::Noise)?),
        Command::Memsweep => print_reports(&app::cmd_sweep(&cfg, Sweep::Memory)?),
        Command::Selfcheck { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}
