use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fl_ntk::commands;
use fl_ntk::config::{parse_seeds, RunConfig};
use fl_ntk::error::{exit, CliError};

/// Federated averaging of wide two-layer ReLU networks, with kernel and
/// convergence-bound audits.
#[derive(Parser)]
#[command(name = "fl-ntk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets and client partitions.
    GenData(Common),
    /// Export H_inf and H(0) with their spectra.
    Kernel(Common),
    /// Run federated training and audit the recorded traces.
    Train(Common),
    /// Rounds-to-eps for each client count in `clients_list`.
    SweepClients(Common),
    /// Replay and re-audit an existing `train` output directory.
    Verify { dir: PathBuf },
}

#[derive(Args)]
struct Common {
    /// key=value or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seeds, e.g. `0,1,2` or `0-4`.
    #[arg(long)]
    seed: Option<String>,
    /// loss-only, bounds or full-states.
    #[arg(long)]
    record: Option<String>,
    /// Override any configuration key, e.g. `--set width=4096`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seeds) = &self.seed {
            cfg.seeds = parse_seeds(seeds)?;
        }
        if let Some(level) = &self.record {
            cfg.set("record", level)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c.resolve()?, &c.out),
        Command::Kernel(c) => commands::kernel(&c.resolve()?, &c.out),
        Command::Train(c) => commands::train(&c.resolve()?, &c.out),
        Command::SweepClients(c) => commands::sweep_clients(&c.resolve()?, &c.out),
        Command::Verify { dir } => commands::verify(&dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
