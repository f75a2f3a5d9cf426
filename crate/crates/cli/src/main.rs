use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mprsim_cli::{cmd_kequiv, cmd_run, cmd_sweep, CliError, KequivArgs, SimArgs, SweepArgs};

/// Slotted CSMA/CA simulator for multi-packet reception channels.
#[derive(Parser)]
#[command(name = "mprsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its metrics report.
    Run(SimArgs),
    /// Sweep one parameter and print a table of aggregated metrics.
    Sweep(SweepArgs),
    /// Equivalent MPR capability of a reception matrix file.
    Kequiv(KequivArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    // Buffer everything so a failing command leaves standard output empty.
    let mut buf = Vec::new();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args, &mut buf),
        Command::Sweep(args) => cmd_sweep(args, &mut buf),
        Command::Kequiv(args) => cmd_kequiv(args, &mut buf),
    };
    let result = result.and_then(|()| {
        let mut stdout = io::stdout().lock();
        stdout.write_all(&buf)?;
        stdout.flush().map_err(CliError::from)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mprsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
