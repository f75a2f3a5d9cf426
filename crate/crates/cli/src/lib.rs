//! Command-line front end for the `mprsim` simulator: single runs, parameter
//! sweeps and equivalent-capability queries.
//!
//! The command functions write to any [`Write`] sink so they can be driven
//! from tests as well as from the binary.

pub mod config;
pub mod output;
pub mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use mprsim::channel::{expected_success_profile, ReceptionMatrix};
use mprsim::{k_equiv, run_simulation, MetricsReport, Simulation, TieRule};
use thiserror::Error;

pub use config::{ConfigFile, Experiment, Load, OutputFormat, PolicyKind, SimArgs};
pub use sweep::{replication_seed, run_replications, run_sweep, SweepParam, SweepRow, SweepSpec};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file or simulation parameters.
    #[error("{0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    pub param: Option<SweepParam>,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub values: Vec<f64>,
    /// Write the table here instead of standard output.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct KequivArgs {
    /// Reception matrix: row i holds the probabilities of 0..=i successes
    /// when i frames overlap.
    pub file: PathBuf,
    #[arg(long, default_value = "min")]
    pub tie: TieRule,
}

fn trace_run(config: mprsim::SimConfig, path: &PathBuf) -> Result<MetricsReport, CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# slot ongoing phase-per-node")?;
    let mut sim = Simulation::new(config).map_err(|e| CliError::Config(e.to_string()))?;
    let mut failure = None;
    let report = sim.run_with_trace(|t| {
        if failure.is_none() {
            if let Err(e) = writeln!(out, "{t}") {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    out.flush()?;
    Ok(report)
}

/// `run`: one experiment, possibly replicated. Replication `r` uses seed
/// `seed + r`; with `--trace`, the first replication's slot trace is saved.
pub fn cmd_run(args: &SimArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let (exp, _) = Experiment::from_args(args)?;
    let reports = match &exp.trace {
        None => run_replications(&exp, 0)?,
        Some(path) => {
            let mut reports = vec![trace_run(exp.sim_config(exp.seed)?, path)?];
            for r in 1..exp.replications {
                let config = exp.sim_config(replication_seed(exp.seed, 0, r))?;
                reports.push(run_simulation(&config).map_err(|e| CliError::Config(e.to_string()))?);
            }
            reports
        }
    };
    let summary = sweep::summarize(&reports)?;
    match exp.out.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => output::write_run_json(&reports, &summary, w),
        OutputFormat::Csv => output::write_summary_csv(&summary, w),
    }
}

/// `sweep`: one CSV/JSON row per value, aggregated over replications.
pub fn cmd_sweep(args: &SweepArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let (base, file) = Experiment::from_args(&args.sim)?;
    let param = match args.param {
        Some(p) => p,
        None => file
            .get::<SweepParam>("param")?
            .ok_or_else(|| CliError::Config("sweep needs --param".into()))?,
    };
    let values = if !args.values.is_empty() {
        args.values.clone()
    } else {
        match file.raw("values") {
            Some(raw) => raw
                .split([',', ' '])
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| CliError::Config(format!("invalid sweep value {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => Vec::new(),
        }
    };
    let format = base.out.unwrap_or(OutputFormat::Csv);
    let spec = SweepSpec {
        base,
        param,
        values,
    };
    let rows = run_sweep(&spec)?;

    let mut file_sink;
    let sink: &mut dyn Write = match &args.output {
        Some(path) => {
            file_sink = BufWriter::new(File::create(path)?);
            &mut file_sink
        }
        None => w,
    };
    match format {
        OutputFormat::Csv => output::write_sweep_csv(&rows, sink)?,
        OutputFormat::Json => output::write_sweep_json(&param.to_string(), &rows, sink)?,
    }
    sink.flush()?;
    Ok(())
}

/// `kequiv`: equivalent MPR capability of a reception matrix.
pub fn cmd_kequiv(args: &KequivArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.file)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.file.display())))?;
    let matrix = ReceptionMatrix::parse(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let profile: Vec<String> = expected_success_profile(&matrix)
        .iter()
        .map(|&e| output::fmt_sig(e))
        .collect();
    writeln!(w, "k_equiv = {}", k_equiv(&matrix, args.tie))?;
    writeln!(w, "expected_successes = [{}]", profile.join(", "))?;
    Ok(())
}
