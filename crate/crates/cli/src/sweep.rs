//! Parameter sweeps with seeded replications, run in parallel.

use std::fmt;
use std::str::FromStr;

use clap::ValueEnum;
use mprsim::{aggregate_replications, run_simulation, MetricsReport, ReplicationSummary};
use rayon::prelude::*;

use crate::config::{Experiment, Load, PolicyKind};
use crate::CliError;

/// Seed offset between consecutive sweep points.
pub const SEED_STRIDE: u64 = 10_007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "u")]
    U,
    #[value(name = "n_stations", alias = "n")]
    NStations,
    #[value(name = "mpr_k", alias = "k")]
    MprK,
    #[value(name = "threshold", alias = "kt", alias = "lt")]
    Threshold,
    #[value(name = "cw_min", alias = "cwmin")]
    CwMin,
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_possible_value().expect("no skipped variants");
        f.write_str(v.get_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Experiment,
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub swept_value: f64,
    pub summary: ReplicationSummary,
}

/// Seed of replication `r` at sweep point `s`.
pub fn replication_seed(master: u64, point: usize, replication: usize) -> u64 {
    master
        .wrapping_add((point as u64).wrapping_mul(SEED_STRIDE))
        .wrapping_add(replication as u64)
}

fn integral<T: TryFrom<u64>>(param: SweepParam, v: f64) -> Result<T, CliError> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(CliError::Config(format!(
            "sweep value {v} for {param} must be a non-negative integer"
        )));
    }
    T::try_from(v as u64)
        .map_err(|_| CliError::Config(format!("sweep value {v} for {param} is out of range")))
}

/// The experiment at one sweep point.
pub fn apply(base: &Experiment, param: SweepParam, value: f64) -> Result<Experiment, CliError> {
    let mut exp = base.clone();
    match param {
        SweepParam::U => exp.load = Load::Offered(value),
        SweepParam::NStations => exp.n = integral(param, value)?,
        // Unset thresholds keep following k - 1.
        SweepParam::MprK => exp.k = integral(param, value)?,
        SweepParam::Threshold => match exp.policy {
            PolicyKind::Adaptive => exp.kt = Some(integral(param, value)?),
            PolicyKind::Threshold => exp.lt = Some(integral(param, value)?),
            PolicyKind::Dcf => {
                return Err(CliError::Config(
                    "a threshold sweep needs the threshold or adaptive policy".into(),
                ))
            }
        },
        SweepParam::CwMin => exp.mac.cw_min = integral(param, value)?,
    }
    Ok(exp)
}

/// Runs `exp.replications` replications with seeds `seed + point·stride + r`.
pub fn run_replications(exp: &Experiment, point: usize) -> Result<Vec<MetricsReport>, CliError> {
    let configs = (0..exp.replications)
        .map(|r| exp.sim_config(replication_seed(exp.seed, point, r)))
        .collect::<Result<Vec<_>, _>>()?;
    configs
        .par_iter()
        .map(|c| run_simulation(c).map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

pub fn summarize(reports: &[MetricsReport]) -> Result<ReplicationSummary, CliError> {
    aggregate_replications(reports).map_err(|e| CliError::Internal(e.to_string()))
}

/// Every configuration is validated before any simulation starts; results
/// come back in sweep order regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, CliError> {
    if spec.values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let points = spec
        .values
        .iter()
        .map(|&v| apply(&spec.base, spec.param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for (s, exp) in points.iter().enumerate() {
        for r in 0..exp.replications {
            jobs.push((s, exp.sim_config(replication_seed(exp.seed, s, r))?));
        }
    }
    let reports = jobs
        .par_iter()
        .map(|(s, c)| run_simulation(c).map(|rep| (*s, rep)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut rows = Vec::with_capacity(points.len());
    for (s, &value) in spec.values.iter().enumerate() {
        let group: Vec<MetricsReport> = reports
            .iter()
            .filter(|(i, _)| *i == s)
            .map(|(_, r)| r.clone())
            .collect();
        rows.push(SweepRow {
            swept_value: value,
            summary: summarize(&group)?,
        });
    }
    Ok(rows)
}
