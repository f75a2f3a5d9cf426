//! Experiment configuration: command-line flags layered over an optional
//! `key = value` file whose keys mirror the flag names.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use mprsim::{BackoffPolicy, MacParams, SimConfig, Traffic};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Dcf,
    Threshold,
    Adaptive,
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

/// Flags shared by `run` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    /// Experiment file with `key = value` lines; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    /// MPR capability of the channel.
    #[arg(long)]
    pub k: Option<u32>,
    /// Adaptive protocol threshold (default k - 1).
    #[arg(long)]
    pub kt: Option<u32>,
    /// Threshold protocol threshold (default k - 1).
    #[arg(long)]
    pub lt: Option<u32>,
    /// Number of stations.
    #[arg(long)]
    pub n: Option<usize>,
    /// Normalized offered traffic.
    #[arg(long, conflicts_with_all = ["rate_pps", "saturated"])]
    pub u: Option<f64>,
    /// Poisson arrival rate per station, packets per second.
    #[arg(long = "rate-pps", conflicts_with = "saturated")]
    pub rate_pps: Option<f64>,
    #[arg(long)]
    pub saturated: bool,
    #[arg(long)]
    pub cwmin: Option<u32>,
    /// Maximum backoff stage.
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long = "retry-limit")]
    pub retry_limit: Option<u32>,
    #[arg(long = "slot-us")]
    pub slot_us: Option<f64>,
    #[arg(long = "difs-us")]
    pub difs_us: Option<f64>,
    #[arg(long = "payload-bits")]
    pub payload_bits: Option<u64>,
    #[arg(long)]
    pub bitrate: Option<f64>,
    #[arg(long = "duration-slots")]
    pub duration_slots: Option<u64>,
    /// Default: 10% of the duration.
    #[arg(long = "warmup-slots")]
    pub warmup_slots: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Write the slot trace of the first replication to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub out: Option<OutputFormat>,
}

const KNOWN_KEYS: &[&str] = &[
    "policy",
    "k",
    "kt",
    "lt",
    "n",
    "u",
    "rate-pps",
    "saturated",
    "cwmin",
    "m",
    "retry-limit",
    "slot-us",
    "difs-us",
    "payload-bits",
    "bitrate",
    "duration-slots",
    "warmup-slots",
    "seed",
    "replications",
    "trace",
    "out",
    "param",
    "values",
];

/// Parsed experiment file. Keys are normalized to the flag spelling
/// (`retry_limit` and `retry-limit` are the same key).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {lineno}: expected `key = value`, got {raw:?}"))
            })?;
            let key = key.trim().trim_start_matches("--").replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("line {lineno}: unknown key {key:?}")));
            }
            if entries
                .insert(key.clone(), (lineno, value.trim().to_string()))
                .is_some()
            {
                return Err(CliError::Config(format!("line {lineno}: duplicate key {key:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|e| {
                CliError::Config(format!("line {line}: invalid value {value:?} for {key}: {e}"))
            }),
        }
    }
}

/// Flag value if given, otherwise the file's.
fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// Offered load before conversion to a [`Traffic`] value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    Offered(f64),
    RatePps(f64),
    Saturated,
}

/// A fully merged experiment description. Thresholds stay optional so that
/// they can track `k - 1` when `k` is swept.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub policy: PolicyKind,
    pub k: u32,
    pub kt: Option<u32>,
    pub lt: Option<u32>,
    pub n: usize,
    pub load: Load,
    pub mac: MacParams,
    pub duration_slots: u64,
    pub warmup_slots: Option<u64>,
    pub seed: u64,
    pub replications: usize,
    pub trace: Option<PathBuf>,
    pub out: Option<OutputFormat>,
}

impl Default for Experiment {
    fn default() -> Self {
        let base = SimConfig::default();
        Self {
            policy: PolicyKind::Adaptive,
            k: base.mpr_k,
            kt: None,
            lt: None,
            n: base.n_stations,
            load: Load::Offered(0.5),
            mac: base.mac,
            duration_slots: base.duration_slots,
            warmup_slots: None,
            seed: base.seed,
            replications: 1,
            trace: None,
            out: None,
        }
    }
}

impl Experiment {
    /// Merges flags over the optional config file over defaults.
    pub fn from_args(args: &SimArgs) -> Result<(Self, ConfigFile), CliError> {
        let file = match &args.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let d = Experiment::default();

        let load = if let Some(u) = args.u {
            Load::Offered(u)
        } else if let Some(r) = args.rate_pps {
            Load::RatePps(r)
        } else if args.saturated {
            Load::Saturated
        } else {
            let saturated = file.get::<bool>("saturated")?.unwrap_or(false);
            let u = file.get::<f64>("u")?;
            let rate = file.get::<f64>("rate-pps")?;
            match (u, rate, saturated) {
                (Some(u), None, false) => Load::Offered(u),
                (None, Some(r), false) => Load::RatePps(r),
                (None, None, true) => Load::Saturated,
                (None, None, false) => d.load,
                _ => {
                    return Err(CliError::Config(
                        "config file sets more than one of u, rate-pps, saturated".into(),
                    ))
                }
            }
        };

        let mac = MacParams {
            cw_min: pick(args.cwmin, &file, "cwmin")?.unwrap_or(d.mac.cw_min),
            max_backoff_stage: pick(args.m, &file, "m")?.unwrap_or(d.mac.max_backoff_stage),
            retry_limit: pick(args.retry_limit, &file, "retry-limit")?.unwrap_or(d.mac.retry_limit),
            slot_us: pick(args.slot_us, &file, "slot-us")?.unwrap_or(d.mac.slot_us),
            difs_us: pick(args.difs_us, &file, "difs-us")?.unwrap_or(d.mac.difs_us),
            payload_bits: pick(args.payload_bits, &file, "payload-bits")?.unwrap_or(d.mac.payload_bits),
            bitrate_bps: pick(args.bitrate, &file, "bitrate")?.unwrap_or(d.mac.bitrate_bps),
            ..d.mac
        };

        let exp = Experiment {
            policy: pick(args.policy, &file, "policy")?.unwrap_or(d.policy),
            k: pick(args.k, &file, "k")?.unwrap_or(d.k),
            kt: pick(args.kt, &file, "kt")?,
            lt: pick(args.lt, &file, "lt")?,
            n: pick(args.n, &file, "n")?.unwrap_or(d.n),
            load,
            mac,
            duration_slots: pick(args.duration_slots, &file, "duration-slots")?.unwrap_or(d.duration_slots),
            warmup_slots: pick(args.warmup_slots, &file, "warmup-slots")?,
            seed: pick(args.seed, &file, "seed")?.unwrap_or(d.seed),
            replications: pick(args.replications, &file, "replications")?.unwrap_or(1),
            trace: pick(args.trace.clone(), &file, "trace")?,
            out: pick(args.out, &file, "out")?,
        };
        if exp.replications == 0 {
            return Err(CliError::Config("replications must be at least 1".into()));
        }
        Ok((exp, file))
    }

    pub fn backoff_policy(&self) -> Result<BackoffPolicy, CliError> {
        let default_threshold = self.k.saturating_sub(1);
        Ok(match self.policy {
            PolicyKind::Dcf => BackoffPolicy::ConventionalDcf,
            PolicyKind::Threshold => BackoffPolicy::Threshold {
                l_t: self.lt.unwrap_or(default_threshold),
            },
            PolicyKind::Adaptive => BackoffPolicy::Adaptive {
                k: self.k,
                k_t: self.kt.unwrap_or(default_threshold),
            },
        })
    }

    /// Validated simulator configuration for `seed`.
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, CliError> {
        let traffic = match self.load {
            Load::Offered(u) => Traffic::Offered { u },
            Load::RatePps(rate) => Traffic::RatePps { rate },
            Load::Saturated => Traffic::Saturated,
        };
        let config = SimConfig {
            n_stations: self.n,
            mpr_k: self.k,
            policy: self.backoff_policy()?,
            mac: self.mac,
            traffic,
            duration_slots: self.duration_slots,
            warmup_slots: self.warmup_slots.unwrap_or(self.duration_slots / 10),
            seed,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}
