//! Run statistics: normalized throughput, MAC delay and transmission
//! efficiency, plus aggregation over replications.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimConfig;

/// Delivered payload bits as a fraction of single-stream capacity over
/// `sim_time_us`. Ranges over `0..=K` on a k-MPR channel.
pub fn normalized_throughput(delivered_payload_bits: f64, sim_time_us: f64, bitrate_bps: f64) -> f64 {
    assert!(sim_time_us > 0.0, "measurement window must be positive");
    delivered_payload_bits / (bitrate_bps * sim_time_us / 1e6)
}

/// Time from head-of-queue to successful completion or drop.
pub fn mac_delay(service_start_us: f64, terminal_us: f64) -> f64 {
    debug_assert!(terminal_us >= service_start_us);
    terminal_us - service_start_us
}

/// Successful transmissions per attempt; 1 when nothing was attempted.
pub fn transmission_efficiency(delivered: u64, attempts: u64) -> f64 {
    debug_assert!(delivered <= attempts || attempts == 0);
    if attempts == 0 {
        1.0
    } else {
        delivered as f64 / attempts as f64
    }
}

/// Raw per-station counters, filled by the engine.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Accumulator {
    pub delivered: u64,
    pub dropped: u64,
    pub attempts: u64,
    /// Sum of MAC delays of delivered and dropped packets, in slots.
    pub delay_slots: u64,
    /// Packets handed to the MAC over the whole run (including warm-up).
    pub arrived_total: u64,
    pub delivered_total: u64,
    pub dropped_total: u64,
}

impl Accumulator {
    pub fn completed(&self) -> u64 {
        self.delivered + self.dropped
    }
}

/// Packet conservation over the whole run: every packet handed to the MAC
/// is delivered, dropped, or still queued at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketLedger {
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued: u64,
}

impl PacketLedger {
    pub fn balanced(&self) -> bool {
        self.arrived == self.delivered + self.dropped + self.queued
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: usize,
    pub normalized_throughput: f64,
    pub mean_mac_delay_us: f64,
    pub transmission_efficiency_eta: f64,
    pub delivered: u64,
    pub dropped: u64,
    pub attempts: u64,
    pub packets: PacketLedger,
}

/// Metrics of a single simulation run, measured after warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: SimConfig,
    pub normalized_throughput: f64,
    pub mean_mac_delay_us: f64,
    pub mean_mac_delay_ms: f64,
    pub transmission_efficiency_eta: f64,
    pub delivered: u64,
    pub dropped: u64,
    pub attempts: u64,
    /// Length of the measurement window.
    pub sim_time_us: f64,
    pub packets: PacketLedger,
    pub per_node: Vec<NodeReport>,
}

impl MetricsReport {
    /// Builds a report from per-station accumulators. `queued` holds each
    /// station's queue length at the end of the run.
    pub fn from_accumulators(config: &SimConfig, accs: &[Accumulator], queued: &[u64]) -> Self {
        let mac = &config.mac;
        let window_us = config.measured_slots() as f64 * mac.slot_us;
        let payload = mac.payload_bits as f64;
        let summarize = |delivered: u64, dropped: u64, attempts: u64, delay_slots: u64| {
            let completed = delivered + dropped;
            let mean_delay = if completed == 0 {
                0.0
            } else {
                delay_slots as f64 * mac.slot_us / completed as f64
            };
            (
                normalized_throughput(delivered as f64 * payload, window_us, mac.bitrate_bps),
                mean_delay,
                transmission_efficiency(delivered, attempts),
            )
        };

        let per_node: Vec<NodeReport> = accs
            .iter()
            .zip(queued)
            .enumerate()
            .map(|(node_id, (a, &q))| {
                let (s, d, eta) = summarize(a.delivered, a.dropped, a.attempts, a.delay_slots);
                NodeReport {
                    node_id,
                    normalized_throughput: s,
                    mean_mac_delay_us: d,
                    transmission_efficiency_eta: eta,
                    delivered: a.delivered,
                    dropped: a.dropped,
                    attempts: a.attempts,
                    packets: PacketLedger {
                        arrived: a.arrived_total,
                        delivered: a.delivered_total,
                        dropped: a.dropped_total,
                        queued: q,
                    },
                }
            })
            .collect();

        let delivered = accs.iter().map(|a| a.delivered).sum();
        let dropped = accs.iter().map(|a| a.dropped).sum();
        let attempts = accs.iter().map(|a| a.attempts).sum();
        let delay_slots = accs.iter().map(|a| a.delay_slots).sum();
        let (s, d, eta) = summarize(delivered, dropped, attempts, delay_slots);
        let packets = PacketLedger {
            arrived: accs.iter().map(|a| a.arrived_total).sum(),
            delivered: accs.iter().map(|a| a.delivered_total).sum(),
            dropped: accs.iter().map(|a| a.dropped_total).sum(),
            queued: queued.iter().sum(),
        };

        MetricsReport {
            config: config.clone(),
            normalized_throughput: s,
            mean_mac_delay_us: d,
            mean_mac_delay_ms: d / 1000.0,
            transmission_efficiency_eta: eta,
            delivered,
            dropped,
            attempts,
            sim_time_us: window_us,
            packets,
            per_node,
        }
    }

    /// Flat `key = value` rendering of the aggregate fields.
    pub fn to_key_values(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("policy", c.policy.to_string());
        kv("n_stations", c.n_stations.to_string());
        kv("mpr_k", c.mpr_k.to_string());
        kv("seed", c.seed.to_string());
        kv("normalized_throughput", self.normalized_throughput.to_string());
        kv("mean_mac_delay_us", self.mean_mac_delay_us.to_string());
        kv(
            "transmission_efficiency_eta",
            self.transmission_efficiency_eta.to_string(),
        );
        kv("delivered", self.delivered.to_string());
        kv("dropped", self.dropped.to_string());
        kv("attempts", self.attempts.to_string());
        kv("sim_time_us", self.sim_time_us.to_string());
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("no reports to aggregate")]
    Empty,
    #[error("report {index} was produced by a different configuration")]
    ConfigMismatch { index: usize },
}

/// Mean and sample standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Order-independent: values are summed in sorted order.
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let std = if sorted.len() < 2 {
            0.0
        } else {
            let mut dev: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }

    /// Root mean square of two standard deviations.
    pub fn pooled_std(&self, other: &Stat) -> f64 {
        ((self.std * self.std + other.std * other.std) / 2.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replications: usize,
    pub throughput: Stat,
    pub delay_us: Stat,
    pub eta: Stat,
    pub dropped: Stat,
    pub delivered: Stat,
    pub attempts: Stat,
}

/// Per-metric mean and sample standard deviation across replications that
/// differ only in their seed.
pub fn aggregate_replications(reports: &[MetricsReport]) -> Result<ReplicationSummary, AggregateError> {
    let first = reports.first().ok_or(AggregateError::Empty)?;
    if let Some(index) = reports
        .iter()
        .position(|r| !r.config.same_experiment(&first.config))
    {
        return Err(AggregateError::ConfigMismatch { index });
    }
    let stat = |f: fn(&MetricsReport) -> f64| {
        Stat::of(&reports.iter().map(f).collect::<Vec<_>>())
    };
    Ok(ReplicationSummary {
        replications: reports.len(),
        throughput: stat(|r| r.normalized_throughput),
        delay_us: stat(|r| r.mean_mac_delay_us),
        eta: stat(|r| r.transmission_efficiency_eta),
        dropped: stat(|r| r.dropped as f64),
        delivered: stat(|r| r.delivered as f64),
        attempts: stat(|r| r.attempts as f64),
    })
}
