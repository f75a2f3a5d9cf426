//! Slotted simulation loop over a k-MPR channel.
//!
//! Every slot is processed in four steps:
//!
//! 1. arrivals with timestamps up to the slot boundary enter station queues;
//! 2. transmissions ending at this slot are finalized (success iff the frame
//!    never overlapped more than `K` concurrent transmissions);
//! 3. every station with a head-of-queue packet that is not on the air
//!    observes the number of ongoing transmissions and runs its backoff
//!    state machine; stations that decide to transmit go on air at the next
//!    slot boundary;
//! 4. if more than `K` transmissions overlap this slot, all of them are
//!    marked collided.
//!
//! Randomness comes from one master seed. Station `i` draws arrivals from
//! ChaCha8 stream `2i` and backoff counters from stream `2i + 1`, both keyed
//! by `seed_from_u64(seed)`, so results are reproducible across platforms.

use std::collections::VecDeque;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::kmpr_success;
use crate::mac::{self, BackoffPolicy, MacError, MacParams, NodeState, Packet, Phase, TxOutcome};
use crate::metrics::{Accumulator, MetricsReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("n_stations must be at least 1")]
    NoStations,
    #[error("mpr_k must be at least 1")]
    ZeroCapability,
    #[error("duration_slots ({duration}) must exceed warmup_slots ({warmup})")]
    Window { duration: u64, warmup: u64 },
    #[error("traffic load must be a finite non-negative number, got {0}")]
    Traffic(f64),
    #[error("expected {expected} arrival schedules, got {found}")]
    ArrivalSchedules { expected: usize, found: usize },
    #[error(transparent)]
    Mac(#[from] MacError),
}

/// Source of packets at each station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Traffic {
    /// Every station always has a packet queued.
    Saturated,
    /// Poisson arrivals at a fixed rate per station.
    RatePps { rate: f64 },
    /// Poisson arrivals with total offered payload equal to `u` times the
    /// single-stream channel capacity.
    Offered { u: f64 },
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_stations: usize,
    pub mpr_k: u32,
    pub policy: BackoffPolicy,
    pub mac: MacParams,
    pub traffic: Traffic,
    pub duration_slots: u64,
    pub warmup_slots: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_stations: 30,
            mpr_k: 4,
            policy: BackoffPolicy::Adaptive { k: 4, k_t: 3 },
            mac: MacParams::default(),
            traffic: Traffic::Offered { u: 0.5 },
            duration_slots: 2_000_000,
            warmup_slots: 200_000,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_stations == 0 {
            return Err(ConfigError::NoStations);
        }
        if self.mpr_k == 0 {
            return Err(ConfigError::ZeroCapability);
        }
        if self.duration_slots <= self.warmup_slots {
            return Err(ConfigError::Window {
                duration: self.duration_slots,
                warmup: self.warmup_slots,
            });
        }
        match self.traffic {
            Traffic::Saturated => {}
            Traffic::RatePps { rate: x } | Traffic::Offered { u: x } => {
                if !(x.is_finite() && x >= 0.0) {
                    return Err(ConfigError::Traffic(x));
                }
            }
        }
        self.policy.validate()?;
        self.mac.validate()?;
        Ok(())
    }

    /// Per-station Poisson rate in packets per second (0 when saturated).
    pub fn arrival_rate_pps(&self) -> f64 {
        match self.traffic {
            Traffic::Saturated => 0.0,
            Traffic::RatePps { rate } => rate,
            Traffic::Offered { u } => offered_traffic_to_rate(u, self.n_stations, &self.mac),
        }
    }

    pub fn measured_slots(&self) -> u64 {
        self.duration_slots.saturating_sub(self.warmup_slots)
    }

    /// Equal in everything but the seed.
    pub fn same_experiment(&self, other: &SimConfig) -> bool {
        SimConfig {
            seed: other.seed,
            ..self.clone()
        } == *other
    }
}

/// Per-station arrival rate for normalized offered traffic `u`.
pub fn offered_traffic_to_rate(u: f64, n_stations: usize, mac: &MacParams) -> f64 {
    u * mac.bitrate_bps / (n_stations as f64 * mac.payload_bits as f64)
}

/// Poisson arrival instants (microseconds) in `[0, horizon_us)`.
pub fn generate_arrivals<R: rand::Rng + ?Sized>(rate_pps: f64, horizon_us: f64, rng: &mut R) -> Vec<f64> {
    if rate_pps <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate_pps / 1e6).expect("positive rate");
    let mut out = Vec::with_capacity((rate_pps * horizon_us / 1e6 * 1.1) as usize + 8);
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= horizon_us {
            return out;
        }
        out.push(t);
    }
}

/// Random stream for `purpose` (0 arrivals, 1 backoff) at station `node`.
pub fn substream(seed: u64, node: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64 * 2 + purpose);
    rng
}

/// One frame on the air, occupying slots `start_slot..end_slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub owner: usize,
    pub start_slot: u64,
    pub end_slot: u64,
    pub collided: bool,
    /// 0 for the first attempt of a packet.
    pub attempt_index: u32,
}

impl TransmissionRecord {
    pub fn overlaps(&self, slot: u64) -> bool {
        self.start_slot <= slot && slot < self.end_slot
    }
}

/// Transmissions on the air during `slot`, not counting the observer's own.
pub fn ongoing_count(active: &[TransmissionRecord], slot: u64, observer: Option<usize>) -> u32 {
    active
        .iter()
        .filter(|r| r.overlaps(slot) && Some(r.owner) != observer)
        .count() as u32
}

/// Marks every transmission overlapping `slot` as collided when there are
/// more than `mpr_k` of them. Marks are never cleared.
pub fn resolve_collisions(active: &mut [TransmissionRecord], slot: u64, mpr_k: u32) {
    let concurrent = ongoing_count(active, slot, None) as usize;
    if !kmpr_success(concurrent, mpr_k as usize) {
        for r in active.iter_mut().filter(|r| r.overlaps(slot)) {
            r.collided = true;
        }
    }
}

/// A packet that left the MAC, delivered or dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletedPacket {
    pub node: usize,
    pub arrival_us: f64,
    pub service_start_slot: u64,
    pub terminal_slot: u64,
    pub delivered: bool,
}

/// State of the channel and stations after a processed slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTrace {
    pub slot: u64,
    pub ongoing: u32,
    pub phases: Vec<String>,
}

impl fmt::Display for SlotTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.slot, self.ongoing)?;
        for p in &self.phases {
            write!(f, " {p}")?;
        }
        Ok(())
    }
}

/// A single simulation run.
pub struct Simulation {
    config: SimConfig,
    airtime_slots: u64,
    difs_slots: u64,
    saturated: bool,
    nodes: Vec<NodeState>,
    arrivals: Vec<VecDeque<f64>>,
    backoff_rngs: Vec<ChaCha8Rng>,
    active: Vec<TransmissionRecord>,
    finished: Option<Vec<TransmissionRecord>>,
    completed: Option<Vec<CompletedPacket>>,
    stats: Vec<Accumulator>,
    slot: u64,
    min_counter: i64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let rate = config.arrival_rate_pps();
        let horizon_us = config.duration_slots as f64 * config.mac.slot_us;
        let arrivals = match config.traffic {
            Traffic::Saturated => vec![Vec::new(); config.n_stations],
            _ => (0..config.n_stations)
                .map(|i| generate_arrivals(rate, horizon_us, &mut substream(config.seed, i, 0)))
                .collect(),
        };
        Self::build(config, arrivals)
    }

    /// Runs with explicit arrival instants (microseconds) per station instead
    /// of generated Poisson traffic.
    pub fn with_arrivals(config: SimConfig, arrivals: Vec<Vec<f64>>) -> Result<Self, ConfigError> {
        config.validate()?;
        if arrivals.len() != config.n_stations {
            return Err(ConfigError::ArrivalSchedules {
                expected: config.n_stations,
                found: arrivals.len(),
            });
        }
        Self::build(config, arrivals)
    }

    fn build(config: SimConfig, arrivals: Vec<Vec<f64>>) -> Result<Self, ConfigError> {
        let n = config.n_stations;
        let mut nodes: Vec<NodeState> = (0..n).map(NodeState::new).collect();
        let mut stats = vec![Accumulator::default(); n];
        let saturated = config.traffic == Traffic::Saturated;
        if saturated {
            for (node, acc) in nodes.iter_mut().zip(&mut stats) {
                node.enqueue(Packet::new(0.0), 0);
                acc.arrived_total += 1;
            }
        }
        Ok(Self {
            airtime_slots: mac::frame_airtime(&config.mac).1,
            difs_slots: mac::difs_slots(&config.mac),
            saturated,
            nodes,
            arrivals: arrivals
                .into_iter()
                .map(|mut a| {
                    a.sort_by(f64::total_cmp);
                    a.into()
                })
                .collect(),
            backoff_rngs: (0..n).map(|i| substream(config.seed, i, 1)).collect(),
            active: Vec::new(),
            finished: None,
            completed: None,
            stats,
            slot: 0,
            min_counter: 0,
            config,
        })
    }

    /// Keep every finalized [`TransmissionRecord`] and [`CompletedPacket`]
    /// for later inspection.
    pub fn record_transmissions(&mut self) {
        self.finished.get_or_insert_with(Vec::new);
        self.completed.get_or_insert_with(Vec::new);
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Index of the next slot to be processed.
    pub fn current_slot(&self) -> u64 {
        self.slot
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn active(&self) -> &[TransmissionRecord] {
        &self.active
    }

    /// Finalized transmissions, if recording was enabled.
    pub fn transmissions(&self) -> Option<&[TransmissionRecord]> {
        self.finished.as_deref()
    }

    /// Packets that completed service, if recording was enabled.
    pub fn completed_packets(&self) -> Option<&[CompletedPacket]> {
        self.completed.as_deref()
    }

    /// Smallest backoff counter value observed so far (0 if never negative).
    pub fn min_counter(&self) -> i64 {
        self.min_counter
    }

    pub fn is_finished(&self) -> bool {
        self.slot >= self.config.duration_slots
    }

    fn measuring(&self) -> bool {
        self.slot >= self.config.warmup_slots
    }

    /// Processes one slot and returns the number of transmissions that were
    /// on the air during it.
    pub fn step_slot(&mut self) -> u32 {
        let now = self.slot;
        let boundary_us = now as f64 * self.config.mac.slot_us;

        // 1. arrivals
        for (i, queue) in self.arrivals.iter_mut().enumerate() {
            while queue.front().is_some_and(|&a| a <= boundary_us) {
                let a = queue.pop_front().unwrap();
                self.nodes[i].enqueue(Packet::new(a), now);
                self.stats[i].arrived_total += 1;
            }
        }

        // 2. transmissions ending now
        if self.active.iter().any(|r| r.end_slot == now) {
            self.finalize_ending(now);
        }

        // 3. sensing and backoff
        let ongoing = ongoing_count(&self.active, now, None);
        let policy = self.config.policy;
        for i in 0..self.nodes.len() {
            let node = &mut self.nodes[i];
            if node.phase == Phase::Idle || node.is_transmitting() {
                continue;
            }
            let starts = node.observe_slot(
                ongoing,
                policy,
                &self.config.mac,
                self.difs_slots,
                &mut self.backoff_rngs[i],
            );
            if let Phase::CountingDown { counter } = node.phase {
                self.min_counter = self.min_counter.min(counter);
            }
            if starts {
                let start_slot = now + 1;
                let end_slot = start_slot + self.airtime_slots;
                node.phase = Phase::Transmitting {
                    start_slot,
                    end_slot,
                };
                self.active.push(TransmissionRecord {
                    owner: i,
                    start_slot,
                    end_slot,
                    collided: false,
                    attempt_index: node.retries_used,
                });
            }
        }

        // 4. collisions during this slot
        if ongoing as usize > self.config.mpr_k as usize {
            resolve_collisions(&mut self.active, now, self.config.mpr_k);
        }

        self.slot += 1;
        ongoing
    }

    fn finalize_ending(&mut self, now: u64) {
        let measuring = self.measuring();
        let mut idx = 0;
        while idx < self.active.len() {
            if self.active[idx].end_slot != now {
                idx += 1;
                continue;
            }
            let record = self.active.swap_remove(idx);
            let owner = record.owner;
            let node = &mut self.nodes[owner];
            let acc = &mut self.stats[owner];
            if self.saturated && node.queue.len() < 2 {
                node.queue.push_back(Packet::new(now as f64 * self.config.mac.slot_us));
                acc.arrived_total += 1;
            }
            let outcome = node
                .on_transmission_result(
                    !record.collided,
                    now,
                    &self.config.mac,
                    &mut self.backoff_rngs[owner],
                )
                .expect("finalized station is transmitting");

            if measuring {
                acc.attempts += 1;
            }
            let completed = match outcome {
                TxOutcome::Delivered(p) => {
                    acc.delivered_total += 1;
                    if measuring {
                        acc.delivered += 1;
                    }
                    Some((p, true))
                }
                TxOutcome::Dropped(p) => {
                    acc.dropped_total += 1;
                    if measuring {
                        acc.dropped += 1;
                    }
                    Some((p, false))
                }
                TxOutcome::Retrying => None,
            };
            if let Some((p, delivered)) = completed {
                let start = p.service_start_slot.expect("served packet has a start");
                if measuring {
                    acc.delay_slots += now - start;
                }
                if let Some(log) = self.completed.as_mut() {
                    log.push(CompletedPacket {
                        node: owner,
                        arrival_us: p.arrival_us,
                        service_start_slot: start,
                        terminal_slot: now,
                        delivered,
                    });
                }
            }
            if let Some(log) = self.finished.as_mut() {
                log.push(record);
            }
        }
    }

    /// Phase snapshot of the slot most recently processed.
    pub fn trace(&self, ongoing: u32) -> SlotTrace {
        SlotTrace {
            slot: self.slot.saturating_sub(1),
            ongoing,
            phases: self.nodes.iter().map(|n| n.phase.code()).collect(),
        }
    }

    /// Runs to the configured duration, calling `sink` after every slot.
    pub fn run_with_trace<F: FnMut(&SlotTrace)>(&mut self, mut sink: F) -> MetricsReport {
        while !self.is_finished() {
            let ongoing = self.step_slot();
            sink(&self.trace(ongoing));
        }
        self.report()
    }

    pub fn run(&mut self) -> MetricsReport {
        while !self.is_finished() {
            self.step_slot();
        }
        self.report()
    }

    /// Metrics accumulated so far.
    pub fn report(&self) -> MetricsReport {
        let queued: Vec<u64> = self.nodes.iter().map(|n| n.queue.len() as u64).collect();
        MetricsReport::from_accumulators(&self.config, &self.stats, &queued)
    }
}

/// Runs one configuration to completion.
pub fn run_simulation(config: &SimConfig) -> Result<MetricsReport, ConfigError> {
    Ok(Simulation::new(config.clone())?.run())
}
