//! Per-station MAC behaviour: backoff policies, contention windows, retry
//! handling and frame timing.
//!
//! The three backoff policies differ in how much the backoff counter is
//! decremented in a slot during which `i` transmissions are on the air, in
//! what counts as an idle slot, and in what the DIFS wait tolerates:
//!
//! | policy          | idle when | decrement when idle | DIFS slot when |
//! |-----------------|-----------|---------------------|----------------|
//! | conventional    | `i == 0`  | 1                   | `i == 0`       |
//! | threshold `L`   | `i <= L`  | 1                   | `i == 0`       |
//! | adaptive `K, T` | `i <= T`  | `K - i`             | `i <= T`       |
//!
//! A busy slot (not idle) freezes the countdown; the station then waits for
//! a fresh DIFS before it resumes.

use std::collections::VecDeque;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("station {node} is not transmitting")]
    NotTransmitting { node: usize },
    #[error("station {node}: transmission ends at slot {end_slot}, now is {now}")]
    TransmissionInProgress { node: usize, end_slot: u64, now: u64 },
    #[error("invalid MAC parameter: {0}")]
    InvalidParam(String),
    #[error("invalid backoff policy: {0}")]
    InvalidPolicy(String),
}

/// Backoff counter decrement rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackoffPolicy {
    /// 802.11 DCF: count down only when the medium is completely idle.
    ConventionalDcf,
    /// Count down by one whenever at most `l_t` transmissions are ongoing.
    Threshold { l_t: u32 },
    /// Count down by `k - i` whenever `i <= k_t` transmissions are ongoing.
    Adaptive { k: u32, k_t: u32 },
}

impl BackoffPolicy {
    pub fn validate(&self) -> Result<(), MacError> {
        match *self {
            BackoffPolicy::Adaptive { k, k_t } if k_t >= k => Err(MacError::InvalidPolicy(
                format!("adaptive threshold k_t={k_t} must be below k={k}"),
            )),
            _ => Ok(()),
        }
    }

    /// Largest ongoing-transmission count still treated as an idle slot.
    pub fn idle_threshold(&self) -> u32 {
        match *self {
            BackoffPolicy::ConventionalDcf => 0,
            BackoffPolicy::Threshold { l_t } => l_t,
            BackoffPolicy::Adaptive { k_t, .. } => k_t,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackoffPolicy::ConventionalDcf => "dcf",
            BackoffPolicy::Threshold { .. } => "threshold",
            BackoffPolicy::Adaptive { .. } => "adaptive",
        }
    }
}

impl fmt::Display for BackoffPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BackoffPolicy::ConventionalDcf => write!(f, "dcf"),
            BackoffPolicy::Threshold { l_t } => write!(f, "threshold(l_t={l_t})"),
            BackoffPolicy::Adaptive { k, k_t } => write!(f, "adaptive(k={k}, k_t={k_t})"),
        }
    }
}

/// Amount by which a backoff counter drops in a slot with `ongoing`
/// transmissions.
pub fn decrement_amount(policy: BackoffPolicy, ongoing: u32) -> u32 {
    match policy {
        BackoffPolicy::ConventionalDcf => u32::from(ongoing == 0),
        BackoffPolicy::Threshold { l_t } => u32::from(ongoing <= l_t),
        BackoffPolicy::Adaptive { k, k_t } => {
            if ongoing <= k_t {
                k.saturating_sub(ongoing)
            } else {
                0
            }
        }
    }
}

/// Whether a slot with `ongoing` transmissions lets the backoff countdown
/// proceed.
pub fn is_idle_slot(policy: BackoffPolicy, ongoing: u32) -> bool {
    ongoing <= policy.idle_threshold()
}

/// Whether a slot counts towards the DIFS a station must observe before
/// transmitting or resuming its countdown. Only the adaptive protocol
/// tolerates ongoing transmissions here (up to `k_t`); DCF and the threshold
/// protocol need a completely silent medium.
pub fn is_difs_idle_slot(policy: BackoffPolicy, ongoing: u32) -> bool {
    match policy {
        BackoffPolicy::Adaptive { k_t, .. } => ongoing <= k_t,
        BackoffPolicy::ConventionalDcf | BackoffPolicy::Threshold { .. } => ongoing == 0,
    }
}

/// Timing and retry parameters. Defaults are the FH-PHY values used
/// throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    pub cw_min: u32,
    pub max_backoff_stage: u32,
    pub retry_limit: u32,
    pub slot_us: f64,
    pub difs_us: f64,
    pub payload_bits: u64,
    pub mac_header_bits: u64,
    pub phy_header_bits: u64,
    pub bitrate_bps: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            cw_min: 128,
            max_backoff_stage: 5,
            retry_limit: 4,
            slot_us: 50.0,
            difs_us: 128.0,
            payload_bits: 8184,
            mac_header_bits: 272,
            phy_header_bits: 128,
            bitrate_bps: 1e6,
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Result<(), MacError> {
        let bad = |msg: &str| Err(MacError::InvalidParam(msg.to_string()));
        if self.cw_min < 1 {
            return bad("cw_min must be at least 1");
        }
        // 2^m must not overflow the window.
        if self.max_backoff_stage > 20 {
            return bad("max backoff stage must be at most 20");
        }
        if !(self.slot_us.is_finite() && self.slot_us > 0.0) {
            return bad("slot duration must be positive");
        }
        if !(self.difs_us.is_finite() && self.difs_us > 0.0) {
            return bad("DIFS must be positive");
        }
        if !(self.bitrate_bps.is_finite() && self.bitrate_bps > 0.0) {
            return bad("bitrate must be positive");
        }
        if self.frame_bits() == 0 {
            return bad("frame must contain at least one bit");
        }
        Ok(())
    }

    pub fn frame_bits(&self) -> u64 {
        self.payload_bits + self.mac_header_bits + self.phy_header_bits
    }
}

/// Contention window at backoff stage `stage`: `cw_min * 2^min(stage, m)`.
pub fn contention_window(stage: u32, params: &MacParams) -> u64 {
    u64::from(params.cw_min) << stage.min(params.max_backoff_stage)
}

/// Draws a backoff counter uniformly from `0..contention_window(stage)`.
///
/// Uses exactly one 64-bit word from `rng` (multiply-shift mapping; the bias
/// is below `cw / 2^64`).
pub fn draw_backoff<R: RngCore + ?Sized>(stage: u32, params: &MacParams, rng: &mut R) -> i64 {
    let cw = contention_window(stage, params);
    ((u128::from(rng.next_u64()) * u128::from(cw)) >> 64) as i64
}

/// Frame airtime in microseconds and in whole slots (rounded up).
pub fn frame_airtime(params: &MacParams) -> (f64, u64) {
    let us = params.frame_bits() as f64 / params.bitrate_bps * 1e6;
    (us, ceil_slots(us, params.slot_us))
}

/// DIFS rounded up to whole slots, at least one.
pub fn difs_slots(params: &MacParams) -> u64 {
    ceil_slots(params.difs_us, params.slot_us).max(1)
}

fn ceil_slots(us: f64, slot_us: f64) -> u64 {
    // Snap ratios that are integral up to rounding noise, e.g. 4292/50 after
    // a division by the bitrate.
    let ratio = us / slot_us;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 {
        nearest as u64
    } else {
        ratio.ceil() as u64
    }
}

/// A packet in a station's queue. Times are slot indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub arrival_us: f64,
    /// Slot at which the packet became head-of-queue.
    pub service_start_slot: Option<u64>,
}

impl Packet {
    pub fn new(arrival_us: f64) -> Self {
        Self {
            arrival_us,
            service_start_slot: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Nothing to send.
    Idle,
    /// Waiting for DIFS worth of idle slots. A head-of-queue packet that has
    /// never met a busy medium has no counter and transmits right after DIFS.
    Sensing {
        difs_observed: u64,
        counter: Option<i64>,
    },
    CountingDown { counter: i64 },
    /// On air during `start_slot..end_slot`.
    Transmitting { start_slot: u64, end_slot: u64 },
}

impl Phase {
    /// Short code used in slot traces.
    pub fn code(&self) -> String {
        match *self {
            Phase::Idle => "I".to_string(),
            Phase::Sensing { difs_observed, .. } => format!("S{difs_observed}"),
            Phase::CountingDown { counter } => format!("C{counter}"),
            Phase::Transmitting { .. } => "T".to_string(),
        }
    }
}

/// What happened to the head-of-queue packet after a transmission ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TxOutcome {
    Delivered(Packet),
    Retrying,
    Dropped(Packet),
}

/// Per-station MAC state machine.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub phase: Phase,
    pub backoff_stage: u32,
    pub retries_used: u32,
    pub queue: VecDeque<Packet>,
}

impl NodeState {
    pub fn new(node_id: usize) -> Self {
        Self {
            node_id,
            phase: Phase::Idle,
            backoff_stage: 0,
            retries_used: 0,
            queue: VecDeque::new(),
        }
    }

    pub fn head(&self) -> Option<&Packet> {
        self.queue.front()
    }

    pub fn is_transmitting(&self) -> bool {
        matches!(self.phase, Phase::Transmitting { .. })
    }

    /// Hands an arriving packet to the MAC at slot `now`. A packet reaching
    /// an idle station starts DIFS sensing immediately, without a counter.
    pub fn enqueue(&mut self, mut packet: Packet, now: u64) {
        if self.phase == Phase::Idle {
            debug_assert!(self.queue.is_empty());
            packet.service_start_slot = Some(now);
            self.phase = Phase::Sensing {
                difs_observed: 0,
                counter: None,
            };
        }
        self.queue.push_back(packet);
    }

    /// Carrier sensing for one slot in which `ongoing` transmissions are on
    /// the air. Returns `true` if the station starts transmitting at the next
    /// slot boundary; the caller then moves it to [`Phase::Transmitting`].
    pub fn observe_slot<R: RngCore + ?Sized>(
        &mut self,
        ongoing: u32,
        policy: BackoffPolicy,
        params: &MacParams,
        difs_slots: u64,
        rng: &mut R,
    ) -> bool {
        let idle = is_idle_slot(policy, ongoing);
        let difs_idle = is_difs_idle_slot(policy, ongoing);
        match self.phase {
            Phase::Idle | Phase::Transmitting { .. } => false,
            Phase::Sensing {
                difs_observed,
                counter,
            } => {
                if !difs_idle {
                    // A fresh packet meeting a busy medium defers with a
                    // random backoff once the medium frees up.
                    let counter =
                        counter.or_else(|| Some(draw_backoff(self.backoff_stage, params, rng)));
                    self.phase = Phase::Sensing {
                        difs_observed: 0,
                        counter,
                    };
                    return false;
                }
                let observed = difs_observed + 1;
                if observed < difs_slots {
                    self.phase = Phase::Sensing {
                        difs_observed: observed,
                        counter,
                    };
                    return false;
                }
                match counter {
                    None => true,
                    Some(c) if c <= 0 => true,
                    Some(c) => {
                        self.phase = Phase::CountingDown { counter: c };
                        false
                    }
                }
            }
            Phase::CountingDown { counter } => {
                if !idle {
                    // frozen; resume after another DIFS
                    self.phase = Phase::Sensing {
                        difs_observed: 0,
                        counter: Some(counter),
                    };
                    return false;
                }
                let counter = counter - i64::from(decrement_amount(policy, ongoing));
                self.phase = Phase::CountingDown { counter };
                counter <= 0
            }
        }
    }

    /// Applies the result of the transmission that ended at slot `now`.
    ///
    /// On success or drop the head packet leaves the queue; the next packet,
    /// if any, becomes head-of-queue at `now` and defers with a fresh
    /// stage-0 backoff. On a retryable failure the stage is raised (capped at
    /// `m`) and a new counter is drawn from the doubled window.
    pub fn on_transmission_result<R: RngCore + ?Sized>(
        &mut self,
        success: bool,
        now: u64,
        params: &MacParams,
        rng: &mut R,
    ) -> Result<TxOutcome, MacError> {
        let Phase::Transmitting { end_slot, .. } = self.phase else {
            return Err(MacError::NotTransmitting { node: self.node_id });
        };
        if end_slot > now {
            return Err(MacError::TransmissionInProgress {
                node: self.node_id,
                end_slot,
                now,
            });
        }

        if !success && self.retries_used < params.retry_limit {
            self.retries_used += 1;
            self.backoff_stage = (self.backoff_stage + 1).min(params.max_backoff_stage);
            self.phase = Phase::Sensing {
                difs_observed: 0,
                counter: Some(draw_backoff(self.backoff_stage, params, rng)),
            };
            return Ok(TxOutcome::Retrying);
        }

        let packet = self
            .queue
            .pop_front()
            .expect("a transmitting station has a head-of-queue packet");
        self.backoff_stage = 0;
        self.retries_used = 0;
        match self.queue.front_mut() {
            Some(next) => {
                next.service_start_slot = Some(now);
                self.phase = Phase::Sensing {
                    difs_observed: 0,
                    counter: Some(draw_backoff(0, params, rng)),
                };
            }
            None => self.phase = Phase::Idle,
        }
        Ok(if success {
            TxOutcome::Delivered(packet)
        } else {
            TxOutcome::Dropped(packet)
        })
    }
}
