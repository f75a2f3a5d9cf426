//! Slotted simulator for IEEE 802.11 DCF and its backoff variants for
//! multi-packet reception (MPR) channels.
//!
//! * [`channel`]: k-MPR and generalized reception-matrix channel models.
//! * [`mac`]: backoff policies and the per-station state machine.
//! * [`engine`]: the slot loop, traffic generation and collision handling.
//! * [`metrics`]: throughput, MAC delay, transmission efficiency.
//!
//! ```
//! use mprsim::{run_simulation, BackoffPolicy, SimConfig, Traffic};
//!
//! let config = SimConfig {
//!     n_stations: 10,
//!     policy: BackoffPolicy::Adaptive { k: 4, k_t: 3 },
//!     traffic: Traffic::Offered { u: 0.3 },
//!     duration_slots: 100_000,
//!     warmup_slots: 10_000,
//!     ..SimConfig::default()
//! };
//! let report = run_simulation(&config).unwrap();
//! assert!(report.normalized_throughput > 0.0);
//! ```

pub mod channel;
pub mod engine;
pub mod mac;
pub mod metrics;

pub use channel::{k_equiv, ChannelError, ChannelModel, ReceptionMatrix, TieRule};
pub use engine::{run_simulation, CompletedPacket, ConfigError, SimConfig, Simulation, SlotTrace, Traffic, TransmissionRecord};
pub use mac::{BackoffPolicy, MacParams};
pub use metrics::{aggregate_replications, MetricsReport, ReplicationSummary, Stat};
