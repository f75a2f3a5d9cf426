//! Hand-derived and statistical oracles for the simulator.

use mprsim::engine::{generate_arrivals, substream, CompletedPacket};
use mprsim::mac::{contention_window, draw_backoff};
use mprsim::metrics::normalized_throughput;
use mprsim::{BackoffPolicy, MacParams, MetricsReport, SimConfig, Simulation, Traffic, TransmissionRecord};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn explicit(n: usize, k: u32, policy: BackoffPolicy, duration: u64) -> SimConfig {
    SimConfig {
        n_stations: n,
        mpr_k: k,
        policy,
        traffic: Traffic::RatePps { rate: 0.0 },
        duration_slots: duration,
        warmup_slots: 0,
        ..SimConfig::default()
    }
}

fn assert_conserved(r: &MetricsReport) {
    assert!(r.packets.balanced(), "aggregate ledger {:?}", r.packets);
    for n in &r.per_node {
        assert!(n.packets.balanced(), "node {} ledger {:?}", n.node_id, n.packets);
    }
}

fn trace_lines(sim: &mut Simulation) -> (Vec<String>, MetricsReport) {
    let mut lines = Vec::new();
    let report = sim.run_with_trace(|t| lines.push(t.to_string()));
    (lines, report)
}

#[test]
fn backoff_draws_are_uniform() {
    let params = MacParams::default();
    let mut rng = substream(11, 0, 1);
    let mut counts = [0u64; 128];
    let draws = 1_000_000;
    for _ in 0..draws {
        counts[draw_backoff(0, &params, &mut rng) as usize] += 1;
    }
    let expected = draws as f64 / 128.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(127.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 = {chi2}, p = {p}");
}

#[test]
fn stage_five_draws_span_window() {
    let params = MacParams::default();
    assert_eq!(contention_window(5, &params), 4096);
    let mut rng = substream(12, 0, 1);
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for _ in 0..1_000_000 {
        let d = draw_backoff(5, &params, &mut rng);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    assert_eq!((lo, hi), (0, 4095));
}

#[test]
fn poisson_counts_match_rate() {
    // rate 20 pps over 50 s: mean 1000, sigma sqrt(1000)
    let (rate, horizon_us) = (20.0, 50e6);
    let reps = 100;
    let total: usize = (0..reps)
        .map(|r| generate_arrivals(rate, horizon_us, &mut substream(r, 0, 0)).len())
        .sum();
    let mean = total as f64 / reps as f64;
    let expected = rate * horizon_us / 1e6;
    let sigma_of_mean = expected.sqrt() / (reps as f64).sqrt();
    assert!(
        (mean - expected).abs() < 3.0 * sigma_of_mean,
        "mean {mean} vs {expected}"
    );
}

/// Two stations, K = 2, adaptive K_t = 1. Both packets arrive at 30 us, take
/// effect at slot 1, sense DIFS during slots 1-3 and go on air together at
/// slot 4 for 172 slots. Two concurrent frames fit a 2-MPR channel, so both
/// are delivered at slot 176 with delay (176 - 1) * 50 us.
#[test]
fn two_station_mpr_exchange_trace() {
    let config = explicit(2, 2, BackoffPolicy::Adaptive { k: 2, k_t: 1 }, 200);
    let mut sim = Simulation::with_arrivals(config, vec![vec![30.0], vec![30.0]]).unwrap();
    sim.record_transmissions();
    let (lines, report) = trace_lines(&mut sim);

    let mut expected = vec!["0 0 I I".to_string()];
    expected.push("1 0 S1 S1".into());
    expected.push("2 0 S2 S2".into());
    expected.push("3 0 T T".into());
    for slot in 4..176 {
        expected.push(format!("{slot} 2 T T"));
    }
    for slot in 176..200 {
        expected.push(format!("{slot} 0 I I"));
    }
    assert_eq!(lines, expected);

    assert_eq!(report.delivered, 2);
    assert_eq!(report.attempts, 2);
    assert_eq!(report.dropped, 0);
    assert_eq!(report.mean_mac_delay_us, 8750.0);
    assert_eq!(report.transmission_efficiency_eta, 1.0);
    let tx = sim.transmissions().unwrap();
    assert!(tx.iter().all(|r| (r.start_slot, r.end_slot, r.collided) == (4, 176, false)));
    assert_conserved(&report);
}

/// Three stations on the same schedule exceed K = 2: all three frames fail
/// and each station retries from stage 1.
#[test]
fn three_station_overload_collides_everyone() {
    let config = explicit(3, 2, BackoffPolicy::Adaptive { k: 2, k_t: 1 }, 177);
    let mut sim = Simulation::with_arrivals(config, vec![vec![30.0]; 3]).unwrap();
    sim.record_transmissions();
    let (lines, report) = trace_lines(&mut sim);
    assert_eq!(lines[3], "3 0 T T T");
    assert_eq!(lines[4], "4 3 T T T");
    assert_eq!(lines[175], "175 3 T T T");
    assert_eq!(report.attempts, 3);
    assert_eq!(report.delivered, 0);
    assert!(sim.transmissions().unwrap().iter().all(|r| r.collided));
    assert!(sim.nodes().iter().all(|n| n.backoff_stage == 1 && n.retries_used == 1));
}

/// One station, one packet: DIFS (3 slots) plus airtime (172 slots).
#[test]
fn immediate_access_delay() {
    let config = explicit(1, 1, BackoffPolicy::ConventionalDcf, 1_000_000);
    let arrivals = (0..40).map(|i| 10.0 + i as f64 * 1e6).collect();
    let mut sim = Simulation::with_arrivals(config, vec![arrivals]).unwrap();
    let r = sim.run();
    assert_eq!(r.delivered, 40);
    assert_eq!(r.mean_mac_delay_us, 3.0 * 50.0 + 172.0 * 50.0);
    assert_eq!(r.mean_mac_delay_us, 8750.0);
}

#[test]
fn single_station_poisson_run() {
    for policy in [
        BackoffPolicy::ConventionalDcf,
        BackoffPolicy::Threshold { l_t: 3 },
        BackoffPolicy::Adaptive { k: 4, k_t: 3 },
    ] {
        let config = SimConfig {
            n_stations: 1,
            policy,
            traffic: Traffic::Offered { u: 0.01 },
            duration_slots: 2_000_000,
            warmup_slots: 200_000,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(config).unwrap();
        sim.record_transmissions();
        let r = sim.run();
        assert!(r.delivered > 0);
        assert_eq!(r.transmission_efficiency_eta, 1.0);
        assert_eq!(r.dropped, 0);
        assert_conserved(&r);
        // packets that found the station idle get immediate access
        let slot_us = 50.0;
        for p in sim.completed_packets().unwrap() {
            let arrival_slot = (p.arrival_us / slot_us).ceil() as u64;
            if p.service_start_slot == arrival_slot {
                assert_eq!((p.terminal_slot - p.service_start_slot) as f64 * slot_us, 8750.0);
            }
        }
    }
}

/// Six stations, K = 1, window fixed at one slot: every attempt collides.
/// Each attempt cycle is DIFS + airtime = 175 slots, so the packet is
/// dropped after 5 * 175 slots.
#[test]
fn forced_collision_drop_delay() {
    let mut config = explicit(6, 1, BackoffPolicy::ConventionalDcf, 2000);
    config.mac.cw_min = 1;
    config.mac.max_backoff_stage = 0;
    let mut sim = Simulation::with_arrivals(config, vec![vec![30.0]; 6]).unwrap();
    sim.record_transmissions();
    let r = sim.run();
    assert_eq!(r.dropped, 6);
    assert_eq!(r.delivered, 0);
    assert_eq!(r.attempts, 30);
    assert_eq!(r.transmission_efficiency_eta, 0.0);
    assert_eq!(r.mean_mac_delay_us, 875.0 * 50.0);
    let starts: Vec<u64> = sim
        .transmissions()
        .unwrap()
        .iter()
        .filter(|t| t.owner == 0)
        .map(|t| t.start_slot)
        .collect();
    assert_eq!(starts, vec![4, 179, 354, 529, 704]);
    let drops: Vec<&CompletedPacket> = sim.completed_packets().unwrap().iter().collect();
    assert!(drops.iter().all(|p| !p.delivered && p.terminal_slot == 876));
    assert_conserved(&r);
}

fn small_run(policy: BackoffPolicy, k: u32, traffic: Traffic, seed: u64) -> (Simulation, MetricsReport) {
    let config = SimConfig {
        n_stations: 12,
        mpr_k: k,
        policy,
        traffic,
        duration_slots: 60_000,
        warmup_slots: 6_000,
        seed,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(config).unwrap();
    sim.record_transmissions();
    let r = sim.run();
    (sim, r)
}

fn all_records(sim: &Simulation) -> Vec<TransmissionRecord> {
    let mut all = sim.transmissions().unwrap().to_vec();
    all.extend_from_slice(sim.active());
    all
}

fn scenarios() -> Vec<(BackoffPolicy, u32, Traffic)> {
    vec![
        (BackoffPolicy::ConventionalDcf, 1, Traffic::Saturated),
        (BackoffPolicy::ConventionalDcf, 4, Traffic::Offered { u: 0.6 }),
        (BackoffPolicy::Threshold { l_t: 3 }, 4, Traffic::Saturated),
        (BackoffPolicy::Threshold { l_t: 2 }, 4, Traffic::Offered { u: 1.5 }),
        (BackoffPolicy::Adaptive { k: 4, k_t: 3 }, 4, Traffic::Saturated),
        (BackoffPolicy::Adaptive { k: 4, k_t: 3 }, 4, Traffic::Offered { u: 2.0 }),
        (BackoffPolicy::Adaptive { k: 3, k_t: 1 }, 3, Traffic::Offered { u: 0.5 }),
    ]
}

/// Efficiency and throughput recomputed from the raw transmission log.
#[test]
fn metrics_match_transmission_log() {
    for (seed, (policy, k, traffic)) in scenarios().into_iter().enumerate() {
        let (sim, r) = small_run(policy, k, traffic, seed as u64 + 1);
        let cfg = sim.config();
        let measured: Vec<&TransmissionRecord> = sim
            .transmissions()
            .unwrap()
            .iter()
            .filter(|t| t.end_slot >= cfg.warmup_slots)
            .collect();
        let ok = measured.iter().filter(|t| !t.collided).count() as u64;
        assert_eq!(measured.len() as u64, r.attempts);
        assert_eq!(ok, r.delivered);
        if r.attempts > 0 {
            assert_eq!(r.transmission_efficiency_eta, ok as f64 / measured.len() as f64);
        }
        let window_us = (cfg.duration_slots - cfg.warmup_slots) as f64 * 50.0;
        let s = normalized_throughput(ok as f64 * 8184.0, window_us, 1e6);
        assert!((s - r.normalized_throughput).abs() <= 1e-12 * s.abs().max(1e-300));
        assert!(r.normalized_throughput <= k as f64);
        assert_conserved(&r);
    }
}

/// No frame is delivered if any slot it occupied carried more than K
/// frames, and every frame that saw more than K is lost.
#[test]
fn success_requires_k_bound_everywhere() {
    for (seed, (policy, k, traffic)) in scenarios().into_iter().enumerate() {
        let (sim, _) = small_run(policy, k, traffic, 100 + seed as u64);
        let all = all_records(&sim);
        for rec in sim.transmissions().unwrap() {
            let max_overlap = (rec.start_slot..rec.end_slot)
                .map(|slot| all.iter().filter(|o| o.overlaps(slot)).count())
                .max()
                .unwrap();
            assert_eq!(
                rec.collided,
                max_overlap > k as usize,
                "record {rec:?} overlap {max_overlap}"
            );
        }
    }
}

#[test]
fn dcf_on_collision_channel_carries_one_frame() {
    for seed in 1..4 {
        let (sim, r) = small_run(BackoffPolicy::ConventionalDcf, 1, Traffic::Saturated, seed);
        let all = all_records(&sim);
        let horizon = sim.config().duration_slots;
        for slot in 0..horizon {
            let clean = all
                .iter()
                .filter(|t| t.overlaps(slot) && !t.collided)
                .count();
            assert!(clean <= 1, "slot {slot} has {clean} clean frames");
        }
        assert!(r.normalized_throughput <= 1.0);
    }
}

#[test]
fn runs_are_bit_reproducible() {
    for (policy, k, traffic) in scenarios() {
        let config = SimConfig {
            n_stations: 8,
            mpr_k: k,
            policy,
            traffic,
            duration_slots: 30_000,
            warmup_slots: 3_000,
            seed: 77,
            ..SimConfig::default()
        };
        let mut a = Simulation::new(config.clone()).unwrap();
        let mut b = Simulation::new(config).unwrap();
        let (ta, ra) = trace_lines(&mut a);
        let (tb, rb) = trace_lines(&mut b);
        assert_eq!(ta, tb);
        assert_eq!(ra, rb);
        assert_eq!(
            serde_json::to_string(&ra).unwrap(),
            serde_json::to_string(&rb).unwrap()
        );
    }
}

#[test]
fn trace_ongoing_matches_records() {
    let config = SimConfig {
        n_stations: 8,
        traffic: Traffic::Offered { u: 2.0 },
        duration_slots: 20_000,
        warmup_slots: 0,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(config).unwrap();
    sim.record_transmissions();
    let mut ongoing = Vec::new();
    sim.run_with_trace(|t| ongoing.push(t.ongoing));
    let all = all_records(&sim);
    for (slot, &c) in ongoing.iter().enumerate() {
        let n = all.iter().filter(|t| t.overlaps(slot as u64)).count() as u32;
        assert_eq!(c, n, "slot {slot}");
    }
}

#[test]
fn saturated_queues_never_empty() {
    let config = SimConfig {
        n_stations: 10,
        traffic: Traffic::Saturated,
        duration_slots: 30_000,
        warmup_slots: 0,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(config).unwrap();
    while !sim.is_finished() {
        sim.step_slot();
        assert!(sim.nodes().iter().all(|n| !n.queue.is_empty()));
    }
    assert_conserved(&sim.report());
}

#[test]
fn adaptive_counter_never_below_one_minus_k() {
    for k in 2..=6u32 {
        let config = SimConfig {
            n_stations: 20,
            mpr_k: k,
            policy: BackoffPolicy::Adaptive { k, k_t: k - 1 },
            traffic: Traffic::Saturated,
            duration_slots: 100_000,
            warmup_slots: 0,
            seed: k as u64,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(config).unwrap();
        sim.run();
        assert!(sim.min_counter() >= 1 - k as i64, "k={k}: {}", sim.min_counter());
        assert!(sim.min_counter() < 0, "k={k}: expected some counter to overshoot zero");
    }
}

#[test]
fn zero_rate_run_is_silent() {
    let config = SimConfig {
        n_stations: 5,
        traffic: Traffic::Offered { u: 0.0 },
        duration_slots: 50_000,
        warmup_slots: 5_000,
        ..SimConfig::default()
    };
    let r = mprsim::run_simulation(&config).unwrap();
    assert_eq!(r.normalized_throughput, 0.0);
    assert_eq!(r.attempts, 0);
    assert_eq!(r.transmission_efficiency_eta, 1.0);
}

#[test]
fn warmup_excludes_early_events() {
    // only packet completes at slot 176, inside the warm-up window
    let mut config = explicit(1, 1, BackoffPolicy::ConventionalDcf, 1000);
    config.warmup_slots = 500;
    let mut sim = Simulation::with_arrivals(config, vec![vec![30.0]]).unwrap();
    let r = sim.run();
    assert_eq!(r.delivered, 0);
    assert_eq!(r.attempts, 0);
    assert_eq!(r.packets.delivered, 1);
    assert_conserved(&r);
}
