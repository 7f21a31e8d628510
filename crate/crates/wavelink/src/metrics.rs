//! Event-log-derived link metrics: packet error rate, bidirectional
//! link latency, goodput, fairness, and receive-path timing.
//!
//! Latency is counted per packet from the slot the MAC started working
//! on it (the slot after the previous packet resolved) to the slot its
//! ACK decoded, so DIFS and backoff are included. On a clean channel
//! this equals `difs + backoff + data_frames + sifs + 5 + 1` slots —
//! the trailing 1 is the fixed decode lag of the receive filter spilling
//! each packet's final chips into the next slot. Seconds are slots
//! times the 7.04 ms slot time. Runs with no completed packets report
//! undefined (null) aggregates rather than zeros.

use serde::{Deserialize, Serialize};
use std::time::Duration;

use crate::frame::MacAddress;
use crate::mac::{LoggedEvent, MacEvent};
use crate::sim::{NodeRole, SimulationConfig};

/// Fixed decode-lag term of the clean-channel latency closed form.
pub const DECODE_LAG_SLOTS: u64 = 1;

/// One resolved (acked or dropped) packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub node: usize,
    pub seq: u16,
    pub attempts: u32,
    pub acked: bool,
    /// Slot the MAC began contending for this packet.
    pub head_slot: u64,
    /// Slot the packet resolved (AckReceived or PacketDropped).
    pub resolution_slot: u64,
    pub latency_slots: u64,
}

/// Aggregates for one DTx→DRx link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub node: usize,
    pub address: MacAddress,
    pub packets_sent: usize,
    pub packets_acked: usize,
    pub packets_dropped: usize,
    /// Packets still unresolved when the run ended.
    pub packets_in_flight: usize,
    pub per_percent: Option<f64>,
    pub mean_latency_slots: Option<f64>,
    pub std_latency_slots: Option<f64>,
    pub mean_latency_seconds: Option<f64>,
    pub goodput_bps: Option<f64>,
    /// Per-packet latencies of acknowledged packets, in resolution order.
    pub latencies_slots: Vec<u64>,
}

/// Latency balance across DTx links (3-node fairness).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessMetrics {
    /// Max over min of the links' mean latencies (1.0 is ideal).
    pub latency_ratio: f64,
    /// Largest relative deviation of a link mean from the grand mean.
    pub max_abs_deviation_from_equal: f64,
}

/// Wall-clock statistics of the receive path (front end + sync + DDD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingMetrics {
    pub frames_timed: usize,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    /// Mean per-frame processing within one slot time.
    pub realtime_ok: bool,
}

impl ProcessingMetrics {
    pub fn from_durations(times: &[Duration], t_radio: f64) -> Option<Self> {
        if times.is_empty() {
            return None;
        }
        let secs: Vec<f64> = times.iter().map(Duration::as_secs_f64).collect();
        let mean = secs.iter().sum::<f64>() / secs.len() as f64;
        let max = secs.iter().cloned().fold(0.0, f64::max);
        Some(Self {
            frames_timed: secs.len(),
            mean_seconds: mean,
            max_seconds: max,
            realtime_ok: mean <= t_radio,
        })
    }
}

/// The full report a run emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub slots_run: u64,
    pub incomplete: bool,
    pub t_radio_seconds: f64,
    pub payload_octets: usize,
    pub per_link: Vec<LinkMetrics>,
    pub packets: Vec<PacketRecord>,
    pub fairness: Option<FairnessMetrics>,
    pub processing: Option<ProcessingMetrics>,
    pub event_log_path: Option<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Reduce an event log to link metrics.
pub fn compute_metrics(
    events: &[LoggedEvent],
    cfg: &SimulationConfig,
    processing: Option<ProcessingMetrics>,
) -> MetricsReport {
    let t_radio = cfg.radio.t_radio();
    let mut per_link = Vec::new();
    let mut all_packets = Vec::new();

    for (node, nc) in cfg.nodes.iter().enumerate() {
        if nc.role != NodeRole::Dtx {
            continue;
        }

        let mut packets: Vec<PacketRecord> = Vec::new();
        let mut head_slot = 0u64;
        let mut timeouts_this_packet = 0u32;
        let mut sent = std::collections::HashSet::new();

        for ev in events.iter().filter(|e| e.node == node) {
            match ev.event {
                MacEvent::DataPacketSent { seq } => {
                    sent.insert(seq);
                }
                MacEvent::AckTimeout { .. } => timeouts_this_packet += 1,
                MacEvent::AckReceived { seq } | MacEvent::PacketDropped { seq } => {
                    let acked = matches!(ev.event, MacEvent::AckReceived { .. });
                    packets.push(PacketRecord {
                        node,
                        seq,
                        attempts: timeouts_this_packet + if acked { 1 } else { 0 },
                        acked,
                        head_slot,
                        resolution_slot: ev.slot,
                        latency_slots: ev.slot - head_slot,
                    });
                    head_slot = ev.slot + 1;
                    timeouts_this_packet = 0;
                }
                _ => {}
            }
        }

        let packets_acked = packets.iter().filter(|p| p.acked).count();
        let packets_dropped = packets.len() - packets_acked;
        let packets_sent = sent.len();
        let latencies: Vec<u64> = packets
            .iter()
            .filter(|p| p.acked)
            .map(|p| p.latency_slots)
            .collect();

        let (mean_slots, std_slots) = if latencies.is_empty() {
            (None, None)
        } else {
            let xs: Vec<f64> = latencies.iter().map(|&l| l as f64).collect();
            let m = mean(&xs);
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            (Some(m), Some(var.sqrt()))
        };
        let mean_seconds = mean_slots.map(|m| m * t_radio);
        let goodput = mean_seconds.map(|s| (cfg.payload_octets * 8) as f64 / s);
        let per = if packets_sent > 0 {
            Some(100.0 * (packets_sent - packets_acked) as f64 / packets_sent as f64)
        } else {
            None
        };

        per_link.push(LinkMetrics {
            node,
            address: nc.mac.own_address,
            packets_sent,
            packets_acked,
            packets_dropped,
            packets_in_flight: packets_sent.saturating_sub(packets_acked + packets_dropped),
            per_percent: per,
            mean_latency_slots: mean_slots,
            std_latency_slots: std_slots,
            mean_latency_seconds: mean_seconds,
            goodput_bps: goodput,
            latencies_slots: latencies,
        });
        all_packets.extend(packets);
    }

    let fairness = {
        let means: Vec<f64> = per_link
            .iter()
            .filter_map(|l| l.mean_latency_slots)
            .collect();
        if means.len() >= 2 {
            let grand = mean(&means);
            let max = means.iter().cloned().fold(f64::MIN, f64::max);
            let min = means.iter().cloned().fold(f64::MAX, f64::min);
            Some(FairnessMetrics {
                latency_ratio: max / min,
                max_abs_deviation_from_equal: means
                    .iter()
                    .map(|m| (m - grand).abs() / grand)
                    .fold(0.0, f64::max),
            })
        } else {
            None
        }
    };

    MetricsReport {
        schema_version: 1,
        slots_run: 0,
        incomplete: false,
        t_radio_seconds: t_radio,
        payload_octets: cfg.payload_octets,
        per_link,
        packets: all_packets,
        fairness,
        processing,
        event_log_path: None,
    }
}

/// Serialize an event log as JSON lines, one event per line.
pub fn events_to_jsonl(events: &[LoggedEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&serde_json::to_string(ev).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Per-packet CSV table (plot-ready).
pub fn packets_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("node,seq,attempts,acked,head_slot,resolution_slot,latency_slots,latency_seconds\n");
    for p in &report.packets {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6}\n",
            p.node,
            p.seq,
            p.attempts,
            p.acked,
            p.head_slot,
            p.resolution_slot,
            p.latency_slots,
            p.latency_slots as f64 * report.t_radio_seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::two_node_config;

    fn logged(node: usize, slot: u64, event: MacEvent) -> LoggedEvent {
        LoggedEvent { slot, node, event }
    }

    #[test]
    fn per_from_sent_and_acked() {
        let cfg = two_node_config(100, 100, 1, 1.0, None, 0.0);
        let mut events = Vec::new();
        let mut slot = 0;
        for i in 0..100u16 {
            events.push(logged(0, slot, MacEvent::DataPacketSent { seq: i }));
            slot += 10;
            if i < 95 {
                events.push(logged(0, slot, MacEvent::AckReceived { seq: i }));
            } else {
                events.push(logged(0, slot, MacEvent::AckTimeout { k: 1 }));
                events.push(logged(0, slot, MacEvent::PacketDropped { seq: i }));
            }
            slot += 1;
        }
        let report = compute_metrics(&events, &cfg, None);
        let link = &report.per_link[0];
        assert_eq!(link.packets_sent, 100);
        assert_eq!(link.packets_acked, 95);
        assert_eq!(link.packets_dropped, 5);
        assert_eq!(link.per_percent, Some(5.0));
        // conservation
        assert_eq!(
            link.packets_sent,
            link.packets_acked + link.packets_dropped + link.packets_in_flight
        );
    }

    #[test]
    fn goodput_matches_reference_point() {
        // 2004-octet payload (16032 bits) at 15.27 s mean latency is
        // just above 1.05 kbit/s
        let cfg = two_node_config(2004, 1, 1, 1.0, None, 0.0);
        let latency_slots = (15.27f64 / cfg.radio.t_radio()).round() as u64;
        let events = vec![
            logged(0, 5, MacEvent::DataPacketSent { seq: 0 }),
            logged(0, latency_slots - 1, MacEvent::AckReceived { seq: 0 }),
        ];
        let report = compute_metrics(&events, &cfg, None);
        let goodput = report.per_link[0].goodput_bps.unwrap();
        assert!(
            (goodput / 1000.0 - 1.05).abs() < 0.01,
            "goodput {} bps",
            goodput
        );
    }

    #[test]
    fn empty_log_reports_undefined() {
        let cfg = two_node_config(100, 0, 1, 1.0, None, 0.0);
        let report = compute_metrics(&[], &cfg, None);
        let link = &report.per_link[0];
        assert_eq!(link.packets_sent, 0);
        assert!(link.per_percent.is_none());
        assert!(link.mean_latency_slots.is_none());
        assert!(link.goodput_bps.is_none());
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"per_percent\":null"));
    }

    #[test]
    fn fairness_of_equal_links_is_unity() {
        let mut cfg = two_node_config(100, 2, 1, 1.0, None, 0.0);
        // make the config look like two DTx links for the metrics pass
        cfg.nodes.push(cfg.nodes[0].clone());
        let events = vec![
            logged(0, 10, MacEvent::DataPacketSent { seq: 0 }),
            logged(0, 99, MacEvent::AckReceived { seq: 0 }),
            logged(2, 10, MacEvent::DataPacketSent { seq: 0 }),
            logged(2, 99, MacEvent::AckReceived { seq: 0 }),
        ];
        let report = compute_metrics(&events, &cfg, None);
        let fairness = report.fairness.unwrap();
        assert_eq!(fairness.latency_ratio, 1.0);
        assert_eq!(fairness.max_abs_deviation_from_equal, 0.0);
    }

    #[test]
    fn jsonl_one_event_per_line() {
        let events = vec![
            logged(0, 1, MacEvent::ChannelBusy),
            logged(1, 2, MacEvent::EotReached),
        ];
        let text = events_to_jsonl(&events);
        assert_eq!(text.lines().count(), 2);
        for line in text.lines() {
            let _: LoggedEvent = serde_json::from_str(line).unwrap();
        }
    }

    #[test]
    fn processing_realtime_flag() {
        let times = vec![Duration::from_micros(500); 10];
        let p = ProcessingMetrics::from_durations(&times, 7.04e-3).unwrap();
        assert!(p.realtime_ok);
        let slow = vec![Duration::from_millis(10); 10];
        let p = ProcessingMetrics::from_durations(&slow, 7.04e-3).unwrap();
        assert!(!p.realtime_ok);
        assert!(ProcessingMetrics::from_durations(&[], 7.04e-3).is_none());
    }
}
