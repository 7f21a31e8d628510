//! Slot-synchronized experiment scheduler.
//!
//! One simulation run drives N nodes through the shared medium in three
//! phases per slot: collect every node's transmit frame (decided from
//! pre-slot state), combine them through the channel, then deliver each
//! node its receive frame and step its state machine. Phase three may
//! run nodes in parallel — every node owns its state and the frames are
//! already materialized, so the outcome is identical either way.

use std::sync::Arc;
use std::time::Duration;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseband::PhyConfig;
use crate::frame::{DataPacketDescriptor, MacAddress, PAYLOAD_MAX_OCTETS};
use crate::mac::{DtxNode, DrxNode, LoggedEvent, MacConfig, MacError, Node, StepOutput};
use crate::medium::{ChannelConfig, Medium, MediumError};
use crate::metrics::{compute_metrics, MetricsReport, ProcessingMetrics};
use crate::receiver::SyncConfig;
use crate::rffe::RffeConfig;
use crate::sync::{preamble_template, XcorrEngine};
use crate::timing::{RadioTiming, SampleFrame};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation needs at least one DTx and one DRx")]
    MissingRole,
    #[error("payload must be at most {PAYLOAD_MAX_OCTETS} octets, got {0}")]
    PayloadTooLong(usize),
    #[error("channel is {channel}-node but {nodes} nodes are configured")]
    ChannelSize { channel: usize, nodes: usize },
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Medium(#[from] MediumError),
}

/// Which end of the link a node plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Dtx,
    Drx,
}

/// One node's role and per-node tunables.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub role: NodeRole,
    pub rffe: RffeConfig,
    pub mac: MacConfig,
}

/// Everything one reproducible run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub radio: RadioTiming,
    pub phy: PhyConfig,
    pub sync: SyncConfig,
    pub nodes: Vec<NodeConfig>,
    pub channel: ChannelConfig,
    pub packets_per_dtx: usize,
    pub payload_octets: usize,
    pub rng_seed: u64,
    pub max_slots: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let dtx = self.nodes.iter().filter(|n| n.role == NodeRole::Dtx).count();
        let drx = self.nodes.iter().filter(|n| n.role == NodeRole::Drx).count();
        if dtx == 0 || drx == 0 {
            return Err(SimError::MissingRole);
        }
        if self.payload_octets > PAYLOAD_MAX_OCTETS {
            return Err(SimError::PayloadTooLong(self.payload_octets));
        }
        if self.channel.nodes() != self.nodes.len() {
            return Err(SimError::ChannelSize {
                channel: self.channel.nodes(),
                nodes: self.nodes.len(),
            });
        }
        Ok(())
    }
}

/// Result of one run: the metrics plus the raw event log.
#[derive(Debug)]
pub struct SimulationOutput {
    pub metrics: MetricsReport,
    pub events: Vec<LoggedEvent>,
    pub incomplete: bool,
    pub slots_run: u64,
}

fn node_seed(master: u64, node: usize) -> u64 {
    let mut z = master ^ 0xA5A5_5A5A_0F0F_F0F0u64.wrapping_add((node as u64) << 32);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z = (z ^ (z >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^ (z >> 33)
}

/// Build the per-DTx packet queue: random payloads drawn from the run
/// seed, sequence numbers counting from zero.
fn packet_queue(
    cfg: &SimulationConfig,
    node: usize,
    own: MacAddress,
    peer: MacAddress,
) -> Vec<DataPacketDescriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(node_seed(cfg.rng_seed, node).wrapping_add(0x7071));
    (0..cfg.packets_per_dtx)
        .map(|i| DataPacketDescriptor {
            src: own,
            dst: peer,
            bssid: MacAddress([0x02, 0, 0, 0, 0, 0xFE]),
            sequence_number: (i % 4096) as u16,
            payload: (0..cfg.payload_octets).map(|_| rng.random()).collect(),
        })
        .collect()
}

/// Construct every node of a run against a shared stage-1 template.
pub fn build_nodes(cfg: &SimulationConfig) -> Result<Vec<Node>, SimError> {
    let engine = Arc::new(
        XcorrEngine::new(preamble_template(&cfg.phy)).expect("non-empty template"),
    );
    let mut nodes = Vec::with_capacity(cfg.nodes.len());
    for (id, nc) in cfg.nodes.iter().enumerate() {
        let node = match nc.role {
            NodeRole::Dtx => {
                let packets =
                    packet_queue(cfg, id, nc.mac.own_address, nc.mac.peer_address);
                Node::Dtx(Box::new(DtxNode::new(
                    id,
                    nc.mac,
                    &nc.rffe,
                    &cfg.sync,
                    &cfg.phy,
                    &cfg.radio,
                    engine.clone(),
                    node_seed(cfg.rng_seed, id),
                    packets,
                )?))
            }
            NodeRole::Drx => Node::Drx(Box::new(DrxNode::new(
                id,
                nc.mac,
                &nc.rffe,
                &cfg.sync,
                &cfg.phy,
                &cfg.radio,
                engine.clone(),
            )?)),
        };
        nodes.push(node);
    }
    Ok(nodes)
}

/// Step every node's state machine for one slot, sequentially.
pub fn advance_all_sequential(
    nodes: &mut [Node],
    slot: u64,
    rx_frames: &[SampleFrame],
) -> Vec<StepOutput> {
    nodes
        .iter_mut()
        .zip(rx_frames.iter())
        .map(|(node, rx)| node.advance(slot, rx))
        .collect()
}

/// Step every node's state machine for one slot, in parallel. Outputs
/// come back in node order, so logs are identical to the sequential
/// path.
#[cfg(feature = "parallel")]
pub fn advance_all_parallel(
    nodes: &mut [Node],
    slot: u64,
    rx_frames: &[SampleFrame],
) -> Vec<StepOutput> {
    use rayon::prelude::*;
    nodes
        .par_iter_mut()
        .zip(rx_frames.par_iter())
        .map(|(node, rx)| node.advance(slot, rx))
        .collect()
}

fn advance_all(nodes: &mut [Node], slot: u64, rx_frames: &[SampleFrame]) -> Vec<StepOutput> {
    #[cfg(feature = "parallel")]
    {
        advance_all_parallel(nodes, slot, rx_frames)
    }
    #[cfg(not(feature = "parallel"))]
    {
        advance_all_sequential(nodes, slot, rx_frames)
    }
}

/// Run one simulation to completion (every DTx drained) or `max_slots`.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationOutput, SimError> {
    cfg.validate()?;
    let mut nodes = build_nodes(cfg)?;
    let mut medium = Medium::new(cfg.channel.clone(), cfg.radio.sample_rate(), cfg.rng_seed)?;

    let mut events: Vec<LoggedEvent> = Vec::new();
    let mut rx_times: Vec<Duration> = Vec::new();
    let mut incomplete = false;
    let mut slot = 0u64;

    loop {
        if nodes.iter().all(Node::is_done) {
            break;
        }
        if slot >= cfg.max_slots {
            incomplete = true;
            break;
        }

        // phase 1: everyone decides its transmit frame
        let tx_frames: Vec<SampleFrame> = nodes.iter().map(Node::poll_tx).collect();
        // phase 2: the channel combines them
        let rx_frames = medium.step(&tx_frames)?;
        // phase 3: state machines consume their receive frames
        let outputs = advance_all(&mut nodes, slot, &rx_frames);
        for out in outputs {
            events.extend(out.events);
            if let Some(d) = out.rx_processing {
                rx_times.push(d);
            }
        }
        slot += 1;
    }

    let processing = ProcessingMetrics::from_durations(&rx_times, cfg.radio.t_radio());
    let mut metrics = compute_metrics(&events, cfg, processing);
    metrics.incomplete = incomplete;
    metrics.slots_run = slot;

    Ok(SimulationOutput {
        metrics,
        events,
        incomplete,
        slots_run: slot,
    })
}

// ── Ready-made configurations ────────────────────────────────────────

fn station(last: u8) -> MacAddress {
    MacAddress([0x02, 0, 0, 0, 0, last])
}

/// Per-sample transmit signal power of the shaped waveform at unity
/// gain (unit-energy chip pulses at 2 samples/chip).
pub const TX_SAMPLE_POWER: f64 = 0.5;

/// Receiver noise power for a wanted-link amplitude gain and target SNR
/// (per-sample, full rate).
pub fn noise_power_for_snr(gain: f64, snr_db: f64) -> f64 {
    gain * gain * TX_SAMPLE_POWER / 10f64.powf(snr_db / 10.0)
}

/// Energy threshold three times the mean noise-frame energy, with a
/// floor for noiseless channels.
pub fn auto_energy_threshold(noise_power: f64) -> f64 {
    (3.0 * 1408.0 * noise_power).max(1e-9)
}

/// A 1 DTx + 1 DRx run: node 0 transmits to node 1 over symmetric links
/// of amplitude `gain` with the given SNR at the receivers.
pub fn two_node_config(
    payload_octets: usize,
    packets_per_dtx: usize,
    rng_seed: u64,
    gain: f64,
    snr_db: Option<f64>,
    freq_offset_hz: f64,
) -> SimulationConfig {
    let noise = snr_db.map_or(0.0, |s| noise_power_for_snr(gain, s));
    let mut channel = ChannelConfig::ideal(2);
    channel.gains = vec![vec![0.0, gain], vec![gain, 0.0]];
    channel.freq_offsets = vec![vec![0.0, freq_offset_hz], vec![-freq_offset_hz, 0.0]];
    channel.noise_power = vec![noise; 2];

    let threshold = auto_energy_threshold(noise);
    let mac = |own: u8, peer: u8| MacConfig {
        energy_threshold: threshold,
        own_address: station(own),
        peer_address: station(peer),
        ..default_mac()
    };

    SimulationConfig {
        radio: RadioTiming::default(),
        phy: PhyConfig::default(),
        sync: SyncConfig::default(),
        nodes: vec![
            NodeConfig {
                role: NodeRole::Dtx,
                rffe: RffeConfig::default(),
                mac: mac(1, 2),
            },
            NodeConfig {
                role: NodeRole::Drx,
                rffe: RffeConfig::default(),
                mac: mac(2, 1),
            },
        ],
        channel,
        packets_per_dtx,
        payload_octets,
        rng_seed,
        max_slots: 2_000_000,
    }
}

/// A 2 DTx + 1 DRx contention run: nodes 0 and 1 transmit to node 2.
/// All links have unity gain and the given SNR at every receiver.
pub fn three_node_config(
    payload_octets: usize,
    packets_per_dtx: usize,
    rng_seed: u64,
    snr_db: Option<f64>,
) -> SimulationConfig {
    let noise = snr_db.map_or(0.0, |s| noise_power_for_snr(1.0, s));
    let mut channel = ChannelConfig::ideal(3);
    channel.noise_power = vec![noise; 3];

    let threshold = auto_energy_threshold(noise);
    let mac = |own: u8, peer: u8| MacConfig {
        energy_threshold: threshold,
        own_address: station(own),
        peer_address: station(peer),
        ..default_mac()
    };

    SimulationConfig {
        radio: RadioTiming::default(),
        phy: PhyConfig::default(),
        sync: SyncConfig::default(),
        nodes: vec![
            NodeConfig {
                role: NodeRole::Dtx,
                rffe: RffeConfig::default(),
                mac: mac(1, 3),
            },
            NodeConfig {
                role: NodeRole::Dtx,
                rffe: RffeConfig::default(),
                mac: mac(2, 3),
            },
            NodeConfig {
                role: NodeRole::Drx,
                rffe: RffeConfig::default(),
                mac: mac(3, 1),
            },
        ],
        channel,
        packets_per_dtx,
        payload_octets,
        rng_seed,
        max_slots: 4_000_000,
    }
}

fn default_mac() -> MacConfig {
    MacConfig {
        difs_slots: 107,
        sifs_slots: 15,
        cw_min: 71,
        max_backoff_exponent: 6,
        max_retries: 7,
        ack_timeout_slots: 710,
        energy_threshold: 1e-9,
        own_address: station(0),
        peer_address: station(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::MacEvent;

    fn tiny_two_node(seed: u64) -> SimulationConfig {
        let mut cfg = two_node_config(16, 2, seed, 1.0, None, 0.0);
        for n in &mut cfg.nodes {
            n.mac.difs_slots = 3;
            n.mac.sifs_slots = 2;
            n.mac.cw_min = 2;
            n.mac.ack_timeout_slots = 60;
        }
        cfg
    }

    #[test]
    fn clean_two_node_run_delivers_everything() {
        let out = run_simulation(&tiny_two_node(11)).unwrap();
        assert!(!out.incomplete);
        let acks = out
            .events
            .iter()
            .filter(|e| matches!(e.event, MacEvent::AckReceived { .. }))
            .count();
        assert_eq!(acks, 2);
        let link = &out.metrics.per_link[0];
        assert_eq!(link.packets_sent, 2);
        assert_eq!(link.packets_acked, 2);
        assert_eq!(link.packets_dropped, 0);
        assert_eq!(link.per_percent, Some(0.0));
    }

    #[test]
    fn latency_matches_slot_accounting() {
        // clean channel: latency = difs + backoff + frames + sifs + 5 + 1
        let cfg = tiny_two_node(29);
        let out = run_simulation(&cfg).unwrap();
        let frames = crate::frame::data_frame_count(cfg.payload_octets) as u64;

        let mut backoffs = Vec::new();
        for e in &out.events {
            if let MacEvent::BackoffChosen { slots } = e.event {
                backoffs.push(slots);
            }
        }
        let link = &out.metrics.per_link[0];
        assert_eq!(link.latencies_slots.len(), 2);
        for (latency, backoff) in link.latencies_slots.iter().zip(backoffs.iter()) {
            let expected = cfg.nodes[0].mac.difs_slots + backoff + frames
                + cfg.nodes[0].mac.sifs_slots
                + 5
                + 1;
            assert_eq!(*latency, expected);
        }
    }

    #[test]
    fn deterministic_event_logs() {
        let a = run_simulation(&tiny_two_node(99)).unwrap();
        let b = run_simulation(&tiny_two_node(99)).unwrap();
        assert_eq!(a.events, b.events);
        let ja = serde_json::to_string(&a.events).unwrap();
        let jb = serde_json::to_string(&b.events).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn zero_packets_is_immediate_eot() {
        let mut cfg = tiny_two_node(1);
        cfg.packets_per_dtx = 0;
        let out = run_simulation(&cfg).unwrap();
        assert!(!out.incomplete);
        assert!(out.slots_run <= 1);
        assert!(out.metrics.per_link[0].mean_latency_slots.is_none());
        assert_eq!(out.metrics.per_link[0].packets_sent, 0);
    }

    #[test]
    fn max_slots_marks_incomplete() {
        let mut cfg = tiny_two_node(1);
        cfg.max_slots = 10; // far too few to finish a packet
        let out = run_simulation(&cfg).unwrap();
        assert!(out.incomplete);
        assert!(out.metrics.incomplete);
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = tiny_two_node(1);
        cfg.nodes.remove(1);
        assert!(matches!(
            run_simulation(&cfg),
            Err(SimError::MissingRole) | Err(SimError::ChannelSize { .. })
        ));

        let mut cfg = tiny_two_node(1);
        cfg.payload_octets = 4000;
        assert!(matches!(
            run_simulation(&cfg),
            Err(SimError::PayloadTooLong(4000))
        ));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let cfg = tiny_two_node(5);
        let mut nodes_a = build_nodes(&cfg).unwrap();
        let mut nodes_b = build_nodes(&cfg).unwrap();
        let mut medium_a = Medium::new(cfg.channel.clone(), 2e5, cfg.rng_seed).unwrap();
        let mut medium_b = Medium::new(cfg.channel.clone(), 2e5, cfg.rng_seed).unwrap();

        for slot in 0..50 {
            let tx_a: Vec<_> = nodes_a.iter().map(Node::poll_tx).collect();
            let tx_b: Vec<_> = nodes_b.iter().map(Node::poll_tx).collect();
            assert_eq!(tx_a, tx_b);
            let rx_a = medium_a.step(&tx_a).unwrap();
            let rx_b = medium_b.step(&tx_b).unwrap();
            let out_a = advance_all_sequential(&mut nodes_a, slot, &rx_a);
            #[cfg(feature = "parallel")]
            let out_b = advance_all_parallel(&mut nodes_b, slot, &rx_b);
            #[cfg(not(feature = "parallel"))]
            let out_b = advance_all_sequential(&mut nodes_b, slot, &rx_b);
            let ev_a: Vec<_> = out_a.into_iter().flat_map(|o| o.events).collect();
            let ev_b: Vec<_> = out_b.into_iter().flat_map(|o| o.events).collect();
            assert_eq!(ev_a, ev_b);
        }
    }
}
