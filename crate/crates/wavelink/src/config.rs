//! Human-editable run configuration: a versioned TOML tree mapping onto
//! [`SimulationConfig`]. Unknown keys are rejected everywhere so typos
//! fail loudly rather than silently falling back to defaults.
//!
//! ```toml
//! version = 1
//!
//! [sim]
//! rng_seed = 7
//! packets_per_dtx = 10
//! payload_octets = 2004
//!
//! [channel]
//! gains = [[0.0, 1.0], [1.0, 0.0]]
//! noise_power = [1e-4, 1e-4]
//!
//! [[node]]
//! role = "dtx"
//! address = "02:00:00:00:00:01"
//! peer = "02:00:00:00:00:02"
//!
//! [[node]]
//! role = "drx"
//! address = "02:00:00:00:00:02"
//! peer = "02:00:00:00:00:01"
//! ```
//!
//! Every `[node.mac]` / `[node.rffe]` / `[phy]` / `[sync]` / `[radio]`
//! key is optional and falls back to the documented defaults; the
//! energy threshold defaults to three times the node's mean noise-frame
//! energy.

use serde::Deserialize;
use thiserror::Error;

use crate::baseband::PhyConfig;
use crate::frame::MacAddress;
use crate::mac::MacConfig;
use crate::medium::ChannelConfig;
use crate::receiver::SyncConfig;
use crate::rffe::RffeConfig;
use crate::sim::{auto_energy_threshold, NodeConfig, NodeRole, SimulationConfig};
use crate::timing::RadioTiming;

/// The only schema version this build reads.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("node {0}: bad address: {1}")]
    Address(usize, String),
    #[error("channel matrices must cover all {0} nodes")]
    ChannelShape(usize),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    version: u32,
    #[serde(default)]
    radio: RadioFile,
    #[serde(default)]
    phy: PhyFile,
    #[serde(default)]
    sync: SyncConfig,
    sim: SimFile,
    channel: ChannelFile,
    #[serde(rename = "node")]
    nodes: Vec<NodeFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadioFile {
    interp_factor: u32,
    decim_factor: u32,
    frame_len_bits: usize,
}

impl Default for RadioFile {
    fn default() -> Self {
        let t = RadioTiming::default();
        Self {
            interp_factor: t.interp_factor,
            decim_factor: t.decim_factor,
            frame_len_bits: t.frame_len_bits,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhyFile {
    rolloff: f64,
    span_chips: usize,
    scrambler_seed: u8,
}

impl Default for PhyFile {
    fn default() -> Self {
        let p = PhyConfig::default();
        Self {
            rolloff: p.rolloff,
            span_chips: p.span_chips,
            scrambler_seed: p.scrambler_seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    rng_seed: u64,
    packets_per_dtx: usize,
    payload_octets: usize,
    #[serde(default = "default_max_slots")]
    max_slots: u64,
}

fn default_max_slots() -> u64 {
    2_000_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    gains: Vec<Vec<f64>>,
    #[serde(default)]
    freq_offsets: Vec<Vec<f64>>,
    #[serde(default)]
    noise_power: Vec<f64>,
    #[serde(default)]
    sample_shifts: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    role: NodeRole,
    address: String,
    peer: String,
    /// Echo of the node's own transmission into its receiver, in dB
    /// relative to the transmit signal; omit to disable.
    self_leakage_db: Option<f64>,
    #[serde(default)]
    rffe: RffeConfig,
    #[serde(default)]
    mac: MacFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MacFile {
    difs_slots: Option<u64>,
    sifs_slots: Option<u64>,
    cw_min: Option<u64>,
    max_backoff_exponent: Option<u32>,
    max_retries: Option<u32>,
    ack_timeout_slots: Option<u64>,
    energy_threshold: Option<f64>,
}

/// Parse TOML text into a validated [`SimulationConfig`].
pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text)?;
    if file.version != CONFIG_VERSION {
        return Err(ConfigError::Version(file.version));
    }

    let n = file.nodes.len();
    let noise = |i: usize| file.channel.noise_power.get(i).copied().unwrap_or(0.0);
    if file.channel.gains.len() != n {
        return Err(ConfigError::ChannelShape(n));
    }

    let mut nodes = Vec::with_capacity(n);
    let mut leakage = Vec::with_capacity(n);
    for (i, nf) in file.nodes.iter().enumerate() {
        let own: MacAddress = nf
            .address
            .parse()
            .map_err(|e| ConfigError::Address(i, e))?;
        let peer: MacAddress = nf.peer.parse().map_err(|e| ConfigError::Address(i, e))?;
        let m = &nf.mac;
        let mac = MacConfig {
            difs_slots: m.difs_slots.unwrap_or(107),
            sifs_slots: m.sifs_slots.unwrap_or(15),
            cw_min: m.cw_min.unwrap_or(71),
            max_backoff_exponent: m.max_backoff_exponent.unwrap_or(6),
            max_retries: m.max_retries.unwrap_or(7),
            ack_timeout_slots: m.ack_timeout_slots.unwrap_or(710),
            energy_threshold: m
                .energy_threshold
                .unwrap_or_else(|| auto_energy_threshold(noise(i))),
            own_address: own,
            peer_address: peer,
        };
        nodes.push(NodeConfig {
            role: nf.role,
            rffe: nf.rffe,
            mac,
        });
        leakage.push(nf.self_leakage_db);
    }

    let channel = ChannelConfig {
        gains: file.channel.gains,
        freq_offsets: if file.channel.freq_offsets.is_empty() {
            vec![vec![0.0; n]; n]
        } else {
            file.channel.freq_offsets
        },
        noise_power: if file.channel.noise_power.is_empty() {
            vec![0.0; n]
        } else {
            file.channel.noise_power
        },
        self_leakage_db: leakage,
        sample_shifts: file.channel.sample_shifts,
    };

    Ok(SimulationConfig {
        radio: RadioTiming::new(
            file.radio.interp_factor,
            file.radio.decim_factor,
            file.radio.frame_len_bits,
        ),
        phy: PhyConfig {
            rolloff: file.phy.rolloff,
            span_chips: file.phy.span_chips,
            scrambler_seed: file.phy.scrambler_seed,
        },
        sync: file.sync,
        nodes,
        channel,
        packets_per_dtx: file.sim.packets_per_dtx,
        payload_octets: file.sim.payload_octets,
        rng_seed: file.sim.rng_seed,
        max_slots: file.sim.max_slots,
    })
}
