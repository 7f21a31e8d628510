//! CSMA/CA/ACK link layer: the designated-transmitter and
//! designated-receiver state machines, energy detection, and binary
//! exponential backoff.
//!
//! Both machines are stepped exactly once per slot. A transmitting
//! state puts packet samples on the air and ignores the receive frame;
//! a receiving state puts zeros on the air and runs the decode path
//! (front end, synchronization, despread/demodulate/descramble). All
//! durations are counted in slots of one frame time (7.04 ms).
//!
//! The DTx senses channel energy against a calibrated threshold, waits
//! out DIFS plus a random backoff drawn from `[0, cw_min·2^min(k,cap))`,
//! transmits the DATA packet frame by frame, then listens for the ACK
//! until a timeout; on timeout it doubles the contention window and
//! retries. The DRx performs no energy detection: it searches for DATA
//! packets, checks addressing as soon as the MAC header decodes, and
//! after a good FCS waits SIFS and answers with an ACK.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseband::{modulate_packet, PhyConfig};
use crate::frame::{
    build_ack_packet, build_data_packet, DataPacketDescriptor, MacAddress, PacketKind,
};
use crate::receiver::{HeaderInfo, PacketReceiver, RxEvent, SyncConfig};
use crate::rffe::RffeConfig;
use crate::sync::XcorrEngine;
use crate::timing::{RadioTiming, SampleFrame};

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("difs_slots ({difs}) must exceed sifs_slots ({sifs})")]
    DifsNotAboveSifs { difs: u64, sifs: u64 },
    #[error("cw_min must be at least 1")]
    ZeroContentionWindow,
    #[error("calibration requires at least one idle frame")]
    NoCalibrationFrames,
    #[error("packet build failed: {0}")]
    Frame(#[from] crate::frame::FrameError),
    #[error(transparent)]
    Rffe(#[from] crate::rffe::RffeError),
}

/// Link-layer timing and addressing parameters. Durations are in slots;
/// the defaults follow the reference operating point: DIFS 0.75 s → 107
/// slots, minimum contention window 0.5 s → 71 slots, ACK timeout
/// 5.0 s → 710 slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacConfig {
    #[serde(default = "default_difs")]
    pub difs_slots: u64,
    #[serde(default = "default_sifs")]
    pub sifs_slots: u64,
    /// Minimum contention window W, in slots.
    #[serde(default = "default_cw_min")]
    pub cw_min: u64,
    /// Exponent cap: the window stops doubling past this many retries.
    #[serde(default = "default_backoff_cap")]
    pub max_backoff_exponent: u32,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_ack_timeout")]
    pub ack_timeout_slots: u64,
    /// Channel-busy decision threshold on per-frame energy.
    pub energy_threshold: f64,
    pub own_address: MacAddress,
    pub peer_address: MacAddress,
}

fn default_difs() -> u64 {
    107
}
fn default_sifs() -> u64 {
    15
}
fn default_cw_min() -> u64 {
    71
}
fn default_backoff_cap() -> u32 {
    6
}
fn default_max_retries() -> u32 {
    7
}
fn default_ack_timeout() -> u64 {
    710
}

impl MacConfig {
    pub fn validate(&self) -> Result<(), MacError> {
        if self.difs_slots <= self.sifs_slots {
            return Err(MacError::DifsNotAboveSifs {
                difs: self.difs_slots,
                sifs: self.sifs_slots,
            });
        }
        if self.cw_min == 0 {
            return Err(MacError::ZeroContentionWindow);
        }
        Ok(())
    }
}

// ── Channel sensing and backoff ──────────────────────────────────────

/// Per-frame channel energy: Σ|x(n)|².
pub fn energy(frame: &SampleFrame) -> f64 {
    frame.energy()
}

/// Binary exponential backoff: uniform over
/// `[0, cw_min · 2^min(k, cap) − 1]` slots for retry count k.
pub fn backoff_delay(k: u32, cfg: &MacConfig, rng: &mut ChaCha8Rng) -> u64 {
    let window = cfg.cw_min << k.min(cfg.max_backoff_exponent);
    rng.random_range(0..window)
}

/// Energy-threshold calibration from idle-channel frames:
/// `margin_factor × mean(energy)`. Feed at least ten frames of
/// representative noise.
pub fn calibrate_threshold(
    idle_frames: &[SampleFrame],
    margin_factor: f64,
) -> Result<f64, MacError> {
    if idle_frames.is_empty() {
        return Err(MacError::NoCalibrationFrames);
    }
    let mean = idle_frames.iter().map(energy).sum::<f64>() / idle_frames.len() as f64;
    Ok(margin_factor * mean)
}

// ── Events ───────────────────────────────────────────────────────────

/// Why a decoded packet was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// The node's own DATA leaked back into its receive path.
    SelfPacket,
    WrongAddress,
    HeaderCrc,
    Fcs,
}

/// Everything the state machines report, one record per occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum MacEvent {
    ChannelBusy,
    BackoffChosen { slots: u64 },
    DataFrameSent { seq: u16, frame_idx: usize },
    DataPacketSent { seq: u16 },
    AckReceived { seq: u16 },
    AckTimeout { k: u32 },
    DataReceived { seq: u16, fcs_ok: bool, source: MacAddress },
    PacketRejected { reason: RejectReason },
    PacketDropped { seq: u16 },
    EotReached,
}

/// A [`MacEvent`] stamped with its slot and node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub slot: u64,
    pub node: usize,
    #[serde(flatten)]
    pub event: MacEvent,
}

/// One slot's worth of node output.
#[derive(Debug, Default)]
pub struct StepOutput {
    pub events: Vec<LoggedEvent>,
    /// Wall time the receive path spent on this slot's frame, when the
    /// node was in a receiving state.
    pub rx_processing: Option<Duration>,
}

// ── Designated transmitter ───────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
enum DtxPhase {
    DetectEnergy {
        difs_remaining: u64,
        backoff_remaining: Option<u64>,
    },
    TransmitData {
        next_frame: usize,
    },
    ReceiveAck {
        timeout_remaining: u64,
    },
    EndOfTransmission,
}

/// The DTx state machine plus its embedded decode path.
pub struct DtxNode {
    node_id: usize,
    cfg: MacConfig,
    phy: PhyConfig,
    phase: DtxPhase,
    queue: VecDeque<DataPacketDescriptor>,
    current_frames: Vec<SampleFrame>,
    current_seq: u16,
    retry: u32,
    receiver: PacketReceiver,
    rng: ChaCha8Rng,
    eot_emitted: bool,
}

impl std::fmt::Debug for DtxNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DtxNode")
            .field("node", &self.node_id)
            .field("phase", &self.phase)
            .field("queued", &self.queue.len())
            .finish()
    }
}

impl DtxNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        node_id: usize,
        cfg: MacConfig,
        rffe_cfg: &RffeConfig,
        sync_cfg: &SyncConfig,
        phy: &PhyConfig,
        timing: &RadioTiming,
        engine: std::sync::Arc<XcorrEngine>,
        rng_seed: u64,
        packets: Vec<DataPacketDescriptor>,
    ) -> Result<Self, MacError> {
        cfg.validate()?;
        let receiver = PacketReceiver::new(rffe_cfg, sync_cfg, phy, engine, timing.sample_rate())?;
        let mut node = Self {
            node_id,
            cfg,
            phy: *phy,
            phase: DtxPhase::EndOfTransmission,
            queue: packets.into(),
            current_frames: Vec::new(),
            current_seq: 0,
            retry: 0,
            receiver,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            eot_emitted: false,
        };
        node.load_next_packet();
        Ok(node)
    }

    /// True once every queued packet has been acknowledged or dropped.
    pub fn is_done(&self) -> bool {
        matches!(self.phase, DtxPhase::EndOfTransmission)
    }

    /// True while the node is waiting on an ACK.
    pub fn is_waiting_ack(&self) -> bool {
        matches!(self.phase, DtxPhase::ReceiveAck { .. })
    }

    fn load_next_packet(&mut self) -> bool {
        match self.queue.pop_front() {
            Some(desc) => {
                self.current_seq = desc.sequence_number;
                let packet = build_data_packet(&desc).expect("descriptors validated upstream");
                self.current_frames = modulate_packet(&packet, &self.phy);
                self.retry = 0;
                self.phase = DtxPhase::DetectEnergy {
                    difs_remaining: self.cfg.difs_slots,
                    backoff_remaining: None,
                };
                true
            }
            None => {
                self.phase = DtxPhase::EndOfTransmission;
                false
            }
        }
    }

    /// The frame this node puts on the air this slot (phase 1 of the
    /// slot: decided before this slot's receive frame exists).
    pub fn poll_tx(&self) -> SampleFrame {
        match &self.phase {
            DtxPhase::TransmitData { next_frame } => self.current_frames[*next_frame].clone(),
            _ => SampleFrame::zero(),
        }
    }

    /// Phase 3 of the slot: consume this slot's receive frame and move
    /// the state machine.
    pub fn advance(&mut self, slot: u64, rx: &SampleFrame) -> StepOutput {
        let mut out = StepOutput::default();

        match std::mem::replace(&mut self.phase, DtxPhase::EndOfTransmission) {
            DtxPhase::DetectEnergy {
                mut difs_remaining,
                mut backoff_remaining,
            } => {
                if energy(rx) >= self.cfg.energy_threshold {
                    self.emit(&mut out, slot, MacEvent::ChannelBusy);
                    difs_remaining = self.cfg.difs_slots;
                } else if difs_remaining > 0 {
                    difs_remaining -= 1;
                    if difs_remaining == 0 && backoff_remaining.is_none() {
                        let slots = backoff_delay(self.retry, &self.cfg, &mut self.rng);
                        self.emit(&mut out, slot, MacEvent::BackoffChosen { slots });
                        backoff_remaining = Some(slots);
                    }
                } else if let Some(b) = backoff_remaining.as_mut() {
                    if *b > 0 {
                        *b -= 1;
                    }
                }

                if difs_remaining == 0 && backoff_remaining == Some(0) {
                    self.phase = DtxPhase::TransmitData { next_frame: 0 };
                } else {
                    self.phase = DtxPhase::DetectEnergy {
                        difs_remaining,
                        backoff_remaining,
                    };
                }
            }

            DtxPhase::TransmitData { next_frame } => {
                self.emit(
                    &mut out,
                    slot,
                    MacEvent::DataFrameSent {
                        seq: self.current_seq,
                        frame_idx: next_frame,
                    },
                );
                if next_frame + 1 < self.current_frames.len() {
                    self.phase = DtxPhase::TransmitData {
                        next_frame: next_frame + 1,
                    };
                } else {
                    self.emit(
                        &mut out,
                        slot,
                        MacEvent::DataPacketSent {
                            seq: self.current_seq,
                        },
                    );
                    self.receiver.reset();
                    self.phase = DtxPhase::ReceiveAck {
                        timeout_remaining: self.cfg.ack_timeout_slots,
                    };
                }
            }

            DtxPhase::ReceiveAck {
                mut timeout_remaining,
            } => {
                let started = Instant::now();
                let (rx_events, _estimate) = self.receiver.push_frame(rx);
                out.rx_processing = Some(started.elapsed());

                let mut resolved = false;
                for ev in rx_events {
                    match ev {
                        RxEvent::HeaderDecoded(info) => {
                            if let Some(reason) = self.ack_wait_filter(&info) {
                                self.emit(&mut out, slot, MacEvent::PacketRejected { reason });
                                self.receiver.abort_to_search();
                            }
                        }
                        RxEvent::HeaderInvalid => {
                            self.emit(
                                &mut out,
                                slot,
                                MacEvent::PacketRejected {
                                    reason: RejectReason::HeaderCrc,
                                },
                            );
                        }
                        RxEvent::PacketDone(parsed, _) => {
                            if parsed.kind == PacketKind::Ack
                                && parsed.dst() == self.cfg.own_address
                            {
                                if parsed.fcs_ok {
                                    self.emit(
                                        &mut out,
                                        slot,
                                        MacEvent::AckReceived {
                                            seq: self.current_seq,
                                        },
                                    );
                                    resolved = true;
                                    break;
                                } else {
                                    self.emit(
                                        &mut out,
                                        slot,
                                        MacEvent::PacketRejected {
                                            reason: RejectReason::Fcs,
                                        },
                                    );
                                }
                            } else {
                                let reason = if parsed.kind == PacketKind::Data
                                    && parsed.src() == Some(self.cfg.own_address)
                                {
                                    RejectReason::SelfPacket
                                } else {
                                    RejectReason::WrongAddress
                                };
                                self.emit(&mut out, slot, MacEvent::PacketRejected { reason });
                            }
                        }
                        RxEvent::Synchronized(_) | RxEvent::SfdNotFound => {}
                    }
                }

                if resolved {
                    if !self.load_next_packet() {
                        self.emit(&mut out, slot, MacEvent::EotReached);
                        self.eot_emitted = true;
                    }
                } else {
                    timeout_remaining -= 1;
                    if timeout_remaining == 0 {
                        self.retry += 1;
                        self.emit(&mut out, slot, MacEvent::AckTimeout { k: self.retry });
                        if self.retry > self.cfg.max_retries {
                            self.emit(
                                &mut out,
                                slot,
                                MacEvent::PacketDropped {
                                    seq: self.current_seq,
                                },
                            );
                            if !self.load_next_packet() {
                                self.emit(&mut out, slot, MacEvent::EotReached);
                                self.eot_emitted = true;
                            }
                        } else {
                            // retransmit: fresh DIFS, wider window at the
                            // next backoff draw
                            self.phase = DtxPhase::DetectEnergy {
                                difs_remaining: self.cfg.difs_slots,
                                backoff_remaining: None,
                            };
                        }
                    } else {
                        self.phase = DtxPhase::ReceiveAck { timeout_remaining };
                    }
                }
            }

            DtxPhase::EndOfTransmission => {
                if !self.eot_emitted {
                    self.emit(&mut out, slot, MacEvent::EotReached);
                    self.eot_emitted = true;
                }
                self.phase = DtxPhase::EndOfTransmission;
            }
        }

        out
    }

    /// Single-call step: the transmit frame reflects the pre-receive
    /// state, then the machine advances on the rx frame.
    pub fn step(&mut self, slot: u64, rx: &SampleFrame) -> (SampleFrame, StepOutput) {
        let tx = self.poll_tx();
        let out = self.advance(slot, rx);
        (tx, out)
    }

    /// While waiting for an ACK, decide from the MAC header alone
    /// whether the packet being decoded can possibly be our ACK.
    fn ack_wait_filter(&self, info: &HeaderInfo) -> Option<RejectReason> {
        match info.kind {
            PacketKind::Ack if info.dst == self.cfg.own_address => None,
            PacketKind::Ack => Some(RejectReason::WrongAddress),
            PacketKind::Data if info.src == Some(self.cfg.own_address) => {
                Some(RejectReason::SelfPacket)
            }
            PacketKind::Data => Some(RejectReason::WrongAddress),
        }
    }

    fn emit(&self, out: &mut StepOutput, slot: u64, event: MacEvent) {
        out.events.push(LoggedEvent {
            slot,
            node: self.node_id,
            event,
        });
    }
}

// ── Designated receiver ──────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
enum DrxPhase {
    ReceiveData,
    WaitSifs { remaining: u64 },
    TransmitAck { next_frame: usize },
}

/// The DRx state machine plus its embedded decode path. Performs no
/// energy detection.
pub struct DrxNode {
    node_id: usize,
    cfg: MacConfig,
    phy: PhyConfig,
    phase: DrxPhase,
    receiver: PacketReceiver,
    ack_frames: Vec<SampleFrame>,
    last_good_sender: Option<MacAddress>,
}

impl std::fmt::Debug for DrxNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DrxNode")
            .field("node", &self.node_id)
            .field("phase", &self.phase)
            .finish()
    }
}

impl DrxNode {
    pub fn new(
        node_id: usize,
        cfg: MacConfig,
        rffe_cfg: &RffeConfig,
        sync_cfg: &SyncConfig,
        phy: &PhyConfig,
        timing: &RadioTiming,
        engine: std::sync::Arc<XcorrEngine>,
    ) -> Result<Self, MacError> {
        cfg.validate()?;
        let receiver = PacketReceiver::new(rffe_cfg, sync_cfg, phy, engine, timing.sample_rate())?;
        Ok(Self {
            node_id,
            cfg,
            phy: *phy,
            phase: DrxPhase::ReceiveData,
            receiver,
            ack_frames: Vec::new(),
            last_good_sender: None,
        })
    }

    pub fn last_good_sender(&self) -> Option<MacAddress> {
        self.last_good_sender
    }

    pub fn poll_tx(&self) -> SampleFrame {
        match &self.phase {
            DrxPhase::TransmitAck { next_frame } => self.ack_frames[*next_frame].clone(),
            _ => SampleFrame::zero(),
        }
    }

    pub fn advance(&mut self, slot: u64, rx: &SampleFrame) -> StepOutput {
        let mut out = StepOutput::default();

        match std::mem::replace(&mut self.phase, DrxPhase::ReceiveData) {
            DrxPhase::ReceiveData => {
                let started = Instant::now();
                let (rx_events, _estimate) = self.receiver.push_frame(rx);
                out.rx_processing = Some(started.elapsed());

                for ev in rx_events {
                    match ev {
                        RxEvent::HeaderDecoded(info) => {
                            let ok = info.kind == PacketKind::Data
                                && info.dst == self.cfg.own_address;
                            if !ok {
                                self.emit(
                                    &mut out,
                                    slot,
                                    MacEvent::PacketRejected {
                                        reason: RejectReason::WrongAddress,
                                    },
                                );
                                self.receiver.abort_to_search();
                            }
                        }
                        RxEvent::HeaderInvalid => {
                            self.emit(
                                &mut out,
                                slot,
                                MacEvent::PacketRejected {
                                    reason: RejectReason::HeaderCrc,
                                },
                            );
                        }
                        RxEvent::PacketDone(parsed, _) => {
                            let source = parsed.src().unwrap_or(MacAddress([0; 6]));
                            self.emit(
                                &mut out,
                                slot,
                                MacEvent::DataReceived {
                                    seq: parsed.sequence_number().unwrap_or(0),
                                    fcs_ok: parsed.fcs_ok,
                                    source,
                                },
                            );
                            if parsed.fcs_ok {
                                self.last_good_sender = Some(source);
                                self.ack_frames =
                                    modulate_packet(&build_ack_packet(source), &self.phy);
                                self.phase = DrxPhase::WaitSifs {
                                    remaining: self.cfg.sifs_slots,
                                };
                            }
                            // a bad FCS falls back to searching with no ACK
                        }
                        RxEvent::Synchronized(_) | RxEvent::SfdNotFound => {}
                    }
                }
            }

            DrxPhase::WaitSifs { remaining } => {
                if remaining > 1 {
                    self.phase = DrxPhase::WaitSifs {
                        remaining: remaining - 1,
                    };
                } else {
                    self.phase = DrxPhase::TransmitAck { next_frame: 0 };
                }
            }

            DrxPhase::TransmitAck { next_frame } => {
                if next_frame + 1 < self.ack_frames.len() {
                    self.phase = DrxPhase::TransmitAck {
                        next_frame: next_frame + 1,
                    };
                } else {
                    self.receiver.reset();
                    self.phase = DrxPhase::ReceiveData;
                }
            }
        }

        out
    }

    pub fn step(&mut self, slot: u64, rx: &SampleFrame) -> (SampleFrame, StepOutput) {
        let tx = self.poll_tx();
        let out = self.advance(slot, rx);
        (tx, out)
    }

    fn emit(&self, out: &mut StepOutput, slot: u64, event: MacEvent) {
        out.events.push(LoggedEvent {
            slot,
            node: self.node_id,
            event,
        });
    }
}

// ── Node wrapper ─────────────────────────────────────────────────────

/// Either role, as the scheduler sees it.
pub enum Node {
    Dtx(Box<DtxNode>),
    Drx(Box<DrxNode>),
}

impl Node {
    pub fn poll_tx(&self) -> SampleFrame {
        match self {
            Node::Dtx(n) => n.poll_tx(),
            Node::Drx(n) => n.poll_tx(),
        }
    }

    pub fn advance(&mut self, slot: u64, rx: &SampleFrame) -> StepOutput {
        match self {
            Node::Dtx(n) => n.advance(slot, rx),
            Node::Drx(n) => n.advance(slot, rx),
        }
    }

    /// DTx nodes are done at end of transmission; a DRx never finishes.
    pub fn is_done(&self) -> bool {
        match self {
            Node::Dtx(n) => n.is_done(),
            Node::Drx(_) => true,
        }
    }

    pub fn is_dtx(&self) -> bool {
        matches!(self, Node::Dtx(_))
    }
}
