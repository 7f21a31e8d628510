//! Streaming packet receiver: the per-slot composition of the receive
//! front end, two-stage synchronization, and despread/demodulate/
//! descramble, feeding the bit-level packet parser.
//!
//! One receiver instance belongs to one node. Every slot it ingests one
//! frame through the front end, then either searches for a preamble in a
//! two-frame sliding window or, once locked, extends the descrambled bit
//! stream and walks the packet structure: SFD confirmation, PLCP header
//! check, MAC header fields (surfaced early so the MAC can reject
//! foreign packets before wasting payload slots), payload and FCS.

use std::sync::Arc;

use num_complex::Complex64;

use crate::baseband::{barker_despread, DbpskDemodulator, Descrambler, PhyConfig};
use crate::frame::{self, MacAddress, PacketKind, ParseError, ParsedPacket};
use crate::frame::{PLCP_HEADER_BITS, SFD_BITS, SYNC_BITS};
use crate::rffe::{FreqOffsetEstimate, Rffe, RffeConfig, RffeError};
use crate::sync::{locate_sfd, SfdSearch, SyncResult, XcorrEngine};
use crate::timing::{SampleFrame, CHIPS_PER_BIT, FRAME_SAMPLES, SAMPLES_PER_BIT, SAMPLES_PER_CHIP};

/// MAC-relevant header fields, surfaced as soon as they decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderInfo {
    pub kind: PacketKind,
    pub plcp_length_us: u16,
    /// addr1: destination (DATA) or receiver address (ACK).
    pub dst: MacAddress,
    /// addr2: transmitter address; DATA frames only.
    pub src: Option<MacAddress>,
}

/// What one slot of receive processing produced.
#[derive(Debug, Clone, PartialEq)]
pub enum RxEvent {
    /// Preamble found and SFD matched exactly.
    Synchronized(SyncResult),
    /// PLCP header valid; MAC header fields available. The packet body
    /// is still streaming in.
    HeaderDecoded(HeaderInfo),
    /// PLCP header CRC (or structure) check failed; back to searching.
    HeaderInvalid,
    /// Stage 2 found no exact SFD in the search window; back to searching.
    SfdNotFound,
    /// Packet fully decoded; `fcs_ok` inside tells whether it survived.
    PacketDone(Box<ParsedPacket>, SyncResult),
}

/// Detector/decoder configuration shared by every receiving node.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    /// Stage-1 peak-to-RMS detection threshold.
    pub threshold_ratio: f64,
    /// Stage-2 SFD search window, bits each side.
    pub search_window: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            threshold_ratio: 4.0,
            search_window: 16,
        }
    }
}

enum RxState {
    Searching,
    Locked(Box<Locked>),
}

struct Locked {
    /// Chip-grid origin: the detected preamble start plus the tx+rx
    /// filter cascade delay, so grid point k samples chip k's center.
    grid_origin: u64,
    correlation_peak: f64,
    chips_done: u64,
    pending_chips: Vec<Complex64>,
    demod: DbpskDemodulator,
    descrambler: Descrambler,
    bits: Vec<u8>,
    sfd: Option<SfdSearch>,
    header_done: bool,
    /// Total bits from the SFD start once the PLCP header is read.
    total_bits: Option<usize>,
}

impl Locked {
    fn sync_result(&self) -> SyncResult {
        let sfd = self.sfd.expect("stage 2 complete");
        SyncResult {
            detected: true,
            sync_delay: (self.grid_origin + (sfd.post_sfd_bit as u64) * SAMPLES_PER_BIT as u64)
                as usize,
            correlation_peak: self.correlation_peak,
            stage2_shift: sfd.shift,
        }
    }
}

/// Streaming receiver for one node.
pub struct PacketReceiver {
    rffe: Rffe,
    engine: Arc<XcorrEngine>,
    sync_cfg: SyncConfig,
    phy: PhyConfig,
    cascade_delay: usize,
    buffer: Vec<Complex64>,
    buffer_start: u64,
    state: RxState,
}

impl std::fmt::Debug for PacketReceiver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PacketReceiver")
            .field("buffered", &self.buffer.len())
            .field(
                "state",
                &match self.state {
                    RxState::Searching => "searching",
                    RxState::Locked(_) => "locked",
                },
            )
            .finish()
    }
}

const SEARCH_WINDOW_SAMPLES: usize = 2 * FRAME_SAMPLES;

impl PacketReceiver {
    pub fn new(
        rffe_cfg: &RffeConfig,
        sync_cfg: &SyncConfig,
        phy: &PhyConfig,
        engine: Arc<XcorrEngine>,
        sample_rate: f64,
    ) -> Result<Self, RffeError> {
        Ok(Self {
            rffe: Rffe::new(rffe_cfg, phy, sample_rate)?,
            engine,
            sync_cfg: *sync_cfg,
            phy: *phy,
            cascade_delay: phy.pulse_taps().len() - 1,
            buffer: Vec::new(),
            buffer_start: 0,
            state: RxState::Searching,
        })
    }

    /// Drop all stream state (buffers, lock, filter tails); the adapted
    /// AGC gain survives. Called when a node re-enters a receive state.
    pub fn reset(&mut self) {
        self.rffe.reset_stream();
        self.buffer.clear();
        self.buffer_start = 0;
        self.state = RxState::Searching;
    }

    /// Abandon the packet currently being decoded and resume searching;
    /// used by the MAC to stop early on packets addressed elsewhere.
    pub fn abort_to_search(&mut self) {
        if matches!(self.state, RxState::Locked(_)) {
            self.trim_search_buffer();
            self.state = RxState::Searching;
        }
    }

    /// Ingest one slot frame; returns decode milestones reached this
    /// slot plus the front end's refreshed offset estimate.
    pub fn push_frame(&mut self, frame: &SampleFrame) -> (Vec<RxEvent>, FreqOffsetEstimate) {
        let (filtered, estimate) = self.rffe.process(frame);
        self.buffer.extend_from_slice(&filtered);

        let mut events = Vec::new();
        loop {
            match &mut self.state {
                RxState::Searching => {
                    self.trim_search_buffer();
                    if self.buffer.len() < SEARCH_WINDOW_SAMPLES {
                        break;
                    }
                    match self.engine.detect(&self.buffer, self.sync_cfg.threshold_ratio) {
                        Ok(Some(hit)) => {
                            let lock_pos = self.buffer_start + hit.delay as u64;
                            self.state = RxState::Locked(Box::new(Locked {
                                grid_origin: lock_pos + self.cascade_delay as u64,
                                correlation_peak: hit.peak,
                                chips_done: 0,
                                pending_chips: Vec::with_capacity(CHIPS_PER_BIT),
                                demod: DbpskDemodulator::new(),
                                descrambler: Descrambler::new(self.phy.scrambler_seed),
                                bits: Vec::with_capacity(512),
                                sfd: None,
                                header_done: false,
                                total_bits: None,
                            }));
                            // fall through to consume chips this slot
                        }
                        _ => break,
                    }
                }
                RxState::Locked(_) => {
                    let outcome = self.drive_locked(&mut events);
                    match outcome {
                        LockedOutcome::NeedMore => break,
                        LockedOutcome::BackToSearch => {
                            self.trim_search_buffer();
                            self.state = RxState::Searching;
                            // packets never follow back-to-back within the
                            // window, so searching resumes next slot
                            break;
                        }
                    }
                }
            }
        }

        (events, estimate)
    }

    fn trim_search_buffer(&mut self) {
        if self.buffer.len() > SEARCH_WINDOW_SAMPLES {
            let drop = self.buffer.len() - SEARCH_WINDOW_SAMPLES;
            self.buffer.drain(..drop);
            self.buffer_start += drop as u64;
        }
    }

    fn drive_locked(&mut self, events: &mut Vec<RxEvent>) -> LockedOutcome {
        let RxState::Locked(locked) = &mut self.state else {
            unreachable!()
        };

        // consume every complete chip available on the lock grid
        loop {
            let next_chip_abs = locked.grid_origin + locked.chips_done * SAMPLES_PER_CHIP as u64;
            let Some(rel) = next_chip_abs.checked_sub(self.buffer_start) else {
                // grid points fell off the buffer; lock is unrecoverable
                return LockedOutcome::BackToSearch;
            };
            let rel = rel as usize;
            if rel >= self.buffer.len() {
                break;
            }
            locked.pending_chips.push(self.buffer[rel]);
            locked.chips_done += 1;

            if locked.pending_chips.len() == CHIPS_PER_BIT {
                let symbol = barker_despread(&locked.pending_chips).expect("11 chips");
                locked.pending_chips.clear();
                let raw = locked.demod.process(&symbol)[0];
                locked.bits.push(locked.descrambler.descramble_bit(raw));
            }
        }

        // drop samples the chip grid has fully consumed
        let consumed_abs = locked.grid_origin + locked.chips_done * SAMPLES_PER_CHIP as u64;
        let keep_from = consumed_abs.saturating_sub(self.buffer_start) as usize;
        if keep_from > 0 && keep_from <= self.buffer.len() {
            self.buffer.drain(..keep_from);
            self.buffer_start += keep_from as u64;
        }

        // stage 2: exact SFD in the descrambled stream
        if locked.sfd.is_none() {
            let window = self.sync_cfg.search_window;
            if locked.bits.len() < SYNC_BITS + window + SFD_BITS {
                return LockedOutcome::NeedMore;
            }
            match locate_sfd(&locked.bits, SYNC_BITS, window) {
                Ok(hit) if hit.detected => {
                    locked.sfd = Some(hit);
                    events.push(RxEvent::Synchronized(locked.sync_result()));
                }
                _ => {
                    events.push(RxEvent::SfdNotFound);
                    return LockedOutcome::BackToSearch;
                }
            }
        }

        let sfd = locked.sfd.expect("confirmed above");
        let sfd_start = (SYNC_BITS as i64 + sfd.shift as i64) as usize;

        // PLCP header + early MAC header fields
        if !locked.header_done {
            // longest prefix the MAC needs before payload: DATA header
            let data_hdr_bits = SFD_BITS + PLCP_HEADER_BITS + frame::DATA_HEADER_OCTETS * 8;
            let ack_hdr_bits = SFD_BITS + PLCP_HEADER_BITS + 80;
            let have = locked.bits.len().saturating_sub(sfd_start);
            if have < ack_hdr_bits.min(data_hdr_bits) {
                return LockedOutcome::NeedMore;
            }
            match probe_header(&locked.bits[sfd_start..]) {
                Ok(Some((info, total_bits))) => {
                    locked.header_done = true;
                    locked.total_bits = Some(total_bits);
                    events.push(RxEvent::HeaderDecoded(info));
                }
                Ok(None) => return LockedOutcome::NeedMore,
                Err(_) => {
                    events.push(RxEvent::HeaderInvalid);
                    return LockedOutcome::BackToSearch;
                }
            }
        }

        // payload + FCS
        let total = locked.total_bits.expect("set with header");
        if locked.bits.len() < sfd_start + total {
            return LockedOutcome::NeedMore;
        }
        let packet_bits = &locked.bits[sfd_start..sfd_start + total];
        let result = frame::parse_packet(packet_bits, None);
        let sync = locked.sync_result();
        match result {
            Ok(parsed) => events.push(RxEvent::PacketDone(Box::new(parsed), sync)),
            Err(_) => events.push(RxEvent::HeaderInvalid),
        }
        LockedOutcome::BackToSearch
    }

    /// Current AGC-side front end, for inspection in tests and reports.
    pub fn rffe(&self) -> &Rffe {
        &self.rffe
    }
}

enum LockedOutcome {
    NeedMore,
    BackToSearch,
}

/// Bits from the SFD to the end of the last slot frame of a packet
/// whose PLCP LENGTH counts `length_octets`. Tail padding is included:
/// the packet occupies whole frames on the air, and decode milestones
/// land one slot after the final frame (the receive filter spills the
/// last chips into it).
fn padded_bits_from_sfd(length_octets: usize) -> usize {
    let raw = SYNC_BITS + SFD_BITS + PLCP_HEADER_BITS + 8 * length_octets;
    raw.div_ceil(crate::timing::FRAME_BITS) * crate::timing::FRAME_BITS - SYNC_BITS
}

/// Decode the PLCP header and the fixed MAC header prefix from a bit
/// stream starting at the SFD. `Ok(None)` means the DATA header is not
/// fully buffered yet; errors are malformed or CRC-failing headers.
fn probe_header(bits: &[u8]) -> Result<Option<(HeaderInfo, usize)>, ParseError> {
    use crate::bits::bits_to_uint;

    let plcp_end = SFD_BITS + PLCP_HEADER_BITS;
    let plcp = &bits[SFD_BITS..plcp_end];
    let sent_crc = bits_to_uint(&plcp[32..48]) as u16;
    if crate::crc::crc16_plcp_bits(&plcp[0..32]) != sent_crc {
        return Err(ParseError::PlcpHeaderCrc);
    }
    let length_us = bits_to_uint(&plcp[16..32]) as u16;
    if length_us % 8 != 0 {
        return Err(ParseError::BadLength(length_us));
    }
    let length_octets = (length_us / 8) as usize;

    let fc = bits_to_uint(&bits[plcp_end..plcp_end + 16]) as u16;
    let read_addr = |start: usize| -> MacAddress {
        let o = crate::bits::bits_to_octets(&bits[start..start + 48]);
        MacAddress([o[0], o[1], o[2], o[3], o[4], o[5]])
    };

    match fc {
        frame::FC_DATA => {
            let hdr_need = plcp_end + frame::DATA_HEADER_OCTETS * 8;
            if bits.len() < hdr_need {
                return Ok(None);
            }
            let min = frame::DATA_HEADER_PADDED_OCTETS + 4;
            if length_octets < min
                || length_octets - min > frame::PAYLOAD_MAX_OCTETS
            {
                return Err(ParseError::BadLength(length_us));
            }
            let info = HeaderInfo {
                kind: PacketKind::Data,
                plcp_length_us: length_us,
                dst: read_addr(plcp_end + 32),
                src: Some(read_addr(plcp_end + 80)),
            };
            Ok(Some((info, padded_bits_from_sfd(length_octets))))
        }
        frame::FC_ACK => {
            let info = HeaderInfo {
                kind: PacketKind::Ack,
                plcp_length_us: length_us,
                dst: read_addr(plcp_end + 32),
                src: None,
            };
            Ok(Some((info, padded_bits_from_sfd(length_octets))))
        }
        other => Err(ParseError::UnknownFrameControl(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseband::modulate_packet;
    use crate::frame::{build_ack_packet, build_data_packet, DataPacketDescriptor};
    use crate::sync::preamble_template;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::TAU;

    fn addr(last: u8) -> MacAddress {
        MacAddress([0x02, 0, 0, 0, 0, last])
    }

    fn receiver(phy: &PhyConfig) -> PacketReceiver {
        let engine = Arc::new(XcorrEngine::new(preamble_template(phy)).unwrap());
        PacketReceiver::new(
            &RffeConfig::default(),
            &SyncConfig::default(),
            phy,
            engine,
            2e5,
        )
        .unwrap()
    }

    fn data_packet(payload_octets: usize) -> DataPacketDescriptor {
        let mut rng = ChaCha8Rng::seed_from_u64(payload_octets as u64);
        DataPacketDescriptor {
            src: addr(1),
            dst: addr(2),
            bssid: addr(0xFF),
            sequence_number: 9,
            payload: (0..payload_octets).map(|_| rng.random()).collect(),
        }
    }

    fn noise_frame(sigma2: f64, rng: &mut ChaCha8Rng) -> SampleFrame {
        let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).unwrap();
        SampleFrame::from_samples(
            (0..FRAME_SAMPLES)
                .map(|_| Complex64::new(normal.sample(rng), normal.sample(rng)))
                .collect(),
        )
    }

    fn run_packet(
        rx: &mut PacketReceiver,
        frames: &[SampleFrame],
        mutate: impl Fn(usize, Complex64, u64) -> Complex64,
    ) -> Vec<RxEvent> {
        let mut events = Vec::new();
        let mut n_abs = 0u64;
        for frame in frames {
            let warped = SampleFrame::from_samples(
                frame
                    .samples()
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| mutate(k, s, n_abs + k as u64))
                    .collect(),
            );
            n_abs += FRAME_SAMPLES as u64;
            let (ev, _) = rx.push_frame(&warped);
            events.extend(ev);
        }
        events
    }

    fn trailing_quiet(n: usize) -> Vec<SampleFrame> {
        vec![SampleFrame::zero(); n]
    }

    #[test]
    fn clean_data_packet_decodes() {
        let phy = PhyConfig::default();
        let desc = data_packet(120);
        let mut frames = modulate_packet(&build_data_packet(&desc).unwrap(), &phy);
        frames.extend(trailing_quiet(2));

        let mut rx = receiver(&phy);
        let events = run_packet(&mut rx, &frames, |_, s, _| s);

        let done = events.iter().find_map(|e| match e {
            RxEvent::PacketDone(p, sync) => Some((p.clone(), *sync)),
            _ => None,
        });
        let (parsed, sync) = done.expect("packet should decode");
        assert!(parsed.fcs_ok);
        assert_eq!(parsed.payload, desc.payload);
        assert_eq!(sync.stage2_shift, 0);
        assert!(events
            .iter()
            .any(|e| matches!(e, RxEvent::HeaderDecoded(h) if h.kind == PacketKind::Data)));
    }

    #[test]
    fn offset_noise_and_gain_still_decode() {
        let phy = PhyConfig::default();
        let desc = data_packet(64);
        let mut frames = modulate_packet(&build_data_packet(&desc).unwrap(), &phy);
        frames.extend(trailing_quiet(2));

        let gain = 10f64.powf(-30.0 / 20.0);
        let snr_db = 15.0;
        let sigma2 = gain * gain * 0.5 / 10f64.powf(snr_db / 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).unwrap();

        // attenuate, rotate by a 100 Hz carrier offset, add noise
        let impaired: Vec<SampleFrame> = frames
            .iter()
            .enumerate()
            .map(|(f, frame)| {
                SampleFrame::from_samples(
                    frame
                        .samples()
                        .iter()
                        .enumerate()
                        .map(|(k, &s)| {
                            let n = (f * FRAME_SAMPLES + k) as f64;
                            s * gain * Complex64::from_polar(1.0, TAU * 100.0 * n / 2e5)
                                + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
                        })
                        .collect(),
                )
            })
            .collect();

        let mut rx = receiver(&phy);
        // two leading noise-only slots so the AGC has adapted to noise
        for _ in 0..2 {
            rx.push_frame(&noise_frame(sigma2, &mut rng));
        }
        let mut events = Vec::new();
        for frame in &impaired {
            let (ev, _) = rx.push_frame(frame);
            events.extend(ev);
        }

        let done = events.iter().find_map(|e| match e {
            RxEvent::PacketDone(p, _) => Some(p.clone()),
            _ => None,
        });
        let parsed = done.expect("packet should decode under offset+gain");
        assert!(parsed.fcs_ok);
        assert_eq!(parsed.payload, desc.payload);
    }

    #[test]
    fn ack_decodes_with_sample_offset() {
        let phy = PhyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pkt = build_ack_packet(addr(9));
        let frames = modulate_packet(&pkt, &phy);

        // embed at an arbitrary sample offset inside low noise
        let mut stream: Vec<Complex64> = Vec::new();
        let normal = Normal::new(0.0, (1e-6f64 / 2.0).sqrt()).unwrap();
        let lead = 700usize;
        for _ in 0..lead {
            stream.push(Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)));
        }
        for f in &frames {
            stream.extend_from_slice(f.samples());
        }
        while stream.len() % FRAME_SAMPLES != 0 {
            stream.push(Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)));
        }
        stream.extend(std::iter::repeat_n(
            Complex64::new(0.0, 0.0),
            2 * FRAME_SAMPLES,
        ));

        let mut rx = receiver(&phy);
        let mut events = Vec::new();
        for chunk in stream.chunks_exact(FRAME_SAMPLES) {
            let (ev, _) = rx.push_frame(&SampleFrame::from_samples(chunk.to_vec()));
            events.extend(ev);
        }

        let done = events.iter().find_map(|e| match e {
            RxEvent::PacketDone(p, s) => Some((p.clone(), *s)),
            _ => None,
        });
        let (parsed, _sync) = done.expect("ack should decode at arbitrary offset");
        assert_eq!(parsed.kind, PacketKind::Ack);
        assert_eq!(parsed.dst(), addr(9));
        assert!(parsed.fcs_ok);
    }

    #[test]
    fn corrupted_payload_reports_bad_fcs() {
        let phy = PhyConfig::default();
        let desc = data_packet(80);
        let mut frames = modulate_packet(&build_data_packet(&desc).unwrap(), &phy);
        frames.extend(trailing_quiet(2));

        // flip the sign of a handful of payload-region samples hard
        // enough to flip bits but leave sync/header intact
        let corrupt_from = 5 * FRAME_SAMPLES + 100;
        let corrupt_to = corrupt_from + 44;
        let mut rx = receiver(&phy);
        let events = run_packet(&mut rx, &frames, |_, s, n| {
            if (corrupt_from as u64..corrupt_to as u64).contains(&n) {
                -s
            } else {
                s
            }
        });

        let done = events.iter().find_map(|e| match e {
            RxEvent::PacketDone(p, _) => Some(p.clone()),
            _ => None,
        });
        let parsed = done.expect("structure still decodes");
        assert!(!parsed.fcs_ok, "fcs must fail on corrupted payload");
    }

    #[test]
    fn noise_only_slots_produce_no_packets() {
        let phy = PhyConfig::default();
        let mut rx = receiver(&phy);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..50 {
            let (events, _) = rx.push_frame(&noise_frame(0.5, &mut rng));
            assert!(!events
                .iter()
                .any(|e| matches!(e, RxEvent::PacketDone(_, _))));
        }
    }
}
