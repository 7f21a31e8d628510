//! Frame-aligned DATA and ACK packet construction and parsing.
//!
//! A packet is a flat bit sequence (LSB-first per octet) built from:
//!
//! ```text
//! SYNC 128 | SFD 16 | PLCP header 48 | MAC header | payload | FCS 32 | pad
//! ```
//!
//! Everything is sized in whole octets and zero-padded so the total is a
//! multiple of the 64-bit slot frame. A DATA packet carries the 24-octet
//! three-address MAC header zero-padded to 32 octets (the padding is
//! transmitted but excluded from the FCS); with a 2004-octet payload the
//! packet is exactly 258 slot frames. An ACK is always 40 octets — 5
//! frames. The complete layout is documented bit-exactly in
//! `docs/packet-layout.md`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{bits_to_octets, bits_to_uint, octets_to_bits, uint_to_bits};
use crate::crc::{crc16_plcp_bits, crc32_fcs};
use crate::timing::FRAME_BITS;

/// Length of the SYNC field in bits (128 scrambled ones).
pub const SYNC_BITS: usize = 128;
/// Start frame delimiter value; LSB-first serialization yields the
/// standard long-preamble time pattern.
pub const SFD: u16 = 0xF3A0;
/// Length of the SFD field in bits.
pub const SFD_BITS: usize = 16;
/// PLCP header length in bits: SIGNAL(8) SERVICE(8) LENGTH(16) CRC(16).
pub const PLCP_HEADER_BITS: usize = 48;
/// SIGNAL rate code for 1 Mbps DBPSK.
pub const SIGNAL_1MBPS: u8 = 0x0A;
/// Frame control value of a DATA frame (type Data, subtype 0).
pub const FC_DATA: u16 = 0x0008;
/// Frame control value of an ACK control frame.
pub const FC_ACK: u16 = 0x00D4;
/// True (unpadded) MAC DATA header length in octets.
pub const DATA_HEADER_OCTETS: usize = 24;
/// MAC DATA header length as transmitted, zero-padded to frame octets.
pub const DATA_HEADER_PADDED_OCTETS: usize = 32;
/// ACK body before padding: frame control, duration, RA, FCS.
pub const ACK_BODY_OCTETS: usize = 14;
/// ACK body as transmitted.
pub const ACK_BODY_PADDED_OCTETS: usize = 16;
/// Maximum payload length in octets.
pub const PAYLOAD_MAX_OCTETS: usize = 2312;

/// 6-octet MAC-layer station identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub fn octets(&self) -> &[u8; 6] {
        &self.0
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl FromStr for MacAddress {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(format!("expected 6 colon-separated octets, got {:?}", s));
        }
        let mut octets = [0u8; 6];
        for (i, part) in parts.iter().enumerate() {
            octets[i] =
                u8::from_str_radix(part, 16).map_err(|e| format!("bad octet {:?}: {}", part, e))?;
        }
        Ok(MacAddress(octets))
    }
}

impl TryFrom<String> for MacAddress {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<MacAddress> for String {
    fn from(a: MacAddress) -> String {
        a.to_string()
    }
}

/// What a DATA packet should carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPacketDescriptor {
    pub src: MacAddress,
    pub dst: MacAddress,
    pub bssid: MacAddress,
    /// Sequence number, 0..=4095.
    pub sequence_number: u16,
    /// Payload, up to 2312 octets.
    pub payload: Vec<u8>,
}

/// Packet kind carried by the frame control field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketKind {
    Data,
    Ack,
}

/// Bit offsets of each packet field; every field is a half-open range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketLayout {
    pub sync: std::ops::Range<usize>,
    pub sfd: std::ops::Range<usize>,
    pub plcp_header: std::ops::Range<usize>,
    /// MAC header region as transmitted (includes header padding).
    pub mac_header: std::ops::Range<usize>,
    pub payload: std::ops::Range<usize>,
    pub fcs: std::ops::Range<usize>,
    /// Tail padding up to the frame boundary.
    pub padding: std::ops::Range<usize>,
}

/// A fully assembled packet bit sequence, frame-aligned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketBits {
    pub bits: Vec<u8>,
    pub kind: PacketKind,
    pub layout: PacketLayout,
}

impl PacketBits {
    /// Number of 64-bit slot frames the packet occupies.
    pub fn frame_count(&self) -> usize {
        self.bits.len() / FRAME_BITS
    }

    /// The bit sequence starting at the SFD, as `parse_packet` expects.
    pub fn from_sfd(&self) -> &[u8] {
        &self.bits[self.layout.sfd.start..]
    }
}

/// Everything recovered from a received packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub kind: PacketKind,
    pub plcp_signal: u8,
    /// PLCP LENGTH field: microseconds at 1 Mbps, i.e. octets × 8.
    pub plcp_length_us: u16,
    pub plcp_crc_ok: bool,
    pub frame_control: u16,
    pub duration: u16,
    /// addr1..addr3 for DATA; the single receiver address for ACK.
    pub addresses: Vec<MacAddress>,
    /// Present on DATA frames only.
    pub sequence_control: Option<u16>,
    pub payload: Vec<u8>,
    pub fcs_ok: bool,
}

impl ParsedPacket {
    /// Sequence number (upper 12 bits of sequence control).
    pub fn sequence_number(&self) -> Option<u16> {
        self.sequence_control.map(|sc| sc >> 4)
    }

    /// Destination / receiver address (addr1).
    pub fn dst(&self) -> MacAddress {
        self.addresses[0]
    }

    /// Transmitter address (addr2); DATA frames only.
    pub fn src(&self) -> Option<MacAddress> {
        self.addresses.get(1).copied()
    }
}

/// Errors when assembling a packet.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload length {0} exceeds {PAYLOAD_MAX_OCTETS} octets")]
    PayloadTooLong(usize),
    #[error("sequence number {0} out of range 0..=4095")]
    SequenceOutOfRange(u16),
    #[error("PLCP LENGTH overflow: {0} octets does not fit the 16-bit field")]
    LengthOverflow(usize),
}

/// Errors when parsing a received bit stream.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("truncated packet: needed {needed} bits, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("SFD not present at the aligned position")]
    SfdMismatch,
    #[error("PLCP header CRC check failed")]
    PlcpHeaderCrc,
    #[error("malformed PLCP LENGTH field: {0} µs")]
    BadLength(u16),
    #[error("unrecognized frame control 0x{0:04x}")]
    UnknownFrameControl(u16),
}

/// Build the 48-bit PLCP header: SIGNAL, SERVICE (zero), LENGTH in
/// microseconds at 1 Mbps (octets × 8), and the CRC-16 over those 32 bits.
pub fn build_plcp_header(rate_code: u8, length_octets: usize) -> Result<Vec<u8>, FrameError> {
    let length_us = length_octets
        .checked_mul(8)
        .filter(|&v| v <= u16::MAX as usize)
        .ok_or(FrameError::LengthOverflow(length_octets))? as u16;

    let mut bits = Vec::with_capacity(PLCP_HEADER_BITS);
    bits.extend(uint_to_bits(rate_code as u64, 8));
    bits.extend(uint_to_bits(0, 8)); // SERVICE
    bits.extend(uint_to_bits(length_us as u64, 16));
    let crc = crc16_plcp_bits(&bits);
    bits.extend(uint_to_bits(crc as u64, 16));
    Ok(bits)
}

fn preamble_bits() -> Vec<u8> {
    let mut bits = vec![1u8; SYNC_BITS];
    bits.extend(uint_to_bits(SFD as u64, SFD_BITS));
    bits
}

/// Slot frames needed for a DATA packet with a `payload_octets` payload:
/// 2 (SYNC) + 1 (SFD + PLCP) + 4 (padded MAC header) + body frames.
pub fn data_frame_count(payload_octets: usize) -> usize {
    2 + 1 + 4 + (payload_octets + 4).div_ceil(8)
}

/// Build a frame-aligned DATA packet.
pub fn build_data_packet(desc: &DataPacketDescriptor) -> Result<PacketBits, FrameError> {
    if desc.payload.len() > PAYLOAD_MAX_OCTETS {
        return Err(FrameError::PayloadTooLong(desc.payload.len()));
    }
    if desc.sequence_number > 4095 {
        return Err(FrameError::SequenceOutOfRange(desc.sequence_number));
    }

    // True 24-octet header; the FCS covers header + payload, not padding.
    let mut header = Vec::with_capacity(DATA_HEADER_OCTETS);
    header.extend(FC_DATA.to_le_bytes());
    header.extend(0u16.to_le_bytes()); // duration: virtual carrier sense unused
    header.extend(desc.dst.octets());
    header.extend(desc.src.octets());
    header.extend(desc.bssid.octets());
    header.extend((desc.sequence_number << 4).to_le_bytes());

    let mut fcs_input = header.clone();
    fcs_input.extend(&desc.payload);
    let fcs = crc32_fcs(&fcs_input);

    // PLCP LENGTH covers the padded header, payload, and FCS (tail
    // padding excluded): the receiver recovers the payload length as
    // LENGTH/8 - 36.
    let length_octets = DATA_HEADER_PADDED_OCTETS + desc.payload.len() + 4;

    let mut bits = preamble_bits();
    let plcp_start = bits.len();
    bits.extend(build_plcp_header(SIGNAL_1MBPS, length_octets)?);

    let mac_start = bits.len();
    bits.extend(octets_to_bits(&header));
    bits.extend(std::iter::repeat_n(
        0u8,
        (DATA_HEADER_PADDED_OCTETS - DATA_HEADER_OCTETS) * 8,
    ));

    let payload_start = bits.len();
    bits.extend(octets_to_bits(&desc.payload));
    let fcs_start = bits.len();
    bits.extend(uint_to_bits(fcs as u64, 32));

    let pad_start = bits.len();
    let total = bits.len().div_ceil(FRAME_BITS) * FRAME_BITS;
    bits.resize(total, 0);

    Ok(PacketBits {
        bits,
        kind: PacketKind::Data,
        layout: PacketLayout {
            sync: 0..SYNC_BITS,
            sfd: SYNC_BITS..plcp_start,
            plcp_header: plcp_start..mac_start,
            mac_header: mac_start..payload_start,
            payload: payload_start..fcs_start,
            fcs: fcs_start..pad_start,
            padding: pad_start..total,
        },
    })
}

/// Build the 5-frame (40-octet) ACK packet addressed to `receiver`.
pub fn build_ack_packet(receiver: MacAddress) -> PacketBits {
    let mut body = Vec::with_capacity(ACK_BODY_OCTETS);
    body.extend(FC_ACK.to_le_bytes());
    body.extend(0u16.to_le_bytes());
    body.extend(receiver.octets());
    let fcs = crc32_fcs(&body);

    let mut bits = preamble_bits();
    let plcp_start = bits.len();
    bits.extend(build_plcp_header(SIGNAL_1MBPS, ACK_BODY_OCTETS).expect("fixed-size header"));

    let mac_start = bits.len();
    bits.extend(octets_to_bits(&body));
    let fcs_start = bits.len();
    bits.extend(uint_to_bits(fcs as u64, 32));
    let pad_start = bits.len();
    let total = bits.len().div_ceil(FRAME_BITS) * FRAME_BITS;
    bits.resize(total, 0);

    PacketBits {
        bits,
        kind: PacketKind::Ack,
        layout: PacketLayout {
            sync: 0..SYNC_BITS,
            sfd: SYNC_BITS..plcp_start,
            plcp_header: plcp_start..mac_start,
            mac_header: mac_start..fcs_start,
            payload: fcs_start..fcs_start,
            fcs: fcs_start..pad_start,
            padding: pad_start..total,
        },
    }
}

fn need(bits: &[u8], needed: usize) -> Result<(), ParseError> {
    if bits.len() < needed {
        Err(ParseError::Truncated {
            needed,
            got: bits.len(),
        })
    } else {
        Ok(())
    }
}

fn read_addr(bits: &[u8], start: usize) -> MacAddress {
    let octets = bits_to_octets(&bits[start..start + 48]);
    MacAddress([
        octets[0], octets[1], octets[2], octets[3], octets[4], octets[5],
    ])
}

/// Parse a packet from a descrambled bit stream beginning at the SFD
/// (synchronization already resolved). Header checks are hard errors;
/// an FCS mismatch is reported through `fcs_ok` with all other fields
/// intact.
pub fn parse_packet(
    bits: &[u8],
    kind_hint: Option<PacketKind>,
) -> Result<ParsedPacket, ParseError> {
    let plcp_end = SFD_BITS + PLCP_HEADER_BITS;
    need(bits, plcp_end)?;
    if bits_to_uint(&bits[0..SFD_BITS]) as u16 != SFD {
        return Err(ParseError::SfdMismatch);
    }

    let plcp = &bits[SFD_BITS..plcp_end];
    let signal = bits_to_uint(&plcp[0..8]) as u8;
    let length_us = bits_to_uint(&plcp[16..32]) as u16;
    let sent_crc = bits_to_uint(&plcp[32..48]) as u16;
    if crc16_plcp_bits(&plcp[0..32]) != sent_crc {
        return Err(ParseError::PlcpHeaderCrc);
    }

    need(bits, plcp_end + 16)?;
    let frame_control = bits_to_uint(&bits[plcp_end..plcp_end + 16]) as u16;
    let kind = match frame_control {
        FC_DATA => PacketKind::Data,
        FC_ACK => PacketKind::Ack,
        other => kind_hint.ok_or(ParseError::UnknownFrameControl(other))?,
    };

    if length_us % 8 != 0 {
        return Err(ParseError::BadLength(length_us));
    }
    let length_octets = (length_us / 8) as usize;

    match kind {
        PacketKind::Data => {
            let min = DATA_HEADER_PADDED_OCTETS + 4;
            if length_octets < min {
                return Err(ParseError::BadLength(length_us));
            }
            let payload_octets = length_octets - min;
            let hdr = plcp_end;
            let payload_start = hdr + DATA_HEADER_PADDED_OCTETS * 8;
            let fcs_start = payload_start + payload_octets * 8;
            need(bits, fcs_start + 32)?;

            let duration = bits_to_uint(&bits[hdr + 16..hdr + 32]) as u16;
            let addresses = vec![
                read_addr(bits, hdr + 32),
                read_addr(bits, hdr + 80),
                read_addr(bits, hdr + 128),
            ];
            let sequence_control = bits_to_uint(&bits[hdr + 176..hdr + 192]) as u16;
            let payload = bits_to_octets(&bits[payload_start..fcs_start]);
            let sent_fcs = bits_to_uint(&bits[fcs_start..fcs_start + 32]) as u32;

            let mut fcs_input = bits_to_octets(&bits[hdr..hdr + DATA_HEADER_OCTETS * 8]);
            fcs_input.extend(&payload);
            let fcs_ok = crc32_fcs(&fcs_input) == sent_fcs;

            Ok(ParsedPacket {
                kind,
                plcp_signal: signal,
                plcp_length_us: length_us,
                plcp_crc_ok: true,
                frame_control,
                duration,
                addresses,
                sequence_control: Some(sequence_control),
                payload,
                fcs_ok,
            })
        }
        PacketKind::Ack => {
            let hdr = plcp_end;
            let fcs_start = hdr + 80;
            need(bits, fcs_start + 32)?;
            let duration = bits_to_uint(&bits[hdr + 16..hdr + 32]) as u16;
            let ra = read_addr(bits, hdr + 32);
            let sent_fcs = bits_to_uint(&bits[fcs_start..fcs_start + 32]) as u32;
            let body = bits_to_octets(&bits[hdr..fcs_start]);
            let fcs_ok = crc32_fcs(&body) == sent_fcs;

            Ok(ParsedPacket {
                kind,
                plcp_signal: signal,
                plcp_length_us: length_us,
                plcp_crc_ok: true,
                frame_control,
                duration,
                addresses: vec![ra],
                sequence_control: None,
                payload: Vec::new(),
                fcs_ok,
            })
        }
    }
}

/// Standard-timing bidirectional link latency in microseconds at 1 Mbps:
/// DIFS + TxDATA + SIFS + TxACK, neglecting contention and backoff.
pub fn std_link_latency(data_octets: u32, ack_octets: u32) -> u32 {
    50 + data_octets * 8 + 10 + ack_octets * 8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(last: u8) -> MacAddress {
        MacAddress([0x02, 0, 0, 0, 0, last])
    }

    fn descriptor(payload_octets: usize) -> DataPacketDescriptor {
        DataPacketDescriptor {
            src: addr(1),
            dst: addr(2),
            bssid: addr(0xFF),
            sequence_number: 42,
            payload: (0..payload_octets).map(|i| (i % 251) as u8).collect(),
        }
    }

    /// Independent frame accounting: sum the field widths the layout
    /// prescribes, octet by octet, and round up to whole frames.
    fn frame_count_oracle(payload_octets: usize) -> usize {
        let preamble_plcp_octets = 16 + 2 + 6;
        let body_octets = 32 + payload_octets + 4;
        let padded_body = body_octets.div_ceil(8) * 8;
        (preamble_plcp_octets + padded_body) / 8
    }

    #[test]
    fn plcp_header_length_field() {
        let h = build_plcp_header(SIGNAL_1MBPS, 2072).unwrap();
        assert_eq!(bits_to_uint(&h[16..32]), 16576);
        assert_eq!(bits_to_uint(&h[0..8]), 0x0A);
        let crc = bits_to_uint(&h[32..48]) as u16;
        assert_eq!(crc16_plcp_bits(&h[0..32]), crc);

        let h40 = build_plcp_header(SIGNAL_1MBPS, 40).unwrap();
        assert_eq!(bits_to_uint(&h40[16..32]), 320);

        let h0 = build_plcp_header(SIGNAL_1MBPS, 0).unwrap();
        assert_eq!(bits_to_uint(&h0[16..32]), 0);
        let crc0 = bits_to_uint(&h0[32..48]) as u16;
        assert_eq!(crc16_plcp_bits(&h0[0..32]), crc0);

        assert_eq!(
            build_plcp_header(SIGNAL_1MBPS, 8192),
            Err(FrameError::LengthOverflow(8192))
        );
    }

    #[test]
    fn data_packet_frame_accounting() {
        for (payload, frames) in [(2004, 258), (0, 8), (500, 70)] {
            let pkt = build_data_packet(&descriptor(payload)).unwrap();
            assert_eq!(pkt.frame_count(), frames, "payload {}", payload);
            assert_eq!(frame_count_oracle(payload), frames);
            assert_eq!(data_frame_count(payload), frames);
            assert_eq!(pkt.bits.len() % FRAME_BITS, 0);
        }

        // A 2004-octet payload spans 250.5 frames and the SYNC exactly 2.
        let pkt = build_data_packet(&descriptor(2004)).unwrap();
        assert_eq!(pkt.layout.payload.len(), 2004 * 8);
        assert_eq!(pkt.layout.payload.len() as f64 / FRAME_BITS as f64, 250.5);
        assert_eq!(pkt.layout.sync.len() / FRAME_BITS, 2);
    }

    #[test]
    fn payload_too_long_rejected() {
        let err = build_data_packet(&descriptor(2313)).unwrap_err();
        assert_eq!(err, FrameError::PayloadTooLong(2313));
        assert!(build_data_packet(&descriptor(2312)).is_ok());
    }

    #[test]
    fn data_roundtrip() {
        let desc = descriptor(97);
        let pkt = build_data_packet(&desc).unwrap();
        let parsed = parse_packet(pkt.from_sfd(), None).unwrap();
        assert_eq!(parsed.kind, PacketKind::Data);
        assert!(parsed.fcs_ok);
        assert!(parsed.plcp_crc_ok);
        assert_eq!(parsed.dst(), desc.dst);
        assert_eq!(parsed.src(), Some(desc.src));
        assert_eq!(parsed.addresses[2], desc.bssid);
        assert_eq!(parsed.sequence_number(), Some(42));
        assert_eq!(parsed.payload, desc.payload);
    }

    #[test]
    fn flipped_payload_bit_fails_fcs() {
        let desc = descriptor(64);
        let pkt = build_data_packet(&desc).unwrap();
        let mut bits = pkt.bits.clone();
        let mid = pkt.layout.payload.start + pkt.layout.payload.len() / 2;
        bits[mid] ^= 1;
        let parsed = parse_packet(&bits[pkt.layout.sfd.start..], None).unwrap();
        assert!(!parsed.fcs_ok);
        assert_eq!(parsed.dst(), desc.dst); // fields otherwise intact
        assert_eq!(parsed.payload.len(), 64);
    }

    #[test]
    fn plcp_crc_failure_is_header_error() {
        let pkt = build_data_packet(&descriptor(16)).unwrap();
        let mut bits = pkt.from_sfd().to_vec();
        bits[SFD_BITS + 20] ^= 1; // corrupt the LENGTH field
        assert_eq!(parse_packet(&bits, None), Err(ParseError::PlcpHeaderCrc));
    }

    #[test]
    fn truncated_input() {
        let pkt = build_data_packet(&descriptor(100)).unwrap();
        let bits = pkt.from_sfd();
        let err = parse_packet(&bits[..bits.len() / 2], None).unwrap_err();
        assert!(matches!(err, ParseError::Truncated { .. }));
    }

    #[test]
    fn ack_packet() {
        let ra = addr(7);
        let pkt = build_ack_packet(ra);
        assert_eq!(pkt.frame_count(), 5);
        assert_eq!(pkt.bits.len(), 320);

        let parsed = parse_packet(pkt.from_sfd(), None).unwrap();
        assert_eq!(parsed.kind, PacketKind::Ack);
        assert_eq!(parsed.dst(), ra);
        assert!(parsed.fcs_ok);
        assert_eq!(parsed.sequence_control, None);
        assert_eq!(parsed.frame_control, FC_ACK);
    }

    #[test]
    fn std_latency_formula() {
        assert_eq!(std_link_latency(2072, 40), 16956);
        assert_eq!(std_link_latency(40, 40), 700);
        assert_eq!(std_link_latency(1, 1), 76);
    }

    #[test]
    fn mac_address_text_form() {
        let a: MacAddress = "02:00:00:00:00:2a".parse().unwrap();
        assert_eq!(a, MacAddress([2, 0, 0, 0, 0, 42]));
        assert_eq!(a.to_string(), "02:00:00:00:00:2a");
        assert!("02:00:00".parse::<MacAddress>().is_err());
    }
}
