//! A software-defined, functionally IEEE 802.11b-compliant bidirectional
//! link layer at the 1 Mbps DBPSK/Barker operating point.
//!
//! The crate is organized around the classic SDR block structure:
//!
//! - [`frame`] — bit-exact DATA/ACK packet construction and parsing
//!   (PLCP preamble and header, MAC headers, CRC-16/CRC-32 checksums).
//! - [`baseband`] — the transmit chain (scramble, DBPSK, Barker spread,
//!   root-raised-cosine shaping) and its receive-side inverse.
//! - [`rffe`] — the receive front end: AGC, decimation, FFT-based coarse
//!   frequency offset estimation, offset compensation, matched filtering.
//! - [`sync`] — two-stage packet synchronization: FFT cross-correlation
//!   preamble search, then exact SFD confirmation in the bit domain.
//! - [`mac`] — CSMA/CA/ACK state machines for the designated transmitter
//!   and receiver, energy detection, and binary exponential backoff.
//! - [`medium`] — a slot-synchronized simulated RF medium: superposition,
//!   per-link gain and carrier offset, AWGN, optional self-leakage.
//! - [`sim`], [`metrics`], [`config`], [`iq`] — the experiment harness:
//!   scheduler, event-log metrics, config schema, and IQ file I/O.
//!
//! Time is slotted: one slot carries one 1408-sample frame (64 bits) and
//! lasts 7.04 ms. All MAC durations are counted in slots.

pub mod baseband;
pub mod bits;
pub mod config;
pub mod crc;
pub mod frame;
pub mod iq;
pub mod mac;
pub mod medium;
pub mod metrics;
pub mod receiver;
pub mod rffe;
pub mod sim;
pub mod sync;
pub mod timing;

pub use frame::{DataPacketDescriptor, MacAddress, PacketBits, PacketKind, ParsedPacket};
pub use timing::{RadioTiming, SampleFrame};
