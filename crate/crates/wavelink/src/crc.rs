//! PLCP and MAC-frame checksums.
//!
//! Two checksums guard a packet: a CRC-16 (CCITT polynomial, preset
//! ones, ones-complement output) over the 32 SIGNAL/SERVICE/LENGTH bits
//! of the PLCP header, and the standard CRC-32 frame check sequence over
//! the MAC header and payload. Both operate on the LSB-first serial bit
//! order used everywhere in this crate, which makes them the reflected
//! forms of their polynomials.
//!
//! Implementations here are byte-at-a-time table lookups; the test suite
//! checks them against an independent bitwise shift-register oracle.

/// Reflected CCITT polynomial x^16 + x^12 + x^5 + 1.
const CRC16_POLY_REV: u16 = 0x8408;
/// Reflected CRC-32 polynomial (IEEE 802.3).
const CRC32_POLY_REV: u32 = 0xEDB8_8320;

/// Output of `crc16_plcp` over a message with its CRC field appended;
/// constant for every message (the CRC residue property).
pub const CRC16_GOOD: u16 = 0x0F47;
/// Output of `crc32_fcs` over a message with its FCS field appended.
pub const CRC32_GOOD: u32 = 0x2144_DF1C;

const fn build_crc16_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut byte = 0usize;
    while byte < 256 {
        let mut crc = byte as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ CRC16_POLY_REV
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[byte] = crc;
        byte += 1;
    }
    table
}

const fn build_crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut byte = 0usize;
    while byte < 256 {
        let mut crc = byte as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ CRC32_POLY_REV
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[byte] = crc;
        byte += 1;
    }
    table
}

static CRC16_TABLE: [u16; 256] = build_crc16_table();
static CRC32_TABLE: [u32; 256] = build_crc32_table();

/// CRC-16 CCITT over octets: preset ones, ones-complement output,
/// LSB-first bit order. Check value over ASCII "123456789" is 0x906E.
pub fn crc16_plcp(octets: &[u8]) -> u16 {
    let mut crc = 0xFFFFu16;
    for &byte in octets {
        let idx = ((crc ^ byte as u16) & 0xFF) as usize;
        crc = (crc >> 8) ^ CRC16_TABLE[idx];
    }
    !crc
}

/// CRC-16 over a bit sequence (LSB-first per octet, length a multiple
/// of 8). The PLCP header CRC covers exactly 32 such bits.
pub fn crc16_plcp_bits(bits: &[u8]) -> u16 {
    crc16_plcp(&crate::bits::bits_to_octets(bits))
}

/// Standard 802.11 CRC-32 FCS: reflected, preset ones, complemented.
/// Check value over ASCII "123456789" is 0xCBF43926.
pub fn crc32_fcs(octets: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in octets {
        let idx = ((crc ^ byte as u32) & 0xFF) as usize;
        crc = (crc >> 8) ^ CRC32_TABLE[idx];
    }
    !crc
}

/// CRC-32 over a bit sequence (LSB-first per octet, length a multiple of 8).
pub fn crc32_fcs_bits(bits: &[u8]) -> u32 {
    crc32_fcs(&crate::bits::bits_to_octets(bits))
}
