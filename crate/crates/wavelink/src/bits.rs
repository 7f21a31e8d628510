//! Bit-sequence helpers.
//!
//! Packets are manipulated as flat `Vec<u8>` sequences of 0/1 values.
//! Serialization order is LSB-first within each octet, and multi-octet
//! fields are emitted low octet first, so a `u16` field appears on the
//! air as bits 0..15 of its value in order.

/// Expand octets into bits, LSB first within each octet.
pub fn octets_to_bits(octets: &[u8]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(octets.len() * 8);
    for &byte in octets {
        for i in 0..8 {
            bits.push((byte >> i) & 1);
        }
    }
    bits
}

/// Pack bits (LSB first per octet) back into octets.
/// The length must be a multiple of 8.
pub fn bits_to_octets(bits: &[u8]) -> Vec<u8> {
    assert!(bits.len() % 8 == 0, "bit count must be a multiple of 8");
    bits.chunks_exact(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i))
        })
        .collect()
}

/// Emit the low `width` bits of `value`, LSB first.
pub fn uint_to_bits(value: u64, width: usize) -> Vec<u8> {
    (0..width).map(|i| ((value >> i) & 1) as u8).collect()
}

/// Read up to 64 bits (LSB first) back into an integer.
pub fn bits_to_uint(bits: &[u8]) -> u64 {
    assert!(bits.len() <= 64);
    bits.iter()
        .enumerate()
        .fold(0u64, |acc, (i, &b)| acc | (((b & 1) as u64) << i))
}
