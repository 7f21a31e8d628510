//! The transmit chain — scramble, DBPSK-modulate, Barker-spread,
//! root-raised-cosine shape — and the receive-side inverse that
//! despreads, demodulates, and descrambles.
//!
//! Pulse shaping is split square-root raised cosine on both sides so the
//! cascade is (approximately) Nyquist at chip instants; rolloff and span
//! are configurable. Filters and scramblers are small stateful objects:
//! one owner per stream, fresh instances per packet.

use num_complex::Complex64;
use thiserror::Error;

use crate::frame::PacketBits;
use crate::timing::{SampleFrame, CHIPS_PER_BIT, FRAME_BITS, FRAME_SAMPLES, SAMPLES_PER_CHIP};

/// The 11-chip Barker sequence used for direct-sequence spreading.
pub const BARKER: [f64; 11] = [
    1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0,
];

/// Scrambler seed for the long preamble (initial 7-bit register state).
pub const SCRAMBLER_SEED: u8 = 0b110_1100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BasebandError {
    #[error("chip sequence length {0} is not a multiple of 11")]
    ChipAlignment(usize),
    #[error("expected {expected} input elements, got {got}")]
    BadInputLength { expected: usize, got: usize },
}

/// Transmit-side pulse shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhyConfig {
    /// Root-raised-cosine rolloff factor.
    pub rolloff: f64,
    /// Filter span in chip durations (one-sided span is half of this).
    pub span_chips: usize,
    /// Initial scrambler register state.
    pub scrambler_seed: u8,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            rolloff: 0.5,
            span_chips: 8,
            scrambler_seed: SCRAMBLER_SEED,
        }
    }
}

impl PhyConfig {
    /// The shared tx/rx square-root raised cosine taps.
    pub fn pulse_taps(&self) -> Vec<f64> {
        srrc_taps(self.rolloff, self.span_chips, SAMPLES_PER_CHIP)
    }
}

// ── Scrambler ────────────────────────────────────────────────────────

/// Self-synchronizing scrambler with feedback polynomial z⁻⁷ + z⁻⁴ + 1.
///
/// Register bit k holds the output delayed by k+1 bits, so the seed's
/// low bit is the most recent history bit.
#[derive(Debug, Clone)]
pub struct Scrambler {
    register: u8,
}

impl Scrambler {
    pub fn new(seed: u8) -> Self {
        Self {
            register: seed & 0x7F,
        }
    }

    pub fn state(&self) -> u8 {
        self.register
    }

    #[inline]
    fn feedback(&self) -> u8 {
        ((self.register >> 3) ^ (self.register >> 6)) & 1
    }

    #[inline]
    pub fn scramble_bit(&mut self, bit: u8) -> u8 {
        let out = (bit & 1) ^ self.feedback();
        self.register = ((self.register << 1) | out) & 0x7F;
        out
    }

    pub fn process(&mut self, bits: &[u8]) -> Vec<u8> {
        bits.iter().map(|&b| self.scramble_bit(b)).collect()
    }
}

/// Inverse of [`Scrambler`]; shifts received bits into the register, so
/// it self-synchronizes within 7 bits regardless of the seed.
#[derive(Debug, Clone)]
pub struct Descrambler {
    register: u8,
}

impl Descrambler {
    pub fn new(seed: u8) -> Self {
        Self {
            register: seed & 0x7F,
        }
    }

    #[inline]
    pub fn descramble_bit(&mut self, bit: u8) -> u8 {
        let bit = bit & 1;
        let out = bit ^ (((self.register >> 3) ^ (self.register >> 6)) & 1);
        self.register = ((self.register << 1) | bit) & 0x7F;
        out
    }

    pub fn process(&mut self, bits: &[u8]) -> Vec<u8> {
        bits.iter().map(|&b| self.descramble_bit(b)).collect()
    }
}

/// Scramble a bit sequence from the given register seed.
pub fn scramble(bits: &[u8], seed: u8) -> Vec<u8> {
    Scrambler::new(seed).process(bits)
}

/// Descramble with the standard preamble seed. Output is exact from bit
/// 0 when the stream was scrambled from the same seed, and correct from
/// bit 7 onward for any seed.
pub fn descramble(bits: &[u8]) -> Vec<u8> {
    Descrambler::new(SCRAMBLER_SEED).process(bits)
}

// ── DBPSK ────────────────────────────────────────────────────────────

/// Differential BPSK modulator; the reference symbol 1+0j is implicit
/// and not emitted, so n bits map to n unit-magnitude symbols.
#[derive(Debug, Clone)]
pub struct DbpskModulator {
    last: Complex64,
}

impl Default for DbpskModulator {
    fn default() -> Self {
        Self::new()
    }
}

impl DbpskModulator {
    pub fn new() -> Self {
        Self {
            last: Complex64::new(1.0, 0.0),
        }
    }

    pub fn process(&mut self, bits: &[u8]) -> Vec<Complex64> {
        bits.iter()
            .map(|&b| {
                if b & 1 == 1 {
                    self.last = -self.last;
                }
                self.last
            })
            .collect()
    }
}

/// Streaming DBPSK demodulator: bit k is 1 iff Re(x_k · conj(x_{k-1}))
/// is negative. The initial previous-symbol is 1+0j, matching the
/// modulator's implicit reference.
#[derive(Debug, Clone)]
pub struct DbpskDemodulator {
    prev: Complex64,
}

impl Default for DbpskDemodulator {
    fn default() -> Self {
        Self::new()
    }
}

impl DbpskDemodulator {
    pub fn new() -> Self {
        Self {
            prev: Complex64::new(1.0, 0.0),
        }
    }

    /// Seed the previous-symbol reference, e.g. when locking onto a
    /// stream mid-flight.
    pub fn with_reference(prev: Complex64) -> Self {
        Self { prev }
    }

    pub fn process(&mut self, symbols: &[Complex64]) -> Vec<u8> {
        symbols
            .iter()
            .map(|&s| {
                let bit = ((s * self.prev.conj()).re < 0.0) as u8;
                self.prev = s;
                bit
            })
            .collect()
    }
}

/// Modulate bits to DBPSK symbols (implicit leading reference 1+0j).
pub fn dbpsk_modulate(bits: &[u8]) -> Vec<Complex64> {
    DbpskModulator::new().process(bits)
}

/// Demodulate pairwise: n symbols yield n-1 bits. Invariant to any
/// constant phase rotation of the input.
pub fn dbpsk_demodulate(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .windows(2)
        .map(|w| ((w[1] * w[0].conj()).re < 0.0) as u8)
        .collect()
}

// ── Barker spreading ─────────────────────────────────────────────────

/// Multiply each symbol onto the 11-chip Barker code.
pub fn barker_spread(symbols: &[Complex64]) -> Vec<Complex64> {
    let mut chips = Vec::with_capacity(symbols.len() * CHIPS_PER_BIT);
    for &s in symbols {
        for &c in BARKER.iter() {
            chips.push(s * c);
        }
    }
    chips
}

/// Correlate each 11-chip block with the code and normalize by 11.
pub fn barker_despread(chips: &[Complex64]) -> Result<Vec<Complex64>, BasebandError> {
    if chips.len() % CHIPS_PER_BIT != 0 {
        return Err(BasebandError::ChipAlignment(chips.len()));
    }
    Ok(chips
        .chunks_exact(CHIPS_PER_BIT)
        .map(|block| {
            let sum: Complex64 = block
                .iter()
                .zip(BARKER.iter())
                .map(|(&x, &c)| x * c)
                .sum();
            sum / CHIPS_PER_BIT as f64
        })
        .collect())
}

// ── Pulse shaping ────────────────────────────────────────────────────

/// Unit-energy square-root raised cosine taps spanning `span_chips` chip
/// durations at `samples_per_chip` samples per chip (odd tap count).
pub fn srrc_taps(rolloff: f64, span_chips: usize, samples_per_chip: usize) -> Vec<f64> {
    assert!(rolloff > 0.0 && rolloff <= 1.0);
    let n = span_chips * samples_per_chip + 1;
    let mid = (n - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 - mid) / samples_per_chip as f64;
            srrc_point(t, rolloff)
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = energy.sqrt().recip();
    for h in &mut taps {
        *h *= scale;
    }
    taps
}

fn srrc_point(t: f64, beta: f64) -> f64 {
    use std::f64::consts::PI;
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let singular = 1.0 / (4.0 * beta);
    if (t.abs() - singular).abs() < 1e-9 {
        let a = PI / (4.0 * beta);
        return (beta / 2f64.sqrt())
            * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Streaming real-tapped FIR over complex samples. Causal, with a fixed
/// group delay of (taps-1)/2 samples; emits one output per input.
#[derive(Debug, Clone)]
pub struct FirFilter {
    taps: Vec<f64>,
    carry: Vec<Complex64>,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>) -> Self {
        assert!(!taps.is_empty());
        let carry = vec![Complex64::new(0.0, 0.0); taps.len() - 1];
        Self { taps, carry }
    }

    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn reset(&mut self) {
        self.carry.fill(Complex64::new(0.0, 0.0));
    }

    pub fn process(&mut self, input: &[Complex64]) -> Vec<Complex64> {
        let t = self.taps.len();
        let mut ext = Vec::with_capacity(self.carry.len() + input.len());
        ext.extend_from_slice(&self.carry);
        ext.extend_from_slice(input);

        let mut out = Vec::with_capacity(input.len());
        for n in 0..input.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            let base = n + t - 1;
            for (k, &h) in self.taps.iter().enumerate() {
                acc += ext[base - k] * h;
            }
            out.push(acc);
        }

        let keep = t - 1;
        self.carry.clear();
        self.carry.extend_from_slice(&ext[ext.len() - keep..]);
        out
    }
}

/// Transmit pulse shaping: upsample chips by 2 and apply the root
/// raised cosine. Streaming; output length equals 2× the chip count.
pub fn rc_filter_tx(chips: &[Complex64], fir: &mut FirFilter) -> Vec<Complex64> {
    let mut upsampled = Vec::with_capacity(chips.len() * SAMPLES_PER_CHIP);
    for &c in chips {
        upsampled.push(c);
        for _ in 1..SAMPLES_PER_CHIP {
            upsampled.push(Complex64::new(0.0, 0.0));
        }
    }
    fir.process(&upsampled)
}

/// Receive matched filter (same taps as the transmit side).
pub fn rc_filter_rx(samples: &[Complex64], fir: &mut FirFilter) -> Vec<Complex64> {
    fir.process(samples)
}

// ── SMSRC / DDD block compositions ───────────────────────────────────

/// The transmit chain of one node: scramble → DBPSK → Barker spread →
/// pulse shape. Stateful across frames so a multi-frame packet is one
/// contiguous waveform; filter edge effects land only at packet
/// boundaries.
#[derive(Debug, Clone)]
pub struct TxChain {
    scrambler: Scrambler,
    modulator: DbpskModulator,
    fir: FirFilter,
}

impl TxChain {
    pub fn new(phy: &PhyConfig) -> Self {
        Self {
            scrambler: Scrambler::new(phy.scrambler_seed),
            modulator: DbpskModulator::new(),
            fir: FirFilter::new(phy.pulse_taps()),
        }
    }

    /// Modulate bits to baseband samples: 22 samples per bit.
    pub fn process(&mut self, bits: &[u8]) -> Vec<Complex64> {
        let scrambled = self.scrambler.process(bits);
        let symbols = self.modulator.process(&scrambled);
        let chips = barker_spread(&symbols);
        rc_filter_tx(&chips, &mut self.fir)
    }

    /// One slot frame: exactly 64 bits in, 1408 samples out.
    pub fn frame(&mut self, bits: &[u8]) -> Result<SampleFrame, BasebandError> {
        if bits.len() != FRAME_BITS {
            return Err(BasebandError::BadInputLength {
                expected: FRAME_BITS,
                got: bits.len(),
            });
        }
        Ok(SampleFrame::from_samples(self.process(bits)))
    }
}

/// One-shot SMSRC over a single 64-bit slot frame.
pub fn smsrc(bits: &[u8], seed: u8, phy: &PhyConfig) -> Result<Vec<Complex64>, BasebandError> {
    if bits.len() != FRAME_BITS {
        return Err(BasebandError::BadInputLength {
            expected: FRAME_BITS,
            got: bits.len(),
        });
    }
    let mut chain = TxChain::new(&PhyConfig {
        scrambler_seed: seed,
        ..*phy
    });
    Ok(chain.process(bits))
}

/// Modulate a whole packet into slot frames.
pub fn modulate_packet(packet: &PacketBits, phy: &PhyConfig) -> Vec<SampleFrame> {
    let mut chain = TxChain::new(phy);
    let samples = chain.process(&packet.bits);
    samples
        .chunks_exact(FRAME_SAMPLES)
        .map(|chunk| SampleFrame::from_samples(chunk.to_vec()))
        .collect()
}

/// The receive-side inverse: matched filter → despread → demodulate →
/// descramble. Streaming with internal compensation of the full tx+rx
/// filter cascade delay, so it decodes streams produced by [`TxChain`].
#[derive(Debug, Clone)]
pub struct RxChain {
    fir: FirFilter,
    demod: DbpskDemodulator,
    descrambler: Descrambler,
    skip_remaining: usize,
    sample_toggle: usize,
    pending_chips: Vec<Complex64>,
}

impl RxChain {
    pub fn new(phy: &PhyConfig) -> Self {
        let fir = FirFilter::new(phy.pulse_taps());
        let skip = fir.taps.len() - 1; // tx delay + rx delay
        Self {
            fir,
            demod: DbpskDemodulator::new(),
            descrambler: Descrambler::new(phy.scrambler_seed),
            skip_remaining: skip,
            sample_toggle: 0,
            pending_chips: Vec::new(),
        }
    }

    /// Feed samples; returns every data bit that became decodable.
    pub fn process(&mut self, samples: &[Complex64]) -> Vec<u8> {
        let filtered = self.fir.process(samples);
        let mut bits = Vec::new();
        for &s in &filtered {
            if self.skip_remaining > 0 {
                self.skip_remaining -= 1;
                continue;
            }
            if self.sample_toggle == 0 {
                self.pending_chips.push(s);
            }
            self.sample_toggle = (self.sample_toggle + 1) % SAMPLES_PER_CHIP;

            if self.pending_chips.len() == CHIPS_PER_BIT {
                let symbol = barker_despread(&self.pending_chips).expect("11 chips");
                self.pending_chips.clear();
                let raw = self.demod.process(&symbol);
                bits.push(self.descrambler.descramble_bit(raw[0]));
            }
        }
        bits
    }
}

/// One-shot DDD over whole slot frames produced by [`smsrc`]/[`TxChain`]:
/// flushes the filter tail and returns exactly one bit per 22 samples.
pub fn ddd(samples: &[Complex64], phy: &PhyConfig) -> Result<Vec<u8>, BasebandError> {
    if samples.is_empty() || samples.len() % FRAME_SAMPLES != 0 {
        return Err(BasebandError::BadInputLength {
            expected: FRAME_SAMPLES,
            got: samples.len(),
        });
    }
    let mut chain = RxChain::new(phy);
    let mut bits = chain.process(samples);
    let flush = vec![Complex64::new(0.0, 0.0); chain.fir.taps.len() - 1];
    bits.extend(chain.process(&flush));
    bits.truncate(samples.len() / (CHIPS_PER_BIT * SAMPLES_PER_CHIP));
    Ok(bits)
}
