//! Radio timing constants and the slot-frame sample container.
//!
//! The radio clock is derived from a fixed 100 MHz converter: with an
//! interpolation/decimation factor of 500 the baseband runs at 200 kHz
//! (5 µs per sample), and a 64-bit frame of 1408 samples takes 7.04 ms.
//! That frame time is the slot time — the smallest unit in which the
//! link layer makes a decision.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Spreading rate: chips per data bit (11-chip Barker code).
pub const CHIPS_PER_BIT: usize = 11;
/// Oversampling: baseband samples per chip.
pub const SAMPLES_PER_CHIP: usize = 2;
/// Samples per data bit (22).
pub const SAMPLES_PER_BIT: usize = CHIPS_PER_BIT * SAMPLES_PER_CHIP;
/// Bits carried by one slot frame.
pub const FRAME_BITS: usize = 64;
/// Complex samples in one slot frame (64 × 11 × 2 = 1408).
pub const FRAME_SAMPLES: usize = FRAME_BITS * SAMPLES_PER_BIT;

/// Fixed converter rate of the modeled front end, samples/second.
pub const ADC_RATE: f64 = 1.0e8;

/// Interpolation/decimation factors, frame length, and the sample and
/// slot times they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioTiming {
    /// Interpolation factor `R_i` (transmit side).
    pub interp_factor: u32,
    /// Decimation factor `R_d` (receive side). Must equal `interp_factor`.
    pub decim_factor: u32,
    /// Bits per slot frame `L_f`.
    pub frame_len_bits: usize,
}

impl RadioTiming {
    pub fn new(interp_factor: u32, decim_factor: u32, frame_len_bits: usize) -> Self {
        assert_eq!(
            interp_factor, decim_factor,
            "radio operates with symmetric interpolation/decimation"
        );
        assert!(interp_factor > 0);
        assert!(frame_len_bits > 0);
        Self {
            interp_factor,
            decim_factor,
            frame_len_bits,
        }
    }

    /// Seconds per baseband sample: `R_i / adc_rate`.
    pub fn t_sample(&self) -> f64 {
        self.interp_factor as f64 / ADC_RATE
    }

    /// Baseband sample rate in samples/second.
    pub fn sample_rate(&self) -> f64 {
        1.0 / self.t_sample()
    }

    /// Complex samples per slot frame.
    pub fn samples_per_frame(&self) -> usize {
        self.frame_len_bits * SAMPLES_PER_BIT
    }

    /// Slot time in seconds: the time one frame occupies on air.
    pub fn t_radio(&self) -> f64 {
        self.samples_per_frame() as f64 * self.t_sample()
    }
}

impl Default for RadioTiming {
    fn default() -> Self {
        Self::new(500, 500, FRAME_BITS)
    }
}

/// One slot's worth of complex baseband samples.
///
/// Every frame exchanged with the medium holds exactly
/// [`FRAME_SAMPLES`] samples; an all-zero frame is what a node puts on
/// the air while it is receiving.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    samples: Vec<Complex64>,
}

impl SampleFrame {
    /// An all-zero (silent) frame.
    pub fn zero() -> Self {
        Self {
            samples: vec![Complex64::new(0.0, 0.0); FRAME_SAMPLES],
        }
    }

    /// Wrap a sample vector; panics unless it is exactly one frame long.
    pub fn from_samples(samples: Vec<Complex64>) -> Self {
        assert_eq!(samples.len(), FRAME_SAMPLES, "slot frame must hold 1408 samples");
        Self { samples }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Sum of |x(n)|² over the frame.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }
}

impl Default for SampleFrame {
    fn default() -> Self {
        Self::zero()
    }
}
