//! Receive front end: AGC, decimation, FFT-based coarse frequency
//! offset estimation, offset compensation, and receive filtering — in
//! that order.
//!
//! The frequency estimator squares the signal to strip DBPSK modulation
//! and picks the FFT argmax (the estimate is half the peak frequency),
//! so its unambiguous range is ±rate/4 ≈ ±2272.7 Hz after the
//! decimate-by-22 stage. Estimation runs on the decimated stream; the
//! correction is applied to the full-rate stream with phase continuity
//! across frames.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::baseband::{FirFilter, PhyConfig};
use crate::timing::{SampleFrame, SAMPLES_PER_BIT};

/// Decimation factor ahead of the frequency estimator: receive filter
/// oversampling times the spreading rate.
pub const RFFE_DECIM_FACTOR: usize = SAMPLES_PER_BIT;

#[derive(Debug, Error, PartialEq)]
pub enum RffeError {
    #[error("frequency resolution must be positive, got {0}")]
    BadFreqResolution(f64),
    #[error("{field} = {value} outside supported range {min}..={max}")]
    ConfigRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
}

/// Tunable front-end parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RffeConfig {
    /// AGC maximum power gain in dB (30–60).
    pub agc_max_gain_db: f64,
    /// AGC adaptation step size (0.01–0.5); larger converges faster.
    pub agc_step: f64,
    /// Frequency resolution Δf of the offset estimator in Hz (1–100).
    pub freq_resolution_hz: f64,
    /// Decimation factor ahead of the estimator.
    pub decim_factor: usize,
    /// AGC output power target (linear).
    pub target_power: f64,
}

impl Default for RffeConfig {
    fn default() -> Self {
        Self {
            agc_max_gain_db: 40.0,
            agc_step: 0.1,
            freq_resolution_hz: 100.0,
            decim_factor: RFFE_DECIM_FACTOR,
            target_power: 1.0,
        }
    }
}

impl RffeConfig {
    pub fn validate(&self) -> Result<(), RffeError> {
        let checks = [
            ("agc_max_gain_db", self.agc_max_gain_db, 30.0, 60.0),
            ("agc_step", self.agc_step, 0.01, 0.5),
            ("freq_resolution_hz", self.freq_resolution_hz, 1.0, 100.0),
        ];
        for (field, value, min, max) in checks {
            if !(min..=max).contains(&value) {
                return Err(RffeError::ConfigRange {
                    field,
                    value,
                    min,
                    max,
                });
            }
        }
        if self.target_power <= 0.0 {
            return Err(RffeError::ConfigRange {
                field: "target_power",
                value: self.target_power,
                min: f64::MIN_POSITIVE,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }
}

// ── AGC ──────────────────────────────────────────────────────────────

/// Per-sample logarithmic-loop AGC: each sample nudges the gain toward
/// the target output power by the adaptation step, with the gain capped
/// at the configured maximum.
#[derive(Debug, Clone)]
pub struct Agc {
    gain: f64,
    max_gain: f64,
    step: f64,
    target_power: f64,
}

impl Agc {
    pub fn new(cfg: &RffeConfig) -> Self {
        Self {
            gain: 1.0,
            max_gain: 10f64.powf(cfg.agc_max_gain_db / 20.0),
            step: cfg.agc_step,
            target_power: cfg.target_power,
        }
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn process(&mut self, samples: &[Complex64]) -> Vec<Complex64> {
        samples
            .iter()
            .map(|&x| {
                let y = x * self.gain;
                let p = y.norm_sqr();
                if p > 0.0 {
                    self.gain *= (self.target_power / p).powf(0.5 * self.step);
                    self.gain = self.gain.clamp(1e-12, self.max_gain);
                }
                y
            })
            .collect()
    }
}

// ── Decimation ───────────────────────────────────────────────────────

/// Anti-alias lowpass FIR followed by keep-every-Nth. Streaming; each
/// call yields `ceil(len / factor)` samples once primed, and a factor
/// of 1 passes the input through untouched.
#[derive(Debug, Clone)]
pub struct Decimator {
    factor: usize,
    taps: Vec<f64>,
    buf: Vec<Complex64>,
    offset: usize,
}

impl Decimator {
    pub fn new(factor: usize) -> Self {
        assert!(factor >= 1);
        let taps = if factor == 1 {
            Vec::new()
        } else {
            lowpass_taps(0.4 / factor as f64, 4 * factor + 1)
        };
        let buf = vec![Complex64::new(0.0, 0.0); taps.len().saturating_sub(1)];
        Self {
            factor,
            taps,
            buf,
            offset: 0,
        }
    }

    pub fn reset(&mut self) {
        self.buf.clear();
        self.buf
            .resize(self.taps.len().saturating_sub(1), Complex64::new(0.0, 0.0));
        self.offset = 0;
    }

    pub fn process(&mut self, input: &[Complex64]) -> Vec<Complex64> {
        if self.factor == 1 {
            return input.to_vec();
        }
        let t = self.taps.len();
        self.buf.extend_from_slice(input);
        let mut out = Vec::with_capacity(input.len() / self.factor + 1);
        while self.offset + t <= self.buf.len() {
            let base = self.offset + t - 1;
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &h) in self.taps.iter().enumerate() {
                acc += self.buf[base - k] * h;
            }
            out.push(acc);
            self.offset += self.factor;
        }
        self.buf.drain(..self.offset);
        self.offset = 0;
        out
    }
}

/// Symmetric windowed-sinc lowpass; `cutoff` as a fraction of the input
/// sample rate, unity DC gain.
fn lowpass_taps(cutoff: f64, ntaps: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let mid = (ntaps - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..ntaps)
        .map(|n| {
            let k = n as f64 - mid;
            let ideal = if k.abs() < 1e-12 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * k).sin() / (PI * k)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (ntaps - 1) as f64).cos();
            ideal * window
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    for h in &mut taps {
        *h /= dc;
    }
    taps
}

/// Decimate a block with a fresh filter state.
pub fn decimate(samples: &[Complex64], factor: usize) -> Vec<Complex64> {
    Decimator::new(factor).process(samples)
}

// ── Coarse frequency offset estimation ───────────────────────────────

/// Result of one offset estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqOffsetEstimate {
    /// Estimated carrier offset in Hz.
    pub f_offset: f64,
    /// FFT length the estimate used (shrinks as Δf grows).
    pub fft_length: usize,
}

/// FFT-based coarse frequency offset estimator over the squared signal.
pub struct CfoEstimator {
    delta_f: f64,
    sample_rate: f64,
    fft_len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CfoEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CfoEstimator")
            .field("delta_f", &self.delta_f)
            .field("sample_rate", &self.sample_rate)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl CfoEstimator {
    /// `delta_f` is the frequency resolution in Hz; the FFT length is
    /// the next power of two at or above `sample_rate / delta_f`.
    pub fn new(delta_f: f64, sample_rate: f64) -> Result<Self, RffeError> {
        if delta_f <= 0.0 {
            return Err(RffeError::BadFreqResolution(delta_f));
        }
        let min_len = (sample_rate / delta_f).ceil() as usize;
        let fft_len = min_len.max(2).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        Ok(Self {
            delta_f,
            sample_rate,
            fft_len,
            fft,
        })
    }

    pub fn fft_length(&self) -> usize {
        self.fft_len
    }

    /// Estimate the carrier offset of `samples` (at this estimator's
    /// sample rate). Squares the signal, zero-pads to the FFT length,
    /// and halves the argmax frequency; ties break toward DC.
    pub fn estimate(&mut self, samples: &[Complex64]) -> FreqOffsetEstimate {
        if samples.len() > self.fft_len {
            self.fft_len = samples.len().next_power_of_two();
            self.fft = FftPlanner::new().plan_fft_forward(self.fft_len);
        }
        let n = self.fft_len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &s) in buf.iter_mut().zip(samples.iter()) {
            *b = s * s;
        }
        self.fft.process(&mut buf);

        let bin_freq = |k: usize| -> f64 {
            let signed = if k <= n / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            signed * self.sample_rate / n as f64
        };

        let mut best_mag = f64::NEG_INFINITY;
        let mut best_freq = 0.0f64;
        for (k, c) in buf.iter().enumerate() {
            let mag = c.norm_sqr();
            let f = bin_freq(k);
            if mag > best_mag || (mag == best_mag && f.abs() < best_freq.abs()) {
                best_mag = mag;
                best_freq = f;
            }
        }

        FreqOffsetEstimate {
            f_offset: best_freq / 2.0,
            fft_length: n,
        }
    }
}

/// One-shot estimate with a freshly planned FFT.
pub fn estimate_freq_offset(
    samples: &[Complex64],
    delta_f: f64,
    sample_rate: f64,
) -> Result<FreqOffsetEstimate, RffeError> {
    Ok(CfoEstimator::new(delta_f, sample_rate)?.estimate(samples))
}

// ── Frequency offset compensation ────────────────────────────────────

/// Mixes the stream by exp(-j2π·f·n/rate) with phase carried across
/// calls, so per-frame corrections stay continuous even as the estimate
/// is refreshed.
#[derive(Debug, Clone, Default)]
pub struct FreqCompensator {
    phase: f64,
}

impl FreqCompensator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.phase = 0.0;
    }

    pub fn process(
        &mut self,
        samples: &[Complex64],
        f_offset: f64,
        sample_rate: f64,
    ) -> Vec<Complex64> {
        use std::f64::consts::TAU;
        let step_angle = -TAU * f_offset / sample_rate;
        let step = Complex64::from_polar(1.0, step_angle);
        let mut rot = Complex64::from_polar(1.0, -self.phase);
        let mut out = Vec::with_capacity(samples.len());
        for (n, &x) in samples.iter().enumerate() {
            out.push(x * rot);
            rot *= step;
            if n % 512 == 511 {
                rot /= rot.norm(); // keep the recurrence on the unit circle
            }
        }
        self.phase = (self.phase - step_angle * samples.len() as f64) % TAU;
        out
    }
}

// ── Composed front end ───────────────────────────────────────────────

/// The per-node receive front end; one instance per receiving stream.
#[derive(Debug)]
pub struct Rffe {
    cfg: RffeConfig,
    sample_rate: f64,
    agc: Agc,
    decimator: Decimator,
    cfo: CfoEstimator,
    compensator: FreqCompensator,
    rx_filter: FirFilter,
}

impl Rffe {
    pub fn new(cfg: &RffeConfig, phy: &PhyConfig, sample_rate: f64) -> Result<Self, RffeError> {
        cfg.validate()?;
        let decimated_rate = sample_rate / cfg.decim_factor as f64;
        Ok(Self {
            cfg: *cfg,
            sample_rate,
            agc: Agc::new(cfg),
            decimator: Decimator::new(cfg.decim_factor),
            cfo: CfoEstimator::new(cfg.freq_resolution_hz, decimated_rate)?,
            compensator: FreqCompensator::new(),
            rx_filter: FirFilter::new(phy.pulse_taps()),
        })
    }

    /// Last estimator FFT length (fixed per configuration).
    pub fn fft_length(&self) -> usize {
        self.cfo.fft_length()
    }

    /// Process one slot frame: AGC, decimate, estimate, compensate the
    /// full-rate stream, receive-filter. The estimate refreshes every
    /// frame.
    pub fn process(&mut self, frame: &SampleFrame) -> (Vec<Complex64>, FreqOffsetEstimate) {
        let leveled = self.agc.process(frame.samples());
        let decimated = self.decimator.process(&leveled);
        let estimate = self.cfo.estimate(&decimated);
        let corrected = self
            .compensator
            .process(&leveled, estimate.f_offset, self.sample_rate);
        let filtered = self.rx_filter.process(&corrected);
        (filtered, estimate)
    }

    /// Drop stream state (filters, compensation phase) while keeping the
    /// adapted AGC gain; used when a node re-enters a receive state.
    pub fn reset_stream(&mut self) {
        self.decimator.reset();
        self.compensator.reset();
        self.rx_filter.reset();
    }

    pub fn config(&self) -> &RffeConfig {
        &self.cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseband::{smsrc, BARKER, SCRAMBLER_SEED};
    use crate::bits::octets_to_bits;
    use crate::timing::{CHIPS_PER_BIT, FRAME_SAMPLES, SAMPLES_PER_CHIP};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn tone(freq: f64, rate: f64, n: usize, amp: f64) -> Vec<Complex64> {
        (0..n)
            .map(|i| Complex64::from_polar(amp, TAU * freq * i as f64 / rate))
            .collect()
    }

    // ── AGC ─────────────────────────────────────────────────────────

    /// Scalar recurrence oracle: number of samples until the output
    /// power of a constant-envelope input is within `tol` of target.
    fn agc_convergence_oracle(input_power: f64, target: f64, step: f64, tol: f64) -> usize {
        let mut gain = 1.0f64;
        for k in 0..100_000 {
            let p = gain * gain * input_power;
            if (p - target).abs() <= tol * target {
                return k;
            }
            gain *= (target / p).powf(0.5 * step);
        }
        panic!("oracle did not converge");
    }

    #[test]
    fn agc_converges_to_target() {
        let cfg = RffeConfig::default();
        let input = tone(0.0, 1.0, 4096, 0.1); // -20 dB of target power 1.0
        let mut counts = Vec::new();
        for step in [0.05, 0.1, 0.3] {
            let mut agc = Agc::new(&RffeConfig {
                agc_step: step,
                ..cfg
            });
            let out = agc.process(&input);
            let k = agc_convergence_oracle(0.01, 1.0, step, 0.05);
            let p = out[k].norm_sqr();
            assert!(
                (p - 1.0).abs() <= 0.05,
                "step {}: power {} at oracle step {}",
                step,
                p,
                k
            );
            counts.push(k);
        }
        // convergence speeds up as the step grows
        assert!(counts[0] > counts[1] && counts[1] > counts[2], "{:?}", counts);
    }

    #[test]
    fn agc_fixed_point_at_target() {
        let mut agc = Agc::new(&RffeConfig::default());
        let input = tone(100.0, 1000.0, 256, 1.0); // unit power already
        agc.process(&input);
        assert!((agc.gain() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn agc_clamps_at_max_gain() {
        let cfg = RffeConfig {
            agc_max_gain_db: 30.0,
            ..RffeConfig::default()
        };
        let mut agc = Agc::new(&cfg);
        let input = tone(0.0, 1.0, 8192, 1e-4); // 80 dB below target
        let out = agc.process(&input);
        let expected_amp = 1e-4 * 10f64.powf(30.0 / 20.0);
        let tail = out.last().unwrap().norm();
        assert!(
            (tail - expected_amp).abs() < 1e-12,
            "tail {} vs {}",
            tail,
            expected_amp
        );
    }

    // ── Decimation ──────────────────────────────────────────────────

    #[test]
    fn decimate_factor_one_is_identity() {
        let x = tone(3.0, 100.0, 64, 1.0);
        assert_eq!(decimate(&x, 1), x);
    }

    #[test]
    fn decimate_frame_to_64() {
        let x = tone(1000.0, 2e5, FRAME_SAMPLES, 1.0);
        let y = decimate(&x, 22);
        assert_eq!(y.len(), 64);
    }

    /// DFT-scan oracle: densely evaluate |X(f)| on a grid and return the
    /// argmax frequency.
    fn dft_scan_peak(samples: &[Complex64], rate: f64, f_min: f64, f_max: f64, step: f64) -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut f = f_min;
        while f <= f_max {
            let acc: Complex64 = samples
                .iter()
                .enumerate()
                .map(|(n, &x)| x * Complex64::from_polar(1.0, -TAU * f * n as f64 / rate))
                .sum();
            let mag = acc.norm_sqr();
            if mag > best.0 {
                best = (mag, f);
            }
            f += step;
        }
        best.1
    }

    #[test]
    fn decimated_tone_keeps_its_frequency() {
        let rate = 2e5;
        let f0 = 1000.0;
        let x = tone(f0, rate, FRAME_SAMPLES * 4, 1.0);
        let y = decimate(&x, 22);
        let dec_rate = rate / 22.0;
        let peak = dft_scan_peak(&y, dec_rate, 0.0, 4000.0, 5.0);
        assert!((peak - f0).abs() <= 20.0, "peak at {}", peak);
    }

    // ── CFOE ────────────────────────────────────────────────────────

    #[test]
    fn cfoe_tone_at_decimated_rate() {
        let rate = 2e5 / 22.0;
        let x = tone(500.0, rate, 64, 1.0);
        let est = estimate_freq_offset(&x, 100.0, rate).unwrap();
        // cross-check against the dense scan of the squared signal
        let squared: Vec<Complex64> = x.iter().map(|&s| s * s).collect();
        let scan = dft_scan_peak(&squared, rate, 0.0, 2000.0, 1.0) / 2.0;
        assert!((est.f_offset - 500.0).abs() <= 50.0, "est {}", est.f_offset);
        assert!((scan - 500.0).abs() <= 10.0, "scan {}", scan);
        assert!((est.f_offset - scan).abs() <= 50.0);
    }

    #[test]
    fn cfoe_dc_and_zero_input() {
        let rate = 9090.9;
        let x = tone(0.0, rate, 64, 1.0);
        let est = estimate_freq_offset(&x, 100.0, rate).unwrap();
        assert_eq!(est.f_offset, 0.0);

        let zeros = vec![Complex64::new(0.0, 0.0); 64];
        let est = estimate_freq_offset(&zeros, 100.0, rate).unwrap();
        assert_eq!(est.f_offset, 0.0); // argmax tie broken to DC

        assert_eq!(
            estimate_freq_offset(&zeros, 0.0, rate),
            Err(RffeError::BadFreqResolution(0.0))
        );
    }

    #[test]
    fn cfoe_strips_bpsk_modulation() {
        let rate = 2e5 / 22.0;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f0 = 800.0;
        let x: Vec<Complex64> = (0..128)
            .map(|n| {
                let sym = if rng.random_range(0..2) == 1 { 1.0 } else { -1.0 };
                Complex64::from_polar(sym, TAU * f0 * n as f64 / rate)
            })
            .collect();
        let est = estimate_freq_offset(&x, 100.0, rate).unwrap();
        assert!((est.f_offset - f0).abs() <= 50.0, "est {}", est.f_offset);
    }

    #[test]
    fn cfoe_negative_and_large_offsets() {
        let rate = 2e5 / 22.0;
        for f0 in [-2000.0, -500.0, 2000.0] {
            let x = tone(f0, rate, 64, 1.0);
            let est = estimate_freq_offset(&x, 100.0, rate).unwrap();
            assert!(
                (est.f_offset - f0).abs() <= 50.0,
                "f0 {} est {}",
                f0,
                est.f_offset
            );
        }
    }

    #[test]
    fn cfoe_fft_length_shrinks_with_resolution() {
        let rate = 2e5 / 22.0;
        let mut lengths = Vec::new();
        for delta in [10.0, 25.0, 50.0, 100.0] {
            lengths.push(CfoEstimator::new(delta, rate).unwrap().fft_length());
        }
        assert!(lengths.windows(2).all(|w| w[0] > w[1]), "{:?}", lengths);
    }

    // ── Compensation ────────────────────────────────────────────────

    #[test]
    fn compensation_inverts_impairment() {
        let rate = 2e5;
        let f0 = 137.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Complex64> = (0..2048)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let impaired: Vec<Complex64> = x
            .iter()
            .enumerate()
            .map(|(n, &s)| s * Complex64::from_polar(1.0, TAU * f0 * n as f64 / rate))
            .collect();
        let mut comp = FreqCompensator::new();
        let restored = comp.process(&impaired, f0, rate);
        for (a, b) in restored.iter().zip(x.iter()) {
            assert!((a - b).norm() <= 1e-9 * b.norm().max(1e-3));
        }

        // f_offset = 0 → identity
        let mut comp = FreqCompensator::new();
        assert_eq!(comp.process(&x, 0.0, rate), x);
    }

    #[test]
    fn compensation_phase_continuity() {
        let rate = 2e5;
        let f0 = 313.0;
        let x = tone(290.0, rate, 2816, 1.0);
        let mut whole = FreqCompensator::new();
        let full = whole.process(&x, f0, rate);
        let mut halves = FreqCompensator::new();
        let mut split = halves.process(&x[..1408], f0, rate);
        split.extend(halves.process(&x[1408..], f0, rate));
        for (a, b) in full.iter().zip(split.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    // ── Composed front end ──────────────────────────────────────────

    /// Decode an rffe output stream (already receive-filtered) into bits:
    /// chip-sample at the cascade delay, despread, demodulate,
    /// descramble. Mirrors what the packet receiver does after sync.
    fn decode_filtered(stream: &[Complex64], phy: &PhyConfig) -> Vec<u8> {
        use crate::baseband::{barker_despread, DbpskDemodulator, Descrambler};
        let delay = phy.pulse_taps().len() - 1;
        let chips: Vec<Complex64> = stream[delay..]
            .iter()
            .step_by(SAMPLES_PER_CHIP)
            .copied()
            .collect();
        let usable = chips.len() - chips.len() % CHIPS_PER_BIT;
        let symbols = barker_despread(&chips[..usable]).unwrap();
        let raw = DbpskDemodulator::new().process(&symbols);
        Descrambler::new(phy.scrambler_seed).process(&raw)
    }

    #[test]
    fn rffe_recovers_offset_attenuated_frame() {
        let phy = PhyConfig::default();
        let rate = 2e5;
        let bits = octets_to_bits(&[0xDE, 0xAD, 0xBE, 0xEF, 0x01, 0x23, 0x45, 0x67]);
        let clean = smsrc(&bits, SCRAMBLER_SEED, &phy).unwrap();

        // -30 dB attenuation and a 100 Hz carrier offset
        let gain = 10f64.powf(-30.0 / 20.0);
        let impaired: Vec<Complex64> = clean
            .iter()
            .enumerate()
            .map(|(n, &s)| s * gain * Complex64::from_polar(1.0, TAU * 100.0 * n as f64 / rate))
            .collect();

        let mut rffe = Rffe::new(&RffeConfig::default(), &phy, rate).unwrap();
        let (mut stream, est) =
            rffe.process(&SampleFrame::from_samples(impaired[..FRAME_SAMPLES].to_vec()));
        assert!((est.f_offset - 100.0).abs() <= 50.0, "est {}", est.f_offset);

        // flush the filter tail with a silent frame
        let (tail, _) = rffe.process(&SampleFrame::zero());
        stream.extend(tail);

        let decoded = decode_filtered(&stream, &phy);
        assert_eq!(&decoded[..64], &bits[..]);
    }

    #[test]
    fn rffe_zero_frame() {
        let phy = PhyConfig::default();
        let mut rffe = Rffe::new(&RffeConfig::default(), &phy, 2e5).unwrap();
        let (out, est) = rffe.process(&SampleFrame::zero());
        assert!(out.iter().all(|c| c.norm() == 0.0));
        assert_eq!(est.f_offset, 0.0);
    }

    #[test]
    fn rffe_config_ranges_enforced() {
        let bad = RffeConfig {
            agc_step: 0.9,
            ..RffeConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(RffeConfig::default().validate().is_ok());
    }

    #[test]
    fn despread_processing_gain() {
        // code-matched chips despread to amplitude 11x before the
        // normalization; any misalignment stays at or below 1x.
        let chips: Vec<Complex64> = BARKER.iter().map(|&c| Complex64::new(c, 0.0)).collect();
        let peak: Complex64 = chips
            .iter()
            .zip(BARKER.iter())
            .map(|(&x, &c)| x * c)
            .sum();
        assert_eq!(peak.re, 11.0);
        for lag in 1..CHIPS_PER_BIT {
            let shifted: Complex64 = (0..CHIPS_PER_BIT - lag)
                .map(|i| chips[i + lag] * BARKER[i])
                .sum();
            assert!(shifted.re.abs() <= 1.0 + 1e-12);
        }
    }
}
