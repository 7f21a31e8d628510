//! Two-stage packet synchronization.
//!
//! Stage 1 locates the preamble by cross-correlating the received
//! (receive-filtered) stream against the expected real preamble
//! waveform; the correlation runs in the frequency domain with the
//! template transform precomputed. Stage 2 demands a bit-exact SFD match
//! in the descrambled bit stream, searching a small window either side
//! of the expected position — packet detection is declared only on a
//! perfect match, which keeps false detections rare.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::baseband::{FirFilter, PhyConfig, TxChain};
use crate::bits::uint_to_bits;
use crate::frame::{SFD, SFD_BITS};
use crate::timing::FRAME_BITS;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyncError {
    #[error("empty signal or template")]
    EmptyInput,
    #[error("template ({template}) longer than signal ({signal})")]
    TemplateTooLong { template: usize, signal: usize },
    #[error("need {needed} descrambled bits, have {got}")]
    NeedMoreData { needed: usize, got: usize },
}

/// Outcome of the two-stage synchronizer for one detected packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    /// True only when the SFD matched exactly (all 16 bits).
    pub detected: bool,
    /// Samples from buffer start to the first post-SFD sample.
    pub sync_delay: usize,
    /// Stage-1 correlation peak magnitude.
    pub correlation_peak: f64,
    /// Bit shift stage 2 applied to the coarse estimate.
    pub stage2_shift: i32,
}

// ── Stage 1: frequency-domain cross-correlation ──────────────────────

struct PlanEntry {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    template_spectrum: Arc<Vec<Complex64>>,
}

/// Cross-correlator holding one real template; the template transform
/// is computed once per FFT length and cached, so repeated calls with
/// the same buffer size reuse it. Shareable behind an `Arc`.
pub struct XcorrEngine {
    template: Vec<f64>,
    plans: Mutex<HashMap<usize, Arc<PlanEntry>>>,
}

impl std::fmt::Debug for XcorrEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("XcorrEngine")
            .field("template_len", &self.template.len())
            .finish()
    }
}

impl XcorrEngine {
    pub fn new(template: Vec<f64>) -> Result<Self, SyncError> {
        if template.is_empty() {
            return Err(SyncError::EmptyInput);
        }
        Ok(Self {
            template,
            plans: Mutex::new(HashMap::new()),
        })
    }

    pub fn template_len(&self) -> usize {
        self.template.len()
    }

    fn plan_for(&self, fft_len: usize) -> Arc<PlanEntry> {
        let mut plans = self.plans.lock().expect("plan cache");
        plans
            .entry(fft_len)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                let forward = planner.plan_fft_forward(fft_len);
                let inverse = planner.plan_fft_inverse(fft_len);
                let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
                for (b, &t) in buf.iter_mut().zip(self.template.iter()) {
                    *b = Complex64::new(t, 0.0);
                }
                forward.process(&mut buf);
                Arc::new(PlanEntry {
                    forward,
                    inverse,
                    template_spectrum: Arc::new(buf),
                })
            })
            .clone()
    }

    /// Linear cross-correlation of `signal` against the template:
    /// `out[k] = Σ_n signal[k+n]·template[n]` for every fully
    /// overlapping lag k (length `signal - template + 1`).
    pub fn correlate(&self, signal: &[Complex64]) -> Result<Vec<Complex64>, SyncError> {
        let lt = self.template.len();
        let ls = signal.len();
        if ls == 0 {
            return Err(SyncError::EmptyInput);
        }
        if lt > ls {
            return Err(SyncError::TemplateTooLong {
                template: lt,
                signal: ls,
            });
        }

        let fft_len = (ls + lt - 1).next_power_of_two();
        let plan = self.plan_for(fft_len);

        let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
        buf[..ls].copy_from_slice(signal);
        plan.forward.process(&mut buf);
        for (s, t) in buf.iter_mut().zip(plan.template_spectrum.iter()) {
            *s *= t.conj();
        }
        plan.inverse.process(&mut buf);

        let scale = 1.0 / fft_len as f64;
        Ok(buf[..ls - lt + 1].iter().map(|&c| c * scale).collect())
    }

    /// Stage-1 detection: the lag of the correlation-magnitude peak when
    /// the peak-to-RMS ratio clears `threshold_ratio`.
    pub fn detect(
        &self,
        buffer: &[Complex64],
        threshold_ratio: f64,
    ) -> Result<Option<PreambleDetection>, SyncError> {
        let corr = self.correlate(buffer)?;
        let mut peak = 0.0f64;
        let mut peak_idx = 0usize;
        let mut sum_sq = 0.0f64;
        for (i, c) in corr.iter().enumerate() {
            let m = c.norm_sqr();
            sum_sq += m;
            if m > peak {
                peak = m;
                peak_idx = i;
            }
        }
        let rms = (sum_sq / corr.len() as f64).sqrt();
        if rms == 0.0 {
            return Ok(None);
        }
        let peak_mag = peak.sqrt();
        let ratio = peak_mag / rms;
        Ok((ratio >= threshold_ratio).then_some(PreambleDetection {
            delay: peak_idx,
            peak: peak_mag,
            peak_to_rms: ratio,
        }))
    }
}

/// Stage-1 hit: coarse sample delay and peak statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreambleDetection {
    pub delay: usize,
    pub peak: f64,
    pub peak_to_rms: f64,
}

/// One-shot frequency-domain cross-correlation.
pub fn xcorr_fft(signal: &[Complex64], template: &[f64]) -> Result<Vec<Complex64>, SyncError> {
    XcorrEngine::new(template.to_vec())?.correlate(signal)
}

/// One-shot preamble search; returns the coarse delay or `None`.
pub fn detect_preamble(
    buffer: &[Complex64],
    expected_preamble_waveform: &[f64],
    threshold_ratio: f64,
) -> Option<usize> {
    XcorrEngine::new(expected_preamble_waveform.to_vec())
        .ok()?
        .detect(buffer, threshold_ratio)
        .ok()
        .flatten()
        .map(|d| d.delay)
}

/// The expected real preamble waveform used as the stage-1 template:
/// the first frame (64 bits) of the scrambled SYNC through the transmit
/// chain and the receive filter. One frame rather than the full 128-bit
/// preamble keeps the coherent span short enough that a worst-case
/// residual frequency offset costs little correlation energy.
pub fn preamble_template(phy: &PhyConfig) -> Vec<f64> {
    let bits = vec![1u8; FRAME_BITS];
    let mut tx = TxChain::new(phy);
    let waveform = tx.process(&bits);
    let mut rx = FirFilter::new(phy.pulse_taps());
    rx.process(&waveform).iter().map(|c| c.re).collect()
}

// ── Stage 2: exact SFD confirmation ──────────────────────────────────

/// Outcome of the windowed SFD search in the descrambled bit stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SfdSearch {
    /// True only on a bit-exact 16-bit match.
    pub detected: bool,
    /// Offset (bits) of the match relative to `expected_position`.
    pub shift: i32,
    /// Index of the first bit after the SFD, when detected.
    pub post_sfd_bit: usize,
}

/// Look for the exact SFD at `expected_position`, then over ±`window`
/// bits in order of increasing displacement. Only a perfect 16-bit
/// match confirms detection; if the stream does not yet cover the
/// window the caller must supply more bits.
pub fn locate_sfd(
    descrambled_bits: &[u8],
    expected_position: usize,
    search_window: usize,
) -> Result<SfdSearch, SyncError> {
    let needed = expected_position + search_window + SFD_BITS;
    if descrambled_bits.len() < needed {
        return Err(SyncError::NeedMoreData {
            needed,
            got: descrambled_bits.len(),
        });
    }

    let pattern = uint_to_bits(SFD as u64, SFD_BITS);
    let matches_at = |pos: usize| descrambled_bits[pos..pos + SFD_BITS] == pattern[..];

    for d in 0..=search_window {
        for shift in [d as i32, -(d as i32)] {
            if d == 0 && shift == 0 && matches_at(expected_position) {
                return Ok(SfdSearch {
                    detected: true,
                    shift: 0,
                    post_sfd_bit: expected_position + SFD_BITS,
                });
            }
            if d == 0 {
                continue;
            }
            let pos = expected_position as i64 + shift as i64;
            if pos < 0 {
                continue;
            }
            let pos = pos as usize;
            if matches_at(pos) {
                return Ok(SfdSearch {
                    detected: true,
                    shift,
                    post_sfd_bit: pos + SFD_BITS,
                });
            }
        }
    }

    Ok(SfdSearch {
        detected: false,
        shift: 0,
        post_sfd_bit: 0,
    })
}

// ── Correlation microbenchmark ───────────────────────────────────────

/// One row of the frequency-domain vs direct correlation comparison.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct XcorrTiming {
    pub length: usize,
    pub template_len: usize,
    pub fft_seconds: f64,
    pub direct_seconds: f64,
}

/// Wall-clock the two correlation routes across signal lengths
/// (template is half the signal). The frequency-domain route reuses a
/// cached template transform, as the live detector does.
pub fn xcorr_timing_table(lengths: &[usize], reps: usize) -> Vec<XcorrTiming> {
    use rand::{RngExt, SeedableRng};
    use std::time::Instant;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xBE);
    lengths
        .iter()
        .map(|&len| {
            let len = len.max(16);
            let template_len = len / 2;
            let template: Vec<f64> = (0..template_len).map(|_| rng.random::<f64>() - 0.5).collect();
            let signal: Vec<Complex64> = (0..len)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();

            let engine = XcorrEngine::new(template.clone()).expect("non-empty");
            engine.correlate(&signal).expect("sized"); // warm the plan cache
            let started = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(engine.correlate(&signal).expect("sized"));
            }
            let fft_seconds = started.elapsed().as_secs_f64() / reps as f64;

            let started = Instant::now();
            for _ in 0..reps {
                let direct: Vec<Complex64> = (0..=len - template_len)
                    .map(|k| {
                        template
                            .iter()
                            .enumerate()
                            .map(|(n, &t)| signal[k + n] * t)
                            .sum()
                    })
                    .collect();
                std::hint::black_box(direct);
            }
            let direct_seconds = started.elapsed().as_secs_f64() / reps as f64;

            XcorrTiming {
                length: len,
                template_len,
                fft_seconds,
                direct_seconds,
            }
        })
        .collect()
}
