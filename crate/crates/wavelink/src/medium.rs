//! Slot-synchronized simulated RF medium.
//!
//! Each slot, every node contributes one transmit frame (possibly
//! silent) and receives the superposition of all other nodes' frames,
//! each passed through its directed link: amplitude gain, carrier
//! frequency offset with phase carried across slots, an optional integer
//! sample delay, plus per-node AWGN and an optional echo of the node's
//! own transmission (receive-port self-leakage). All frames of a slot
//! are combined from the same slot's inputs — two-phase semantics, so
//! node step order never matters.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timing::{SampleFrame, FRAME_SAMPLES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MediumError {
    #[error("channel matrices must be {nodes}x{nodes}, found row of {found}")]
    Dimension { nodes: usize, found: usize },
    #[error("negative gain on link {from}->{to}")]
    NegativeGain { from: usize, to: usize },
    #[error("expected {expected} tx frames, got {got}")]
    NodeCountMismatch { expected: usize, got: usize },
    #[error("sample shift {shift} on link {from}->{to} must be below one frame (1408)")]
    ShiftTooLarge { from: usize, to: usize, shift: usize },
}

/// Per-link and per-node channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Linear amplitude gain g[i][j] from node i to node j.
    pub gains: Vec<Vec<f64>>,
    /// Carrier frequency offset in Hz per directed link.
    #[serde(default)]
    pub freq_offsets: Vec<Vec<f64>>,
    /// Complex noise variance added at each receiver.
    #[serde(default)]
    pub noise_power: Vec<f64>,
    /// Per-node self-leakage level in dB relative to the node's own
    /// transmit signal; `None` disables the echo.
    #[serde(default)]
    pub self_leakage_db: Vec<Option<f64>>,
    /// Optional integer sample delay per directed link.
    #[serde(default)]
    pub sample_shifts: Option<Vec<Vec<usize>>>,
}

impl ChannelConfig {
    /// Clean fully-connected channel: unity off-diagonal gains, no
    /// offsets, no noise, no leakage.
    pub fn ideal(nodes: usize) -> Self {
        let mut gains = vec![vec![1.0; nodes]; nodes];
        for (i, row) in gains.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        Self {
            gains,
            freq_offsets: vec![vec![0.0; nodes]; nodes],
            noise_power: vec![0.0; nodes],
            self_leakage_db: vec![None; nodes],
            sample_shifts: None,
        }
    }

    pub fn nodes(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<(), MediumError> {
        let n = self.nodes();
        let check_matrix = |m: &Vec<Vec<f64>>| -> Result<(), MediumError> {
            if m.len() != n {
                return Err(MediumError::Dimension {
                    nodes: n,
                    found: m.len(),
                });
            }
            for row in m {
                if row.len() != n {
                    return Err(MediumError::Dimension {
                        nodes: n,
                        found: row.len(),
                    });
                }
            }
            Ok(())
        };
        check_matrix(&self.gains)?;
        if !self.freq_offsets.is_empty() {
            check_matrix(&self.freq_offsets)?;
        }
        for (i, row) in self.gains.iter().enumerate() {
            for (j, &g) in row.iter().enumerate() {
                if g < 0.0 {
                    return Err(MediumError::NegativeGain { from: i, to: j });
                }
            }
        }
        if let Some(shifts) = &self.sample_shifts {
            if shifts.len() != n || shifts.iter().any(|r| r.len() != n) {
                return Err(MediumError::Dimension {
                    nodes: n,
                    found: shifts.len(),
                });
            }
            for (i, row) in shifts.iter().enumerate() {
                for (j, &s) in row.iter().enumerate() {
                    if s >= FRAME_SAMPLES {
                        return Err(MediumError::ShiftTooLarge { from: i, to: j, shift: s });
                    }
                }
            }
        }
        Ok(())
    }

    fn offset(&self, from: usize, to: usize) -> f64 {
        self.freq_offsets
            .get(from)
            .and_then(|r| r.get(to))
            .copied()
            .unwrap_or(0.0)
    }

    fn shift(&self, from: usize, to: usize) -> usize {
        self.sample_shifts
            .as_ref()
            .map(|s| s[from][to])
            .unwrap_or(0)
    }
}

/// Gain, carrier offset (phase-continuous), and AWGN over one frame.
/// The updated phase is carried in `phase_state`.
pub fn apply_impairments(
    frame: &[Complex64],
    gain: f64,
    f_offset: f64,
    sample_rate: f64,
    phase_state: &mut f64,
    noise_power: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Complex64> {
    let step = TAU * f_offset / sample_rate;
    let mut out: Vec<Complex64> = frame
        .iter()
        .enumerate()
        .map(|(n, &x)| x * gain * Complex64::from_polar(1.0, *phase_state + step * n as f64))
        .collect();
    *phase_state = (*phase_state + step * frame.len() as f64) % TAU;
    if noise_power > 0.0 {
        let normal = Normal::new(0.0, (noise_power / 2.0).sqrt()).expect("positive variance");
        for y in &mut out {
            *y += Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
    out
}

/// Per-receiver link state: one carrier phase and delay line per sender.
#[derive(Debug, Clone)]
struct RxLinkState {
    phases: Vec<f64>,
    delay_lines: Vec<VecDeque<Complex64>>,
    rng: ChaCha8Rng,
}

/// The medium itself: owns per-link phase/delay state and per-node
/// noise generators, all derived deterministically from one seed.
#[derive(Debug)]
pub struct Medium {
    cfg: ChannelConfig,
    sample_rate: f64,
    rx_states: Vec<RxLinkState>,
}

fn derive_seed(master: u64, lane: u64) -> u64 {
    // splitmix64 step keeps per-node streams decorrelated
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(lane.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Medium {
    pub fn new(cfg: ChannelConfig, sample_rate: f64, seed: u64) -> Result<Self, MediumError> {
        cfg.validate()?;
        let n = cfg.nodes();
        let rx_states = (0..n)
            .map(|j| RxLinkState {
                phases: vec![0.0; n],
                delay_lines: (0..n)
                    .map(|i| {
                        let shift = cfg.shift(i, j);
                        VecDeque::from(vec![Complex64::new(0.0, 0.0); shift])
                    })
                    .collect(),
                rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, j as u64)),
            })
            .collect();
        Ok(Self {
            cfg,
            sample_rate,
            rx_states,
        })
    }

    pub fn nodes(&self) -> usize {
        self.cfg.nodes()
    }

    /// Combine one slot: every receiver hears the superposition of the
    /// other nodes' frames over its directed links, its own leakage echo
    /// when enabled, and fresh receiver noise.
    pub fn step(&mut self, tx_frames: &[SampleFrame]) -> Result<Vec<SampleFrame>, MediumError> {
        let n = self.cfg.nodes();
        if tx_frames.len() != n {
            return Err(MediumError::NodeCountMismatch {
                expected: n,
                got: tx_frames.len(),
            });
        }

        let cfg = &self.cfg;
        let sample_rate = self.sample_rate;
        let step_one = |j: usize, state: &mut RxLinkState| -> SampleFrame {
            let mut acc = vec![Complex64::new(0.0, 0.0); FRAME_SAMPLES];
            for (i, tx) in tx_frames.iter().enumerate() {
                if i == j {
                    continue;
                }
                let gain = cfg.gains[i][j];
                let f_off = cfg.offset(i, j);
                let step = TAU * f_off / sample_rate;
                let phase = &mut state.phases[i];
                let delay = &mut state.delay_lines[i];

                if gain == 0.0 || (tx.is_zero() && delay.iter().all(|c| c.norm_sqr() == 0.0)) {
                    // nothing audible on this link; keep the carrier
                    // phase advancing so later slots stay continuous
                    *phase = (*phase + step * FRAME_SAMPLES as f64) % TAU;
                    if !delay.is_empty() {
                        let shift = delay.len();
                        delay.clear();
                        delay.extend(tx.samples()[FRAME_SAMPLES - shift..].iter().copied());
                    }
                    continue;
                }

                if delay.is_empty() {
                    for (k, (a, &x)) in acc.iter_mut().zip(tx.samples()).enumerate() {
                        *a += x * gain * Complex64::from_polar(1.0, *phase + step * k as f64);
                    }
                } else {
                    let shift = delay.len();
                    for (k, a) in acc.iter_mut().enumerate() {
                        let x = if k < shift {
                            delay[k]
                        } else {
                            tx.samples()[k - shift]
                        };
                        *a += x * gain * Complex64::from_polar(1.0, *phase + step * k as f64);
                    }
                    delay.clear();
                    delay.extend(tx.samples()[FRAME_SAMPLES - shift..].iter().copied());
                }
                *phase = (*phase + step * FRAME_SAMPLES as f64) % TAU;
            }

            if let Some(Some(db)) = cfg.self_leakage_db.get(j) {
                let leak = 10f64.powf(db / 20.0);
                for (a, &x) in acc.iter_mut().zip(tx_frames[j].samples()) {
                    *a += x * leak;
                }
            }

            let sigma2 = cfg.noise_power.get(j).copied().unwrap_or(0.0);
            if sigma2 > 0.0 {
                let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("positive variance");
                for a in &mut acc {
                    *a += Complex64::new(normal.sample(&mut state.rng), normal.sample(&mut state.rng));
                }
            }

            SampleFrame::from_samples(acc)
        };

        Ok(step_rx_nodes(&mut self.rx_states, step_one))
    }
}

/// Apply `f` to every receiver's link state, in parallel when the
/// `parallel` feature is on. Each receiver owns independent phase and
/// noise state, so the result is identical either way.
#[cfg(feature = "parallel")]
fn step_rx_nodes<F>(states: &mut [RxLinkState], f: F) -> Vec<SampleFrame>
where
    F: Fn(usize, &mut RxLinkState) -> SampleFrame + Sync,
{
    use rayon::prelude::*;
    states
        .par_iter_mut()
        .enumerate()
        .map(|(j, s)| f(j, s))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn step_rx_nodes<F>(states: &mut [RxLinkState], f: F) -> Vec<SampleFrame>
where
    F: Fn(usize, &mut RxLinkState) -> SampleFrame + Sync,
{
    states
        .iter_mut()
        .enumerate()
        .map(|(j, s)| f(j, s))
        .collect()
}
