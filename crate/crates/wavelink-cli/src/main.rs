//! Command line harness: packet codec endpoints, reproducible 2-node
//! and 3-node simulations, energy-threshold calibration, and the
//! cross-correlation microbenchmark.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use wavelink::config::parse_config;
use wavelink::iq::{decode_from_iq, encode_to_iq, read_iq, CodecConfig};
use wavelink::mac::calibrate_threshold;
use wavelink::metrics::{events_to_jsonl, packets_to_csv};
use wavelink::sim::{run_simulation, three_node_config, two_node_config, SimulationConfig};
use wavelink::sync::xcorr_timing_table;
use wavelink::timing::{SampleFrame, FRAME_SAMPLES};

#[derive(Parser)]
#[command(name = "wavelink", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Modulate a payload into an IQ sample file (f32 LE interleaved).
    Encode {
        /// Payload file; omit to generate --payload-octets random bytes.
        #[arg(long)]
        payload: Option<PathBuf>,
        /// Random payload length when no payload file is given.
        #[arg(long, default_value_t = 2004)]
        payload_octets: usize,
        /// Output IQ file path.
        #[arg(long)]
        out: PathBuf,
        /// Seed for random payload generation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the receive pipeline over an IQ file and report the packet.
    Decode {
        /// Input IQ file.
        #[arg(long)]
        iq: PathBuf,
        /// Optional path for the recovered payload bytes.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a slot-synchronized multi-node simulation.
    Simulate {
        /// TOML run configuration; omit to use a built-in topology.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in topology size: 2 (1 DTx + 1 DRx) or 3 (2 DTx + 1 DRx).
        #[arg(long, default_value_t = 2)]
        nodes: usize,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Payload size for the built-in topologies.
        #[arg(long, default_value_t = 2004)]
        payload_octets: usize,
        /// Packets per transmitter for the built-in topologies.
        #[arg(long, default_value_t = 10)]
        packets: usize,
        /// Output directory for events.jsonl, metrics.json, packets.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare frequency-domain and direct cross-correlation timings.
    BenchXcorr {
        /// Comma-separated signal lengths.
        #[arg(long, default_value = "64,256,1024,4096")]
        lengths: String,
        /// Repetitions per length.
        #[arg(long, default_value_t = 20)]
        reps: usize,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute an energy-detection threshold from idle-channel frames.
    Calibrate {
        /// IQ file of recorded idle samples; omit to synthesize noise.
        #[arg(long)]
        iq: Option<PathBuf>,
        /// Noise power for synthesized idle frames.
        #[arg(long, default_value_t = 1e-4)]
        noise_power: f64,
        /// Number of idle frames to use.
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Safety margin over the mean idle energy.
        #[arg(long, default_value_t = 3.0)]
        margin: f64,
        /// Seed for synthesized noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Encode {
            payload,
            payload_octets,
            out,
            seed,
        } => encode(payload.as_deref(), payload_octets, &out, seed),
        Command::Decode { iq, out } => decode(&iq, out.as_deref()),
        Command::Simulate {
            config,
            nodes,
            seed,
            payload_octets,
            packets,
            out,
        } => simulate(config.as_deref(), nodes, seed, payload_octets, packets, &out),
        Command::BenchXcorr { lengths, reps, out } => bench_xcorr(&lengths, reps, out.as_deref()),
        Command::Calibrate {
            iq,
            noise_power,
            frames,
            margin,
            seed,
        } => calibrate(iq.as_deref(), noise_power, frames, margin, seed),
    }
}

fn encode(payload: Option<&Path>, payload_octets: usize, out: &Path, seed: u64) -> Result<()> {
    let bytes = match payload {
        Some(path) => fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..payload_octets).map(|_| rng.random()).collect()
        }
    };
    let cfg = CodecConfig {
        seed,
        ..CodecConfig::default()
    };
    let frames = encode_to_iq(&bytes, &cfg, out)?;
    println!(
        "{}",
        serde_json::json!({
            "payload_octets": bytes.len(),
            "frames": frames,
            "samples": frames * FRAME_SAMPLES,
            "iq_file": out.display().to_string(),
        })
    );
    Ok(())
}

fn decode(iq: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = CodecConfig::default();
    let report = decode_from_iq(iq, &cfg)?;
    if let Some(path) = out {
        fs::write(path, &report.packet.payload)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "kind": format!("{:?}", report.packet.kind),
            "payload_octets": report.packet.payload.len(),
            "fcs_ok": report.packet.fcs_ok,
            "plcp_length_us": report.packet.plcp_length_us,
            "sync_delay_samples": report.sync.sync_delay,
            "stage2_shift_bits": report.sync.stage2_shift,
            "mean_freq_offset_hz": report.mean_freq_offset_hz,
            "frames_consumed": report.frames_consumed,
            "sequence_number": report.packet.sequence_number(),
        })
    );
    if !report.packet.fcs_ok {
        bail!("frame check sequence failed");
    }
    Ok(())
}

fn simulate(
    config: Option<&Path>,
    nodes: usize,
    seed: Option<u64>,
    payload_octets: usize,
    packets: usize,
    out_dir: &Path,
) -> Result<()> {
    let mut cfg: SimulationConfig = match config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text)?
        }
        None => match nodes {
            2 => two_node_config(payload_octets, packets, 1, 1.0, Some(25.0), 100.0),
            3 => three_node_config(payload_octets, packets, 1, Some(25.0)),
            n => bail!("built-in topologies support 2 or 3 nodes, not {}", n),
        },
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }

    let output = run_simulation(&cfg)?;
    fs::create_dir_all(out_dir)?;
    let events_path = out_dir.join("events.jsonl");
    fs::write(&events_path, events_to_jsonl(&output.events))?;
    let mut metrics = output.metrics;
    metrics.event_log_path = Some(events_path.display().to_string());
    fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    fs::write(out_dir.join("packets.csv"), packets_to_csv(&metrics))?;

    for link in &metrics.per_link {
        println!(
            "link node {} ({}): sent {} acked {} dropped {} per {:?}% mean latency {:?} slots",
            link.node,
            link.address,
            link.packets_sent,
            link.packets_acked,
            link.packets_dropped,
            link.per_percent,
            link.mean_latency_slots,
        );
    }
    if let Some(p) = &metrics.processing {
        println!(
            "receive path: mean {:.3} ms / frame (max {:.3} ms), realtime_ok = {}",
            p.mean_seconds * 1e3,
            p.max_seconds * 1e3,
            p.realtime_ok
        );
    }
    if output.incomplete {
        bail!("run hit max_slots before all transmitters finished");
    }
    Ok(())
}

fn bench_xcorr(lengths: &str, reps: usize, out: Option<&Path>) -> Result<()> {
    let lengths: Vec<usize> = lengths
        .split(',')
        .map(|s| s.trim().parse().context("bad length list"))
        .collect::<Result<_>>()?;
    if lengths.iter().any(|&l| l < 16) {
        bail!("lengths must be at least 16");
    }
    let rows = xcorr_timing_table(&lengths, reps.max(1));
    let mut csv = String::from("length,template_len,fft_seconds,direct_seconds\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.9},{:.9}\n",
            r.length, r.template_len, r.fft_seconds, r.direct_seconds
        ));
    }
    match out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{}", csv),
    }
    Ok(())
}

fn calibrate(
    iq: Option<&Path>,
    noise_power: f64,
    frames: usize,
    margin: f64,
    seed: u64,
) -> Result<()> {
    let idle: Vec<SampleFrame> = match iq {
        Some(path) => {
            let samples = read_iq(path)?;
            samples
                .chunks_exact(FRAME_SAMPLES)
                .map(|c| SampleFrame::from_samples(c.to_vec()))
                .collect()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, (noise_power / 2.0).sqrt())?;
            (0..frames)
                .map(|_| {
                    SampleFrame::from_samples(
                        (0..FRAME_SAMPLES)
                            .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                            .collect(),
                    )
                })
                .collect()
        }
    };
    let threshold = calibrate_threshold(&idle, margin)?;
    println!(
        "{}",
        serde_json::json!({
            "frames": idle.len(),
            "margin": margin,
            "energy_threshold": threshold,
        })
    );
    Ok(())
}
