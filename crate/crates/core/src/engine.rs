//! One full experiment run: pulsed pair source, two fiber arms carrying the
//! photons and (when enabled) co-propagating classical clock pulses, two
//! receivers with phase-tracked or free-running clocks, and CAR extraction
//! from the cross-correlation of the recorded tag streams.
//!
//! Slots are processed in fixed-size chunks so memory stays bounded at any
//! run length; only the (sparse) recorded tags and the decimated phase
//! series are kept.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{car_from_histogram, coincidence_histogram, CarReport, Histogram};
use crate::channel::Channel;
use crate::config::ExperimentConfig;
use crate::detector::{Arrival, Detector, DetectorStats, TagKind, TimeTag};
use crate::error::{Error, Result};
use crate::qtag::{self, TagRecord};
use crate::seeds;
use crate::source::EmissionSampler;
use crate::sync::{emit_clock_edges_decimated, lock_phase, rx_offset_series, ClockPhaseSeries};
use crate::timebase::{DurationFs, Timestamp, FS_PER_SEC};

/// Slots per processing chunk.
const CHUNK_SLOTS: u64 = 1 << 18;

/// Clock edges are materialized at most once per this many slots. The loop
/// statistics are decimation-invariant; this only bounds series memory.
const MAX_EDGE_DECIMATION: u64 = 1_000;

fn clock_decimation(n_slots: u64) -> u64 {
    (n_slots / 16).clamp(1, MAX_EDGE_DECIMATION)
}

/// Event counters for one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunStats {
    pub n_slots: u64,
    pub emitted_pairs: u64,
    pub signal_arrivals_1: u64,
    pub signal_arrivals_2: u64,
    pub raman_arrivals_1: u64,
    pub raman_arrivals_2: u64,
    pub detector_1: DetectorStats,
    pub detector_2: DetectorStats,
    /// Residual clock error per node predicted by the loop design formula.
    pub predicted_sync_residual_sigma_fs: f64,
}

/// Everything a run produces, in memory.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub report: CarReport,
    pub histogram: Histogram,
    pub tags_1: Vec<TagRecord>,
    pub tags_2: Vec<TagRecord>,
    /// Receiver clock phase versus the central timebase, per node.
    pub phase_rx1: ClockPhaseSeries,
    pub phase_rx2: ClockPhaseSeries,
    /// Node 1 minus node 2 clock phase, the quantity coincidences feel.
    pub rx_diff: ClockPhaseSeries,
    pub stats: RunStats,
}

/// Run the experiment described by `cfg`.
///
/// With `sync.enabled` the clock pulses co-propagate in both arms: receivers
/// phase-track the recovered clock and Raman noise from the classical light
/// is present at the configured rates. With it disabled the fiber carries no
/// classical light, so Raman rates are forced to zero and both receiver
/// clocks free-run on their own oscillators.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    cfg.validate()?;
    let mut eff = cfg.clone();
    if !eff.sync.enabled {
        eff.channel_1.raman_rate_per_slot = 0.0;
        eff.channel_2.raman_rate_per_slot = 0.0;
    }
    let n = eff.n_slots;
    let seed = eff.master_seed;
    let period = DurationFs::fs(eff.period_fs() as i64);

    // Clock distribution. The clock pulses ride the same fibers as the
    // photons: same base delay and the same drift realization (label match
    // reproduces the arm's drift stream), but no survival draw.
    let dec = clock_decimation(n);
    let n_edges = n.div_ceil(dec);
    let tx_edges = emit_clock_edges_decimated(n_edges, dec, &eff.oscillator_tx, seed, "clock-tx")?;
    let mut clock_arm1 = Channel::new(eff.channel_1.clone(), seed, "channel1")?;
    let mut clock_arm2 = Channel::new(eff.channel_2.clone(), seed, "channel2")?;
    let rx1_edges: Vec<Timestamp> = tx_edges
        .iter()
        .map(|&e| clock_arm1.classical_delay(e))
        .collect();
    let rx2_edges: Vec<Timestamp> = tx_edges
        .iter()
        .map(|&e| clock_arm2.classical_delay(e))
        .collect();
    let phase_rx1 = lock_phase(
        &rx1_edges,
        &eff.sync,
        &eff.oscillator_rx1,
        seed,
        "clock-rx1",
    )?;
    let phase_rx2 = lock_phase(
        &rx2_edges,
        &eff.sync,
        &eff.oscillator_rx2,
        seed,
        "clock-rx2",
    )?;
    let rx_diff = rx_offset_series(&phase_rx1, &phase_rx2)?;

    // Photon pipeline, chunked over slots.
    let mut source_rng = seeds::rng_for(seed, "source");
    let mut ch1 = Channel::new(eff.channel_1.clone(), seed, "channel1")?;
    let mut ch2 = Channel::new(eff.channel_2.clone(), seed, "channel2")?;
    let mut det1 = Detector::new(eff.detector_1.clone(), seed, "detector1")?;
    let mut det2 = Detector::new(eff.detector_2.clone(), seed, "detector2")?;
    let delay_slots_1 = eff.channel_1.base_delay_fs.div_euclid(period.value()) as u64;
    let delay_slots_2 = eff.channel_2.base_delay_fs.div_euclid(period.value()) as u64;

    let mut stats = RunStats {
        n_slots: n,
        emitted_pairs: 0,
        signal_arrivals_1: 0,
        signal_arrivals_2: 0,
        raman_arrivals_1: 0,
        raman_arrivals_2: 0,
        detector_1: DetectorStats::default(),
        detector_2: DetectorStats::default(),
        predicted_sync_residual_sigma_fs: if eff.sync.enabled {
            eff.sync.predicted_residual_sigma_fs()
        } else {
            0.0
        },
    };

    let mut raw1: Vec<TimeTag> = Vec::new();
    let mut raw2: Vec<TimeTag> = Vec::new();
    let mut arr1: Vec<Arrival> = Vec::new();
    let mut arr2: Vec<Arrival> = Vec::new();
    let mut cs = 0u64;
    while cs < n {
        let ce = (cs + CHUNK_SLOTS).min(n);
        arr1.clear();
        arr2.clear();
        for e in EmissionSampler::new(&eff.source, &mut source_rng, cs, ce)? {
            stats.emitted_pairs += 1;
            if let Some(t) = ch1.propagate(e.t_emit) {
                arr1.push(Arrival {
                    t,
                    kind: TagKind::Signal,
                });
            }
            if let Some(t) = ch2.propagate(e.t_emit) {
                arr2.push(Arrival {
                    t,
                    kind: TagKind::Signal,
                });
            }
        }
        stats.signal_arrivals_1 += arr1.len() as u64;
        stats.signal_arrivals_2 += arr2.len() as u64;
        let raman1 = ch1.sample_raman(cs, ce);
        let raman2 = ch2.sample_raman(cs, ce);
        stats.raman_arrivals_1 += raman1.len() as u64;
        stats.raman_arrivals_2 += raman2.len() as u64;
        arr1.extend(raman1.into_iter().map(|t| Arrival {
            t,
            kind: TagKind::Raman,
        }));
        arr2.extend(raman2.into_iter().map(|t| Arrival {
            t,
            kind: TagKind::Raman,
        }));
        arr1.sort_unstable_by_key(|a| a.t.total_fs(period));
        arr2.sort_unstable_by_key(|a| a.t.total_fs(period));
        raw1.extend(det1.process(&arr1, ce + delay_slots_1)?);
        raw2.extend(det2.process(&arr2, ce + delay_slots_2)?);
        cs = ce;
    }
    raw1.extend(det1.finish());
    raw2.extend(det2.finish());
    stats.detector_1 = det1.stats;
    stats.detector_2 = det2.stats;

    // Each receiver timestamps against its own clock: recorded time is the
    // true arrival minus the local clock phase at that moment. Tracked
    // phase follows the shared fiber drift, so drift cancels from the
    // recorded tags; free-running phase leaves it in.
    let tags_1 = correct_tags(raw1, &phase_rx1, 1, period)?;
    let tags_2 = correct_tags(raw2, &phase_rx2, 2, period)?;

    let span_periods =
        (eff.analysis.exclude_center_neighbors + eff.analysis.n_peaks.div_ceil(2) + 1) as i64;
    let t1: Vec<Timestamp> = tags_1.iter().map(|r| r.tag).collect();
    let t2: Vec<Timestamp> = tags_2.iter().map(|r| r.tag).collect();
    let histogram = coincidence_histogram(
        &t1,
        &t2,
        period,
        span_periods * period.value(),
        eff.analysis.bin_width_fs,
    )?;
    let report = car_from_histogram(
        &histogram,
        eff.analysis.window_fs,
        period,
        eff.analysis.n_peaks,
        eff.analysis.exclude_center_neighbors,
    )?;

    Ok(RunOutputs {
        report,
        histogram,
        tags_1,
        tags_2,
        phase_rx1,
        phase_rx2,
        rx_diff,
        stats,
    })
}

/// Local clock phase at time `t_s`, from the nearest series sample.
fn phase_at(series: &ClockPhaseSeries, t_s: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let i = series.times_s.partition_point(|&u| u < t_s);
    if i == 0 {
        return series.offsets_fs[0];
    }
    if i == series.times_s.len() {
        return series.offsets_fs[i - 1];
    }
    if t_s - series.times_s[i - 1] <= series.times_s[i] - t_s {
        series.offsets_fs[i - 1]
    } else {
        series.offsets_fs[i]
    }
}

/// Subtract the local clock phase from each tag and re-sort (a phase step
/// between neighbors can swap very close tags).
fn correct_tags(
    raw: Vec<TimeTag>,
    phase: &ClockPhaseSeries,
    node_id: u8,
    period: DurationFs,
) -> Result<Vec<TagRecord>> {
    let mut out = Vec::with_capacity(raw.len());
    for tag in raw {
        let total = tag.t.total_fs(period);
        let phi = phase_at(phase, total as f64 / FS_PER_SEC).round() as i128;
        let corrected = Timestamp::from_total_fs(total - phi, period)?;
        out.push(TagRecord {
            node_id,
            channel_id: 0,
            kind: tag.kind,
            tag: corrected,
        });
    }
    out.sort_by_key(|r| r.tag.total_fs(period));
    Ok(out)
}

/// Manifest describing the files a run wrote. Hashes cover file bytes;
/// `wall_time_s` is informational and excluded from determinism.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub n_slots: u64,
    pub master_seed: u64,
    pub sync_enabled: bool,
    pub wall_time_s: f64,
    /// File name to SHA-256 (hex) of its content.
    pub files: BTreeMap<String, String>,
}

/// A run persisted to disk.
#[derive(Debug)]
pub struct WrittenRun {
    pub outputs: RunOutputs,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    let mut s = String::with_capacity(64);
    for b in d {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn phase_csv(series: &ClockPhaseSeries) -> String {
    let mut s = String::from("time_s,offset_fs\n");
    for (t, o) in series.times_s.iter().zip(&series.offsets_fs) {
        s.push_str(&format!("{t},{o}\n"));
    }
    s
}

fn histogram_csv(hist: &Histogram) -> String {
    let mut s = String::from("bin_center_fs,counts\n");
    for k in 0..hist.n_bins() {
        s.push_str(&format!("{},{}\n", hist.center_fs(k), hist.counts[k]));
    }
    s
}

/// Run the experiment and write every artifact into `dir`.
///
/// Files: the flat config as run, both tag streams, the coincidence
/// histogram, the CAR report, the three clock-phase logs, the run counters,
/// and a manifest with a SHA-256 per file.
pub fn run_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<WrittenRun> {
    let start = Instant::now();
    let outputs = run_experiment(cfg)?;
    let period = DurationFs::fs(cfg.period_fs() as i64);
    std::fs::create_dir_all(dir)?;

    let mut files: BTreeMap<String, String> = BTreeMap::new();
    let mut write_bytes = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path)?;
        f.write_all(bytes)?;
        files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    };

    write_bytes("config.cfg", cfg.to_flat_string()?.as_bytes())?;
    for (name, tags) in [
        ("tags_node1.qtag", &outputs.tags_1),
        ("tags_node2.qtag", &outputs.tags_2),
    ] {
        let mut buf = Vec::new();
        qtag::write_tags(&mut buf, period, tags)?;
        write_bytes(name, &buf)?;
    }
    write_bytes(
        "histogram.csv",
        histogram_csv(&outputs.histogram).as_bytes(),
    )?;
    let report_json = serde_json::to_string_pretty(&outputs.report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    write_bytes("car_report.json", report_json.as_bytes())?;
    write_bytes("clock_rx1.csv", phase_csv(&outputs.phase_rx1).as_bytes())?;
    write_bytes("clock_rx2.csv", phase_csv(&outputs.phase_rx2).as_bytes())?;
    write_bytes("clock_diff.csv", phase_csv(&outputs.rx_diff).as_bytes())?;
    let stats_json = serde_json::to_string_pretty(&outputs.stats)
        .map_err(|e| Error::Format(format!("stats serialization: {e}")))?;
    write_bytes("run_stats.json", stats_json.as_bytes())?;

    let manifest = RunManifest {
        n_slots: cfg.n_slots,
        master_seed: cfg.master_seed,
        sync_enabled: cfg.sync.enabled,
        wall_time_s: start.elapsed().as_secs_f64(),
        files,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.json"), manifest_json)?;

    Ok(WrittenRun {
        outputs,
        dir: dir.to_path_buf(),
        manifest,
    })
}
