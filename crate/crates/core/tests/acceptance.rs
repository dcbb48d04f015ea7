//! Acceptance gates for the simulator and analysis toolkit.
//!
//! Each test prints exactly one `criterion N: PASS/FAIL` line. Statistical
//! gates use 3 combined sigma bounds with frozen seeds; exact gates use
//! f64-exact or tight algebraic tolerances.

use std::time::Instant;

use pairsync::analysis::oracle::{analytic_car_oracle, CoincidenceModel, DetectedRates};
use pairsync::analysis::{
    classify, fidelity_visibility, jitter_stats, CLASSICAL_CAR_BOUND, NONLOCALITY_CAR_BOUND,
};
use pairsync::channel::{Channel, ChannelConfig, DriftModel, RamanProfile};
use pairsync::config::ExperimentConfig;
use pairsync::detector::GAUSS_FWHM_PER_SIGMA;
use pairsync::engine::{run_and_write, run_experiment};
use pairsync::pulsechain::{run_chain, ChainConfig};
use pairsync::source::{MultiPairModel, RateInterpretation};
use pairsync::sync::{
    emit_clock_edges_decimated, lock_phase, max_rate_estimate_hz, rx_offset_series, SyncConfig,
};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // Match instead of `if !cond` so NaN-poisoned comparisons still
        // take the failure arm without tripping negated-ordering lints.
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn criterion(n: u32, what: &str, body: impl FnOnce() -> Result<String, String>) {
    match body() {
        Ok(detail) => println!("criterion {n}: PASS - {what} ({detail})"),
        Err(e) => {
            println!("criterion {n}: FAIL - {what}: {e}");
            panic!("criterion {n} failed: {e}");
        }
    }
}

/// Criterion 1: the calibrated baseline run reproduces the reference CAR
/// pair at the 2e8-slot scale: near 77 with the clock light off and near 42
/// with it on, each within 3 combined sigma (Monte Carlo + reference
/// uncertainty 12 and 2 respectively).
#[test]
fn car_reproduction_with_and_without_clock() {
    criterion(1, "CAR 77/42 reproduction at 2e8 slots", || {
        let mut cfg = ExperimentConfig::default_run();
        cfg.n_slots = 200_000_000;
        cfg.master_seed = 7;

        cfg.sync.enabled = false;
        let off = run_experiment(&cfg).map_err(|e| e.to_string())?;
        ensure!(
            !off.report.infinite,
            "clock-off run observed no accidentals"
        );
        let gate_off = 3.0 * (off.report.car_sigma.powi(2) + 12.0f64.powi(2)).sqrt();
        ensure!(
            (off.report.car - 77.0).abs() <= gate_off,
            "clock-off CAR {:.2} +/- {:.2} vs 77 (gate {:.1})",
            off.report.car,
            off.report.car_sigma,
            gate_off
        );

        cfg.sync.enabled = true;
        let on = run_experiment(&cfg).map_err(|e| e.to_string())?;
        ensure!(!on.report.infinite, "clock-on run observed no accidentals");
        let gate_on = 3.0 * (on.report.car_sigma.powi(2) + 2.0f64.powi(2)).sqrt();
        ensure!(
            (on.report.car - 42.0).abs() <= gate_on,
            "clock-on CAR {:.2} +/- {:.2} vs 42 (gate {:.1})",
            on.report.car,
            on.report.car_sigma,
            gate_on
        );
        Ok(format!(
            "off {:.1}+/-{:.1} vs 77, on {:.1}+/-{:.1} vs 42",
            off.report.car, off.report.car_sigma, on.report.car, on.report.car_sigma
        ))
    });
}

/// Narrow-pulse, idealized-electronics configuration on which the simple
/// closed-form CAR oracle is exact: every arrival lands inside the
/// coincidence window, no dead time, no dark counts.
fn oracle_grid_config(mu: f64, raman_generated: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_run();
    cfg.n_slots = 10_000_000;
    cfg.master_seed = seed;
    cfg.source.pair_prob_per_pulse = mu;
    cfg.source.rate_interpretation = RateInterpretation::MeanPairs;
    cfg.source.multi_pair_model = MultiPairModel::Poisson;
    cfg.source.emission_sigma_fs = 2_000.0;
    for ch in [&mut cfg.channel_1, &mut cfg.channel_2] {
        ch.drift_model = DriftModel::None;
        ch.raman_rate_per_slot = raman_generated;
        ch.clock_pulse_width_fs = 50_000;
    }
    cfg.channel_1.loss_db = 2.0;
    cfg.channel_2.loss_db = 4.0;
    for det in [&mut cfg.detector_1, &mut cfg.detector_2] {
        det.jitter_fwhm_fs = 5_000.0;
        det.dark_rate_hz = 0.0;
        det.dead_time_fs = 0;
        det.tdc_jitter_fwhm_fs = 2_000.0;
    }
    cfg.sync.rec_jitter_fwhm_fs = 1_000.0;
    cfg.analysis.bin_width_fs = 1_000;
    cfg
}

/// Criterion 2: Monte Carlo CAR matches the closed-form oracle within 3
/// sigma on a 3x3 (pair rate, background rate) grid, 1e7 slots per cell.
#[test]
fn oracle_equivalence_grid() {
    criterion(2, "Monte Carlo vs closed-form CAR on a 3x3 grid", || {
        let start = Instant::now();
        let det_eff = 10f64.powf(-0.1);
        let mut worst_z: f64 = 0.0;
        let mut cell = 0u64;
        for &mu in &[0.005, 0.01, 0.02] {
            for &raman in &[0.0, 1e-3, 3e-3] {
                cell += 1;
                let cfg = oracle_grid_config(mu, raman, 100 + cell);
                let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
                let eta1 = 10f64.powf(-0.2) * det_eff;
                let eta2 = 10f64.powf(-0.4) * det_eff;
                let noise = raman * det_eff;
                let oracle = analytic_car_oracle(mu, eta1, eta2, noise, noise, 1.0);
                ensure!(!out.report.infinite, "cell {cell} observed no accidentals");
                let z = (out.report.car - oracle) / out.report.car_sigma;
                ensure!(
                    z.abs() <= 3.0,
                    "cell mu={mu} raman={raman}: CAR {:.2} +/- {:.2} vs oracle {:.2} (z={z:+.2})",
                    out.report.car,
                    out.report.car_sigma,
                    oracle
                );
                if z.abs() > worst_z.abs() {
                    worst_z = z;
                }
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        ensure!(elapsed < 60.0, "grid took {elapsed:.1} s, budget 60 s");
        Ok(format!("9 cells, worst z {worst_z:+.2}, {elapsed:.1} s"))
    });
}

/// Criterion 3: fidelity and visibility bounds follow from the CAR exactly.
#[test]
fn fidelity_visibility_algebra() {
    criterion(3, "fidelity/visibility algebra from CAR", || {
        let (f42, _) = fidelity_visibility(42.0);
        let (f77, _) = fidelity_visibility(77.0);
        ensure!(f42 == 0.976_744_186_046_511_6, "42 -> fidelity {f42:.16}");
        ensure!(f77 == 0.987_179_487_179_487_2, "77 -> fidelity {f77:.16}");
        // visibility = 2*fidelity - 1 across the range.
        let mut car = 1.1f64;
        for _ in 0..100 {
            let (f, v) = fidelity_visibility(car);
            let err = (v - (2.0 * f - 1.0)).abs();
            ensure!(err <= 1e-12, "car {car:.3}: identity off by {err:.2e}");
            car *= 1.071; // spans ~1.1 to ~1000
        }
        Ok("42 -> 0.9767..., 77 -> 0.9872..., identity to 1e-12".into())
    });
}

/// Criterion 4: classification flags flip exactly at CAR = 2 (visibility
/// 1/3, classical limit) and CAR = 3 + 2*sqrt(2) (visibility 1/sqrt(2)).
#[test]
fn entanglement_bound_flags() {
    criterion(
        4,
        "classical and nonlocality flags flip at the bounds",
        || {
            ensure!(CLASSICAL_CAR_BOUND == 2.0, "classical bound constant");
            let x = 1.0 / 2.0f64.sqrt();
            let derived = (1.0 + x) / (1.0 - x);
            ensure!(
                (NONLOCALITY_CAR_BOUND - derived).abs() <= 1e-12,
                "nonlocality bound {NONLOCALITY_CAR_BOUND} vs (1+x)/(1-x) = {derived}"
            );
            let cases = [
                (1.999, false, false),
                (2.001, true, false),
                (NONLOCALITY_CAR_BOUND - 1e-9, true, false),
                (NONLOCALITY_CAR_BOUND + 1e-9, true, true),
            ];
            for (car, classical, nonlocal) in cases {
                let (c, n) = classify(car);
                ensure!(
                    c == classical && n == nonlocal,
                    "classify({car}) = ({c}, {n}), expected ({classical}, {nonlocal})"
                );
                // Flags must agree with the visibility thresholds they encode.
                let (_, v) = fidelity_visibility(car);
                ensure!(
                    (v > 1.0 / 3.0) == classical && (v > x) == nonlocal,
                    "visibility thresholds disagree at car {car}"
                );
            }
            Ok("flips at 2 and 3+2*sqrt(2) = 5.8284...".into())
        },
    );
}

fn quiet_arm(drift: DriftModel) -> ChannelConfig {
    ChannelConfig {
        loss_db: 0.0,
        base_delay_fs: 55_000_000_000,
        drift_model: drift,
        raman_rate_per_slot: 0.0,
        raman_profile: RamanProfile::PulseGated,
        clock_pulse_width_fs: 2_500_000,
        period_fs: 5_000_000,
    }
}

/// Criterion 5: the clock recovery loop's residual matches its design
/// formula on the receiver difference series, and an injected slow drift
/// (time-compressed 1000x) is recovered at full amplitude.
#[test]
fn sync_residual_and_drift_recovery() {
    criterion(
        5,
        "clock loop residual 2 ps and 5 ps drift recovery",
        || {
            let osc = ExperimentConfig::default_run().oscillator_tx;

            // Loop design: gain and measurement jitter chosen so the formula
            // predicts exactly 2 ps on the Rx1 - Rx2 difference.
            let gain = 0.1f64;
            let sigma_rec = 2_000.0 / (2f64.sqrt() * (gain / (2.0 - gain)).sqrt());
            let sync = SyncConfig {
                rec_jitter_fwhm_fs: sigma_rec * GAUSS_FWHM_PER_SIGMA,
                loop_gain: gain,
                averaging_edges: 1,
                enabled: true,
            };
            let predicted_diff = 2f64.sqrt() * sync.predicted_residual_sigma_fs();
            ensure!(
                (predicted_diff - 2_000.0).abs() < 1e-6,
                "loop formula predicts {predicted_diff:.3} fs, wanted 2000"
            );

            // 10 s of edges at one per 10 us; both arms drift-free.
            let seed = 505;
            let edges = emit_clock_edges_decimated(1_000_000, 2_000, &osc, seed, "tx-a")
                .map_err(|e| e.to_string())?;
            let mut arm1 = Channel::new(quiet_arm(DriftModel::None), seed, "arm1-a").unwrap();
            let mut arm2 = Channel::new(quiet_arm(DriftModel::None), seed, "arm2-a").unwrap();
            let rx1: Vec<_> = edges.iter().map(|&e| arm1.classical_delay(e)).collect();
            let rx2: Vec<_> = edges.iter().map(|&e| arm2.classical_delay(e)).collect();
            let p1 = lock_phase(&rx1, &sync, &osc, seed, "rx1-a").map_err(|e| e.to_string())?;
            let p2 = lock_phase(&rx2, &sync, &osc, seed, "rx2-a").map_err(|e| e.to_string())?;
            let diff = rx_offset_series(&p1, &p2).map_err(|e| e.to_string())?;
            let stats = jitter_stats(&diff, 0.060).map_err(|e| e.to_string())?;
            let rel = (stats.stdev_fs - 2_000.0).abs() / 2_000.0;
            ensure!(
                rel <= 0.15,
                "window stdev {:.0} fs vs predicted 2000 fs ({:.0}% off)",
                stats.stdev_fs,
                rel * 100.0
            );

            // Injected drift: 5 ps peak-to-peak sinusoid on arm 1, period 25.2 s
            // (a multi-hour wander compressed 1000x), quiet measurement.
            let sync_quiet = SyncConfig {
                rec_jitter_fwhm_fs: 1_000.0,
                ..sync
            };
            let slow = DriftModel::Sinusoid {
                amplitude_fs: 2_500.0,
                period_s: 25.2,
            };
            let edges = emit_clock_edges_decimated(530_000, 100_000, &osc, seed, "tx-b")
                .map_err(|e| e.to_string())?;
            let mut arm1 = Channel::new(quiet_arm(slow), seed, "arm1-b").unwrap();
            let mut arm2 = Channel::new(quiet_arm(DriftModel::None), seed, "arm2-b").unwrap();
            let rx1: Vec<_> = edges.iter().map(|&e| arm1.classical_delay(e)).collect();
            let rx2: Vec<_> = edges.iter().map(|&e| arm2.classical_delay(e)).collect();
            let p1 =
                lock_phase(&rx1, &sync_quiet, &osc, seed, "rx1-b").map_err(|e| e.to_string())?;
            let p2 =
                lock_phase(&rx2, &sync_quiet, &osc, seed, "rx2-b").map_err(|e| e.to_string())?;
            let diff = rx_offset_series(&p1, &p2).map_err(|e| e.to_string())?;
            let drift_stats = jitter_stats(&diff, 0.060).map_err(|e| e.to_string())?;
            ensure!(
                (drift_stats.peak_to_peak_fs - 5_000.0).abs() <= 600.0,
                "recovered drift peak-to-peak {:.0} fs vs 5000 +/- 600",
                drift_stats.peak_to_peak_fs
            );
            Ok(format!(
                "residual stdev {:.0} fs vs 2000, drift p2p {:.0} fs vs 5000",
                stats.stdev_fs, drift_stats.peak_to_peak_fs
            ))
        },
    );
}

/// Criterion 6: the deterministic pulse-shaping chain lands in the
/// reference windows at its default settings.
#[test]
fn pulse_chain_reference_windows() {
    criterion(6, "pulse chain widths and extinction", || {
        let start = Instant::now();
        let chain = run_chain(&ChainConfig::default()).map_err(|e| e.to_string())?;
        let shaped_ps = chain.shaped_fwhm_fs / 1e3;
        let amp_ps = chain.amplified_fwhm_fs / 1e3;
        let opt_ps = chain.optical_fwhm_fs / 1e3;
        ensure!(
            (23.0..=27.0).contains(&shaped_ps),
            "shaped FWHM {shaped_ps:.2} ps outside [23, 27]"
        );
        ensure!(
            (40.0..=55.0).contains(&amp_ps),
            "amplified FWHM {amp_ps:.2} ps outside [40, 55]"
        );
        ensure!(
            (60.0..=90.0).contains(&opt_ps),
            "optical FWHM {opt_ps:.2} ps outside [60, 90]"
        );
        ensure!(
            chain.raw_extinction_db >= 27.0,
            "extinction {:.2} dB below 27",
            chain.raw_extinction_db
        );
        let elapsed = start.elapsed().as_secs_f64();
        ensure!(elapsed < 5.0, "chain took {elapsed:.2} s, budget 5 s");
        Ok(format!(
            "shaped {shaped_ps:.1} ps, amplified {amp_ps:.1} ps, optical {opt_ps:.1} ps, \
             extinction {:.1} dB",
            chain.raw_extinction_db
        ))
    });
}

/// Criterion 7: structural invariants: exact long-span time arithmetic,
/// detector input ordering and dead time, histogram merge associativity,
/// CAR invariance under re-splitting loss between fiber and detector, tag
/// file round-trip, and full-run determinism.
#[test]
fn structural_invariants() {
    criterion(7, "structural invariant suite", || {
        use pairsync::detector::{Arrival, Detector, TagKind};
        use pairsync::{DurationFs, Timestamp};

        // Exact arithmetic at a multi-hour span (7 h of 5 ns slots).
        let period = DurationFs::fs(5_000_000);
        let seven_hours: i128 = 25_200 * 1_000_000_000_000_000;
        for k in 0..100i128 {
            let total = seven_hours + k * 777_777_777;
            let t = Timestamp::from_total_fs(total, period).map_err(|e| e.to_string())?;
            ensure!(t.total_fs(period) == total, "round trip failed at {total}");
        }

        // Detector rejects unsorted input and enforces dead time.
        let mut det_cfg = ExperimentConfig::default_run().detector_1;
        det_cfg.efficiency = 1.0;
        det_cfg.jitter_fwhm_fs = 0.0;
        det_cfg.tdc_jitter_fwhm_fs = 0.0;
        det_cfg.dark_rate_hz = 0.0;
        let mk = |t: u64, off: i64| Arrival {
            t: Timestamp::new(t, off),
            kind: TagKind::Signal,
        };
        let mut det = Detector::new(det_cfg.clone(), 1, "inv").unwrap();
        ensure!(
            det.process(&[mk(5, 0), mk(4, 0)], 10).is_err(),
            "unsorted arrivals accepted"
        );
        let mut det = Detector::new(det_cfg, 1, "inv").unwrap();
        // The 45 ns dead time swallows a photon 10 ns after the first.
        let mut tags = det
            .process(&[mk(100, 0), mk(102, 0), mk(10_000, 0)], 20_000)
            .map_err(|e| e.to_string())?;
        tags.extend(det.finish());
        ensure!(
            tags.len() == 2,
            "dead-time filter kept {} of 3 crowded arrivals, expected 2",
            tags.len()
        );

        // Histogram merge is associative and shape-checked.
        {
            use pairsync::analysis::{merge, Histogram};
            let mk_h = |seed: u64| {
                let mut h = Histogram::symmetric(50_000, 2_000).unwrap();
                let mut s = seed;
                for c in h.counts.iter_mut() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                    *c = s >> 58;
                }
                h
            };
            let (a, b, c) = (mk_h(1), mk_h(2), mk_h(3));
            let ab_c = merge(&merge(&a, &b).unwrap(), &c).unwrap();
            let a_bc = merge(&a, &merge(&b, &c).unwrap()).unwrap();
            ensure!(ab_c == a_bc, "merge not associative");
            let other = Histogram::symmetric(50_000, 10_000).unwrap();
            ensure!(merge(&a, &other).is_err(), "shape mismatch accepted");
        }

        // CAR depends on end-to-end efficiency only through the product, so
        // re-splitting loss between fiber and detector leaves it unchanged.
        // Exact on the rate model; statistical (3 sigma) on the Monte Carlo.
        let model = CoincidenceModel {
            period_fs: 5e6,
            gate_width_fs: 50_000.0,
            half_window_fs: 100_500.0,
            emission_sigma_fs: 2_000.0,
            jitter1_sigma_fs: 2_300.0,
            jitter2_sigma_fs: 2_300.0,
        };
        // Two factorizations of the same end-to-end efficiency: loss in the
        // fiber versus loss at the detector. They agree up to f64 product
        // rounding, so the predicted CARs must match to near machine epsilon.
        let rates_for = |eta1: f64, eta2: f64| DetectedRates {
            mu: 0.02,
            eta1,
            eta2,
            raman1: 0.0,
            raman2: 0.0,
            dark1: 2.5e-3,
            dark2: 2.5e-3,
            kappa: 1.0,
        };
        let split_a = rates_for(
            10f64.powf(-0.2) * 10f64.powf(-0.1),
            10f64.powf(-0.4) * 10f64.powf(-0.1),
        );
        let split_b = rates_for(10f64.powf(-0.3) * 1.0, 10f64.powf(-0.5) * 1.0);
        let car_a = model.predicted_car(&split_a);
        let car_b = model.predicted_car(&split_b);
        ensure!(
            (car_a - car_b).abs() <= 1e-12 * car_a,
            "rate model split sensitivity: {car_a} vs {car_b}"
        );
        let mc = |ch_db_extra: f64, det_eff: f64, seed: u64| {
            let mut cfg = oracle_grid_config(0.02, 0.0, seed);
            cfg.detector_1.dark_rate_hz = 500.0;
            cfg.detector_2.dark_rate_hz = 500.0;
            cfg.channel_1.loss_db = 2.0 + ch_db_extra;
            cfg.channel_2.loss_db = 4.0 + ch_db_extra;
            cfg.detector_1.efficiency = det_eff;
            cfg.detector_2.efficiency = det_eff;
            run_experiment(&cfg)
        };
        // Split A: extra 0 dB in fiber, 1 dB at the detector. Split B: that
        // decibel moved into the fiber, unit-efficiency detector.
        let a = mc(0.0, 10f64.powf(-0.1), 21).map_err(|e| e.to_string())?;
        let b = mc(1.0, 1.0, 22).map_err(|e| e.to_string())?;
        let gate = 3.0 * (a.report.car_sigma.powi(2) + b.report.car_sigma.powi(2)).sqrt();
        ensure!(
            (a.report.car - b.report.car).abs() <= gate,
            "loss split changed CAR: {:.2} vs {:.2} (gate {:.2})",
            a.report.car,
            b.report.car,
            gate
        );

        // Tag file round trip.
        {
            use pairsync::qtag::{read_tags_file, write_tags_file, TagRecord};
            let mut recs = Vec::new();
            let mut s = 99u64;
            for i in 0..10_000u64 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                recs.push(TagRecord {
                    node_id: (s % 2) as u8 + 1,
                    channel_id: 0,
                    kind: match s % 3 {
                        0 => TagKind::Signal,
                        1 => TagKind::Raman,
                        _ => TagKind::Dark,
                    },
                    tag: Timestamp::new(i * 3, (s % 5_000_000) as i64),
                });
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.qtag");
            write_tags_file(&path, period, &recs).map_err(|e| e.to_string())?;
            let (p, back) = read_tags_file(&path).map_err(|e| e.to_string())?;
            ensure!(
                p == period && back == recs,
                "tag file round trip changed data"
            );
        }

        // Full-run determinism: identical bytes for every artifact except
        // the manifest's wall time; identical hash maps.
        {
            let mut cfg = ExperimentConfig::default_run();
            cfg.n_slots = 2_000_000;
            let d1 = tempfile::tempdir().unwrap();
            let d2 = tempfile::tempdir().unwrap();
            let r1 = run_and_write(&cfg, d1.path()).map_err(|e| e.to_string())?;
            let r2 = run_and_write(&cfg, d2.path()).map_err(|e| e.to_string())?;
            ensure!(
                r1.manifest.files == r2.manifest.files,
                "run hashes differ between identical runs"
            );
            for name in r1.manifest.files.keys() {
                let b1 = std::fs::read(d1.path().join(name)).unwrap();
                let b2 = std::fs::read(d2.path().join(name)).unwrap();
                ensure!(b1 == b2, "{name} differs between identical runs");
            }
        }
        Ok(
            "time arithmetic, detector ordering/dead time, merge, loss split, \
            tag files, determinism"
                .into(),
        )
    });
}

/// Criterion 8: effects outside desk-scale reproduction are excluded by
/// design and documented: absolute classical-power-to-noise-rate
/// calibration (rates are set directly), multi-hour wall-clock campaigns
/// (drift is injected time-compressed), and the hardware maximum clock
/// rate (reported only as a configurable-guard estimate).
#[test]
fn scale_exclusions_documented() {
    criterion(8, "documented exclusions and rate-bound estimate", || {
        println!("excluded: absolute classical-power-to-noise-rate calibration; background");
        println!("          rates are configured or calibrated against a target CAR instead");
        println!("excluded: multi-hour wall-clock campaigns; slow drift is injected at");
        println!("          1000x time compression with amplitude preserved");
        println!("excluded: hardware maximum clock rate; reported as a guard-factor");
        println!("          estimate from the total timing jitter instead");
        // With ~47 ps total jitter and a conservative guard of 71 sigma per
        // period, the estimate lands near 300 MHz.
        let est = max_rate_estimate_hz(47_096.4, 71.0);
        ensure!(
            (2.5e8..=3.5e8).contains(&est),
            "rate estimate {est:.3e} Hz outside the expected band"
        );
        Ok(format!("rate bound estimate {:.0} MHz", est / 1e6))
    });
}
