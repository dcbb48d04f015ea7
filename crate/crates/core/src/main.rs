//! Command-line front end: run simulations, analyze tag files, exercise the
//! clock pulse-shaping chain, calibrate the background rate, and summarize
//! written runs.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use pairsync::analysis::oracle::{CoincidenceModel, DetectedRates};
use pairsync::analysis::{car_from_histogram, coincidence_histogram};
use pairsync::channel::RamanProfile;
use pairsync::config::ExperimentConfig;
use pairsync::engine::{self, RunManifest};
use pairsync::pulsechain::{run_chain, ChainConfig, Waveform};
use pairsync::qtag;
use pairsync::source::MultiPairModel;
use pairsync::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pairsync",
    version,
    about = "Discrete-event simulator for a clock-synchronized photon-pair network"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SyncArg {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Stage {
    /// Comparator and delay-overlap pulse shortener only.
    Picoshort,
    /// Shortener plus the band-limited amplifier.
    Picoamp,
    /// Full chain through the intensity modulator.
    Mzm,
    /// Alias for the full chain.
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment and write all artifacts to the output directory.
    Simulate {
        /// Flat `key = value` config file; defaults apply for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override clock distribution: `on` co-propagates clock pulses
        /// (receivers phase-lock, Raman background present), `off` runs
        /// dark fiber with free-running receiver clocks.
        #[arg(long, value_enum)]
        sync: Option<SyncArg>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of pump slots.
        #[arg(long)]
        slots: Option<u64>,
        /// Output directory (else $PAIRSYNC_OUTPUT_DIR, else the config's).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-correlate two tag files and report the CAR.
    Analyze {
        #[arg(long)]
        tags_a: PathBuf,
        #[arg(long)]
        tags_b: PathBuf,
        /// Coincidence window, picoseconds.
        #[arg(long, default_value_t = 200.0)]
        window_ps: f64,
        /// Histogram bin width, picoseconds.
        #[arg(long, default_value_t = 10.0)]
        bin_ps: f64,
        /// Accidental windows to average.
        #[arg(long, default_value_t = 10)]
        peaks: usize,
    },
    /// Exercise the electronic pulse-shaping chain and write waveforms.
    Pulsechain {
        #[arg(long, value_enum, default_value_t = Stage::All)]
        stage: Stage,
        #[arg(long, default_value = "pulsechain_out")]
        out: PathBuf,
    },
    /// Find the background rate that degrades the predicted CAR to a target.
    Calibrate {
        #[arg(long)]
        target_car: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a written run directory and verify its manifest hashes.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() {
    // Die quietly when a downstream pipe closes (`pairsync ... | head`)
    // instead of panicking on the write error Rust raises by default.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            sync,
            seed,
            slots,
            out,
        } => simulate(config.as_deref(), sync, seed, slots, out),
        Cmd::Analyze {
            tags_a,
            tags_b,
            window_ps,
            bin_ps,
            peaks,
        } => analyze(&tags_a, &tags_b, window_ps, bin_ps, peaks),
        Cmd::Pulsechain { stage, out } => pulsechain(stage, &out),
        Cmd::Calibrate { target_car, config } => calibrate(target_car, config.as_deref()),
        Cmd::Report { run } => report(&run),
    }
}

/// Attach the offending path to any I/O error so `error:` lines name the
/// file, not just the errno text.
fn named<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default_run()),
        Some(p) => {
            let text = named(std::fs::read_to_string(p).map_err(Error::Io), p)?;
            ExperimentConfig::from_flat_str(&text)
        }
    }
}

fn simulate(
    config: Option<&Path>,
    sync: Option<SyncArg>,
    seed: Option<u64>,
    slots: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = sync {
        cfg.sync.enabled = matches!(s, SyncArg::On);
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(s) = slots {
        cfg.n_slots = s;
    }
    let dir = out
        .or_else(|| std::env::var_os("PAIRSYNC_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));

    let written = engine::run_and_write(&cfg, &dir)?;
    let o = &written.outputs;
    println!(
        "slots {}  seed {}  sync {}",
        cfg.n_slots,
        cfg.master_seed,
        if cfg.sync.enabled { "on" } else { "off" }
    );
    println!(
        "tags  node1 {}  node2 {}  (pairs emitted {})",
        o.tags_1.len(),
        o.tags_2.len(),
        o.stats.emitted_pairs
    );
    if o.report.infinite {
        println!(
            "CAR   infinite (C = {}, no accidentals observed)",
            o.report.coincidences
        );
    } else {
        println!(
            "CAR   {:.2} +/- {:.2}  (C = {}, mean accidental window {:.2})",
            o.report.car, o.report.car_sigma, o.report.coincidences, o.report.accidentals_mean
        );
    }
    println!(
        "      fidelity {:.4}  visibility {:.4}  classical bound {}  nonlocality bound {}",
        o.report.fidelity,
        o.report.visibility,
        if o.report.exceeds_classical {
            "exceeded"
        } else {
            "not exceeded"
        },
        if o.report.exceeds_nonlocality {
            "exceeded"
        } else {
            "not exceeded"
        },
    );
    println!(
        "wrote {} ({} files, {:.2} s)",
        written.dir.display(),
        written.manifest.files.len() + 1,
        written.manifest.wall_time_s
    );
    Ok(())
}

fn analyze(tags_a: &Path, tags_b: &Path, window_ps: f64, bin_ps: f64, peaks: usize) -> Result<()> {
    let (period_a, recs_a) = named(qtag::read_tags_file(tags_a), tags_a)?;
    let (period_b, recs_b) = named(qtag::read_tags_file(tags_b), tags_b)?;
    if period_a != period_b {
        return Err(Error::Config(format!(
            "tag files disagree on the slot period: {} vs {} fs",
            period_a.value(),
            period_b.value()
        )));
    }
    let window_fs = (window_ps * 1_000.0).round() as i64;
    let bin_fs = (bin_ps * 1_000.0).round() as i64;
    let a: Vec<_> = recs_a.iter().map(|r| r.tag).collect();
    let b: Vec<_> = recs_b.iter().map(|r| r.tag).collect();
    let span = (peaks.div_ceil(2) + 1) as i64 * period_a.value();
    let hist = coincidence_histogram(&a, &b, period_a, span, bin_fs)?;
    let report = car_from_histogram(&hist, window_fs, period_a, peaks, 0)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    println!("{json}");
    Ok(())
}

fn waveform_csv(w: &Waveform) -> String {
    let mut s = String::from("t_fs,value\n");
    for i in 0..w.len() {
        s.push_str(&format!("{},{}\n", w.time_at(i), w.samples[i]));
    }
    s
}

fn pulsechain(stage: Stage, out: &Path) -> Result<()> {
    let cfg = ChainConfig::default();
    let chain = run_chain(&cfg)?;
    std::fs::create_dir_all(out)?;
    let mut files: Vec<(&str, &Waveform)> = vec![
        ("input.csv", &chain.input),
        ("comparator.csv", &chain.squared),
        ("shaped.csv", &chain.shaped),
    ];
    if stage != Stage::Picoshort {
        files.push(("amplified.csv", &chain.amplified));
    }
    if matches!(stage, Stage::Mzm | Stage::All) {
        files.push(("optical.csv", &chain.optical));
        files.push(("optical_measured.csv", &chain.optical_measured));
    }
    for (name, w) in &files {
        std::fs::write(out.join(name), waveform_csv(w))?;
    }
    println!("shaped FWHM       {:8.2} ps", chain.shaped_fwhm_fs / 1e3);
    if stage != Stage::Picoshort {
        println!("amplified FWHM    {:8.2} ps", chain.amplified_fwhm_fs / 1e3);
        println!("drive peak        {:8.3} V", chain.drive_peak_v);
    }
    if matches!(stage, Stage::Mzm | Stage::All) {
        println!(
            "optical FWHM      {:8.2} ps (measured)",
            chain.optical_fwhm_fs / 1e3
        );
        println!("raw extinction    {:8.2} dB", chain.raw_extinction_db);
    }
    println!("wrote {} ({} waveforms)", out.display(), files.len());
    Ok(())
}

/// Map an experiment config onto the analytic coincidence-window model.
fn model_for(cfg: &ExperimentConfig) -> Result<(CoincidenceModel, DetectedRates)> {
    let period = cfg.period_fs() as f64;
    let gate = |profile: &RamanProfile, width: u64| -> f64 {
        match profile {
            RamanProfile::PulseGated => width as f64,
            RamanProfile::UniformPeriod => period,
        }
    };
    let gate1 = gate(
        &cfg.channel_1.raman_profile,
        cfg.channel_1.clock_pulse_width_fs,
    );
    let gate2 = gate(
        &cfg.channel_2.raman_profile,
        cfg.channel_2.clock_pulse_width_fs,
    );
    if (gate1 - gate2).abs() > 1e-6 {
        return Err(Error::Config(
            "calibration assumes both arms share one background gate width".into(),
        ));
    }
    let jitter = |d: &pairsync::detector::DetectorConfig| -> f64 {
        (d.jitter_sigma_fs().powi(2) + d.tdc_sigma_fs().powi(2)).sqrt()
    };
    let model = CoincidenceModel {
        period_fs: period,
        gate_width_fs: gate1,
        half_window_fs: (cfg.analysis.window_fs + cfg.analysis.bin_width_fs) as f64 / 2.0,
        emission_sigma_fs: cfg.source.emission_sigma_fs,
        jitter1_sigma_fs: jitter(&cfg.detector_1),
        jitter2_sigma_fs: jitter(&cfg.detector_2),
    };
    let slot_s = period * 1e-15;
    let rates = DetectedRates {
        mu: cfg.source.mean_pairs(),
        eta1: cfg.channel_1.survival() * cfg.detector_1.efficiency,
        eta2: cfg.channel_2.survival() * cfg.detector_2.efficiency,
        raman1: cfg.channel_1.raman_rate_per_slot * cfg.detector_1.efficiency,
        raman2: cfg.channel_2.raman_rate_per_slot * cfg.detector_2.efficiency,
        dark1: cfg.detector_1.dark_rate_hz * slot_s,
        dark2: cfg.detector_2.dark_rate_hz * slot_s,
        kappa: match cfg.source.multi_pair_model {
            MultiPairModel::Poisson => 1.0,
            MultiPairModel::Thermal => 2.0,
        },
    };
    Ok((model, rates))
}

fn calibrate(target_car: f64, config: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config)?;
    let (model, base) = model_for(&cfg)?;
    println!(
        "CAR with no background: {:.3}",
        model.predicted_car(&DetectedRates {
            raman1: 0.0,
            raman2: 0.0,
            ..base
        })
    );
    println!("CAR as configured:      {:.3}", model.predicted_car(&base));
    let detected = model.calibrate_raman_for_car(&base, target_car)?;
    let mut check = base;
    check.raman1 = detected;
    check.raman2 = detected;
    println!("target CAR:             {target_car}");
    println!("detected background:    {detected:.6e} per slot per channel");
    println!("predicted CAR there:    {:.4}", model.predicted_car(&check));
    cfg.channel_1.raman_rate_per_slot = detected / cfg.detector_1.efficiency;
    cfg.channel_2.raman_rate_per_slot = detected / cfg.detector_2.efficiency;
    println!(
        "channel_1.raman_rate_per_slot = {}",
        cfg.channel_1.raman_rate_per_slot
    );
    println!(
        "channel_2.raman_rate_per_slot = {}",
        cfg.channel_2.raman_rate_per_slot
    );
    println!("\n# full config at the calibrated rate:");
    print!("{}", cfg.to_flat_string()?);
    Ok(())
}

fn report(run: &Path) -> Result<()> {
    let manifest_path = run.join("manifest.json");
    let manifest_text = named(
        std::fs::read_to_string(&manifest_path).map_err(Error::Io),
        &manifest_path,
    )?;
    let manifest: RunManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    let mut verified = 0usize;
    for (name, expect) in &manifest.files {
        let path = run.join(name);
        let bytes = named(std::fs::read(&path).map_err(Error::Io), &path)?;
        let got = {
            use sha2::{Digest, Sha256};
            let mut h = Sha256::new();
            h.update(&bytes);
            let d = h.finalize();
            d.iter().map(|b| format!("{b:02x}")).collect::<String>()
        };
        if &got != expect {
            return Err(Error::Format(format!(
                "{name}: content hash does not match the manifest"
            )));
        }
        verified += 1;
    }
    let report_text = std::fs::read_to_string(run.join("car_report.json"))?;
    let car: pairsync::analysis::CarReport = serde_json::from_str(&report_text)
        .map_err(|e| Error::Format(format!("car_report.json: {e}")))?;
    println!(
        "run {}  slots {}  seed {}  sync {}",
        run.display(),
        manifest.n_slots,
        manifest.master_seed,
        if manifest.sync_enabled { "on" } else { "off" }
    );
    if car.infinite {
        println!("CAR infinite (C = {})", car.coincidences);
    } else {
        println!(
            "CAR {:.2} +/- {:.2}  fidelity {:.4}  visibility {:.4}",
            car.car, car.car_sigma, car.fidelity, car.visibility
        );
    }
    println!(
        "bounds: classical {}  nonlocality {}",
        if car.exceeds_classical {
            "exceeded"
        } else {
            "not exceeded"
        },
        if car.exceeds_nonlocality {
            "exceeded"
        } else {
            "not exceeded"
        },
    );
    println!("manifest: {verified} files verified");
    Ok(())
}
