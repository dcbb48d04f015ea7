//! Experiment configuration: defaults, validation, and a flat text format.
//!
//! Configs are exchanged as flat `key = value` lines (one per line, `#`
//! comments, later keys win). Parsing starts from [`ExperimentConfig::default_run`]
//! so a config file only needs the keys it changes. [`ExperimentConfig::to_flat_string`]
//! emits every key in a stable order; parse(to_flat_string(c)) == c.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, DriftModel, RamanProfile};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::source::{MultiPairModel, RateInterpretation, SourceConfig};
use crate::sync::{OscillatorConfig, SyncConfig};

/// Histogram and CAR extraction settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Coincidence window width (full width, centered on a peak).
    pub window_fs: i64,
    /// Histogram bin width. Must be positive and even.
    pub bin_width_fs: i64,
    /// Accidental peaks averaged on each side pattern (alternating +-1, +-2, ...).
    pub n_peaks: usize,
    /// Side peaks adjacent to the coincidence peak to skip before averaging.
    pub exclude_center_neighbors: usize,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_fs <= 0 {
            return Err(Error::Config(format!(
                "analysis.window_fs must be positive, got {}",
                self.window_fs
            )));
        }
        if self.bin_width_fs <= 0 || self.bin_width_fs % 2 != 0 {
            return Err(Error::Config(format!(
                "analysis.bin_width_fs must be positive and even, got {}",
                self.bin_width_fs
            )));
        }
        if self.n_peaks == 0 {
            return Err(Error::Config("analysis.n_peaks must be at least 1".into()));
        }
        Ok(())
    }
}

/// Full description of one simulated run: source, both fiber arms, both
/// receivers, the clock distribution loop, and the analysis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Number of pump slots to simulate.
    pub n_slots: u64,
    /// Master seed; every stochastic component derives its own stream from it.
    pub master_seed: u64,
    /// Directory for run artifacts (tags, histogram, report, phase logs).
    pub output_dir: String,
    pub source: SourceConfig,
    pub channel_1: ChannelConfig,
    pub channel_2: ChannelConfig,
    pub detector_1: DetectorConfig,
    pub detector_2: DetectorConfig,
    pub sync: SyncConfig,
    pub oscillator_tx: OscillatorConfig,
    pub oscillator_rx1: OscillatorConfig,
    pub oscillator_rx2: OscillatorConfig,
    pub analysis: AnalysisConfig,
}

/// Detector system efficiency equal to a 1 dB insertion loss.
pub const DETECTOR_EFFICIENCY_1DB: f64 = 0.794_328_234_724_281_5;

impl ExperimentConfig {
    /// Baseline run: 200 MHz pumped pair source, 23 dB / 25 dB fiber arms
    /// with a slow sinusoidal path-length drift on arm 1, co-propagating
    /// 200 MHz clock pulses that gate Raman noise, 45 ns dead-time
    /// detectors, and a first-order phase-tracking clock recovery loop.
    ///
    /// Pair probability and Raman rate are calibrated so that at 2e8 slots
    /// the synchronized run lands near CAR 77 and the unsynchronized run
    /// (clock light off, free-running receiver clocks) near CAR 42 once the
    /// Raman background is switched on by the clock pulses.
    pub fn default_run() -> ExperimentConfig {
        let period_fs: u64 = 5_000_000; // 200 MHz
        let channel_common = ChannelConfig {
            loss_db: 23.0,
            base_delay_fs: 55_000_000_000, // 11 km of fiber, 11000 slots
            drift_model: DriftModel::Sinusoid {
                amplitude_fs: 2_500.0,
                period_s: 25.2,
            },
            raman_rate_per_slot: 1.449_547_7e-4,
            raman_profile: RamanProfile::PulseGated,
            clock_pulse_width_fs: 2_500_000,
            period_fs,
        };
        let detector_common = DetectorConfig {
            efficiency: DETECTOR_EFFICIENCY_1DB,
            jitter_fwhm_fs: 50_000.0,
            dark_rate_hz: 500.0,
            dead_time_fs: 45_000_000,
            tdc_jitter_fwhm_fs: 7_000.0,
            tdc_bin_fs: 1_000,
            period_fs,
        };
        let oscillator_common = OscillatorConfig {
            frequency_hz: 200e6,
            jitter_fs_per_edge: 1_000.0,
            phase_walk_fs_per_sqrt_s: 100.0,
        };
        ExperimentConfig {
            n_slots: 10_000_000,
            master_seed: 7,
            output_dir: "out".into(),
            source: SourceConfig {
                pair_prob_per_pulse: 0.013_687_05,
                rate_interpretation: RateInterpretation::ProbAtLeastOne,
                multi_pair_model: MultiPairModel::Poisson,
                emission_sigma_fs: 31_400.0,
                period_fs,
            },
            channel_1: channel_common.clone(),
            channel_2: ChannelConfig {
                loss_db: 25.0,
                drift_model: DriftModel::None,
                ..channel_common
            },
            detector_1: detector_common.clone(),
            detector_2: detector_common,
            sync: SyncConfig {
                rec_jitter_fwhm_fs: 47_096.4, // 20 ps sigma at the phase detector
                loop_gain: 0.01,
                averaging_edges: 1,
                enabled: true,
            },
            oscillator_tx: oscillator_common.clone(),
            oscillator_rx1: oscillator_common.clone(),
            oscillator_rx2: oscillator_common,
            analysis: AnalysisConfig {
                window_fs: 200_000,
                bin_width_fs: 10_000,
                n_peaks: 10,
                exclude_center_neighbors: 0,
            },
        }
    }

    /// The shared slot period. Every component must agree on it.
    pub fn period_fs(&self) -> u64 {
        self.source.period_fs
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slots == 0 {
            return Err(Error::Config("n_slots must be at least 1".into()));
        }
        self.source.validate()?;
        self.channel_1.validate()?;
        self.channel_2.validate()?;
        self.detector_1.validate()?;
        self.detector_2.validate()?;
        self.sync.validate()?;
        self.oscillator_tx.validate()?;
        self.oscillator_rx1.validate()?;
        self.oscillator_rx2.validate()?;
        self.analysis.validate()?;
        let period = self.source.period_fs;
        for (name, p) in [
            ("channel_1", self.channel_1.period_fs),
            ("channel_2", self.channel_2.period_fs),
            ("detector_1", self.detector_1.period_fs),
            ("detector_2", self.detector_2.period_fs),
        ] {
            if p != period {
                return Err(Error::Config(format!(
                    "{name}.period_fs {p} does not match source period {period}"
                )));
            }
        }
        for (name, osc) in [
            ("oscillator_tx", &self.oscillator_tx),
            ("oscillator_rx1", &self.oscillator_rx1),
            ("oscillator_rx2", &self.oscillator_rx2),
        ] {
            if osc.period_fs().value() != period as i64 {
                return Err(Error::Config(format!(
                    "{name} period {} fs does not match slot period {period} fs; \
                     clocks and pump share one rate, set it via the period_fs key",
                    osc.period_fs().value()
                )));
            }
        }
        if self.analysis.window_fs as u64 >= period {
            return Err(Error::Config(format!(
                "analysis.window_fs {} must be smaller than the period {}",
                self.analysis.window_fs, period
            )));
        }
        Ok(())
    }

    /// Parse a flat config text on top of the baseline config.
    pub fn from_flat_str(text: &str) -> Result<ExperimentConfig> {
        Self::from_flat_str_over(ExperimentConfig::default_run(), text)
    }

    /// Parse a flat config text on top of an explicit base config.
    pub fn from_flat_str_over(base: ExperimentConfig, text: &str) -> Result<ExperimentConfig> {
        let mut cfg = base;
        let mut drift_1 = DriftScratch::from_model(&cfg.channel_1.drift_model, "channel_1")?;
        let mut drift_2 = DriftScratch::from_model(&cfg.channel_2.drift_model, "channel_2")?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            cfg.apply_key(key.trim(), value.trim(), &mut drift_1, &mut drift_2)
                .map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
                    other => other,
                })?;
        }
        cfg.channel_1.drift_model = drift_1.build()?;
        cfg.channel_2.drift_model = drift_2.build()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set every period-bearing field consistently.
    fn set_period(&mut self, period_fs: u64) {
        self.source.period_fs = period_fs;
        self.channel_1.period_fs = period_fs;
        self.channel_2.period_fs = period_fs;
        self.detector_1.period_fs = period_fs;
        self.detector_2.period_fs = period_fs;
        let f = 1e15 / period_fs as f64;
        self.oscillator_tx.frequency_hz = f;
        self.oscillator_rx1.frequency_hz = f;
        self.oscillator_rx2.frequency_hz = f;
    }

    fn apply_key(
        &mut self,
        key: &str,
        value: &str,
        drift_1: &mut DriftScratch,
        drift_2: &mut DriftScratch,
    ) -> Result<()> {
        match key {
            "n_slots" => self.n_slots = parse_u64(key, value)?,
            "master_seed" => self.master_seed = parse_u64(key, value)?,
            "output_dir" => self.output_dir = value.to_string(),
            "period_fs" => {
                let p = parse_u64(key, value)?;
                if p == 0 {
                    return Err(Error::Config("period_fs must be positive".into()));
                }
                self.set_period(p);
            }

            "source.pair_prob_per_pulse" => {
                self.source.pair_prob_per_pulse = parse_f64(key, value)?
            }
            "source.rate_interpretation" => {
                self.source.rate_interpretation = match value {
                    "prob_at_least_one" => RateInterpretation::ProbAtLeastOne,
                    "mean_pairs" => RateInterpretation::MeanPairs,
                    other => {
                        return Err(Error::Config(format!(
                            "{key}: expected prob_at_least_one or mean_pairs, got `{other}`"
                        )))
                    }
                }
            }
            "source.multi_pair_model" => {
                self.source.multi_pair_model = match value {
                    "poisson" => MultiPairModel::Poisson,
                    "thermal" => MultiPairModel::Thermal,
                    other => {
                        return Err(Error::Config(format!(
                            "{key}: expected poisson or thermal, got `{other}`"
                        )))
                    }
                }
            }
            "source.emission_sigma_fs" => self.source.emission_sigma_fs = parse_f64(key, value)?,

            _ if key.starts_with("channel_1.") || key.starts_with("channel_2.") => {
                let (channel, drift) = if key.starts_with("channel_1.") {
                    (&mut self.channel_1, drift_1)
                } else {
                    (&mut self.channel_2, drift_2)
                };
                let field = &key[ctx_prefix_len(key)..];
                apply_channel_key(channel, drift, key, field, value)?;
            }

            _ if key.starts_with("detector_1.") || key.starts_with("detector_2.") => {
                let det = if key.starts_with("detector_1.") {
                    &mut self.detector_1
                } else {
                    &mut self.detector_2
                };
                let field = &key[ctx_prefix_len(key)..];
                match field {
                    "efficiency" => det.efficiency = parse_f64(key, value)?,
                    "jitter_fwhm_fs" => det.jitter_fwhm_fs = parse_f64(key, value)?,
                    "dark_rate_hz" => det.dark_rate_hz = parse_f64(key, value)?,
                    "dead_time_fs" => det.dead_time_fs = parse_u64(key, value)?,
                    "tdc_jitter_fwhm_fs" => det.tdc_jitter_fwhm_fs = parse_f64(key, value)?,
                    "tdc_bin_fs" => det.tdc_bin_fs = parse_u64(key, value)?,
                    _ => return Err(unknown_key(key)),
                }
            }

            "sync.enabled" => self.sync.enabled = parse_bool(key, value)?,
            "sync.rec_jitter_fwhm_fs" => self.sync.rec_jitter_fwhm_fs = parse_f64(key, value)?,
            "sync.loop_gain" => self.sync.loop_gain = parse_f64(key, value)?,
            "sync.averaging_edges" => {
                self.sync.averaging_edges = parse_u64(key, value)?
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: value `{value}` is out of range")))?
            }

            _ if key.starts_with("oscillator_") => {
                let osc = if key.starts_with("oscillator_tx.") {
                    &mut self.oscillator_tx
                } else if key.starts_with("oscillator_rx1.") {
                    &mut self.oscillator_rx1
                } else if key.starts_with("oscillator_rx2.") {
                    &mut self.oscillator_rx2
                } else {
                    return Err(unknown_key(key));
                };
                let field = &key[ctx_prefix_len(key)..];
                match field {
                    "jitter_fs_per_edge" => osc.jitter_fs_per_edge = parse_f64(key, value)?,
                    "phase_walk_fs_per_sqrt_s" => {
                        osc.phase_walk_fs_per_sqrt_s = parse_f64(key, value)?
                    }
                    _ => return Err(unknown_key(key)),
                }
            }

            "analysis.window_fs" => self.analysis.window_fs = parse_i64(key, value)?,
            "analysis.bin_width_fs" => self.analysis.bin_width_fs = parse_i64(key, value)?,
            "analysis.n_peaks" => self.analysis.n_peaks = parse_u64(key, value)? as usize,
            "analysis.exclude_center_neighbors" => {
                self.analysis.exclude_center_neighbors = parse_u64(key, value)? as usize
            }

            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    /// Emit every key in a stable order. Round trips exactly through
    /// [`ExperimentConfig::from_flat_str_over`] with any base.
    ///
    /// Fails only for drift models a flat file cannot express (`Sum`).
    pub fn to_flat_string(&self) -> Result<String> {
        use std::fmt::Write;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_slots", self.n_slots.to_string());
        kv("master_seed", self.master_seed.to_string());
        kv("output_dir", self.output_dir.clone());
        kv("period_fs", self.source.period_fs.to_string());

        kv(
            "source.pair_prob_per_pulse",
            self.source.pair_prob_per_pulse.to_string(),
        );
        kv(
            "source.rate_interpretation",
            match self.source.rate_interpretation {
                RateInterpretation::ProbAtLeastOne => "prob_at_least_one",
                RateInterpretation::MeanPairs => "mean_pairs",
            }
            .to_string(),
        );
        kv(
            "source.multi_pair_model",
            match self.source.multi_pair_model {
                MultiPairModel::Poisson => "poisson",
                MultiPairModel::Thermal => "thermal",
            }
            .to_string(),
        );
        kv(
            "source.emission_sigma_fs",
            self.source.emission_sigma_fs.to_string(),
        );

        for (name, ch) in [
            ("channel_1", &self.channel_1),
            ("channel_2", &self.channel_2),
        ] {
            let d = DriftScratch::from_model(&ch.drift_model, name)?;
            kv(&format!("{name}.loss_db"), ch.loss_db.to_string());
            kv(
                &format!("{name}.base_delay_fs"),
                ch.base_delay_fs.to_string(),
            );
            kv(&format!("{name}.drift"), d.kind.to_string());
            kv(
                &format!("{name}.drift_amplitude_fs"),
                d.amplitude_fs.to_string(),
            );
            kv(&format!("{name}.drift_period_s"), d.period_s.to_string());
            kv(
                &format!("{name}.drift_walk_fs_per_sqrt_s"),
                d.walk_sigma.to_string(),
            );
            kv(
                &format!("{name}.raman_rate_per_slot"),
                ch.raman_rate_per_slot.to_string(),
            );
            kv(
                &format!("{name}.raman_profile"),
                match ch.raman_profile {
                    RamanProfile::PulseGated => "pulse_gated",
                    RamanProfile::UniformPeriod => "uniform_period",
                }
                .to_string(),
            );
            kv(
                &format!("{name}.clock_pulse_width_fs"),
                ch.clock_pulse_width_fs.to_string(),
            );
        }

        for (name, det) in [
            ("detector_1", &self.detector_1),
            ("detector_2", &self.detector_2),
        ] {
            kv(&format!("{name}.efficiency"), det.efficiency.to_string());
            kv(
                &format!("{name}.jitter_fwhm_fs"),
                det.jitter_fwhm_fs.to_string(),
            );
            kv(
                &format!("{name}.dark_rate_hz"),
                det.dark_rate_hz.to_string(),
            );
            kv(
                &format!("{name}.dead_time_fs"),
                det.dead_time_fs.to_string(),
            );
            kv(
                &format!("{name}.tdc_jitter_fwhm_fs"),
                det.tdc_jitter_fwhm_fs.to_string(),
            );
            kv(&format!("{name}.tdc_bin_fs"), det.tdc_bin_fs.to_string());
        }

        kv("sync.enabled", self.sync.enabled.to_string());
        kv(
            "sync.rec_jitter_fwhm_fs",
            self.sync.rec_jitter_fwhm_fs.to_string(),
        );
        kv("sync.loop_gain", self.sync.loop_gain.to_string());
        kv(
            "sync.averaging_edges",
            self.sync.averaging_edges.to_string(),
        );

        for (name, osc) in [
            ("oscillator_tx", &self.oscillator_tx),
            ("oscillator_rx1", &self.oscillator_rx1),
            ("oscillator_rx2", &self.oscillator_rx2),
        ] {
            kv(
                &format!("{name}.jitter_fs_per_edge"),
                osc.jitter_fs_per_edge.to_string(),
            );
            kv(
                &format!("{name}.phase_walk_fs_per_sqrt_s"),
                osc.phase_walk_fs_per_sqrt_s.to_string(),
            );
        }

        kv("analysis.window_fs", self.analysis.window_fs.to_string());
        kv(
            "analysis.bin_width_fs",
            self.analysis.bin_width_fs.to_string(),
        );
        kv("analysis.n_peaks", self.analysis.n_peaks.to_string());
        kv(
            "analysis.exclude_center_neighbors",
            self.analysis.exclude_center_neighbors.to_string(),
        );
        Ok(s)
    }
}

/// Length of the `foo_N.` prefix up to and including the dot.
fn ctx_prefix_len(key: &str) -> usize {
    key.find('.').map(|i| i + 1).unwrap_or(0)
}

fn apply_channel_key(
    channel: &mut ChannelConfig,
    drift: &mut DriftScratch,
    key: &str,
    field: &str,
    value: &str,
) -> Result<()> {
    match field {
        "loss_db" => channel.loss_db = parse_f64(key, value)?,
        "base_delay_fs" => channel.base_delay_fs = parse_i64(key, value)?,
        "drift" => match value {
            "none" | "sinusoid" | "random_walk" => drift.kind = value.to_string(),
            other => {
                return Err(Error::Config(format!(
                    "{key}: expected none, sinusoid, or random_walk, got `{other}`"
                )))
            }
        },
        "drift_amplitude_fs" => drift.amplitude_fs = parse_f64(key, value)?,
        "drift_period_s" => drift.period_s = parse_f64(key, value)?,
        "drift_walk_fs_per_sqrt_s" => drift.walk_sigma = parse_f64(key, value)?,
        "raman_rate_per_slot" => channel.raman_rate_per_slot = parse_f64(key, value)?,
        "raman_profile" => {
            channel.raman_profile = match value {
                "pulse_gated" => RamanProfile::PulseGated,
                "uniform_period" => RamanProfile::UniformPeriod,
                other => {
                    return Err(Error::Config(format!(
                        "{key}: expected pulse_gated or uniform_period, got `{other}`"
                    )))
                }
            }
        }
        "clock_pulse_width_fs" => channel.clock_pulse_width_fs = parse_u64(key, value)?,
        _ => return Err(unknown_key(key)),
    }
    Ok(())
}

/// Drift model fields as independent flat keys, so a file can set the kind
/// and its parameters in any order before the model is rebuilt once.
struct DriftScratch {
    kind: String,
    amplitude_fs: f64,
    period_s: f64,
    walk_sigma: f64,
}

impl DriftScratch {
    fn from_model(model: &DriftModel, channel: &str) -> Result<DriftScratch> {
        let mut s = DriftScratch {
            kind: "none".into(),
            amplitude_fs: 0.0,
            period_s: 1.0,
            walk_sigma: 0.0,
        };
        match model {
            DriftModel::None => {}
            DriftModel::Sinusoid {
                amplitude_fs,
                period_s,
            } => {
                s.kind = "sinusoid".into();
                s.amplitude_fs = *amplitude_fs;
                s.period_s = *period_s;
            }
            DriftModel::RandomWalk {
                walk_sigma_fs_per_sqrt_s,
            } => {
                s.kind = "random_walk".into();
                s.walk_sigma = *walk_sigma_fs_per_sqrt_s;
            }
            DriftModel::Sum(_) => {
                return Err(Error::Config(format!(
                    "{channel}: composite drift models have no flat representation; \
                     configure them through the API"
                )))
            }
        }
        Ok(s)
    }

    fn build(&self) -> Result<DriftModel> {
        Ok(match self.kind.as_str() {
            "none" => DriftModel::None,
            "sinusoid" => DriftModel::Sinusoid {
                amplitude_fs: self.amplitude_fs,
                period_s: self.period_s,
            },
            "random_walk" => DriftModel::RandomWalk {
                walk_sigma_fs_per_sqrt_s: self.walk_sigma,
            },
            other => return Err(Error::Config(format!("unknown drift kind `{other}`"))),
        })
    }
}

fn unknown_key(key: &str) -> Error {
    Error::Config(format!("unknown config key `{key}`"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got `{value}`")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse::<u64>().map_err(|_| {
        Error::Config(format!(
            "{key}: expected a nonnegative integer, got `{value}`"
        ))
    })
}

fn parse_i64(key: &str, value: &str) -> Result<i64> {
    value
        .parse::<i64>()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => Err(Error::Config(format!(
            "{key}: expected true/false or on/off, got `{other}`"
        ))),
    }
}
