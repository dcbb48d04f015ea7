//! Single-photon detector and time-tagging electronics.
//!
//! The pipeline per photon is: detection thinning by efficiency, Gaussian
//! transduction jitter, TDC front-end jitter, quantization to the TDC grid,
//! then a dead-time filter over the merged (photon + dark count) stream.
//! Dark counts originate in the sensor, so they see the TDC stages but not
//! the optical transduction jitter.
//!
//! Processing is streaming: events are held in a pending pool and released
//! only once no future input can sort before them. Jitter draws are clamped
//! at eight sigma, which makes each event's displacement bounded and the
//! release watermark exact rather than probabilistic. The clamp changes the
//! distribution only beyond 8 sigma (total mass about 1e-15), far below
//! anything the statistics here can resolve.

use crate::error::{Error, Result};
use crate::seeds;
use crate::sparse::{self, CountModel};
use crate::timebase::{DurationFs, Timestamp};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// FWHM of a Gaussian divided by its sigma: `2 sqrt(2 ln 2)`.
pub const GAUSS_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Jitter clamp, in sigmas. Bounds per-event displacement for streaming.
pub const JITTER_CLAMP_SIGMAS: f64 = 8.0;

/// Provenance of a time tag. The discriminant is the on-disk encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum TagKind {
    Signal = 0,
    Raman = 1,
    Dark = 2,
}

impl TagKind {
    pub fn from_u8(v: u8) -> Option<TagKind> {
        match v {
            0 => Some(TagKind::Signal),
            1 => Some(TagKind::Raman),
            2 => Some(TagKind::Dark),
            _ => None,
        }
    }
}

/// A photon reaching the detector input.
#[derive(Clone, Copy, Debug)]
pub struct Arrival {
    pub t: Timestamp,
    pub kind: TagKind,
}

/// A recorded detection event (quantized, dead-time filtered).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeTag {
    pub t: Timestamp,
    pub kind: TagKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Photon detection probability (system efficiency at the detector).
    pub efficiency: f64,
    /// Transduction timing jitter, Gaussian FWHM.
    pub jitter_fwhm_fs: f64,
    pub dark_rate_hz: f64,
    pub dead_time_fs: u64,
    /// TDC front-end jitter, Gaussian FWHM. Applies to darks as well.
    pub tdc_jitter_fwhm_fs: f64,
    /// TDC quantization grid. Times round to the nearest multiple.
    pub tdc_bin_fs: u64,
    pub period_fs: u64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency >= 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Config(format!(
                "detector efficiency must be in [0, 1], got {}",
                self.efficiency
            )));
        }
        for (name, v) in [
            ("jitter_fwhm_fs", self.jitter_fwhm_fs),
            ("dark_rate_hz", self.dark_rate_hz),
            ("tdc_jitter_fwhm_fs", self.tdc_jitter_fwhm_fs),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.tdc_bin_fs == 0 {
            return Err(Error::Config("tdc_bin_fs must be positive".into()));
        }
        if self.period_fs == 0 {
            return Err(Error::Config("period_fs must be positive".into()));
        }
        if !self.period_fs.is_multiple_of(self.tdc_bin_fs) {
            return Err(Error::Config(format!(
                "period_fs {} must be a multiple of tdc_bin_fs {}",
                self.period_fs, self.tdc_bin_fs
            )));
        }
        Ok(())
    }

    fn dark_mean_per_slot(&self) -> f64 {
        self.dark_rate_hz * self.period_fs as f64 * 1e-15
    }

    pub fn jitter_sigma_fs(&self) -> f64 {
        self.jitter_fwhm_fs / GAUSS_FWHM_PER_SIGMA
    }

    pub fn tdc_sigma_fs(&self) -> f64 {
        self.tdc_jitter_fwhm_fs / GAUSS_FWHM_PER_SIGMA
    }
}

/// Counters for events removed by the pipeline.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct DetectorStats {
    pub input_photons: u64,
    pub detected_photons: u64,
    pub dark_counts: u64,
    pub dropped_pre_epoch: u64,
    pub dropped_dead_time: u64,
    pub emitted_tags: u64,
}

pub struct Detector {
    config: DetectorConfig,
    jitter_sigma_fs: f64,
    tdc_sigma_fs: f64,
    /// Photon-path RNG: thinning, transduction jitter, photon TDC jitter.
    rng: ChaCha12Rng,
    /// Dark-count RNG. Separate stream so photon processing and dark
    /// generation never interleave draws: output is then invariant under how
    /// the input is chunked, not just reproducible for one chunking.
    dark_rng: ChaCha12Rng,
    jitter: Option<Normal<f64>>,
    tdc_jitter: Option<Normal<f64>>,
    dark_model: Option<CountModel>,
    /// Next slot of the persistent dark-count gap chain.
    dark_next_slot: u64,
    /// Fully formed (quantized) event times awaiting safe release.
    pending: Vec<(i128, TagKind)>,
    last_input_fs: i128,
    last_accept_fs: Option<i128>,
    /// Max downward displacement of any future event versus its input time.
    margin_fs: i128,
    period: DurationFs,
    finished: bool,
    pub stats: DetectorStats,
}

fn clamped_draw(rng: &mut ChaCha12Rng, dist: Option<Normal<f64>>, sigma: f64) -> f64 {
    match dist {
        None => 0.0,
        Some(d) => {
            let lim = JITTER_CLAMP_SIGMAS * sigma;
            d.sample(rng).clamp(-lim, lim)
        }
    }
}

impl Detector {
    pub fn new(config: DetectorConfig, master_seed: u64, label: &str) -> Result<Self> {
        config.validate()?;
        let mk = |sigma: f64| {
            if sigma > 0.0 {
                Some(Normal::new(0.0, sigma).unwrap())
            } else {
                None
            }
        };
        let (sj, st) = (config.jitter_sigma_fs(), config.tdc_sigma_fs());
        let margin_fs =
            (JITTER_CLAMP_SIGMAS * (sj + st)).ceil() as i128 + config.tdc_bin_fs as i128;
        let dark_mean = config.dark_mean_per_slot();
        let dark_model = if dark_mean > 0.0 {
            Some(CountModel::Poisson { mean: dark_mean })
        } else {
            None
        };
        let mut dark_rng = seeds::rng_for(master_seed, &format!("{label}/dark"));
        let dark_next_slot = match dark_model {
            Some(m) => sparse::geometric_gap(&mut dark_rng, m.occupancy()),
            None => u64::MAX,
        };
        Ok(Detector {
            jitter: mk(sj),
            tdc_jitter: mk(st),
            jitter_sigma_fs: sj,
            tdc_sigma_fs: st,
            rng: seeds::rng_for(master_seed, label),
            dark_rng,
            dark_model,
            dark_next_slot,
            pending: Vec::new(),
            last_input_fs: i128::MIN,
            last_accept_fs: None,
            margin_fs,
            period: DurationFs::fs(config.period_fs as i64),
            finished: false,
            config,
            stats: DetectorStats::default(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    fn quantize(&self, t_fs: i128) -> i128 {
        let bin = self.config.tdc_bin_fs as i128;
        (t_fs + bin / 2).div_euclid(bin) * bin
    }

    /// Quantize a formed event time and stage it for release.
    fn stage(&mut self, t_fs: f64, kind: TagKind) {
        let q = self.quantize(t_fs.round() as i128);
        if q < 0 {
            self.stats.dropped_pre_epoch += 1;
            return;
        }
        self.pending.push((q, kind));
    }

    /// Feed photon arrivals for slots below `horizon_slot`, sorted by time.
    ///
    /// Contract: every arrival in later calls has absolute time at least
    /// `(horizon_slot - 1) * period`. Dark counts are generated internally
    /// up to the horizon.
    pub fn process(&mut self, arrivals: &[Arrival], horizon_slot: u64) -> Result<Vec<TimeTag>> {
        assert!(!self.finished, "process called after finish");
        for a in arrivals {
            let t_fs = a.t.total_fs(self.period);
            if t_fs < self.last_input_fs {
                return Err(Error::Unsorted {
                    position: self.stats.input_photons as usize,
                    context: "detector input stream".into(),
                });
            }
            self.last_input_fs = t_fs;
            self.stats.input_photons += 1;
            if self.config.efficiency < 1.0 && self.rng.gen::<f64>() >= self.config.efficiency {
                continue;
            }
            self.stats.detected_photons += 1;
            let t = t_fs as f64
                + clamped_draw(&mut self.rng, self.jitter, self.jitter_sigma_fs)
                + clamped_draw(&mut self.rng, self.tdc_jitter, self.tdc_sigma_fs);
            self.stage(t, a.kind);
        }
        self.generate_darks(horizon_slot);
        let watermark = (horizon_slot.saturating_sub(1)) as i128 * self.config.period_fs as i128
            - self.margin_fs;
        Ok(self.release(watermark))
    }

    fn generate_darks(&mut self, horizon_slot: u64) {
        let model = match self.dark_model {
            Some(m) => m,
            None => return,
        };
        let period_fs = self.config.period_fs as f64;
        while self.dark_next_slot < horizon_slot {
            let slot = self.dark_next_slot;
            let count = model.sample_truncated(&mut self.dark_rng);
            for _ in 0..count {
                let off = self.dark_rng.gen::<f64>() * period_fs;
                let t = slot as f64 * period_fs
                    + off
                    + clamped_draw(&mut self.dark_rng, self.tdc_jitter, self.tdc_sigma_fs);
                self.stats.dark_counts += 1;
                self.stage(t, TagKind::Dark);
            }
            let gap = sparse::geometric_gap(&mut self.dark_rng, model.occupancy());
            self.dark_next_slot = slot.saturating_add(1).saturating_add(gap);
        }
    }

    /// Release remaining events. No further `process` calls are allowed.
    pub fn finish(&mut self) -> Vec<TimeTag> {
        self.finished = true;
        self.release(i128::MAX)
    }

    /// One-shot convenience over `process` + `finish`.
    pub fn detect(&mut self, arrivals: &[Arrival], end_slot: u64) -> Result<Vec<TimeTag>> {
        let mut out = self.process(arrivals, end_slot)?;
        out.extend(self.finish());
        Ok(out)
    }

    fn release(&mut self, watermark_fs: i128) -> Vec<TimeTag> {
        let mut ready: Vec<(i128, TagKind)> = Vec::new();
        self.pending.retain(|&e| {
            if e.0 < watermark_fs {
                ready.push(e);
                false
            } else {
                true
            }
        });
        ready.sort_unstable_by_key(|&(t, _)| t);
        let dead = self.config.dead_time_fs as i128;
        let mut out = Vec::with_capacity(ready.len());
        for (t, kind) in ready {
            if let Some(last) = self.last_accept_fs {
                // Hard invariant: strictly increasing, gap >= dead time.
                if t <= last || t - last < dead {
                    self.stats.dropped_dead_time += 1;
                    continue;
                }
            }
            self.last_accept_fs = Some(t);
            self.stats.emitted_tags += 1;
            out.push(TimeTag {
                t: Timestamp::from_total_fs(t, self.period).expect("nonnegative by construction"),
                kind,
            });
        }
        out
    }
}
