//! Fiber channel: attenuation, propagation delay, slow delay drift, and
//! spontaneous Raman scattering noise from a co-propagating classical pulse.
//!
//! Loss is modeled as independent survival per photon. Drift is a slowly
//! varying extra delay evaluated on a coarse grid; anything faster than the
//! grid belongs in the detector jitter model, not here. The Raman rate is a
//! direct parameter (expected noise photons per slot at the channel output):
//! the optical-power physics behind it is out of scope, and a calibration
//! helper in `analysis` solves for the rate that reproduces a target CAR.

use crate::error::{Error, Result};
use crate::seeds;
use crate::sparse::{CountModel, OccupiedSlots};
use crate::timebase::{DurationFs, Timestamp};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Grid pitch for drift evaluation. Drift sources here live at mHz to tens
/// of Hz, so 0.05 s sampling oversamples them by orders of magnitude.
pub const DRIFT_GRID_FS: u64 = 50_000_000_000_000; // 0.05 s

/// Slow extra-delay model, in femtoseconds as a function of absolute time.
/// All variants satisfy drift(0) = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DriftModel {
    None,
    /// `amplitude_fs * sin(2 pi t / period_s)`
    Sinusoid {
        amplitude_fs: f64,
        period_s: f64,
    },
    /// Gaussian-increment random walk with the given per-sqrt(second)
    /// strength, sampled on the drift grid.
    RandomWalk {
        walk_sigma_fs_per_sqrt_s: f64,
    },
    Sum(Vec<DriftModel>),
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            DriftModel::None => Ok(()),
            DriftModel::Sinusoid {
                amplitude_fs,
                period_s,
            } => {
                if !(*amplitude_fs >= 0.0) {
                    return Err(Error::Config("drift amplitude must be nonnegative".into()));
                }
                if !(*period_s > 0.0 && period_s.is_finite()) {
                    return Err(Error::Config("drift period must be positive".into()));
                }
                Ok(())
            }
            DriftModel::RandomWalk {
                walk_sigma_fs_per_sqrt_s,
            } => {
                if !(*walk_sigma_fs_per_sqrt_s >= 0.0) {
                    return Err(Error::Config("drift walk sigma must be nonnegative".into()));
                }
                Ok(())
            }
            DriftModel::Sum(parts) => {
                for p in parts {
                    p.validate()?;
                }
                Ok(())
            }
        }
    }

    pub fn is_none(&self) -> bool {
        match self {
            DriftModel::None => true,
            DriftModel::Sum(parts) => parts.iter().all(|p| p.is_none()),
            _ => false,
        }
    }

    /// Largest |drift| the model can produce, for watermark margins.
    /// Random walks are unbounded; callers cap them via config validation.
    pub fn amplitude_bound_fs(&self) -> f64 {
        match self {
            DriftModel::None => 0.0,
            DriftModel::Sinusoid { amplitude_fs, .. } => *amplitude_fs,
            DriftModel::RandomWalk { .. } => f64::INFINITY,
            DriftModel::Sum(parts) => parts.iter().map(|p| p.amplitude_bound_fs()).sum(),
        }
    }
}

/// Drift value at an absolute time, deterministic in `(model, seed)`.
///
/// Convenience form that rebuilds walk state from zero on every call; use
/// `DriftSampler` on hot paths.
pub fn drift_at(t_abs_s: f64, model: &DriftModel, seed: u64) -> DurationFs {
    let mut s = DriftSampler::new(model.clone(), seed).expect("validated model");
    DurationFs::fs(s.at_fs(t_abs_s * 1e15).round() as i64)
}

/// Caches drift values on the evaluation grid.
///
/// Random-walk values must be reproducible under chunked simulation, so grid
/// steps are hashed from `(seed, index)` rather than drawn from a streaming
/// RNG: evaluation order then cannot matter.
pub struct DriftSampler {
    model: DriftModel,
    seed: u64,
    cache_index: u64,
    cache_value: f64,
    walk_state: Option<(u64, f64)>, // (grid index, cumulative walk at index)
}

impl DriftSampler {
    pub fn new(model: DriftModel, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(DriftSampler {
            model,
            seed,
            cache_index: u64::MAX,
            cache_value: 0.0,
            walk_state: None,
        })
    }

    /// Drift in fs at absolute time `t_fs` (quantized to the drift grid).
    pub fn at_fs(&mut self, t_fs: f64) -> f64 {
        let index = (t_fs / DRIFT_GRID_FS as f64).max(0.0) as u64;
        if index == self.cache_index {
            return self.cache_value;
        }
        let model = self.model.clone();
        let value = self.eval(&model, index);
        self.cache_index = index;
        self.cache_value = value;
        value
    }

    fn eval(&mut self, model: &DriftModel, index: u64) -> f64 {
        match model {
            DriftModel::None => 0.0,
            DriftModel::Sinusoid {
                amplitude_fs,
                period_s,
            } => {
                let grid_t_s = index as f64 * (DRIFT_GRID_FS as f64 * 1e-15);
                amplitude_fs * (std::f64::consts::TAU * grid_t_s / period_s).sin()
            }
            DriftModel::RandomWalk {
                walk_sigma_fs_per_sqrt_s,
            } => {
                let step_sigma = walk_sigma_fs_per_sqrt_s * (DRIFT_GRID_FS as f64 * 1e-15).sqrt();
                let (mut at, mut value) = match self.walk_state {
                    Some((at, value)) if at <= index => (at, value),
                    _ => (0, 0.0),
                };
                while at < index {
                    at += 1;
                    value += step_sigma * gaussian_step(self.seed, at);
                }
                self.walk_state = Some((at, value));
                value
            }
            DriftModel::Sum(parts) => parts.iter().map(|p| self.eval(p, index)).sum(),
        }
    }
}

/// Deterministic standard-normal value for a grid index, via a hashed pair of
/// uniforms and Box-Muller. Quality is ample for slow drift.
fn gaussian_step(seed: u64, index: u64) -> f64 {
    let u1 = hash_to_unit(seed, index, 0).max(f64::MIN_POSITIVE);
    let u2 = hash_to_unit(seed, index, 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn hash_to_unit(seed: u64, index: u64, lane: u64) -> f64 {
    // splitmix64 over the packed inputs.
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(lane.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Where Raman noise photons land within each slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RamanProfile {
    /// Uniform over the classical pulse window `[0, clock_pulse_width_fs)`.
    PulseGated,
    /// Uniform over the whole slot period.
    UniformPeriod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub loss_db: f64,
    pub base_delay_fs: i64,
    pub drift_model: DriftModel,
    /// Mean Raman noise photons per slot arriving at the channel output.
    pub raman_rate_per_slot: f64,
    pub raman_profile: RamanProfile,
    /// Duration of the classical clock pulse within each slot.
    pub clock_pulse_width_fs: u64,
    pub period_fs: u64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db >= 0.0) {
            return Err(Error::Config(format!(
                "loss_db must be nonnegative, got {}",
                self.loss_db
            )));
        }
        if self.base_delay_fs < 0 {
            return Err(Error::Config("base_delay_fs must be nonnegative".into()));
        }
        if !(self.raman_rate_per_slot >= 0.0) {
            return Err(Error::Config(
                "raman_rate_per_slot must be nonnegative".into(),
            ));
        }
        if self.period_fs == 0 {
            return Err(Error::Config("period_fs must be positive".into()));
        }
        if self.clock_pulse_width_fs > self.period_fs {
            return Err(Error::Config(format!(
                "clock_pulse_width_fs {} exceeds period_fs {}",
                self.clock_pulse_width_fs, self.period_fs
            )));
        }
        if self.raman_profile == RamanProfile::PulseGated
            && self.raman_rate_per_slot > 0.0
            && self.clock_pulse_width_fs == 0
        {
            return Err(Error::Config(
                "pulse-gated raman needs clock_pulse_width_fs > 0".into(),
            ));
        }
        self.drift_model.validate()
    }

    pub fn survival(&self) -> f64 {
        if self.loss_db.is_infinite() {
            0.0
        } else {
            10f64.powf(-self.loss_db / 10.0)
        }
    }
}

/// A channel instance owning its loss RNG and drift state.
pub struct Channel {
    config: ChannelConfig,
    rng: ChaCha12Rng,
    drift: DriftSampler,
    survival: f64,
    period: DurationFs,
}

impl Channel {
    pub fn new(config: ChannelConfig, master_seed: u64, label: &str) -> Result<Self> {
        config.validate()?;
        let rng = seeds::rng_for(master_seed, label);
        let drift_seed = u64::from_le_bytes(
            seeds::derive(master_seed, &format!("{label}/drift"))[..8]
                .try_into()
                .unwrap(),
        );
        let survival = config.survival();
        let drift = DriftSampler::new(config.drift_model.clone(), drift_seed)?;
        let period = DurationFs::fs(config.period_fs as i64);
        Ok(Channel {
            config,
            rng,
            drift,
            survival,
            period,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    /// Propagate one photon: survival draw, then delay plus drift.
    /// Returns the arrival time, or None if the photon was absorbed.
    pub fn propagate(&mut self, t_emit: Timestamp) -> Option<Timestamp> {
        if self.survival < 1.0 && self.rng.gen::<f64>() >= self.survival {
            return None;
        }
        let drift = self
            .drift
            .at_fs(t_emit.total_fs(self.period) as f64)
            .round() as i64;
        Some(Timestamp::new(
            t_emit.slot,
            t_emit.offset_fs + self.config.base_delay_fs + drift,
        ))
    }

    /// Delay seen by a classical pulse launched at `t`: base delay plus drift,
    /// no survival draw (bright pulses always arrive) and no RNG consumption,
    /// so interleaving classical traffic never perturbs the photon stream.
    pub fn classical_delay(&mut self, t: Timestamp) -> Timestamp {
        let drift = self.drift.at_fs(t.total_fs(self.period) as f64).round() as i64;
        Timestamp::new(t.slot, t.offset_fs + self.config.base_delay_fs + drift)
    }

    /// Raman photons reaching the channel output in `[start_slot, end_slot)`,
    /// ordered by slot. The rate is already the delivered rate; the classical
    /// pulse producing them travels in this same fiber, so they see the
    /// channel delay and drift but no further thinning here.
    pub fn sample_raman(&mut self, start_slot: u64, end_slot: u64) -> Vec<Timestamp> {
        if self.config.raman_rate_per_slot <= 0.0 {
            return Vec::new();
        }
        let model = CountModel::Poisson {
            mean: self.config.raman_rate_per_slot,
        };
        let mut batch: Vec<(u64, u32)> = Vec::new();
        {
            let slots = OccupiedSlots::new(&mut self.rng, model, start_slot, end_slot);
            for item in slots {
                batch.push(item);
            }
        }
        let period = self.config.period_fs;
        let width = match self.config.raman_profile {
            RamanProfile::PulseGated => self.config.clock_pulse_width_fs as f64,
            RamanProfile::UniformPeriod => period as f64,
        };
        let delay = self.config.base_delay_fs;
        let mut out = Vec::with_capacity(batch.iter().map(|&(_, c)| c as usize).sum());
        for (slot, count) in batch {
            for _ in 0..count {
                let in_slot_fs = self.rng.gen::<f64>() * width;
                let t = Timestamp::new(slot, in_slot_fs as i64);
                let drift = self.drift.at_fs(t.total_fs(self.period) as f64).round() as i64;
                out.push(Timestamp::new(slot, t.offset_fs + delay + drift));
            }
        }
        out
    }
}
