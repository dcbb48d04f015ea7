//! Pulsed photon-pair source.
//!
//! Each pump pulse occupies one slot of the repetition grid. The number of
//! pairs per pulse follows either Poisson or thermal statistics; pair
//! emission times jitter around the slot center with a Gaussian spread from
//! the pump pulse duration and group-velocity walk-off. Both photons of a
//! pair share one emission time: the spectral correlation that anchors the
//! coincidence peak lives in that common mode, and per-detector effects are
//! added downstream.

use crate::error::{Error, Result};
use crate::sparse::{CountModel, OccupiedSlots};
use crate::timebase::Timestamp;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// How `pair_prob_per_pulse` is interpreted. The per-pulse figure quoted for
/// a pair source is ambiguous between these two readings; both are exposed
/// and the probability reading is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateInterpretation {
    /// Value is P(at least one pair) per pulse; mean is solved from it.
    ProbAtLeastOne,
    /// Value is the mean pair number per pulse directly.
    MeanPairs,
}

/// Per-pulse pair-number statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiPairModel {
    Poisson,
    Thermal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Pair generation rate per pulse, interpreted per `rate_mode`.
    pub pair_prob_per_pulse: f64,
    pub rate_interpretation: RateInterpretation,
    pub multi_pair_model: MultiPairModel,
    /// Gaussian spread of the common emission time around the slot center.
    pub emission_sigma_fs: f64,
    /// Slot period of the repetition grid.
    pub period_fs: u64,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_prob_per_pulse >= 0.0 && self.pair_prob_per_pulse <= 0.5) {
            return Err(Error::Config(format!(
                "pair_prob_per_pulse must be in [0, 0.5], got {}",
                self.pair_prob_per_pulse
            )));
        }
        if !(self.emission_sigma_fs >= 0.0) {
            return Err(Error::Config(format!(
                "emission_sigma_fs must be nonnegative, got {}",
                self.emission_sigma_fs
            )));
        }
        if self.period_fs == 0 {
            return Err(Error::Config("period_fs must be positive".into()));
        }
        Ok(())
    }

    /// Mean pairs per pulse implied by the configured rate.
    pub fn mean_pairs(&self) -> f64 {
        match self.rate_interpretation {
            RateInterpretation::MeanPairs => self.pair_prob_per_pulse,
            RateInterpretation::ProbAtLeastOne => {
                let p = self.pair_prob_per_pulse;
                match self.multi_pair_model {
                    // P(>=1) = 1 - exp(-mu)  =>  mu = -ln(1-p)
                    MultiPairModel::Poisson => -(1.0 - p).ln(),
                    // P(>=1) = mu/(1+mu)     =>  mu = p/(1-p)
                    MultiPairModel::Thermal => p / (1.0 - p),
                }
            }
        }
    }

    fn count_model(&self) -> CountModel {
        let mean = self.mean_pairs();
        match self.multi_pair_model {
            MultiPairModel::Poisson => CountModel::Poisson { mean },
            MultiPairModel::Thermal => CountModel::Thermal { mean },
        }
    }
}

/// One emitted pair. `t_emit` is the common emission time of both photons.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairEmission {
    pub slot: u64,
    pub t_emit: Timestamp,
    /// Index of this pair among those produced by the same pulse (0-based).
    pub pair_index: u32,
}

/// Streaming sampler of pair emissions over a slot range.
pub struct EmissionSampler<'r> {
    slots: OccupiedSlots<'r>,
    normal: Normal<f64>,
    half_period_fs: i64,
    pending: Option<(u64, u32, u32)>, // (slot, produced so far, total)
}

impl<'r> EmissionSampler<'r> {
    pub fn new(
        config: &SourceConfig,
        rng: &'r mut ChaCha12Rng,
        start_slot: u64,
        end_slot: u64,
    ) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, config.emission_sigma_fs)
            .map_err(|e| Error::Config(format!("emission jitter: {e}")))?;
        Ok(EmissionSampler {
            slots: OccupiedSlots::new(rng, config.count_model(), start_slot, end_slot),
            normal,
            half_period_fs: (config.period_fs / 2) as i64,
            pending: None,
        })
    }
}

impl Iterator for EmissionSampler<'_> {
    type Item = PairEmission;

    fn next(&mut self) -> Option<PairEmission> {
        let (slot, index) = loop {
            match self.pending {
                Some((slot, done, total)) if done < total => {
                    self.pending = Some((slot, done + 1, total));
                    break (slot, done);
                }
                _ => {
                    let (slot, count) = self.slots.next()?;
                    self.pending = Some((slot, 0, count));
                }
            }
        };
        // Clamp so the timestamp stays attributable to its slot.
        let jitter = self
            .normal
            .sample(self.slots.rng())
            .round()
            .clamp(-(self.half_period_fs as f64), self.half_period_fs as f64)
            as i64;
        Some(PairEmission {
            slot,
            t_emit: Timestamp::new(slot, jitter),
            pair_index: index,
        })
    }
}
