//! Clock distribution and phase locking.
//!
//! A central oscillator emits clock pulses into the fiber channels; each end
//! node measures the received edges (with photodiode/receiver jitter) and
//! steers its local oscillator with a discrete first-order loop: per edge,
//! the wrapped phase error is corrected by `loop_gain`. For white measurement
//! noise of sigma s the steady-state residual is s * sqrt(g / (2 - g)),
//! which acceptance uses as the analytic oracle.
//!
//! Phase is observable only modulo one period, so errors wrap to
//! [-period/2, period/2). The true edge phase is integer femtoseconds and
//! wrapping is computed in integer arithmetic before noise is added.

use crate::detector::GAUSS_FWHM_PER_SIGMA;
use crate::error::{Error, Result};
use crate::seeds;
use crate::timebase::{DurationFs, Timestamp};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorConfig {
    pub frequency_hz: f64,
    /// Per-edge emission jitter, Gaussian FWHM.
    pub jitter_fs_per_edge: f64,
    /// Free-running phase random walk strength.
    pub phase_walk_fs_per_sqrt_s: f64,
}

impl OscillatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(Error::Config(format!(
                "oscillator frequency must be positive, got {}",
                self.frequency_hz
            )));
        }
        if !(self.jitter_fs_per_edge >= 0.0) {
            return Err(Error::Config("edge jitter must be nonnegative".into()));
        }
        if !(self.phase_walk_fs_per_sqrt_s >= 0.0) {
            return Err(Error::Config("phase walk must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn period_fs(&self) -> DurationFs {
        DurationFs::fs((1e15 / self.frequency_hz).round() as i64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    /// Received clock-edge measurement jitter, Gaussian FWHM.
    pub rec_jitter_fwhm_fs: f64,
    /// Per-edge proportional correction factor of the first-order loop.
    pub loop_gain: f64,
    /// Boxcar length over wrapped errors before correction. The analytic
    /// residual formula assumes 1 (the default).
    pub averaging_edges: u32,
    pub enabled: bool,
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loop_gain > 0.0 && self.loop_gain <= 1.0) {
            return Err(Error::Config(format!(
                "loop_gain must be in (0, 1], got {}",
                self.loop_gain
            )));
        }
        if self.averaging_edges == 0 {
            return Err(Error::Config("averaging_edges must be at least 1".into()));
        }
        if !(self.rec_jitter_fwhm_fs >= 0.0) {
            return Err(Error::Config("rec jitter must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn rec_jitter_sigma_fs(&self) -> f64 {
        self.rec_jitter_fwhm_fs / GAUSS_FWHM_PER_SIGMA
    }

    /// Steady-state residual phase jitter of the first-order loop under
    /// white measurement noise (averaging_edges = 1).
    pub fn predicted_residual_sigma_fs(&self) -> f64 {
        self.rec_jitter_sigma_fs() * (self.loop_gain / (2.0 - self.loop_gain)).sqrt()
    }
}

/// Phase of a local clock versus the central clock's timebase, sampled at
/// received-edge times.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ClockPhaseSeries {
    pub times_s: Vec<f64>,
    pub offsets_fs: Vec<f64>,
}

impl ClockPhaseSeries {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times_s.len() != self.offsets_fs.len() {
            return Err(Error::Config("phase series length mismatch".into()));
        }
        for (i, w) in self.times_s.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Unsorted {
                    position: i + 1,
                    context: "phase series sample times".into(),
                });
            }
        }
        Ok(())
    }
}

/// Emit `n` clock edges at the oscillator's nominal grid, decimated to every
/// `every_slots`-th slot. Edge j sits at slot j*every_slots plus the free
/// phase walk plus per-edge jitter. Decimation changes which edges are
/// materialized, not their statistics: the walk step scales with the real
/// elapsed time between emitted edges.
pub fn emit_clock_edges_decimated(
    n: u64,
    every_slots: u64,
    cfg: &OscillatorConfig,
    master_seed: u64,
    label: &str,
) -> Result<Vec<Timestamp>> {
    cfg.validate()?;
    if every_slots == 0 {
        return Err(Error::Config("edge decimation must be at least 1".into()));
    }
    let mut rng = seeds::rng_for(master_seed, label);
    let period = cfg.period_fs();
    let dt_s = every_slots as f64 * period.as_secs_f64();
    let sigma_edge = cfg.jitter_fs_per_edge / GAUSS_FWHM_PER_SIGMA;
    let jitter = normal(sigma_edge);
    let walk_step = normal(cfg.phase_walk_fs_per_sqrt_s * dt_s.sqrt());
    let mut walk = 0.0f64;
    let mut out = Vec::with_capacity(n as usize);
    for j in 0..n {
        let j_fs = draw(&jitter, &mut rng);
        out.push(Timestamp::new(
            j * every_slots,
            (walk + j_fs).round() as i64,
        ));
        walk += draw(&walk_step, &mut rng);
    }
    Ok(out)
}

/// Undecimated form: one edge per slot.
pub fn emit_clock_edges(
    n: u64,
    cfg: &OscillatorConfig,
    master_seed: u64,
    label: &str,
) -> Result<Vec<Timestamp>> {
    emit_clock_edges_decimated(n, 1, cfg, master_seed, label)
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).unwrap())
    } else {
        None
    }
}

fn draw(dist: &Option<Normal<f64>>, rng: &mut ChaCha12Rng) -> f64 {
    match dist {
        Some(d) => d.sample(rng),
        None => 0.0,
    }
}

fn wrap_half(x: f64, period: f64) -> f64 {
    (x + period / 2.0).rem_euclid(period) - period / 2.0
}

/// Lock a local oscillator to a received edge train.
///
/// Returns the local clock's phase offset versus the central timebase at
/// every received edge. With `enabled = false` the local oscillator free-runs
/// and the edges serve only as the sample grid.
pub fn lock_phase(
    received_edges: &[Timestamp],
    cfg: &SyncConfig,
    local: &OscillatorConfig,
    master_seed: u64,
    label: &str,
) -> Result<ClockPhaseSeries> {
    cfg.validate()?;
    local.validate()?;
    if received_edges.is_empty() && cfg.enabled {
        return Err(Error::EmptyInput("no clock received".into()));
    }
    let period = local.period_fs();
    let period_f = period.value() as f64;
    let mut rng = seeds::rng_for(master_seed, label);
    let rec = normal(cfg.rec_jitter_sigma_fs());

    let mut times_s = Vec::with_capacity(received_edges.len());
    let mut offsets_fs = Vec::with_capacity(received_edges.len());
    let mut phi = 0.0f64;
    let mut last_t_s = f64::NEG_INFINITY;
    let mut last_total: i128 = i128::MIN;
    // Boxcar over wrapped errors.
    let mut window: Vec<f64> = Vec::with_capacity(cfg.averaging_edges as usize);
    let mut window_pos = 0usize;
    let mut window_sum = 0.0f64;
    let mut walk_prev_t_s: Option<f64> = None;

    for (i, edge) in received_edges.iter().enumerate() {
        let total = edge.total_fs(period);
        if total <= last_total {
            return Err(Error::Unsorted {
                position: i,
                context: "received clock edges".into(),
            });
        }
        last_total = total;
        let t_s = edge.as_secs_f64(period);

        // Local oscillator free walk since the previous edge.
        if local.phase_walk_fs_per_sqrt_s > 0.0 {
            if let Some(prev) = walk_prev_t_s {
                let dt = (t_s - prev).max(0.0);
                if dt > 0.0 {
                    let step = normal(local.phase_walk_fs_per_sqrt_s * dt.sqrt());
                    phi += draw(&step, &mut rng);
                }
            }
        }
        walk_prev_t_s = Some(t_s);

        if cfg.enabled {
            // True phase is an exact integer wrap; noise enters afterwards.
            let true_phase = wrap_half_i128(total, period.value() as i128) as f64;
            let m = true_phase + draw(&rec, &mut rng);
            if i == 0 {
                // Acquisition: seed the loop at the first measurement so the
                // pull-in transient does not depend on the delay magnitude.
                phi = m;
            }
            let e = wrap_half(m - phi, period_f);
            if window.len() < cfg.averaging_edges as usize {
                window.push(e);
                window_sum += e;
            } else {
                window_sum += e - window[window_pos];
                window[window_pos] = e;
                window_pos = (window_pos + 1) % window.len();
            }
            phi += cfg.loop_gain * (window_sum / window.len() as f64);
        }

        if t_s > last_t_s {
            times_s.push(t_s);
            offsets_fs.push(phi);
            last_t_s = t_s;
        }
    }
    Ok(ClockPhaseSeries {
        times_s,
        offsets_fs,
    })
}

fn wrap_half_i128(x: i128, period: i128) -> i128 {
    (x + period / 2).rem_euclid(period) - period / 2
}

/// Pointwise difference a - b at a's sample times, pairing each sample with
/// the nearest sample of b. Only the overlapping time range is kept.
pub fn rx_offset_series(a: &ClockPhaseSeries, b: &ClockPhaseSeries) -> Result<ClockPhaseSeries> {
    a.validate()?;
    b.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("phase series".into()));
    }
    let lo = a.times_s[0].max(b.times_s[0]);
    let hi = a.times_s[a.len() - 1].min(b.times_s[b.len() - 1]);
    if lo > hi {
        return Err(Error::DisjointSeries);
    }
    let mut times_s = Vec::new();
    let mut offsets_fs = Vec::new();
    for (i, &t) in a.times_s.iter().enumerate() {
        if t < lo || t > hi {
            continue;
        }
        let j = match b.times_s.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(j) => j,
            Err(j) => {
                // Nearest of the two neighbors.
                if j == 0 {
                    0
                } else if j >= b.len() {
                    b.len() - 1
                } else if (b.times_s[j] - t) < (t - b.times_s[j - 1]) {
                    j
                } else {
                    j - 1
                }
            }
        };
        times_s.push(t);
        offsets_fs.push(a.offsets_fs[i] - b.offsets_fs[j]);
    }
    if times_s.is_empty() {
        return Err(Error::DisjointSeries);
    }
    Ok(ClockPhaseSeries {
        times_s,
        offsets_fs,
    })
}

/// Distribution-rate upper bound estimate: the rate at which one period
/// equals `guard_factor` combined timing sigmas. The guard factor is a
/// reported, configurable engineering margin, not derived physics.
pub fn max_rate_estimate_hz(total_sigma_fs: f64, guard_factor: f64) -> f64 {
    1e15 / (guard_factor * total_sigma_fs)
}
