//! Picosecond pulse-shaping electronics for the distributed clock.
//!
//! The recovered RF clock is squared up by a comparator, narrowed to a
//! ~25 ps logic pulse by a gate that ANDs a delayed copy with a
//! delayed-and-inverted copy, boosted by a bandwidth-limited amplifier, and
//! finally drives an intensity modulator that carves the optical clock
//! pulse. Each stage is a pure function on sampled waveforms so stages can
//! be inspected, regression-pinned, and exported individually.
//!
//! Conventions: times in femtoseconds, voltages in volts, optical power in
//! milliwatts. Edge times are 10-90 durations; a Gaussian-limited edge of
//! 10-90 time E has erf shape with sigma = E / 2.5631.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Ratio of a Gaussian edge's 10-90 transition time to its sigma.
pub const EDGE_1090_PER_SIGMA: f64 = 2.5631;

/// Uniformly sampled waveform. `samples[i]` is the value at
/// `t0_fs + i * dt_fs`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Waveform {
    pub t0_fs: f64,
    pub dt_fs: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(t0_fs: f64, dt_fs: f64, samples: Vec<f64>) -> Self {
        Waveform {
            t0_fs,
            dt_fs,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.t0_fs + i as f64 * self.dt_fs
    }

    pub fn peak(&self) -> f64 {
        self.samples
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn like(&self, samples: Vec<f64>) -> Waveform {
        Waveform {
            t0_fs: self.t0_fs,
            dt_fs: self.dt_fs,
            samples,
        }
    }

    fn check_nonempty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() || !(self.dt_fs > 0.0) {
            return Err(Error::EmptyInput(format!("{what} waveform")));
        }
        Ok(())
    }
}

/// Sine wave `offset + amplitude * sin(2 pi f t)` sampled over `span_fs`.
pub fn sine(frequency_hz: f64, amplitude: f64, offset: f64, span_fs: f64, dt_fs: f64) -> Waveform {
    let n = (span_fs / dt_fs).ceil() as usize;
    let w = 2.0 * std::f64::consts::PI * frequency_hz * 1e-15;
    let samples = (0..n)
        .map(|i| offset + amplitude * (w * (i as f64) * dt_fs).sin())
        .collect();
    Waveform::new(0.0, dt_fs, samples)
}

/// Unit-peak Gaussian pulse centered at `center_fs`.
pub fn gaussian_pulse(center_fs: f64, sigma_fs: f64, span_fs: f64, dt_fs: f64) -> Waveform {
    let n = (span_fs / dt_fs).ceil() as usize;
    let samples = (0..n)
        .map(|i| {
            let z = (i as f64 * dt_fs - center_fs) / sigma_fs;
            (-0.5 * z * z).exp()
        })
        .collect();
    Waveform::new(0.0, dt_fs, samples)
}

/// Square pulse with instantaneous edges, high over [t_rise, t_rise + width).
pub fn square_pulse(
    t_rise_fs: f64,
    width_fs: f64,
    high: f64,
    span_fs: f64,
    dt_fs: f64,
) -> Waveform {
    let n = (span_fs / dt_fs).ceil() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * dt_fs;
            if t >= t_rise_fs && t < t_rise_fs + width_fs {
                high
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(0.0, dt_fs, samples)
}

/// Upward threshold crossings of a waveform, linearly interpolated.
fn rising_crossings(w: &Waveform, threshold: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..w.len() {
        let (a, b) = (w.samples[i - 1], w.samples[i]);
        if a < threshold && b >= threshold {
            let f = (threshold - a) / (b - a);
            out.push(w.time_at(i - 1) + f * w.dt_fs);
        }
    }
    out
}

fn falling_crossings(w: &Waveform, threshold: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..w.len() {
        let (a, b) = (w.samples[i - 1], w.samples[i]);
        if a >= threshold && b < threshold {
            let f = (a - threshold) / (a - b);
            out.push(w.time_at(i - 1) + f * w.dt_fs);
        }
    }
    out
}

/// Comparator: squares the input into 0..high_v with linear edges of the
/// given 10-90... full transition time, anchored so the output crosses
/// `threshold_v` at the same instant the input does. Anchoring makes the
/// stage idempotent: squaring an already-squared wave reproduces it.
pub fn comparator(
    w: &Waveform,
    threshold_v: f64,
    high_v: f64,
    edge_time_fs: f64,
) -> Result<Waveform> {
    w.check_nonempty("comparator input")?;
    if !(high_v > 0.0) || !(threshold_v > 0.0) || threshold_v >= high_v {
        return Err(Error::Config(format!(
            "comparator needs 0 < threshold ({threshold_v}) < high ({high_v})"
        )));
    }
    if !(edge_time_fs > 0.0) {
        return Err(Error::Config(
            "comparator edge time must be positive".into(),
        ));
    }
    let theta = threshold_v / high_v;
    // Crossing events, in time order: (time, rising?).
    let mut events: Vec<(f64, bool)> = rising_crossings(w, threshold_v)
        .into_iter()
        .map(|t| (t, true))
        .chain(
            falling_crossings(w, threshold_v)
                .into_iter()
                .map(|t| (t, false)),
        )
        .collect();
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let initial_high = w.samples[0] >= threshold_v;
    let mut samples = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let t = w.time_at(i);
        // Latest event whose ramp window has started.
        let mut level = if initial_high { high_v } else { 0.0 };
        for &(tc, rising) in &events {
            let start = tc - if rising { theta } else { 1.0 - theta } * edge_time_fs;
            if t < start {
                break;
            }
            let frac = ((t - start) / edge_time_fs).clamp(0.0, 1.0);
            level = if rising {
                frac * high_v
            } else {
                (1.0 - frac) * high_v
            };
        }
        samples.push(level);
    }
    Ok(w.like(samples))
}

/// Pulse former: ANDs a copy of the input delayed by `delay_a_fs` with an
/// inverted copy delayed by `delay_b_fs`, producing a pulse of nominal width
/// |delay_b - delay_a| at each input rising edge. The gate cannot form
/// pulses narrower than 2.5 internal edge times, so the emitted width is
/// clamped to that floor. Delays are settable on a 3 ps grid within
/// [0, 100] ps. The output is evaluated in bandwidth-limited analytic form:
/// an erf-edged square of high level `out_high_v` with edge sigma
/// `edge_time_fs` / 2.5631, anchored at the first input rising edge plus the
/// smaller delay.
pub fn picoshort(
    w: &Waveform,
    delay_a_fs: f64,
    delay_b_fs: f64,
    out_high_v: f64,
    edge_time_fs: f64,
) -> Result<Waveform> {
    w.check_nonempty("pulse former input")?;
    for d in [delay_a_fs, delay_b_fs] {
        if !(0.0..=100_000.0).contains(&d) {
            return Err(Error::Config(format!(
                "pulse former delay {d} fs outside [0, 100000]"
            )));
        }
        if (d / 3_000.0 - (d / 3_000.0).round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "pulse former delay {d} fs not on the 3 ps grid"
            )));
        }
    }
    if !(out_high_v > 0.0) || !(edge_time_fs > 0.0) {
        return Err(Error::Config(
            "pulse former level and edge time must be positive".into(),
        ));
    }
    let peak = w.peak();
    let crossings = rising_crossings(w, peak / 2.0);
    let tc = *crossings.first().ok_or(Error::NoEdge)?;
    let width = (delay_b_fs - delay_a_fs).abs().max(2.5 * edge_time_fs);
    let t_rise = tc + delay_a_fs.min(delay_b_fs);
    let sigma = edge_time_fs / EDGE_1090_PER_SIGMA;
    let s2 = std::f64::consts::SQRT_2 * sigma;
    let samples = (0..w.len())
        .map(|i| {
            let t = w.time_at(i);
            out_high_v * 0.5 * (libm::erf((t - t_rise) / s2) - libm::erf((t - t_rise - width) / s2))
        })
        .collect();
    Ok(w.like(samples))
}

/// Broadband amplifier: voltage gain with a cascade of `filter_order`
/// identical one-pole low-pass sections, each cornered at
/// `bandwidth_3db_hz`. Discretized pole-matched (a = exp(-dt/tau)), which
/// keeps the DC gain exact at any sample rate. Errors if the sample rate is
/// not at least 3x the corner frequency.
pub fn picoamp(
    w: &Waveform,
    bandwidth_3db_hz: f64,
    filter_order: u32,
    gain_db: f64,
) -> Result<Waveform> {
    w.check_nonempty("amplifier input")?;
    if !(bandwidth_3db_hz > 0.0) {
        return Err(Error::Config("amplifier bandwidth must be positive".into()));
    }
    if filter_order == 0 {
        return Err(Error::Config(
            "amplifier filter order must be at least 1".into(),
        ));
    }
    let rate_hz = 1e15 / w.dt_fs;
    if rate_hz < 3.0 * bandwidth_3db_hz {
        return Err(Error::NyquistViolation);
    }
    let tau_fs = 1e15 / (2.0 * std::f64::consts::PI * bandwidth_3db_hz);
    let a = (-w.dt_fs / tau_fs).exp();
    let gain = 10f64.powf(gain_db / 20.0);
    let mut out = w.samples.clone();
    for _ in 0..filter_order {
        let mut acc = 0.0;
        for v in out.iter_mut() {
            acc = a * acc + (1.0 - a) * *v;
            *v = acc;
        }
    }
    for v in out.iter_mut() {
        *v *= gain;
    }
    Ok(w.like(out))
}

/// Intensity modulator transfer: drive voltage to optical power.
/// P = P_in * ((1 - eps) * sin^2(pi (v + bias) / (2 v_pi)) + eps), where eps
/// is set by the modulator's finite extinction limit in dB.
pub fn mzm_transfer(
    w: &Waveform,
    v_pi: f64,
    bias_v: f64,
    extinction_limit_db: f64,
    p_in_mw: f64,
) -> Result<Waveform> {
    w.check_nonempty("modulator input")?;
    if !(v_pi > 0.0) || !(p_in_mw >= 0.0) {
        return Err(Error::Config(
            "modulator needs v_pi > 0 and p_in >= 0".into(),
        ));
    }
    let eps = 10f64.powf(-extinction_limit_db / 10.0);
    let k = std::f64::consts::PI / (2.0 * v_pi);
    let samples = w
        .samples
        .iter()
        .map(|&v| {
            let s = (k * (v + bias_v)).sin();
            p_in_mw * ((1.0 - eps) * s * s + eps)
        })
        .collect();
    Ok(w.like(samples))
}

/// Full width at half maximum via linear interpolation between samples:
/// distance between the outermost crossings of half the global peak.
pub fn fwhm(w: &Waveform) -> Result<f64> {
    w.check_nonempty("fwhm input")?;
    let peak = w.peak();
    if !(peak > 0.0) {
        return Err(Error::NoPulse);
    }
    let half = peak / 2.0;
    let above: Vec<usize> = (0..w.len()).filter(|&i| w.samples[i] >= half).collect();
    let (i0, i1) = (above[0], *above.last().unwrap());
    let cross = |i: usize, j: usize| -> f64 {
        let (a, b) = (w.samples[i], w.samples[j]);
        w.time_at(i) + (half - a) * (w.time_at(j) - w.time_at(i)) / (b - a)
    };
    let tl = if i0 > 0 {
        cross(i0 - 1, i0)
    } else {
        w.time_at(0)
    };
    let tr = if i1 + 1 < w.len() {
        cross(i1, i1 + 1)
    } else {
        w.time_at(w.len() - 1)
    };
    Ok(tr - tl)
}

/// Peak-to-baseline ratio in dB, with the baseline taken as the median of
/// all samples further than 3 FWHM from the peak.
pub fn extinction_db(w: &Waveform) -> Result<f64> {
    let width = fwhm(w)?;
    let peak = w.peak();
    let ipk = w
        .samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let tpk = w.time_at(ipk);
    let mut base: Vec<f64> = (0..w.len())
        .filter(|&i| (w.time_at(i) - tpk).abs() > 3.0 * width)
        .map(|i| w.samples[i])
        .collect();
    if base.is_empty() {
        return Err(Error::InsufficientData(
            "no baseline samples beyond 3 FWHM of the peak".into(),
        ));
    }
    base.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = base[base.len() / 2];
    if !(median > 0.0) {
        return Err(Error::InsufficientData(
            "baseline median is not positive".into(),
        ));
    }
    Ok(10.0 * (peak / median).log10())
}

/// Convolve with a unit-area Gaussian of the given sigma (kernel truncated
/// at 8 sigma), as seen by a detection chain with that timing jitter.
pub fn smear_with_jitter(w: &Waveform, sigma_fs: f64) -> Result<Waveform> {
    w.check_nonempty("smear input")?;
    if !(sigma_fs >= 0.0) {
        return Err(Error::Config("smear sigma must be nonnegative".into()));
    }
    if sigma_fs == 0.0 {
        return Ok(w.clone());
    }
    let half = (8.0 * sigma_fs / w.dt_fs) as i64;
    let mut kernel = Vec::with_capacity((2 * half + 1) as usize);
    for k in -half..=half {
        let z = k as f64 * w.dt_fs / sigma_fs;
        kernel.push((-0.5 * z * z).exp());
    }
    let norm: f64 = kernel.iter().sum();
    let n = w.len() as i64;
    let mut out = vec![0.0f64; w.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (kk, &kv) in kernel.iter().enumerate() {
            let j = i as i64 + (kk as i64 - half);
            if j >= 0 && j < n {
                acc += kv * w.samples[j as usize];
            }
        }
        *o = acc / norm;
    }
    Ok(w.like(out))
}

/// Configuration for the full clock-shaping chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    pub dt_fs: f64,
    pub span_fs: f64,
    pub clock_frequency_hz: f64,
    pub input_amplitude_v: f64,
    pub comparator_threshold_v: f64,
    pub comparator_high_v: f64,
    pub comparator_edge_time_fs: f64,
    pub delay_a_fs: f64,
    pub delay_b_fs: f64,
    pub out_high_v: f64,
    pub gain_db: f64,
    pub bandwidth_3db_hz: f64,
    pub filter_order: u32,
    pub v_pi: f64,
    pub bias_v: f64,
    pub extinction_limit_db: f64,
    pub p_in_mw: f64,
    /// Timing jitter FWHM of the detection used to measure the optical
    /// pulse; the reported optical width is of the smeared waveform.
    pub meas_jitter_fwhm_fs: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            dt_fs: 500.0,
            span_fs: 2_000_000.0,
            clock_frequency_hz: 200e6,
            input_amplitude_v: 0.3,
            comparator_threshold_v: 0.15,
            comparator_high_v: 0.5,
            comparator_edge_time_fs: 10_000.0,
            delay_a_fs: 0.0,
            delay_b_fs: 24_000.0,
            out_high_v: 0.23,
            gain_db: 30.0,
            bandwidth_3db_hz: 10e9,
            filter_order: 2,
            v_pi: 4.0,
            bias_v: 0.0,
            extinction_limit_db: 28.0,
            p_in_mw: 1.0,
            meas_jitter_fwhm_fs: 50_487.62,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_fs > 0.0 && self.span_fs > self.dt_fs) {
            return Err(Error::Config("chain needs dt > 0 and span > dt".into()));
        }
        if !(self.clock_frequency_hz > 0.0) {
            return Err(Error::Config(
                "chain clock frequency must be positive".into(),
            ));
        }
        if !(self.meas_jitter_fwhm_fs >= 0.0) {
            return Err(Error::Config(
                "measurement jitter must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Every stage output plus the summary metrics acceptance gates on.
#[derive(Clone, Debug)]
pub struct ChainOutputs {
    pub input: Waveform,
    pub squared: Waveform,
    pub shaped: Waveform,
    pub amplified: Waveform,
    pub optical: Waveform,
    pub optical_measured: Waveform,
    pub shaped_fwhm_fs: f64,
    pub amplified_fwhm_fs: f64,
    pub drive_peak_v: f64,
    pub optical_fwhm_fs: f64,
    pub raw_extinction_db: f64,
}

/// Run the full chain: clock sine -> comparator -> pulse former ->
/// amplifier -> modulator. The reported optical FWHM is of the
/// jitter-smeared waveform (what a photon-counting measurement sees); the
/// extinction is of the raw optical waveform.
pub fn run_chain(cfg: &ChainConfig) -> Result<ChainOutputs> {
    cfg.validate()?;
    let input = sine(
        cfg.clock_frequency_hz,
        cfg.input_amplitude_v,
        0.0,
        cfg.span_fs,
        cfg.dt_fs,
    );
    let squared = comparator(
        &input,
        cfg.comparator_threshold_v,
        cfg.comparator_high_v,
        cfg.comparator_edge_time_fs,
    )?;
    let shaped = picoshort(
        &squared,
        cfg.delay_a_fs,
        cfg.delay_b_fs,
        cfg.out_high_v,
        cfg.comparator_edge_time_fs,
    )?;
    let amplified = picoamp(&shaped, cfg.bandwidth_3db_hz, cfg.filter_order, cfg.gain_db)?;
    let optical = mzm_transfer(
        &amplified,
        cfg.v_pi,
        cfg.bias_v,
        cfg.extinction_limit_db,
        cfg.p_in_mw,
    )?;
    let meas_sigma = cfg.meas_jitter_fwhm_fs / crate::detector::GAUSS_FWHM_PER_SIGMA;
    let optical_measured = smear_with_jitter(&optical, meas_sigma)?;
    Ok(ChainOutputs {
        shaped_fwhm_fs: fwhm(&shaped)?,
        amplified_fwhm_fs: fwhm(&amplified)?,
        drive_peak_v: amplified.peak(),
        optical_fwhm_fs: fwhm(&optical_measured)?,
        raw_extinction_db: extinction_db(&optical)?,
        input,
        squared,
        shaped,
        amplified,
        optical,
        optical_measured,
    })
}
