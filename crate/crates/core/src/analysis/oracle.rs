//! Closed-form expected-rate oracles for coincidence counting.
//!
//! Two levels of fidelity:
//!
//! * [`analytic_car_oracle`] is the textbook small-signal formula: singles
//!   are mu*eta + noise per slot, accidentals their product, correlated
//!   coincidences f*mu*eta1*eta2 on top. It is exact when every detected
//!   event falls inside the coincidence window and darks are off, which is
//!   how the simulator is cross-checked against it.
//!
//! * [`CoincidenceModel`] resolves the window-capture fraction per
//!   component pair (signal-signal, signal-background, background-
//!   background, dark-anything) from the timing spreads, so it stays exact
//!   for wide background gates and finite windows. It backs the rate
//!   calibrations.
//!
//! All rates are per pulse slot and refer to detected events.

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Probability that a centered Gaussian of the given sigma lands within
/// [-half, half].
pub fn gauss_mass(sigma_fs: f64, half_fs: f64) -> f64 {
    if sigma_fs <= 0.0 {
        return if half_fs >= 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * phi(half_fs / sigma_fs) - 1.0
}

/// Probability that G(0, sigma) + U(a, b) lands within [lo, hi], via the
/// antiderivative of the normal CDF: IPhi(z) = z Phi(z) + phi_pdf(z).
pub fn gauss_uniform_mass(sigma_fs: f64, a_fs: f64, b_fs: f64, lo_fs: f64, hi_fs: f64) -> f64 {
    debug_assert!(b_fs > a_fs && hi_fs > lo_fs);
    if sigma_fs <= 0.0 {
        let overlap = (hi_fs.min(b_fs) - lo_fs.max(a_fs)).max(0.0);
        return overlap / (b_fs - a_fs);
    }
    let iphi = |z: f64| z * phi(z) + (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let term = |c: f64| sigma_fs * (iphi((c - a_fs) / sigma_fs) - iphi((c - b_fs) / sigma_fs));
    (term(hi_fs) - term(lo_fs)) / (b_fs - a_fs)
}

/// Probability that the difference of two independent U(0, width) variables
/// lands within [-half, half]: 2h - h^2 with h = half/width, capped at 1.
pub fn uniform_diff_mass(half_fs: f64, width_fs: f64) -> f64 {
    if half_fs >= width_fs {
        return 1.0;
    }
    let h = (half_fs / width_fs).max(0.0);
    2.0 * h - h * h
}

/// Small-signal CAR formula. Detected singles per slot are
/// s_i = mu*eta_i + n_i; accidentals per window A = s1*s2; coincidences
/// C = f*mu*eta1*eta2 + A with f the correlated-capture fraction.
pub fn analytic_car_oracle(mu: f64, eta1: f64, eta2: f64, n1: f64, n2: f64, f: f64) -> f64 {
    let s1 = mu * eta1 + n1;
    let s2 = mu * eta2 + n2;
    let a = s1 * s2;
    (f * mu * eta1 * eta2 + a) / a
}

/// Bisect a monotone-decreasing function to the target, expanding the upper
/// bracket as needed. Relative tolerance on the function value.
fn bisect_decreasing(
    f: impl Fn(f64) -> f64,
    target: f64,
    lo0: f64,
    hi0: f64,
    rel_tol: f64,
    what: &str,
) -> Result<f64> {
    let (mut lo, mut hi) = (lo0, hi0);
    if f(lo) < target {
        return Err(Error::Config(format!(
            "{what}: target {target} exceeds the achievable value {}",
            f(lo)
        )));
    }
    let mut grow = 0;
    while f(hi) > target {
        lo = hi;
        hi *= 4.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::Config(format!(
                "{what}: target {target} unreachable"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if ((v - target) / target).abs() < rel_tol {
            return Ok(mid);
        }
        if v > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Uncorrelated singles rate per slot that degrades the simple-formula CAR
/// to the target (noise applied to both channels equally).
pub fn invert_noise_for_car(mu: f64, eta1: f64, eta2: f64, f: f64, target_car: f64) -> Result<f64> {
    if target_car <= 1.0 {
        return Err(Error::Config(format!(
            "target CAR {target_car} not above the floor of 1"
        )));
    }
    bisect_decreasing(
        |n| analytic_car_oracle(mu, eta1, eta2, n, n, f),
        target_car,
        0.0,
        (mu * eta1).max(1e-9),
        1e-6,
        "noise inversion",
    )
}

/// Timing geometry for the component-resolved window model. Sigmas are the
/// per-event Gaussian spreads; the background gate is the uniform support
/// of in-fiber background photons within a slot.
#[derive(Clone, Debug)]
pub struct CoincidenceModel {
    pub period_fs: f64,
    /// Uniform support of background (gate-scattered) arrivals.
    pub gate_width_fs: f64,
    /// Effective half-width of the coincidence window on a binned
    /// histogram: (window + bin) / 2 for closed bin-center selection.
    pub half_window_fs: f64,
    pub emission_sigma_fs: f64,
    /// Combined detector + digitizer jitter sigma, per channel.
    pub jitter1_sigma_fs: f64,
    pub jitter2_sigma_fs: f64,
}

/// Detected per-slot rates entering the window model.
#[derive(Clone, Copy, Debug)]
pub struct DetectedRates {
    /// Mean pairs per slot at the source.
    pub mu: f64,
    /// End-to-end detection efficiencies (channel times detector).
    pub eta1: f64,
    pub eta2: f64,
    /// Detected background per slot per channel.
    pub raman1: f64,
    pub raman2: f64,
    /// Detected dark counts per slot per channel.
    pub dark1: f64,
    pub dark2: f64,
    /// Same-slot pair-number factor E[m(m-1)]/E[m]^2: 1 for Poissonian
    /// pair statistics, 2 for thermal.
    pub kappa: f64,
}

/// Expected window sums per slot.
#[derive(Clone, Copy, Debug)]
pub struct WindowRates {
    pub coincidence_per_slot: f64,
    pub accidental_per_slot: f64,
}

impl CoincidenceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.period_fs > 0.0)
            || !(self.gate_width_fs > 0.0)
            || self.gate_width_fs > self.period_fs
        {
            return Err(Error::Config(
                "window model needs 0 < gate width <= period".into(),
            ));
        }
        if !(self.half_window_fs > 0.0) || 2.0 * self.half_window_fs >= self.period_fs {
            return Err(Error::Config(
                "window model needs 0 < window < period".into(),
            ));
        }
        Ok(())
    }

    /// Capture fractions: (correlated, signal-signal, signal-background,
    /// background-signal, background-background, dark-involved).
    pub fn capture_factors(&self) -> (f64, f64, f64, f64, f64, f64) {
        let w = self.half_window_fs;
        let gate = self.gate_width_fs;
        let (j1, j2) = (self.jitter1_sigma_fs, self.jitter2_sigma_fs);
        // Correlated pair: emission time is common mode, only the two
        // independent jitters survive in the difference.
        let f_cc = gauss_mass((j1 * j1 + j2 * j2).sqrt(), w);
        // Independent emissions on both sides.
        let se2 = self.emission_sigma_fs * self.emission_sigma_fs;
        let f_ss = gauss_mass((2.0 * se2 + j1 * j1 + j2 * j2).sqrt(), w);
        // Signal on one side (emission + jitter), uniform background on the
        // other (gate + jitter): the difference is Gaussian + uniform.
        let f_sn = gauss_uniform_mass((se2 + j1 * j1 + j2 * j2).sqrt(), 0.0, gate, -w, w);
        let f_ns = gauss_uniform_mass((se2 + j1 * j1 + j2 * j2).sqrt(), -gate, 0.0, -w, w);
        let f_nn = uniform_diff_mass(w, gate);
        // Darks are uniform over the whole period; any pairing involving
        // one is uniform over the difference.
        let u = (2.0 * w / self.period_fs).min(1.0);
        (f_cc, f_ss, f_sn, f_ns, f_nn, u)
    }

    /// Expected center-window and accidental-window sums per slot.
    pub fn predict(&self, r: &DetectedRates) -> WindowRates {
        let (f_cc, f_ss, f_sn, f_ns, f_nn, u) = self.capture_factors();
        let a1 = r.mu * r.eta1;
        let a2 = r.mu * r.eta2;
        let background = f_sn * a1 * r.raman2
            + f_ns * r.raman1 * a2
            + f_nn * r.raman1 * r.raman2
            + u * (r.dark1 * (a2 + r.raman2 + r.dark2) + r.dark2 * (a1 + r.raman1));
        let accidental = f_ss * a1 * a2 + background;
        let coincidence = f_cc * r.mu * r.eta1 * r.eta2 + f_ss * r.kappa * a1 * a2 + background;
        WindowRates {
            coincidence_per_slot: coincidence,
            accidental_per_slot: accidental,
        }
    }

    pub fn predicted_car(&self, r: &DetectedRates) -> f64 {
        let w = self.predict(r);
        w.coincidence_per_slot / w.accidental_per_slot
    }

    /// Detected background rate (applied to both channels) that degrades
    /// the predicted CAR to the target.
    pub fn calibrate_raman_for_car(&self, base: &DetectedRates, target_car: f64) -> Result<f64> {
        self.validate()?;
        let car = |raman: f64| {
            let mut r = *base;
            r.raman1 = raman;
            r.raman2 = raman;
            self.predicted_car(&r)
        };
        bisect_decreasing(car, target_car, 0.0, 1e-6, 1e-9, "background calibration")
    }

    /// Mean pair rate that yields the target CAR on the high-rate branch
    /// (above the dark-count-limited optimum, where CAR falls as mu grows).
    pub fn calibrate_mu_for_car(&self, base: &DetectedRates, target_car: f64) -> Result<f64> {
        self.validate()?;
        let car = |mu: f64| {
            let mut r = *base;
            r.mu = mu;
            self.predicted_car(&r)
        };
        // Golden-section peak search on log mu.
        let (mut lo, mut hi) = (1e-8f64.ln(), 0.5f64.ln());
        let g = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if car(m1.exp()) < car(m2.exp()) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let mu_peak = (0.5 * (lo + hi)).exp();
        if car(mu_peak) < target_car {
            return Err(Error::Config(format!(
                "target CAR {target_car} above the achievable optimum {:.3}",
                car(mu_peak)
            )));
        }
        bisect_decreasing(car, target_car, mu_peak, 0.5, 1e-9, "pair-rate calibration")
    }
}
