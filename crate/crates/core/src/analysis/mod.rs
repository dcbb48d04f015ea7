//! Reduction of recorded time tags into coincidence histograms and
//! coincidence-to-accidental ratios, plus clock-phase series statistics.
//!
//! Conventions: a histogram of arrival-time differences (b minus a) has an
//! odd number of bins with the middle bin centered on zero delay. All
//! window membership tests are closed intervals on bin centers, evaluated
//! in exact integer arithmetic: a bin belongs to the window at c when
//! 2*|center - c| <= window width.

pub mod oracle;

use crate::error::{Error, Result};
use crate::timebase::{DurationFs, Timestamp};
use serde::{Deserialize, Serialize};

/// CAR above which the Werner-state fidelity crosses the classical 1/2
/// bound (and two-photon interference visibility crosses 50%).
pub const CLASSICAL_CAR_BOUND: f64 = 2.0;

/// CAR above which the implied visibility exceeds 1/sqrt(2), the CHSH
/// nonlocality threshold: 3 + 2*sqrt(2).
pub const NONLOCALITY_CAR_BOUND: f64 = 5.828_427_124_746_19;

/// Histogram of time differences with uniform bins. Bin k spans
/// [t_min + k*w, t_min + (k+1)*w) and has center t_min + k*w + w/2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_fs: i64,
    pub t_min_fs: i64,
    pub counts: Vec<u64>,
    /// Total differences binned (pairs within span).
    pub n_pairs_total: u64,
}

impl Histogram {
    /// Empty histogram with an odd bin count covering at least +-span_fs,
    /// middle bin centered at zero.
    pub fn symmetric(span_fs: i64, bin_width_fs: i64) -> Result<Histogram> {
        if bin_width_fs <= 0 || bin_width_fs % 2 != 0 {
            return Err(Error::Config(format!(
                "bin width must be positive and even, got {bin_width_fs} fs"
            )));
        }
        if span_fs <= 0 {
            return Err(Error::Config("histogram span must be positive".into()));
        }
        let n_side = span_fs.div_euclid(bin_width_fs) + 1;
        let n_bins = (2 * n_side + 1) as usize;
        Ok(Histogram {
            bin_width_fs,
            t_min_fs: -n_side * bin_width_fs - bin_width_fs / 2,
            counts: vec![0; n_bins],
            n_pairs_total: 0,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn center_fs(&self, k: usize) -> i64 {
        self.t_min_fs + k as i64 * self.bin_width_fs + self.bin_width_fs / 2
    }

    fn record(&mut self, diff_fs: i64) {
        let idx = (diff_fs - self.t_min_fs).div_euclid(self.bin_width_fs);
        if idx >= 0 && (idx as usize) < self.counts.len() {
            self.counts[idx as usize] += 1;
            self.n_pairs_total += 1;
        }
    }

    /// Sum of counts in the closed window of the given full width centered
    /// at `center_fs`, provided the window lies entirely inside the
    /// histogram range.
    fn window_sum(&self, center_fs: i64, window_fs: i64) -> Option<u64> {
        let lo = center_fs - window_fs / 2 - self.bin_width_fs;
        let hi = center_fs + window_fs / 2 + self.bin_width_fs;
        if lo < self.t_min_fs || hi > self.t_min_fs + self.n_bins() as i64 * self.bin_width_fs {
            return None;
        }
        let k0 = ((lo - self.t_min_fs).div_euclid(self.bin_width_fs)).max(0) as usize;
        let mut sum = 0u64;
        for k in k0..self.n_bins() {
            let c = self.center_fs(k);
            if 2 * (c - center_fs) > window_fs {
                break;
            }
            if 2 * (center_fs - c) <= window_fs {
                sum += self.counts[k];
            }
        }
        Some(sum)
    }
}

fn totals_sorted(tags: &[Timestamp], period: DurationFs, which: &str) -> Result<Vec<i128>> {
    let mut out = Vec::with_capacity(tags.len());
    let mut last = i128::MIN;
    for (i, t) in tags.iter().enumerate() {
        let v = t.total_fs(period);
        if v < last {
            return Err(Error::Unsorted {
                position: i,
                context: format!("{which} time tags"),
            });
        }
        last = v;
        out.push(v);
    }
    Ok(out)
}

/// Histogram of all pairwise differences t_b - t_a with magnitude at most
/// `span_fs`, built with a two-pointer sweep over the sorted streams.
pub fn coincidence_histogram(
    tags_a: &[Timestamp],
    tags_b: &[Timestamp],
    period: DurationFs,
    span_fs: i64,
    bin_width_fs: i64,
) -> Result<Histogram> {
    let mut hist = Histogram::symmetric(span_fs, bin_width_fs)?;
    let a = totals_sorted(tags_a, period, "stream a")?;
    let b = totals_sorted(tags_b, period, "stream b")?;
    let reach = span_fs as i128;
    let mut j0 = 0usize;
    for &ta in &a {
        while j0 < b.len() && b[j0] < ta - reach {
            j0 += 1;
        }
        for &tb in &b[j0..] {
            if tb > ta + reach {
                break;
            }
            hist.record((tb - ta) as i64);
        }
    }
    Ok(hist)
}

/// Binwise sum of two histograms with identical shape.
pub fn merge(a: &Histogram, b: &Histogram) -> Result<Histogram> {
    if a.bin_width_fs != b.bin_width_fs || a.t_min_fs != b.t_min_fs || a.n_bins() != b.n_bins() {
        return Err(Error::Config(
            "histogram shapes differ, cannot merge".into(),
        ));
    }
    let mut out = a.clone();
    for (o, &c) in out.counts.iter_mut().zip(&b.counts) {
        *o += c;
    }
    out.n_pairs_total += b.n_pairs_total;
    Ok(out)
}

/// Coincidence-to-accidental reduction of a delay histogram.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarReport {
    /// C/A with A the mean accidental-window sum. Infinite (serialized as
    /// null) when no accidentals were observed; see `infinite`.
    pub car: f64,
    /// Counting-statistics standard error: car * sqrt(1/C + 1/A_total).
    pub car_sigma: f64,
    pub coincidences: u64,
    pub accidentals_total: u64,
    pub accidentals_mean: f64,
    pub n_accidental_windows: usize,
    pub center_delay_fs: i64,
    pub window_fs: i64,
    pub fidelity: f64,
    pub visibility: f64,
    pub exceeds_classical: bool,
    pub exceeds_nonlocality: bool,
    pub infinite: bool,
}

/// Werner-state fidelity and interference visibility implied by a CAR.
pub fn fidelity_visibility(car: f64) -> (f64, f64) {
    if car.is_infinite() {
        return (1.0, 1.0);
    }
    (car / (car + 1.0), (car - 1.0) / (car + 1.0))
}

/// Entanglement-quality flags: does the CAR clear the classical bound and
/// the nonlocality bound.
pub fn classify(car: f64) -> (bool, bool) {
    (car > CLASSICAL_CAR_BOUND, car > NONLOCALITY_CAR_BOUND)
}

/// Reduce a delay histogram to a CAR.
///
/// The coincidence window (full width `window_fs`) is centered on the
/// largest bin within half a pulse period of zero delay. Accidentals are
/// the same-width windows displaced by whole pulse periods, alternating
/// +1, -1, +2, -2, ... until `n_peaks` windows are in hand; displacements
/// closer than `exclude_center_neighbors` periods are skipped on both
/// sides. Errors if the histogram does not span enough periods.
pub fn car_from_histogram(
    hist: &Histogram,
    window_fs: i64,
    period: DurationFs,
    n_peaks: usize,
    exclude_center_neighbors: usize,
) -> Result<CarReport> {
    if window_fs <= 0 || window_fs >= period.value() {
        return Err(Error::Config(format!(
            "window {window_fs} fs must be positive and below one period"
        )));
    }
    if n_peaks == 0 {
        return Err(Error::Config("need at least one accidental window".into()));
    }
    let t = period.value();
    let mut best: Option<(u64, usize)> = None;
    for k in 0..hist.n_bins() {
        if 2 * hist.center_fs(k).abs() <= t {
            let c = hist.counts[k];
            if best.is_none_or(|(bc, _)| c > bc) {
                best = Some((c, k));
            }
        }
    }
    let (_, peak_bin) =
        best.ok_or_else(|| Error::InsufficientData("no bins within half a period of zero".into()))?;
    let center = hist.center_fs(peak_bin);

    let coincidences = hist.window_sum(center, window_fs).ok_or_else(|| {
        Error::InsufficientData("coincidence window exceeds histogram span".into())
    })?;

    let mut accidentals_total = 0u64;
    let mut used = 0usize;
    let mut k = exclude_center_neighbors as i64 + 1;
    while used < n_peaks {
        let mut advanced = false;
        for sign in [1i64, -1] {
            if used == n_peaks {
                break;
            }
            if let Some(s) = hist.window_sum(center + sign * k * t, window_fs) {
                accidentals_total += s;
                used += 1;
                advanced = true;
            }
        }
        if !advanced {
            return Err(Error::InsufficientData(format!(
                "histogram spans only {used} of {n_peaks} accidental windows"
            )));
        }
        k += 1;
    }

    let accidentals_mean = accidentals_total as f64 / used as f64;
    let infinite = accidentals_total == 0;
    let car = if infinite {
        f64::INFINITY
    } else {
        coincidences as f64 / accidentals_mean
    };
    let car_sigma = if infinite || coincidences == 0 {
        f64::INFINITY
    } else {
        car * (1.0 / coincidences as f64 + 1.0 / accidentals_total as f64).sqrt()
    };
    let (fidelity, visibility) = fidelity_visibility(car);
    let (exceeds_classical, exceeds_nonlocality) = classify(car);
    Ok(CarReport {
        car,
        car_sigma,
        coincidences,
        accidentals_total,
        accidentals_mean,
        n_accidental_windows: used,
        center_delay_fs: center,
        window_fs,
        fidelity,
        visibility,
        exceeds_classical,
        exceeds_nonlocality,
        infinite,
    })
}

/// Photon-number loss estimate in dB from sent and counted totals.
pub fn loss_estimate_db(sent: u64, counted: u64) -> Result<f64> {
    if sent == 0 {
        return Err(Error::EmptyInput("no photons sent".into()));
    }
    if counted > sent {
        return Err(Error::Config(format!(
            "counted {counted} exceeds sent {sent}; not a loss"
        )));
    }
    if counted == 0 {
        return Err(Error::InsufficientData("no photons counted".into()));
    }
    Ok(-10.0 * (counted as f64 / sent as f64).log10())
}

/// Windowed statistics of a clock-phase series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JitterStats {
    /// Median over windows of the within-window standard deviation: the
    /// fast jitter, robust to slow drift.
    pub stdev_fs: f64,
    /// Spread of the window means: the slow drift amplitude.
    pub peak_to_peak_fs: f64,
    /// Last window mean minus first window mean.
    pub drift_fs_over_span: f64,
    pub n_windows: usize,
}

/// Split a phase series into consecutive windows of `window_s` and reduce
/// each to mean and standard deviation.
pub fn jitter_stats(series: &crate::sync::ClockPhaseSeries, window_s: f64) -> Result<JitterStats> {
    series.validate()?;
    if series.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 phase samples, got {}",
            series.len()
        )));
    }
    if !(window_s > 0.0) {
        return Err(Error::Config("window must be positive".into()));
    }
    let t0 = series.times_s[0];
    let mut means = Vec::new();
    let mut stdevs = Vec::new();
    let mut w = 0usize;
    let mut buf: Vec<f64> = Vec::new();
    for (i, &t) in series.times_s.iter().enumerate() {
        let wi = ((t - t0) / window_s) as usize;
        if wi != w && !buf.is_empty() {
            push_window(&mut means, &mut stdevs, &buf);
            buf.clear();
            w = wi;
        }
        buf.push(series.offsets_fs[i]);
    }
    if !buf.is_empty() {
        push_window(&mut means, &mut stdevs, &buf);
    }
    if means.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "series spans only {} analysis window(s); need 2",
            means.len()
        )));
    }
    stdevs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(JitterStats {
        stdev_fs: stdevs[stdevs.len() / 2],
        peak_to_peak_fs: hi - lo,
        drift_fs_over_span: means[means.len() - 1] - means[0],
        n_windows: means.len(),
    })
}

fn push_window(means: &mut Vec<f64>, stdevs: &mut Vec<f64>, buf: &[f64]) {
    let n = buf.len() as f64;
    let m = buf.iter().sum::<f64>() / n;
    means.push(m);
    if buf.len() >= 2 {
        let var = buf.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        stdevs.push(var.sqrt());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::ClockPhaseSeries;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    const P: DurationFs = DurationFs::fs(5_000_000);

    fn tags_from_totals(totals: &[i128]) -> Vec<Timestamp> {
        totals
            .iter()
            .map(|&t| Timestamp::from_total_fs(t, P).unwrap())
            .collect()
    }

    #[test]
    fn two_pointer_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut a: Vec<i128> = (0..400)
            .map(|_| rng.gen_range(0..2_000_000_000i128))
            .collect();
        let mut b: Vec<i128> = (0..400)
            .map(|_| rng.gen_range(0..2_000_000_000i128))
            .collect();
        a.sort();
        b.sort();
        let span = 50_000_000i64;
        let bin = 1_000_000i64;
        let h = coincidence_histogram(&tags_from_totals(&a), &tags_from_totals(&b), P, span, bin)
            .unwrap();
        let mut expect = Histogram::symmetric(span, bin).unwrap();
        for &ta in &a {
            for &tb in &b {
                if (tb - ta).abs() <= span as i128 {
                    expect.record((tb - ta) as i64);
                }
            }
        }
        assert_eq!(h, expect);
        assert_eq!(h.n_pairs_total, expect.counts.iter().sum::<u64>());
    }

    #[test]
    fn unsorted_stream_rejected() {
        let a = vec![Timestamp::new(5, 0), Timestamp::new(3, 0)];
        let b = vec![Timestamp::new(1, 0)];
        let r = coincidence_histogram(&a, &b, P, 1_000_000, 10_000);
        assert!(matches!(r, Err(Error::Unsorted { position: 1, .. })));
    }

    #[test]
    fn merge_is_binwise_and_associative() {
        let mk = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut h = Histogram::symmetric(100_000, 10_000).unwrap();
            for _ in 0..500 {
                h.record(rng.gen_range(-100_000..=100_000));
            }
            h
        };
        let (h1, h2, h3) = (mk(1), mk(2), mk(3));
        let left = merge(&merge(&h1, &h2).unwrap(), &h3).unwrap();
        let right = merge(&h1, &merge(&h2, &h3).unwrap()).unwrap();
        assert_eq!(left, right);
        assert_eq!(
            left.counts.iter().sum::<u64>(),
            [&h1, &h2, &h3]
                .iter()
                .map(|h| h.counts.iter().sum::<u64>())
                .sum::<u64>()
        );
        let other = Histogram::symmetric(100_000, 20_000).unwrap();
        assert!(matches!(merge(&h1, &other), Err(Error::Config(_))));
    }

    /// Uniform floor of f counts per bin plus a spike at zero delay: with a
    /// (2m+1)-bin window, CAR = (spike + (2m+1) f) / ((2m+1) f).
    fn floor_plus_spike(floor: u64, spike: u64) -> Histogram {
        let mut h = Histogram::symmetric(6 * P.value(), 10_000).unwrap();
        for k in 0..h.n_bins() {
            h.counts[k] = floor;
        }
        let zero_bin = (0 - h.t_min_fs).div_euclid(h.bin_width_fs) as usize;
        assert_eq!(h.center_fs(zero_bin), 0);
        h.counts[zero_bin] += spike;
        h
    }

    #[test]
    fn car_of_known_floor_and_spike() {
        let h = floor_plus_spike(5, 1_000);
        let r = car_from_histogram(&h, 200_000, P, 10, 0).unwrap();
        assert_eq!(r.center_delay_fs, 0);
        assert_eq!(r.coincidences, 1_000 + 21 * 5);
        assert_eq!(r.n_accidental_windows, 10);
        assert_eq!(r.accidentals_total, 10 * 21 * 5);
        let car = 1105.0 / 105.0;
        assert!((r.car - car).abs() < 1e-12);
        let sigma = car * (1.0f64 / 1105.0 + 1.0 / 1050.0).sqrt();
        assert!((r.car_sigma - sigma).abs() < 1e-12);
        assert!(r.exceeds_classical && r.exceeds_nonlocality && !r.infinite);
    }

    #[test]
    fn window_membership_is_closed_on_bin_centers() {
        // All bins 1: a 200 ps window over 10 ps bins takes exactly the 21
        // bins with centers in [-100, +100] ps.
        let h = floor_plus_spike(1, 0);
        let r = car_from_histogram(&h, 200_000, P, 2, 0).unwrap();
        assert_eq!(r.coincidences, 21);
    }

    #[test]
    fn car_infinite_without_accidentals() {
        let h = floor_plus_spike(0, 500);
        let r = car_from_histogram(&h, 200_000, P, 10, 0).unwrap();
        assert!(r.infinite && r.car.is_infinite());
        assert_eq!(r.fidelity, 1.0);
        assert_eq!(r.visibility, 1.0);
        // Non-finite floats serialize as null, so the flag carries the fact.
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"car\":null"));
        assert!(json.contains("\"infinite\":true"));
    }

    #[test]
    fn narrow_histogram_is_rejected() {
        let mut h = Histogram::symmetric(2 * P.value(), 10_000).unwrap();
        let zero_bin = (0 - h.t_min_fs).div_euclid(h.bin_width_fs) as usize;
        h.counts[zero_bin] = 10;
        // Spans only +-2 periods: 4 accidental windows, not 10.
        let r = car_from_histogram(&h, 200_000, P, 10, 0);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn neighbor_exclusion_skips_contaminated_peaks() {
        let mut h = floor_plus_spike(5, 1_000);
        // Poison the two first-neighbor peaks.
        for sign in [-1i64, 1] {
            let idx = (sign * P.value() - h.t_min_fs).div_euclid(h.bin_width_fs) as usize;
            h.counts[idx] += 100_000;
        }
        let skip = car_from_histogram(&h, 200_000, P, 8, 1).unwrap();
        assert_eq!(skip.accidentals_total, 8 * 21 * 5);
        let keep = car_from_histogram(&h, 200_000, P, 8, 0).unwrap();
        assert!(keep.accidentals_total > skip.accidentals_total);
    }

    #[test]
    fn fidelity_visibility_algebra() {
        for car in [1.0, 2.0, 5.0, 42.0, 77.0, 500.0] {
            let (f, v) = fidelity_visibility(car);
            assert!((v - (2.0 * f - 1.0)).abs() < 1e-12);
        }
        let (f42, _) = fidelity_visibility(42.0);
        assert!((f42 - 0.976_744_186_046_511_6).abs() < 1e-15);
        let (f77, _) = fidelity_visibility(77.0);
        assert!((f77 - 0.987_179_487_179_487_2).abs() < 1e-15);
    }

    #[test]
    fn quality_flags_flip_at_bounds() {
        assert_eq!(classify(1.99), (false, false));
        assert_eq!(classify(2.01), (true, false));
        assert_eq!(classify(5.82), (true, false));
        assert_eq!(classify(5.84), (true, true));
    }

    #[test]
    fn loss_estimate_round_numbers() {
        assert!((loss_estimate_db(1_000, 10).unwrap() - 20.0).abs() < 1e-12);
        assert!(matches!(loss_estimate_db(10, 20), Err(Error::Config(_))));
        assert!(matches!(
            loss_estimate_db(10, 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(loss_estimate_db(0, 0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn jitter_stats_separate_fast_noise_from_slow_drift() {
        // 1 kHz sampling for 10 s; 1 ps white noise on a 4 ps p2p sinusoid
        // with a 10 s period, analyzed in 1 s windows.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let gauss = rand_distr::Normal::new(0.0f64, 1_000.0).unwrap();
        let n = 10_000usize;
        let mut s = ClockPhaseSeries::default();
        for i in 0..n {
            let t = i as f64 * 1e-3;
            let drift = 2_000.0 * (2.0 * std::f64::consts::PI * t / 10.0).sin();
            let noise: f64 = rand_distr::Distribution::sample(&gauss, &mut rng);
            s.times_s.push(t);
            s.offsets_fs.push(drift + noise);
        }
        let st = jitter_stats(&s, 1.0).unwrap();
        assert!(
            (st.stdev_fs - 1_000.0).abs() < 150.0,
            "stdev {}",
            st.stdev_fs
        );
        assert!(
            (st.peak_to_peak_fs - 4_000.0).abs() < 450.0,
            "p2p {}",
            st.peak_to_peak_fs
        );
        assert_eq!(st.n_windows, 10);
    }

    #[test]
    fn jitter_stats_needs_enough_samples() {
        let s = ClockPhaseSeries {
            times_s: (0..5).map(|i| i as f64).collect(),
            offsets_fs: vec![0.0; 5],
        };
        assert!(matches!(
            jitter_stats(&s, 1.0),
            Err(Error::InsufficientData(_))
        ));
    }
}
