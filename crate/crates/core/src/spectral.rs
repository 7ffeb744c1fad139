//! FFT utilities, period discovery, frequency-band intervention, and the
//! seasonal-strength diagnostic.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1/n` factor, so `sum |x_t|^2 = (1/n) sum |X_f|^2`.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::MultivariateSeries;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

pub fn forward_fft(x: &[f64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("FFT of an empty signal".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("FFT input".into()));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf, false);
    Ok(buf)
}

pub fn inverse_fft_complex(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    if spectrum.is_empty() {
        return Err(Error::InvalidArgument("inverse FFT of an empty spectrum".into()));
    }
    if spectrum.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("inverse FFT input".into()));
    }
    let mut buf = spectrum.to_vec();
    fft_in_place(&mut buf, true);
    let n = buf.len() as f64;
    buf.iter_mut().for_each(|c| *c /= n);
    Ok(buf)
}

/// Inverse transform keeping the real part.
pub fn inverse_fft(spectrum: &[Complex64]) -> Result<Vec<f64>> {
    Ok(inverse_fft_complex(spectrum)?.into_iter().map(|c| c.re).collect())
}

/// Amplitudes of a forward transform, one per bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpectrum {
    pub amplitudes: Vec<f64>,
    pub source_length: usize,
}

impl AmplitudeSpectrum {
    pub fn of(x: &[f64]) -> Result<Self> {
        Ok(Self {
            amplitudes: forward_fft(x)?.iter().map(|c| c.norm()).collect(),
            source_length: x.len(),
        })
    }

    /// Channel-averaged amplitudes of a row-major `len x channels` block.
    pub fn averaged(x: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || x.is_empty() || !x.len().is_multiple_of(channels) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of {channels} channels",
                x.len()
            )));
        }
        let len = x.len() / channels;
        let mut acc = vec![0.0; len];
        let mut column = vec![0.0; len];
        for c in 0..channels {
            for (t, v) in column.iter_mut().enumerate() {
                *v = x[t * channels + c];
            }
            for (a, s) in acc.iter_mut().zip(forward_fft(&column)?) {
                *a += s.norm();
            }
        }
        acc.iter_mut().for_each(|a| *a /= channels as f64);
        Ok(Self {
            amplitudes: acc,
            source_length: len,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.amplitudes.len()
    }

    /// Period length associated with frequency bin `f`: `ceil(n / f)`.
    pub fn period_of(&self, f: usize) -> usize {
        self.source_length.div_ceil(f)
    }
}

fn non_dc_bins(len: usize) -> std::ops::RangeInclusive<usize> {
    1..=len / 2
}

/// Global period of a series: the bin with the largest channel-averaged
/// amplitude (DC excluded, ties to the lower bin) mapped to `ceil(T_l / f)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalPeriod {
    pub frequency: usize,
    pub period: usize,
}

pub fn discover_global_period(series: &MultivariateSeries) -> Result<GlobalPeriod> {
    if series.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "global period needs at least 4 points, got {}",
            series.len()
        )));
    }
    let spec = AmplitudeSpectrum::averaged(series.values(), series.dims())?;
    let scale: f64 = series.values().iter().map(|v| v.abs()).sum::<f64>() + f64::MIN_POSITIVE;
    let mut best = (0usize, 0.0f64);
    for f in non_dc_bins(spec.bin_count()) {
        if spec.amplitudes[f] > best.1 {
            best = (f, spec.amplitudes[f]);
        }
    }
    if best.0 == 0 || best.1 <= 1e-10 * scale {
        return Err(Error::Validation("series has no dominant non-DC frequency".into()));
    }
    Ok(GlobalPeriod {
        frequency: best.0,
        period: spec.period_of(best.0),
    })
}

/// The `k` strongest local periods of a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSet {
    pub frequencies: Vec<usize>,
    pub periods: Vec<usize>,
    pub weights: Vec<f64>,
    pub requested: usize,
}

impl PeriodSet {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Fewer non-zero bins were available than requested.
    pub fn is_short(&self) -> bool {
        self.frequencies.len() < self.requested
    }
}

/// Bins `1..=len/2` ordered by descending amplitude, ties to the lower bin.
pub fn ranked_bins(spec: &AmplitudeSpectrum) -> Vec<usize> {
    let mut bins: Vec<usize> = non_dc_bins(spec.bin_count()).collect();
    bins.sort_by(|&a, &b| {
        spec.amplitudes[b]
            .partial_cmp(&spec.amplitudes[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    bins
}

/// Top-`k` periods of a row-major `len x channels` block.
pub fn top_k_periods(x: &[f64], channels: usize, k: usize) -> Result<PeriodSet> {
    let spec = AmplitudeSpectrum::averaged(x, channels)?;
    let len = spec.source_length;
    if k == 0 || 2 * k >= len {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must satisfy 1 <= k < T/2 for T = {len}"
        )));
    }
    let peak = spec.amplitudes.iter().copied().fold(0.0, f64::max);
    let floor = 1e-12 * peak.max(f64::MIN_POSITIVE);
    let mut set = PeriodSet {
        frequencies: Vec::with_capacity(k),
        periods: Vec::with_capacity(k),
        weights: Vec::with_capacity(k),
        requested: k,
    };
    for f in ranked_bins(&spec) {
        if set.len() == k {
            break;
        }
        let p = spec.period_of(f);
        if p < 2 || spec.amplitudes[f] <= floor {
            continue;
        }
        set.frequencies.push(f);
        set.periods.push(p);
        set.weights.push(spec.amplitudes[f]);
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandLocation {
    High,
    Low,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "laplace" => Ok(NoiseKind::Laplace),
            _ => Err(Error::InvalidArgument(format!("unknown noise kind `{s}`"))),
        }
    }
}

impl std::str::FromStr for BandLocation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(BandLocation::High),
            "low" => Ok(BandLocation::Low),
            _ => Err(Error::InvalidArgument(format!("unknown band location `{s}`"))),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Laplace => "laplace",
        })
    }
}

impl std::fmt::Display for BandLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BandLocation::High => "high",
            BandLocation::Low => "low",
        })
    }
}

/// Frequency-band noise injection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub k_h_frac: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
    pub location: BandLocation,
}

impl Default for Intervention {
    fn default() -> Self {
        Self {
            k_h_frac: 0.25,
            sigma: 0.1,
            noise: NoiseKind::Gaussian,
            location: BandLocation::High,
        }
    }
}

impl Intervention {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_nan() || self.sigma < 0.0 || self.sigma.is_infinite() {
            return Err(Error::InvalidArgument(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.k_h_frac > 0.0 && self.k_h_frac < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "k_h_frac must lie in (0, 1), got {}",
                self.k_h_frac
            )));
        }
        Ok(())
    }

    /// Split bin `k_h = round(k_h_frac * T)`.
    pub fn split_bin(&self, len: usize) -> usize {
        (self.k_h_frac * len as f64).round() as usize
    }

    /// Whether frequency `f` (a one-sided index in `0..=T/2`) is perturbed.
    pub fn perturbs(&self, f: usize, len: usize) -> bool {
        let k_h = self.split_bin(len);
        match self.location {
            BandLocation::High => f >= k_h,
            BandLocation::Low => f < k_h,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.noise {
            NoiseKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.sigma * z
            }
            NoiseKind::Laplace => {
                // scale sigma / sqrt(2) gives standard deviation sigma
                let b = self.sigma / std::f64::consts::SQRT_2;
                let u: f64 = rng.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
        }
    }

    /// Perturb a row-major `T x D` window channel by channel. Zero `sigma`
    /// returns the window unchanged.
    ///
    /// Noise is injected with conjugate symmetry (bin `f` and bin `T - f`
    /// receive conjugate draws, DC and Nyquist receive real draws) so the
    /// inverse transform stays real. Band membership is decided on the
    /// one-sided frequency `min(b, T - b)`.
    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], dims: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        if dims == 0 || x.is_empty() || !x.len().is_multiple_of(dims) {
            return Err(Error::InvalidArgument("window does not have whole rows".into()));
        }
        if self.sigma == 0.0 {
            return Ok(x.to_vec());
        }
        let len = x.len() / dims;
        let mut out = vec![0.0; x.len()];
        let mut column = vec![0.0; len];
        for d in 0..dims {
            for (t, v) in column.iter_mut().enumerate() {
                *v = x[t * dims + d];
            }
            let mut spec = forward_fft(&column)?;
            {
                for f in 0..=len / 2 {
                    if !self.perturbs(f, len) {
                        continue;
                    }
                    let self_conjugate = f == 0 || 2 * f == len;
                    if self_conjugate {
                        spec[f].re += self.draw(rng);
                    } else {
                        let eta = Complex64::new(self.draw(rng), self.draw(rng));
                        spec[f] += eta;
                        spec[len - f] += eta.conj();
                    }
                }
            }
            let back = inverse_fft(&spec)?;
            for (t, v) in back.into_iter().enumerate() {
                out[t * dims + d] = v;
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper over [`Intervention::apply`].
pub fn intervene<R: Rng + ?Sized>(
    x: &[f64],
    dims: usize,
    intervention: &Intervention,
    rng: &mut R,
) -> Result<Vec<f64>> {
    intervention.apply(x, dims, rng)
}

/// Moving-average trend, per-phase seasonal means, residual.
#[derive(Clone, Debug, PartialEq)]
pub struct SeasonalDecomposition {
    /// First index covered by the centred moving average.
    pub offset: usize,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
}

pub fn decompose(x: &[f64], period: usize) -> Result<SeasonalDecomposition> {
    if period < 2 {
        return Err(Error::InvalidArgument(format!("seasonal period {period} < 2")));
    }
    if x.len() < 2 * period {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is shorter than two periods of {period}",
            x.len()
        )));
    }
    let n = x.len();
    let half = period / 2;
    // centred MA; the even case is the 2 x m average
    let weights: Vec<f64> = if period % 2 == 1 {
        vec![1.0 / period as f64; period]
    } else {
        let mut w = vec![1.0 / period as f64; period + 1];
        w[0] /= 2.0;
        w[period] /= 2.0;
        w
    };
    let span = weights.len();
    let offset = half;
    let covered = n + 1 - span;
    let trend: Vec<f64> = (0..covered)
        .map(|s| weights.iter().zip(&x[s..s + span]).map(|(w, v)| w * v).sum())
        .collect();
    let detrended: Vec<f64> = trend.iter().enumerate().map(|(i, m)| x[offset + i] - m).collect();
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (i, d) in detrended.iter().enumerate() {
        let phase = (offset + i) % period;
        sums[phase] += d;
        counts[phase] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let centre = means.iter().sum::<f64>() / period as f64;
    let seasonal: Vec<f64> = (0..covered).map(|i| means[(offset + i) % period] - centre).collect();
    let residual = detrended.iter().zip(&seasonal).map(|(d, s)| d - s).collect();
    Ok(SeasonalDecomposition {
        offset,
        trend,
        seasonal,
        residual,
    })
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// Seasonal strength `max(0, 1 - Var(R) / Var(S + R))`.
pub fn periodicity_strength(x: &[f64], period: usize) -> Result<f64> {
    let dec = decompose(x, period)?;
    let sr: Vec<f64> = dec.seasonal.iter().zip(&dec.residual).map(|(s, r)| s + r).collect();
    let total = variance(&sr);
    if total < 1e-12 {
        return Ok(0.0);
    }
    Ok((1.0 - variance(&dec.residual) / total).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Direct O(n^2) DFT, independent of the FFT backend.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|f| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let ang = -2.0 * PI * (f * t) as f64 / n as f64;
                        Complex64::new(v * ang.cos(), v * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn sine(len: usize, period: f64, amp: f64, phase: f64) -> Vec<f64> {
        (0..len)
            .map(|t| amp * (2.0 * PI * t as f64 / period + phase).sin())
            .collect()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let s = forward_fft(&[1.0; 4]).unwrap();
        assert!((s[0].re - 4.0).abs() < 1e-12);
        assert!(s[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn cosine_peaks_at_its_bin() {
        let x: Vec<f64> = (0..64).map(|t| (2.0 * PI * t as f64 / 8.0).cos()).collect();
        let amp = AmplitudeSpectrum::of(&x).unwrap();
        let oracle: Vec<f64> = naive_dft(&x).iter().map(|c| c.norm()).collect();
        let best = (1..=32).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
        assert_eq!(best, 8);
        assert_eq!(ranked_bins(&amp)[0], 8);
    }

    #[test]
    fn fft_matches_naive_dft_and_roundtrips() {
        let x = noise(100, 1);
        let fast = forward_fft(&x).unwrap();
        for (a, b) in fast.iter().zip(naive_dft(&x)) {
            assert!((a - b).norm() < 1e-9);
        }
        let back = inverse_fft(&fast).unwrap();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn nan_input_rejected() {
        assert!(forward_fft(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn linearity_and_parseval() {
        let (x, y) = (noise(48, 2), noise(48, 3));
        let (a, b) = (1.7, -0.4);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (fx, fy, fc) = (
            forward_fft(&x).unwrap(),
            forward_fft(&y).unwrap(),
            forward_fft(&combo).unwrap(),
        );
        for i in 0..48 {
            assert!((fc[i] - (fx[i] * a + fy[i] * b)).norm() < 1e-9);
        }
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = fx.iter().map(|c| c.norm_sqr()).sum::<f64>() / 48.0;
        assert!((time - freq).abs() / time < 1e-9);
    }

    #[test]
    fn global_period_of_pure_sine() {
        let s = MultivariateSeries::univariate(sine(200, 20.0, 1.0, 0.3)).unwrap();
        let g = discover_global_period(&s).unwrap();
        assert_eq!((g.frequency, g.period), (10, 20));
    }

    #[test]
    fn larger_amplitude_wins() {
        let x: Vec<f64> = sine(200, 20.0, 3.0, 0.0)
            .iter()
            .zip(sine(200, 5.0, 1.0, 0.5))
            .map(|(a, b)| a + b)
            .collect();
        // brute-force spectrum oracle
        let oracle: Vec<f64> = naive_dft(&x).iter().map(|c| c.norm()).collect();
        let f = (1..=100).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
        let s = MultivariateSeries::univariate(x).unwrap();
        let g = discover_global_period(&s).unwrap();
        assert_eq!(g.frequency, f);
        assert_eq!(g.period, 20);
    }

    #[test]
    fn averaging_across_dims_keeps_shared_peak() {
        let a = sine(200, 20.0, 2.0, 0.0);
        let b = sine(200, 20.0, 4.0, 1.0);
        let v: Vec<f64> = a.iter().zip(&b).flat_map(|(x, y)| [*x, *y]).collect();
        let s = MultivariateSeries::new(v, 2, None, None, None).unwrap();
        assert_eq!(discover_global_period(&s).unwrap().period, 20);
    }

    #[test]
    fn global_period_scale_invariant() {
        let x: Vec<f64> = sine(150, 15.0, 1.0, 0.2)
            .iter()
            .zip(noise(150, 9))
            .map(|(a, b)| a + 0.3 * b)
            .collect();
        let p = discover_global_period(&MultivariateSeries::univariate(x.clone()).unwrap()).unwrap();
        for k in [0.01, 3.0, 1e4] {
            let y = x.iter().map(|v| v * k).collect();
            let q = discover_global_period(&MultivariateSeries::univariate(y).unwrap()).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn constant_series_has_no_global_period() {
        let s = MultivariateSeries::univariate(vec![3.0; 50]).unwrap();
        assert!(discover_global_period(&s).is_err());
    }

    #[test]
    fn top_k_recovers_two_lines() {
        let x: Vec<f64> = sine(120, 20.0, 2.0, 0.0)
            .iter()
            .zip(sine(120, 8.0, 1.0, 0.7))
            .map(|(a, b)| a + b)
            .collect();
        let set = top_k_periods(&x, 1, 2).unwrap();
        let mut f = set.frequencies.clone();
        f.sort();
        assert_eq!(f, vec![6, 15]);
        assert!(!set.is_short());
    }

    #[test]
    fn top_1_matches_global_period() {
        let x = sine(200, 25.0, 1.0, 0.0);
        let set = top_k_periods(&x, 1, 1).unwrap();
        let g = discover_global_period(&MultivariateSeries::univariate(x).unwrap()).unwrap();
        assert_eq!(set.frequencies[0], g.frequency);
    }

    #[test]
    fn top_k_of_noise_matches_sorted_oracle() {
        let x = noise(64, 4);
        let set = top_k_periods(&x, 1, 3).unwrap();
        let oracle: Vec<f64> = naive_dft(&x).iter().map(|c| c.norm()).collect();
        let mut bins: Vec<usize> = (1..=32).collect();
        bins.sort_by(|&a, &b| oracle[b].total_cmp(&oracle[a]));
        assert_eq!(set.frequencies, bins[..3].to_vec());
        for (w, &f) in set.weights.iter().zip(&set.frequencies) {
            assert!((w - oracle[f]).abs() < 1e-9);
        }
    }

    #[test]
    fn top_k_flags_short_count() {
        let x: Vec<f64> = (0..32).map(|t| (2.0 * PI * t as f64 / 8.0).cos()).collect();
        let set = top_k_periods(&x, 1, 3).unwrap();
        assert_eq!(set.frequencies, vec![4]);
        assert!(set.is_short());
        assert!(top_k_periods(&x, 1, 16).is_err());
    }

    #[test]
    fn zero_sigma_is_roundtrip() {
        let x = noise(60 * 2, 5);
        let iv = Intervention {
            sigma: 0.0,
            ..Intervention::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = iv.apply(&x, 2, &mut rng).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn negative_sigma_rejected() {
        let iv = Intervention {
            sigma: -0.1,
            ..Intervention::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(iv.apply(&[0.0; 8], 1, &mut rng).is_err());
    }

    #[test]
    fn band_preservation_both_locations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = noise(60, 6);
        for location in [BandLocation::High, BandLocation::Low] {
            let iv = Intervention {
                sigma: 1.0,
                location,
                ..Intervention::default()
            };
            let y = iv.apply(&x, 1, &mut rng).unwrap();
            let (fx, fy) = (forward_fft(&x).unwrap(), forward_fft(&y).unwrap());
            let k_h = iv.split_bin(60);
            assert_eq!(k_h, 15);
            for f in 0..=30 {
                let moved = (fx[f] - fy[f]).norm();
                let untouched = match location {
                    BandLocation::High => f < k_h,
                    BandLocation::Low => f >= k_h,
                };
                if untouched {
                    assert!(moved < 1e-8, "{location} bin {f} moved by {moved}");
                } else {
                    assert!(moved > 0.0);
                }
            }
        }
    }

    #[test]
    fn laplace_noise_has_requested_std() {
        let iv = Intervention {
            noise: NoiseKind::Laplace,
            ..Intervention::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = vec![0.0; 60];
        let mut sq = 0.0;
        let mut n = 0.0;
        for _ in 0..500 {
            let y = iv.apply(&x, 1, &mut rng).unwrap();
            let fy = forward_fft(&y).unwrap();
            for c in &fy[15..30] {
                sq += c.re * c.re + c.im * c.im;
                n += 2.0;
            }
        }
        let sd = (sq / n).sqrt();
        assert!((sd - 0.1).abs() < 0.015, "{sd}");
    }

    #[test]
    fn strength_of_pure_sine_is_high() {
        let x = sine(240, 24.0, 1.0, 0.4);
        assert!(periodicity_strength(&x, 24).unwrap() > 0.95);
    }

    #[test]
    fn strength_of_noise_is_low_on_average() {
        let mean: f64 = (0..20)
            .map(|s| periodicity_strength(&noise(200, 100 + s), 20).unwrap())
            .sum::<f64>()
            / 20.0;
        assert!(mean < 0.2, "{mean}");
    }

    #[test]
    fn strength_of_zero_signal_is_zero() {
        assert_eq!(periodicity_strength(&[0.0; 40], 10).unwrap(), 0.0);
        assert!(periodicity_strength(&[0.0; 19], 10).is_err());
    }

    #[test]
    fn odd_period_decomposition() {
        let x = sine(105, 7.0, 2.0, 0.1);
        let dec = decompose(&x, 7).unwrap();
        assert_eq!(dec.offset, 3);
        assert_eq!(dec.trend.len(), 99);
        assert!(periodicity_strength(&x, 7).unwrap() > 0.95);
    }
}
