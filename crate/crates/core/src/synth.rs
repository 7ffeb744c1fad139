//! Synthetic multi-periodic series with labelled anomaly injection.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::MultivariateSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Adds `magnitude` to every channel.
    Spike,
    /// Adds `magnitude` to every channel; meant for longer intervals.
    LevelShift,
    /// Replaces the strongest periodic component with one of period
    /// `magnitude`.
    PeriodBreak,
}

impl AnomalyKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Spike => "spike",
            Self::LevelShift => "level_shift",
            Self::PeriodBreak => "period_break",
        }
    }
}

/// `kind:start:duration:magnitude`, e.g. `spike:500:1:10`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub start: usize,
    pub duration: usize,
    pub magnitude: f64,
}

impl AnomalySpec {
    pub fn new(kind: AnomalyKind, start: usize, duration: usize, magnitude: f64) -> Self {
        Self {
            kind,
            start,
            duration,
            magnitude,
        }
    }

    pub fn interval(&self) -> Range<usize> {
        self.start..self.start + self.duration
    }
}

impl fmt::Display for AnomalySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.kind.as_str(),
            self.start,
            self.duration,
            self.magnitude
        )
    }
}

impl FromStr for AnomalySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("anomaly `{s}` is not kind:start:duration:magnitude"));
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let [kind, start, duration, magnitude] = parts[..] else {
            return Err(bad());
        };
        let kind = match kind {
            "spike" => AnomalyKind::Spike,
            "level_shift" => AnomalyKind::LevelShift,
            "period_break" => AnomalyKind::PeriodBreak,
            _ => return Err(bad()),
        };
        Ok(Self {
            kind,
            start: start.parse().map_err(|_| bad())?,
            duration: duration.parse().map_err(|_| bad())?,
            magnitude: magnitude.parse().map_err(|_| bad())?,
        })
    }
}

impl TryFrom<String> for AnomalySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AnomalySpec> for String {
    fn from(a: AnomalySpec) -> Self {
        a.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Series length `T_l`.
    pub length: usize,
    pub dims: usize,
    pub periods: Vec<usize>,
    /// One amplitude per period.
    pub amplitudes: Vec<f64>,
    pub noise_std: f64,
    pub anomalies: Vec<AnomalySpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            length: 2000,
            dims: 3,
            periods: vec![20],
            amplitudes: vec![3.0],
            noise_std: 0.3,
            anomalies: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, message: String| Error::Config {
            key: key.into(),
            message,
        };
        if self.length == 0 || self.dims == 0 {
            return Err(cfg("length", "length and dims must be positive".into()));
        }
        if self.periods.len() != self.amplitudes.len() {
            return Err(cfg(
                "amplitudes",
                format!(
                    "{} amplitudes for {} periods",
                    self.amplitudes.len(),
                    self.periods.len()
                ),
            ));
        }
        if let Some(p) = self.periods.iter().find(|&&p| p < 2) {
            return Err(cfg("periods", format!("period {p} is below 2")));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(cfg("noise_std", format!("must be >= 0, got {}", self.noise_std)));
        }
        for a in &self.anomalies {
            if a.duration == 0 || a.start + a.duration > self.length {
                return Err(cfg("anomalies", format!("`{a}` does not fit in [0, {})", self.length)));
            }
            if !a.magnitude.is_finite() {
                return Err(cfg("anomalies", format!("`{a}` has a non-finite magnitude")));
            }
            if a.kind == AnomalyKind::PeriodBreak && (a.magnitude < 2.0 || self.periods.is_empty()) {
                return Err(cfg(
                    "anomalies",
                    format!("`{a}` needs a base period and a replacement period >= 2"),
                ));
            }
        }
        Ok(())
    }
}

/// Generated series plus the merged anomaly intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub series: MultivariateSeries,
    pub intervals: Vec<Range<usize>>,
    pub warnings: Vec<String>,
}

/// Union of the intervals, sorted; also reports which inputs overlapped.
pub fn merge_intervals(mut intervals: Vec<Range<usize>>) -> (Vec<Range<usize>>, Vec<String>) {
    intervals.sort_by_key(|r| (r.start, r.end));
    let mut merged: Vec<Range<usize>> = Vec::new();
    let mut warnings = Vec::new();
    for r in intervals {
        match merged.last_mut() {
            Some(last) if r.start < last.end => {
                warnings.push(format!("anomaly interval {r:?} overlaps {last:?}; merged"));
                last.end = last.end.max(r.end);
            }
            _ => merged.push(r),
        }
    }
    (merged, warnings)
}

pub fn generate_with_report(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (len, dims) = (config.length, config.dims);
    let phases: Vec<Vec<f64>> = (0..dims)
        .map(|_| config.periods.iter().map(|_| rng.random::<f64>() * 2.0 * PI).collect())
        .collect();
    let strongest =
        (0..config.periods.len()).max_by(|&a, &b| config.amplitudes[a].abs().total_cmp(&config.amplitudes[b].abs()));

    // replacement period for the strongest component, per timestep
    let mut replaced: Vec<Option<f64>> = vec![None; len];
    for a in config.anomalies.iter().filter(|a| a.kind == AnomalyKind::PeriodBreak) {
        for slot in &mut replaced[a.interval()] {
            *slot = Some(a.magnitude);
        }
    }

    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut values = vec![0.0; len * dims];
    for t in 0..len {
        for d in 0..dims {
            let mut v = 0.0;
            for (i, (&p, &amp)) in config.periods.iter().zip(&config.amplitudes).enumerate() {
                let period = match replaced[t] {
                    Some(q) if Some(i) == strongest => q,
                    _ => p as f64,
                };
                v += amp * (2.0 * PI * t as f64 / period + phases[d][i]).sin();
            }
            values[t * dims + d] = v + noise.sample(&mut rng);
        }
    }
    for a in &config.anomalies {
        if matches!(a.kind, AnomalyKind::Spike | AnomalyKind::LevelShift) {
            for t in a.interval() {
                for d in 0..dims {
                    values[t * dims + d] += a.magnitude;
                }
            }
        }
    }
    let (intervals, warnings) = merge_intervals(config.anomalies.iter().map(|a| a.interval()).collect());
    let mut labels = vec![0u8; len];
    for r in &intervals {
        labels[r.clone()].fill(1);
    }
    let series = MultivariateSeries::new(values, dims, None, Some(labels), None)?;
    Ok(SynthOutput {
        series,
        intervals,
        warnings,
    })
}

/// Generate the series; overlap warnings go to stderr.
pub fn generate(config: &SynthConfig) -> Result<MultivariateSeries> {
    let out = generate_with_report(config)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    Ok(out.series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{discover_global_period, periodicity_strength};

    #[test]
    fn pure_sine_has_global_period_20() {
        let c = SynthConfig {
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let s = generate(&c).unwrap();
        assert_eq!(discover_global_period(&s).unwrap().period, 20);
        assert!(s.labels().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn spike_labels_exactly_its_interval() {
        let c = SynthConfig {
            anomalies: vec![AnomalySpec::new(AnomalyKind::Spike, 500, 1, 3.0)],
            ..SynthConfig::default()
        };
        let out = generate_with_report(&c).unwrap();
        let labels = out.series.labels().unwrap();
        assert_eq!(labels[500], 1);
        assert_eq!(labels.iter().map(|&l| l as usize).sum::<usize>(), 1);
        let clean = generate(&SynthConfig {
            anomalies: vec![],
            ..c.clone()
        })
        .unwrap();
        assert!((out.series.get(500, 0) - clean.get(500, 0) - 3.0).abs() < 1e-12);
        assert_eq!(out.series.get(499, 1), clean.get(499, 1));
    }

    #[test]
    fn period_break_lowers_periodicity_strength() {
        let c = SynthConfig {
            dims: 1,
            periods: vec![20, 5],
            amplitudes: vec![3.0, 1.0],
            noise_std: 0.1,
            anomalies: vec![AnomalySpec::new(AnomalyKind::PeriodBreak, 300, 60, 7.0)],
            ..SynthConfig::default()
        };
        let s = generate(&c).unwrap();
        let broken = periodicity_strength(&s.channel(0)[300..360], 20).unwrap();
        let normal = periodicity_strength(&s.channel(0)[600..660], 20).unwrap();
        assert!(broken < normal, "{broken} vs {normal}");
    }

    #[test]
    fn overlaps_merge_with_warning() {
        let c = SynthConfig {
            anomalies: vec![
                AnomalySpec::new(AnomalyKind::LevelShift, 100, 20, 2.0),
                AnomalySpec::new(AnomalyKind::Spike, 110, 15, 5.0),
                AnomalySpec::new(AnomalyKind::Spike, 400, 2, 5.0),
            ],
            ..SynthConfig::default()
        };
        let out = generate_with_report(&c).unwrap();
        assert_eq!(out.intervals, vec![100..125, 400..402]);
        assert_eq!(out.warnings.len(), 1);
        let count: usize = out.series.labels().unwrap().iter().map(|&l| l as usize).sum();
        assert_eq!(count, 27);
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let c = SynthConfig {
            seed: 9,
            anomalies: vec!["period_break:50:30:7".parse().unwrap()],
            ..SynthConfig::default()
        };
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = SynthConfig { seed: 10, ..c.clone() };
        assert_ne!(generate(&c).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn anomaly_spec_text_roundtrip() {
        let a: AnomalySpec = "level_shift:12:30:-2.5".parse().unwrap();
        assert_eq!(a, AnomalySpec::new(AnomalyKind::LevelShift, 12, 30, -2.5));
        assert_eq!(a.to_string().parse::<AnomalySpec>().unwrap(), a);
        assert!("wobble:1:2:3".parse::<AnomalySpec>().is_err());
        assert!("spike:1:2".parse::<AnomalySpec>().is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let out_of_range = SynthConfig {
            length: 100,
            anomalies: vec![AnomalySpec::new(AnomalyKind::Spike, 99, 2, 1.0)],
            ..SynthConfig::default()
        };
        assert!(generate(&out_of_range).is_err());
        let short_period = SynthConfig {
            periods: vec![1],
            ..SynthConfig::default()
        };
        assert!(generate(&short_period).is_err());
        let mismatched = SynthConfig {
            amplitudes: vec![1.0, 2.0],
            ..SynthConfig::default()
        };
        assert!(generate(&mismatched).is_err());
    }
}
