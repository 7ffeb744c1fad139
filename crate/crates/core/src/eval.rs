//! Pointwise score alignment, AUROC, and report files.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Detector, ScoredWindow};
use crate::penf::half_log_two_pi;
use crate::series::{make_windows, MultivariateSeries};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidArgument(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Max => "max",
        })
    }
}

/// Per-timestep scores and how many windows covered each step. Steps no
/// window reached carry the nearest covered score and zero coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyScoreSeries {
    pub scores: Vec<f64>,
    pub coverage: Vec<usize>,
}

pub fn window_scores_to_points(
    per_step: &[Vec<f64>],
    starts: &[usize],
    len: usize,
    aggregation: Aggregation,
) -> Result<AnomalyScoreSeries> {
    if per_step.len() != starts.len() {
        return Err(Error::Shape {
            op: "window_scores_to_points",
            left: vec![per_step.len()],
            right: vec![starts.len()],
        });
    }
    let mut acc = vec![
        match aggregation {
            Aggregation::Mean => 0.0,
            Aggregation::Max => f64::NEG_INFINITY,
        };
        len
    ];
    let mut coverage = vec![0usize; len];
    for (scores, &s) in per_step.iter().zip(starts) {
        if s + scores.len() > len {
            return Err(Error::InvalidArgument(format!(
                "window at {s} of length {} runs past the series end {len}",
                scores.len()
            )));
        }
        for (i, &v) in scores.iter().enumerate() {
            let t = s + i;
            match aggregation {
                Aggregation::Mean => acc[t] += v,
                Aggregation::Max => acc[t] = acc[t].max(v),
            }
            coverage[t] += 1;
        }
    }
    let covered: Vec<usize> = (0..len).filter(|&t| coverage[t] > 0).collect();
    if covered.is_empty() {
        return Err(Error::InvalidArgument("no timestep is covered by a window".into()));
    }
    let mut scores = vec![0.0; len];
    for &t in &covered {
        scores[t] = match aggregation {
            Aggregation::Mean => acc[t] / coverage[t] as f64,
            Aggregation::Max => acc[t],
        };
    }
    // nearest covered neighbour, ties to the earlier one
    for t in (0..len).filter(|&t| coverage[t] == 0) {
        let pos = covered.partition_point(|&c| c < t);
        let best = match (pos.checked_sub(1).map(|i| covered[i]), covered.get(pos)) {
            (Some(l), Some(&r)) => {
                if t - l <= r - t {
                    l
                } else {
                    r
                }
            }
            (Some(l), None) => l,
            (None, Some(&r)) => r,
            (None, None) => unreachable!("covered is non-empty"),
        };
        scores[t] = scores[best];
    }
    Ok(AnomalyScoreSeries { scores, coverage })
}

/// Rank-based AUROC with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "auroc",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "auroc needs at least one positive and one negative label".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps midranks integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank2_sum += mid2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Pointwise identity-flow score `0.5 |x_t|^2 + (D/2) log 2 pi`.
pub fn identity_flow_scores(series: &MultivariateSeries, range: Range<usize>) -> Vec<f64> {
    let d = series.dims() as f64;
    range
        .map(|t| 0.5 * series.row(t).iter().map(|v| v * v).sum::<f64>() + d * half_log_two_pi())
        .collect()
}

/// Scores for one contiguous part of a standardized series.
#[derive(Clone, Debug)]
pub struct ScoredRange {
    pub range: Range<usize>,
    pub points: AnomalyScoreSeries,
    /// Window starts are relative to `range.start`.
    pub windows: Vec<ScoredWindow>,
}

pub fn score_range(
    det: &Detector,
    standardized: &MultivariateSeries,
    range: Range<usize>,
    stride: usize,
    aggregation: Aggregation,
) -> Result<ScoredRange> {
    let part = standardized.slice(range.clone())?;
    let batch = make_windows(&part, det.window_len(), stride)?;
    let windows = det.score(&batch)?;
    let per_step: Vec<Vec<f64>> = windows.iter().map(|w| w.score.per_step.clone()).collect();
    let points = window_scores_to_points(&per_step, batch.starts(), part.len(), aggregation)?;
    Ok(ScoredRange { range, points, windows })
}

/// One row of the per-timestep score file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub index: usize,
    pub timestamp: i64,
    pub score: f64,
    pub log_likelihood: f64,
    pub coverage: usize,
    pub label: Option<u8>,
}

/// One row of the period diagnostics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub window_start: usize,
    pub rank: usize,
    pub period: usize,
    pub amplitude_weight: f64,
    pub attention: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub count_normal: Option<usize>,
    pub count_anomalous: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anomalies: Option<usize>,
    pub score_mean: f64,
    pub score_max: f64,
    pub version: String,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

pub fn point_rows(scored: &ScoredRange, series: &MultivariateSeries) -> Vec<PointRow> {
    let labels = series.labels();
    scored
        .range
        .clone()
        .zip(scored.points.scores.iter().zip(&scored.points.coverage))
        .map(|(t, (&s, &c))| PointRow {
            index: t,
            timestamp: series.timestamps()[t],
            score: s,
            log_likelihood: -s,
            coverage: c,
            label: labels.map(|l| l[t]),
        })
        .collect()
}

pub fn diagnostic_rows(windows: &[ScoredWindow], offset: usize) -> Vec<DiagnosticRow> {
    windows
        .iter()
        .flat_map(|w| {
            w.periods.iter().enumerate().map(move |(rank, &p)| DiagnosticRow {
                window_start: offset + w.start,
                rank,
                period: p,
                amplitude_weight: w.amplitude[rank],
                attention: w.attention[rank],
            })
        })
        .collect()
}

/// Equal-width histogram of `scores`, split by label when labels exist.
pub fn histogram(scores: &[f64], labels: Option<&[u8]>, bins: usize) -> Result<Vec<HistogramRow>> {
    if scores.is_empty() || bins == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs scores and at least one bin".into(),
        ));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite("histogram scores".into()));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut rows: Vec<HistogramRow> = (0..bins)
        .map(|b| HistogramRow {
            bin_lo: lo + b as f64 * width,
            bin_hi: lo + (b + 1) as f64 * width,
            count: 0,
            count_normal: labels.map(|_| 0),
            count_anomalous: labels.map(|_| 0),
        })
        .collect();
    for (i, &s) in scores.iter().enumerate() {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        let row = &mut rows[b];
        row.count += 1;
        if let Some(l) = labels {
            let slot = if l[i] == 1 {
                &mut row.count_anomalous
            } else {
                &mut row.count_normal
            };
            *slot.as_mut().expect("labelled") += 1;
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[PointRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no scored points".into()));
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let labels: Option<Vec<u8>> = rows.iter().map(|r| r.label).collect();
    let (auroc, anomalies) = match &labels {
        Some(l) => {
            let pos = l.iter().filter(|&&v| v == 1).count();
            let a = if pos > 0 && pos < l.len() {
                Some(auroc(&scores, l)?)
            } else {
                None
            };
            (a, Some(pos))
        }
        None => (None, None),
    };
    Ok(Summary {
        auroc,
        points: rows.len(),
        anomalies,
        score_mean: scores.iter().sum::<f64>() / scores.len() as f64,
        score_max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        version: env!("CARGO_PKG_VERSION").to_string(),
        metadata: serde_json::Map::new(),
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_points(path: impl AsRef<Path>, rows: &[PointRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn write_diagnostics(path: impl AsRef<Path>, rows: &[DiagnosticRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn write_histogram(path: impl AsRef<Path>, rows: &[HistogramRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn write_summary(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<PointRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const SCORES_FILE: &str = "scores.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const HISTOGRAM_BINS: usize = 50;

/// Write the score, diagnostics, histogram, and summary files into `dir`.
pub fn emit_reports(
    dir: impl AsRef<Path>,
    points: &[PointRow],
    diagnostics: &[DiagnosticRow],
    metadata: serde_json::Map<String, serde_json::Value>,
) -> Result<Summary> {
    let dir = dir.as_ref();
    write_points(dir.join(SCORES_FILE), points)?;
    write_diagnostics(dir.join(DIAGNOSTICS_FILE), diagnostics)?;
    emit_evaluation(dir, points, metadata)
}

/// Histogram and summary only.
pub fn emit_evaluation(
    dir: impl AsRef<Path>,
    points: &[PointRow],
    metadata: serde_json::Map<String, serde_json::Value>,
) -> Result<Summary> {
    let dir = dir.as_ref();
    let scores: Vec<f64> = points.iter().map(|r| r.score).collect();
    let labels: Option<Vec<u8>> = points.iter().map(|r| r.label).collect();
    write_histogram(
        dir.join(HISTOGRAM_FILE),
        &histogram(&scores, labels.as_deref(), HISTOGRAM_BINS)?,
    )?;
    let mut summary = summarize(points)?;
    summary.metadata = metadata;
    write_summary(dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.9, 1.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[3.0; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert!(auroc(&[1.0, 2.0], &[1, 1]).is_err());
        assert!(auroc(&[1.0, 2.0], &[0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn auroc_matches_brute_force(
            data in prop::collection::vec((0u8..6, 0u8..2), 2..80)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 * 0.5).collect();
            let labels: Vec<u8> = data.iter().map(|&(_, l)| l).collect();
            let pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let a = auroc(&scores, &labels).unwrap();
            prop_assert!((a - brute_auroc(&scores, &labels)).abs() < 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((a + auroc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s * 3.0).exp()).collect();
            prop_assert_eq!(a, auroc(&warped, &labels).unwrap());
        }
    }

    #[test]
    fn disjoint_windows_pass_scores_through() {
        let per = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let out = window_scores_to_points(&per, &[0, 3], 6, Aggregation::Mean).unwrap();
        assert_eq!(out.scores, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(out.coverage, vec![1; 6]);
    }

    #[test]
    fn overlapping_windows_average() {
        let per = vec![vec![0.0, 1.0], vec![3.0, 0.0]];
        let out = window_scores_to_points(&per, &[0, 1], 3, Aggregation::Mean).unwrap();
        assert_eq!(out.scores[1], 2.0);
        let max = window_scores_to_points(&per, &[0, 1], 3, Aggregation::Max).unwrap();
        assert_eq!(max.scores[1], 3.0);
    }

    #[test]
    fn uncovered_edges_take_nearest_score() {
        let per = vec![vec![1.0, 2.0]];
        let out = window_scores_to_points(&per, &[2], 6, Aggregation::Mean).unwrap();
        assert_eq!(out.scores, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(out.coverage, vec![0, 0, 1, 1, 0, 0]);
        assert!(window_scores_to_points(&[], &[], 4, Aggregation::Mean).is_err());
    }

    #[test]
    fn alignment_conserves_window_mass() {
        let per: Vec<Vec<f64>> = (0..7)
            .map(|w| (0..5).map(|i| ((w * 5 + i) as f64 * 0.37).sin() + 2.0).collect())
            .collect();
        let starts: Vec<usize> = (0..7).map(|w| w * 2).collect();
        let out = window_scores_to_points(&per, &starts, 17, Aggregation::Mean).unwrap();
        let mass: f64 = out.scores.iter().zip(&out.coverage).map(|(s, &c)| s * c as f64).sum();
        let total: f64 = per.iter().flatten().sum();
        assert!((mass - total).abs() < 1e-9);
    }

    #[test]
    fn histogram_counts_every_point() {
        let scores: Vec<f64> = (0..97).map(|i| (i as f64).sqrt()).collect();
        let labels: Vec<u8> = (0..97).map(|i| u8::from(i % 7 == 0)).collect();
        let h = histogram(&scores, Some(&labels), 10).unwrap();
        assert_eq!(h.iter().map(|r| r.count).sum::<usize>(), 97);
        let anom: usize = h.iter().map(|r| r.count_anomalous.unwrap()).sum();
        assert_eq!(anom, labels.iter().filter(|&&l| l == 1).count());
        let plain = histogram(&scores, None, 10).unwrap();
        assert!(plain.iter().all(|r| r.count_normal.is_none()));
    }

    fn rows(labels: Option<&[u8]>) -> Vec<PointRow> {
        (0..6)
            .map(|i| PointRow {
                index: i,
                timestamp: i as i64,
                score: i as f64,
                log_likelihood: -(i as f64),
                coverage: 1,
                label: labels.map(|l| l[i]),
            })
            .collect()
    }

    #[test]
    fn reports_roundtrip_and_handle_missing_labels() {
        let dir = tempfile::tempdir().unwrap();
        let labelled = rows(Some(&[0, 0, 0, 0, 1, 1]));
        let diag = vec![DiagnosticRow {
            window_start: 0,
            rank: 0,
            period: 20,
            amplitude_weight: 1.0,
            attention: 0.5,
        }];
        let s = emit_reports(dir.path(), &labelled, &diag, serde_json::Map::new()).unwrap();
        assert_eq!(s.auroc, Some(1.0));
        let text = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["auroc"], 1.0);
        assert_eq!(read_points(dir.path().join(SCORES_FILE)).unwrap(), labelled);

        let s = emit_evaluation(dir.path(), &rows(None), serde_json::Map::new()).unwrap();
        assert_eq!(s.auroc, None);
        let text = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v.get("auroc").is_none());
        assert_eq!(read_points(dir.path().join(SCORES_FILE)).unwrap(), labelled);
    }

    #[test]
    fn unwritable_path_errors() {
        let err = write_summary("/nonexistent-dir/x/summary.json", &summarize(&rows(None)).unwrap());
        assert_eq!(err.unwrap_err().kind(), "io");
    }
}
