//! Ingestion, standardization, chronological splits, and sliding windows.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant-channel guard for standardization.
pub const MIN_STD: f64 = 1e-8;

const TIMESTAMP_COLUMNS: [&str; 3] = ["timestamp", "time", "t"];
const DEFAULT_LABEL_COLUMN: &str = "label";

/// A `T_l x D` real-valued sequence, stored row-major (time-major).
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateSeries {
    values: Vec<f64>,
    dims: usize,
    timestamps: Vec<i64>,
    labels: Option<Vec<u8>>,
    dim_names: Vec<String>,
}

impl MultivariateSeries {
    pub fn new(
        values: Vec<f64>,
        dims: usize,
        timestamps: Option<Vec<i64>>,
        labels: Option<Vec<u8>>,
        dim_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Schema("series needs at least one data column".into()));
        }
        if values.is_empty() || !values.len().is_multiple_of(dims) {
            return Err(Error::Validation(format!(
                "{} values do not form rows of {dims} columns",
                values.len()
            )));
        }
        let len = values.len() / dims;
        let timestamps = timestamps.unwrap_or_else(|| (0..len as i64).collect());
        if timestamps.len() != len {
            return Err(Error::Validation(format!(
                "{} timestamps for {len} rows",
                timestamps.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at row {}",
                i + 1
            )));
        }
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(Error::Validation(format!("{} labels for {len} rows", l.len())));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Validation("labels must be 0 or 1".into()));
            }
        }
        let dim_names = dim_names.unwrap_or_else(|| (0..dims).map(|d| format!("x{d}")).collect());
        if dim_names.len() != dims {
            return Err(Error::Schema(format!("{} names for {dims} columns", dim_names.len())));
        }
        Ok(Self {
            values,
            dims,
            timestamps,
            labels,
            dim_names,
        })
    }

    /// Single-channel series with synthetic timestamps.
    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1, None, None, None)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dims + d]
    }

    pub fn channel(&self, d: usize) -> Vec<f64> {
        self.values.iter().skip(d).step_by(self.dims).copied().collect()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.len() || l.iter().any(|&v| v > 1) {
                return Err(Error::Validation("labels must be 0/1 with one per row".into()));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Contiguous sub-series over a row range.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {range:?} outside series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            values: self.values[range.start * self.dims..range.end * self.dims].to_vec(),
            dims: self.dims,
            timestamps: self.timestamps[range.clone()].to_vec(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
            dim_names: self.dim_names.clone(),
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.dim_names.iter().cloned());
        if self.labels.is_some() {
            header.push(DEFAULT_LABEL_COLUMN.into());
        }
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![self.timestamps[t].to_string()];
            rec.extend(self.row(t).iter().map(|v| format!("{v}")));
            if let Some(l) = &self.labels {
                rec.push(l[t].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn parse_timestamp(field: &str, line: usize) -> Result<i64> {
    if let Ok(v) = field.trim().parse::<i64>() {
        return Ok(v);
    }
    chrono::DateTime::parse_from_rfc3339(field.trim())
        .map(|dt| dt.timestamp())
        .map_err(|_| Error::Parse {
            line,
            message: format!("timestamp `{field}` is neither an integer nor RFC3339"),
        })
}

/// Load a series from a header-row CSV.
///
/// The first column is taken as timestamps when it is named `timestamp`,
/// `time` or `t`. The label column defaults to `label`.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<MultivariateSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: Option<&str>) -> Result<MultivariateSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let ts_col = headers
        .first()
        .filter(|h| TIMESTAMP_COLUMNS.contains(&h.to_ascii_lowercase().as_str()))
        .map(|_| 0);
    let label_name = label_column.unwrap_or(DEFAULT_LABEL_COLUMN);
    let label_col = headers.iter().position(|h| h == label_name);
    if label_column.is_some() && label_col.is_none() {
        return Err(Error::Schema(format!("label column `{label_name}` not found")));
    }
    let data_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| Some(i) != ts_col && Some(i) != label_col)
        .collect();
    if data_cols.is_empty() {
        return Err(Error::Schema("no numeric data columns".into()));
    }

    let mut values = Vec::new();
    let mut timestamps = ts_col.map(|_| Vec::new());
    let mut labels = label_col.map(|_| Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for &c in &data_cols {
            let v: f64 = rec[c].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: `{}` is not a number", headers[c], &rec[c]),
            })?;
            values.push(v);
        }
        if let (Some(ts), Some(c)) = (timestamps.as_mut(), ts_col) {
            ts.push(parse_timestamp(&rec[c], line)?);
        }
        if let (Some(ls), Some(c)) = (labels.as_mut(), label_col) {
            let v: u8 = match rec[c].trim() {
                "0" | "0.0" => 0,
                "1" | "1.0" => 1,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("label `{other}` is not 0 or 1"),
                    })
                }
            };
            ls.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Validation("CSV has no data rows".into()));
    }
    let names = data_cols.iter().map(|&c| headers[c].clone()).collect();
    MultivariateSeries::new(values, data_cols.len(), timestamps, labels, Some(names))
}

/// Chronological train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self> {
        let s = Self {
            train_frac,
            val_frac,
            test_frac,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train_frac <= 0.0 {
            return Err(Error::InvalidArgument(format!("bad split fractions {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions {fr:?} do not sum to 1"
            )));
        }
        Ok(())
    }

    /// Contiguous, ordered ranges. The test split absorbs rounding.
    pub fn ranges(&self, len: usize) -> SplitRanges {
        let train = ((len as f64 * self.train_frac).floor() as usize).min(len);
        let val = ((len as f64 * self.val_frac).floor() as usize).min(len - train);
        SplitRanges {
            train: 0..train,
            val: train..train + val,
            test: train + val..len,
        }
    }
}

/// Per-dimension affine standardization learned from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    /// Population statistics over `rows` of `series`.
    pub fn fit(series: &MultivariateSeries, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > series.len() {
            return Err(Error::Validation("empty training split".into()));
        }
        let n = rows.len() as f64;
        let d = series.dims();
        let mut mean = vec![0.0; d];
        for t in rows.clone() {
            for (m, v) in mean.iter_mut().zip(series.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for t in rows {
            for ((s, v), m) in var.iter_mut().zip(series.row(t)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, series: &MultivariateSeries) -> Result<MultivariateSeries> {
        if series.dims() != self.mean.len() {
            return Err(Error::Shape {
                op: "standardize",
                left: vec![series.dims()],
                right: vec![self.mean.len()],
            });
        }
        let d = series.dims();
        let values = series
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        let mut out = series.clone();
        out.values = values;
        Ok(out)
    }
}

/// Standardize with statistics computed on the training split only.
pub fn standardize(series: &MultivariateSeries, split: &SplitSpec) -> Result<(MultivariateSeries, Standardization)> {
    let ranges = split.ranges(series.len());
    let stats = Standardization::fit(series, ranges.train)?;
    Ok((stats.apply(series)?, stats))
}

/// `B x T x D` windows cut from one series.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    data: Vec<f64>,
    window_len: usize,
    dims: usize,
    starts: Vec<usize>,
    stride: usize,
}

impl WindowBatch {
    pub fn from_windows(windows: Vec<Vec<f64>>, window_len: usize, dims: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(windows.len() * window_len * dims);
        for w in &windows {
            if w.len() != window_len * dims {
                return Err(Error::Shape {
                    op: "window",
                    left: vec![w.len()],
                    right: vec![window_len, dims],
                });
            }
            data.extend_from_slice(w);
        }
        Ok(Self {
            data,
            window_len,
            dims,
            starts: (0..windows.len()).map(|i| i * window_len).collect(),
            stride: window_len,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Row-major `T x D` slice of window `i`.
    pub fn window(&self, i: usize) -> &[f64] {
        let n = self.window_len * self.dims;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.window_len * self.dims);
        for &i in indices {
            data.extend_from_slice(self.window(i));
        }
        Self {
            data,
            window_len: self.window_len,
            dims: self.dims,
            starts: indices.iter().map(|&i| self.starts[i]).collect(),
            stride: self.stride,
        }
    }
}

/// Cut windows of length `window_len` every `stride` steps.
pub fn make_windows(series: &MultivariateSeries, window_len: usize, stride: usize) -> Result<WindowBatch> {
    if stride == 0 || window_len == 0 {
        return Err(Error::InvalidArgument(
            "window length and stride must be positive".into(),
        ));
    }
    if window_len > series.len() {
        return Err(Error::InvalidArgument(format!(
            "window length {window_len} exceeds series length {}",
            series.len()
        )));
    }
    let d = series.dims();
    let starts: Vec<usize> = (0..=series.len() - window_len).step_by(stride).collect();
    let mut data = Vec::with_capacity(starts.len() * window_len * d);
    for &s in &starts {
        data.extend_from_slice(&series.values()[s * d..(s + window_len) * d]);
    }
    Ok(WindowBatch {
        data,
        window_len,
        dims: d,
        starts,
        stride,
    })
}
