//! Series ingestion, min-max scaling, chronological splitting and
//! sliding-window framing.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A univariate series with strictly increasing millisecond timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    timestamps: Vec<i64>,
    values: Vec<f64>,
}

impl RawSeries {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Data(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(RawSeries { timestamps, values })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `timestamp,value` CSV with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["timestamp", "value"])?;
        for (t, v) in self.timestamps.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Result of reading a CSV export.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub series: RawSeries,
    /// Rows skipped because the timestamp or value did not parse.
    pub dropped_rows: usize,
}

/// Reads a headed, comma-delimited CSV and sorts it by timestamp.
pub fn ingest_csv(path: &Path, value_column: &str, timestamp_column: &str) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let value_idx = find(value_column)?;
    let ts_idx = find(timestamp_column)?;

    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        let ts = record
            .get(ts_idx)
            .and_then(|s| s.trim().parse::<i64>().ok());
        let value = record
            .get(value_idx)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite());
        match (ts, value) {
            (Some(t), Some(v)) => rows.push((t, v)),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} unparseable row(s)", path.display());
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no usable rows", path.display())));
    }
    rows.sort_by_key(|&(t, _)| t);
    let (timestamps, values) = rows.into_iter().unzip();
    Ok(Ingested {
        series: RawSeries::new(timestamps, values)?,
        dropped_rows: dropped,
    })
}

/// Min-max scaling bounds, fit on training values only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: f64,
    pub max: f64,
}

pub fn fit_scaler(train_values: &[f64]) -> Result<ScalerParams> {
    if train_values.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit scaler on no values".into(),
        ));
    }
    let (min, max) = train_values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::NonFinite("scaler input".into()));
    }
    Ok(ScalerParams { min, max })
}

impl ScalerParams {
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    /// Maps `min` to 0 and `max` to 1. A constant training range maps
    /// everything to 0.5.
    pub fn apply(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, s: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            self.min + s * (self.max - self.min)
        }
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn invert_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.invert(v)).collect()
    }
}

/// First `⌊fraction·len⌋` points for training, the rest for testing.
pub fn chrono_split(series: &RawSeries, train_fraction: f64) -> Result<(RawSeries, RawSeries)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::Data(format!("series of length {n} cannot be split")));
    }
    let cut = (train_fraction * n as f64).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::Data(format!(
            "fraction {train_fraction} of {n} points leaves an empty split"
        )));
    }
    let part = |r: std::ops::Range<usize>| RawSeries {
        timestamps: series.timestamps[r.clone()].to_vec(),
        values: series.values[r].to_vec(),
    };
    Ok((part(0..cut), part(cut..n)))
}

/// Supervised samples `(X_i, y_i)` cut from one series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub x: Vec<Tensor>,
    pub y: Vec<f64>,
    /// Position of each window's first element in the source series.
    pub origin_index: Vec<usize>,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn timesteps(&self) -> usize {
        self.x.first().map_or(0, |t| t.shape()[0])
    }

    /// The samples at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<TimeSeriesDataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "sample index {bad} out of range for {} samples",
                self.len()
            )));
        }
        Ok(TimeSeriesDataset {
            x: indices.iter().map(|&i| self.x[i].clone()).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            origin_index: indices.iter().map(|&i| self.origin_index[i]).collect(),
        })
    }
}

/// `X_i = values[i..i+window]`, `y_i = values[i+window]`.
pub fn make_windows(values: &[f64], window: usize) -> Result<TimeSeriesDataset> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if values.len() <= window {
        return Err(Error::Data(format!(
            "series of length {} is too short for window {window}",
            values.len()
        )));
    }
    let n = values.len() - window;
    let x = (0..n)
        .map(|i| Tensor::column(&values[i..i + window]))
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeSeriesDataset {
        x,
        y: values[window..].to_vec(),
        origin_index: (0..n).collect(),
    })
}

/// Scaled, split and windowed data ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub scaler: ScalerParams,
    pub train_series: RawSeries,
    pub test_series: RawSeries,
    pub train: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

/// Splits chronologically, fits the scaler on the training part and windows
/// each part separately, so no window straddles the boundary.
pub fn prepare(series: &RawSeries, train_fraction: f64, window: usize) -> Result<PreparedData> {
    let (train_series, test_series) = chrono_split(series, train_fraction)?;
    let scaler = fit_scaler(train_series.values())?;
    let train = make_windows(&scaler.apply_all(train_series.values()), window)?;
    let mut test = make_windows(&scaler.apply_all(test_series.values()), window)?;
    for o in &mut test.origin_index {
        *o += train_series.len();
    }
    Ok(PreparedData {
        scaler,
        train_series,
        test_series,
        train,
        test,
    })
}

/// Shape of a synthetic traffic-like series: a daily sinusoid whose
/// amplitude is modulated weekly, plus Gaussian noise and sparse spikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthProfile {
    pub base: f64,
    pub daily_amplitude: f64,
    /// Samples per day.
    pub daily_period: f64,
    /// Relative depth of the weekly modulation.
    pub weekly_depth: f64,
    /// Samples per week.
    pub weekly_period: f64,
    pub noise_std: f64,
    /// Per-sample probability of a spike.
    pub spike_rate: f64,
    pub spike_magnitude: f64,
    pub start_ms: i64,
    pub step_ms: i64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        // ten-minute sampling
        SynthProfile {
            base: 100.0,
            daily_amplitude: 40.0,
            daily_period: 144.0,
            weekly_depth: 0.3,
            weekly_period: 1008.0,
            noise_std: 4.0,
            spike_rate: 0.005,
            spike_magnitude: 60.0,
            start_ms: 1_383_260_400_000,
            step_ms: 600_000,
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.daily_period > 0.0
            && self.weekly_period > 0.0
            && self.noise_std >= 0.0
            && (0.0..=1.0).contains(&self.spike_rate)
            && self.step_ms > 0
            && [
                self.base,
                self.daily_amplitude,
                self.weekly_depth,
                self.spike_magnitude,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid synthetic profile {self:?}"
            )))
        }
    }

    /// Noise-free, spike-free value at index `t`.
    pub fn clean_value(&self, t: usize) -> f64 {
        let t = t as f64;
        let envelope = 1.0 + self.weekly_depth * (TAU * t / self.weekly_period).sin();
        self.base + self.daily_amplitude * envelope * (TAU * t / self.daily_period).sin()
    }
}

/// RNG stream ids used by the synthetic generator. All three streams share
/// the user seed.
pub mod synth_streams {
    pub const NOISE: u64 = 0;
    /// One uniform draw per index; a spike occurs when it falls below the rate.
    pub const SPIKE_OCCURRENCE: u64 = 1;
    pub const SPIKE_SIZE: u64 = 2;
}

/// A generated series together with where its spikes landed.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub series: RawSeries,
    pub spike_indices: Vec<usize>,
}

pub fn synth_series(seed: u64, length: usize, profile: &SynthProfile) -> Result<RawSeries> {
    Ok(synth_series_traced(seed, length, profile)?.series)
}

pub fn synth_series_traced(
    seed: u64,
    length: usize,
    profile: &SynthProfile,
) -> Result<SynthOutput> {
    if length == 0 {
        return Err(Error::InvalidArgument(
            "synthetic length must be positive".into(),
        ));
    }
    profile.validate()?;
    let stream = |id| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    };
    let mut noise_rng = stream(synth_streams::NOISE);
    let mut spike_rng = stream(synth_streams::SPIKE_OCCURRENCE);
    let mut size_rng = stream(synth_streams::SPIKE_SIZE);
    let noise = (profile.noise_std > 0.0)
        .then(|| Normal::new(0.0, profile.noise_std).expect("validated std"));

    let mut values = Vec::with_capacity(length);
    let mut spike_indices = Vec::new();
    for t in 0..length {
        let mut v = profile.clean_value(t);
        if let Some(n) = &noise {
            v += n.sample(&mut noise_rng);
        }
        let u: f64 = spike_rng.random();
        if u < profile.spike_rate {
            v += profile.spike_magnitude * (0.5 + size_rng.random::<f64>());
            spike_indices.push(t);
        }
        values.push(v);
    }
    let timestamps = (0..length as i64)
        .map(|t| profile.start_ms + t * profile.step_ms)
        .collect();
    Ok(SynthOutput {
        series: RawSeries::new(timestamps, values)?,
        spike_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_well_formed() {
        let f = write_tmp("ts,activity\n1,0.5\n2,0.7\n3,0.1\n");
        let got = ingest_csv(f.path(), "activity", "ts").unwrap();
        assert_eq!(got.series.len(), 3);
        assert_eq!(got.dropped_rows, 0);
        assert_eq!(got.series.values(), &[0.5, 0.7, 0.1]);
    }

    #[test]
    fn ingest_sorts_by_timestamp() {
        let f = write_tmp("value,timestamp\n3.0,30\n1.0,10\n2.0,20\n");
        let got = ingest_csv(f.path(), "value", "timestamp").unwrap();
        assert_eq!(got.series.timestamps(), &[10, 20, 30]);
        assert_eq!(got.series.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn ingest_drops_corrupt_rows() {
        let mut s = String::from("timestamp,value\n");
        for i in 0..10 {
            if i == 4 {
                s.push_str("4,oops\n");
            } else {
                s.push_str(&format!("{i},{}\n", i as f64 * 1.5));
            }
        }
        let got = ingest_csv(write_tmp(&s).path(), "value", "timestamp").unwrap();
        assert_eq!(got.series.len(), 9);
        assert_eq!(got.dropped_rows, 1);
    }

    #[test]
    fn ingest_errors() {
        let f = write_tmp("timestamp,value\n1,2\n");
        assert!(matches!(
            ingest_csv(f.path(), "missing", "timestamp"),
            Err(Error::MissingColumn { .. })
        ));
        let empty = write_tmp("timestamp,value\n1,x\n");
        assert!(matches!(
            ingest_csv(empty.path(), "value", "timestamp"),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            ingest_csv(Path::new("/nonexistent/x.csv"), "value", "timestamp"),
            Err(Error::Io { .. })
        ));
        let dup = write_tmp("timestamp,value\n1,2\n1,3\n");
        assert!(ingest_csv(dup.path(), "value", "timestamp").is_err());
    }

    #[test]
    fn scaler_examples() {
        let s = fit_scaler(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(s.apply_all(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        let c = fit_scaler(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(c.apply_all(&[5.0, 5.0, 5.0]), vec![0.5; 3]);
        assert!(fit_scaler(&[]).is_err());
    }

    #[test]
    fn split_examples() {
        let s = RawSeries::new((0..10).collect(), (0..10).map(f64::from).collect()).unwrap();
        let (a, b) = chrono_split(&s, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let joined: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
        assert_eq!(joined, s.values());

        let s5 = RawSeries::new((0..5).collect(), vec![1.0; 5]).unwrap();
        let (a, b) = chrono_split(&s5, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (4, 1));

        let one = RawSeries::new(vec![0], vec![1.0]).unwrap();
        assert!(chrono_split(&one, 0.8).is_err());
        assert!(chrono_split(&s, 1.0).is_err());
        assert!(chrono_split(&s, 0.0).is_err());
    }

    #[test]
    fn window_examples() {
        let d = make_windows(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let xs: Vec<Vec<f64>> = d.x.iter().map(|t| t.values().to_vec()).collect();
        assert_eq!(xs, vec![vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(d.y, vec![2.0, 3.0, 4.0]);
        assert_eq!(d.x[0].shape(), &[1, 1]);

        let d = make_windows(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let xs: Vec<Vec<f64>> = d.x.iter().map(|t| t.values().to_vec()).collect();
        assert_eq!(xs, vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
        assert_eq!(d.y, vec![3.0, 4.0]);

        assert!(make_windows(&[1.0], 1).is_err());
        assert!(make_windows(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthProfile::default();
        assert_eq!(
            synth_series(3, 500, &p).unwrap(),
            synth_series(3, 500, &p).unwrap()
        );
        assert_ne!(
            synth_series(3, 500, &p).unwrap(),
            synth_series(4, 500, &p).unwrap()
        );
        assert!(synth_series(3, 0, &p).is_err());
    }

    #[test]
    fn synth_degenerate_profile_is_closed_form() {
        let p = SynthProfile {
            noise_std: 0.0,
            spike_rate: 0.0,
            ..SynthProfile::default()
        };
        let s = synth_series(9, 2000, &p).unwrap();
        for (t, &v) in s.values().iter().enumerate() {
            let tf = t as f64;
            let expected = 100.0
                + 40.0
                    * (1.0 + 0.3 * (2.0 * std::f64::consts::PI * tf / 1008.0).sin())
                    * (2.0 * std::f64::consts::PI * tf / 144.0).sin();
            assert!((v - expected).abs() < 1e-9, "index {t}");
        }
    }
}
