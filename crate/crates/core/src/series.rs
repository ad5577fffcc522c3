//! Piecewise-linear time series: ambient temperature and regulation signals.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row}: {reason}")]
    Invalid { path: String, row: usize, reason: String },
    #[error("{path}: series is empty")]
    Empty { path: String },
}

/// Samples `(t, y)` with strictly increasing `t` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, SeriesError> {
        let path = "<memory>".to_string();
        if times.is_empty() {
            return Err(SeriesError::Empty { path });
        }
        if times.len() != values.len() {
            return Err(SeriesError::Invalid {
                path,
                row: times.len().min(values.len()),
                reason: "time and value columns differ in length".into(),
            });
        }
        check_samples(&path, &times, &values)?;
        Ok(Self { times, values })
    }

    /// Constant value over all time.
    pub fn constant(value: f64) -> Self {
        Self { times: vec![0.0], values: vec![value] }
    }

    /// Build from a function sampled at `step` over `[0, duration]`.
    pub fn sampled(duration: f64, step: f64, f: impl Fn(f64) -> f64) -> Self {
        let n = (duration / step).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self { times, values }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Linear interpolation; values are held constant outside the sampled range.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let hi = self.times.partition_point(|&x| x <= t);
        let lo = hi - 1;
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let w = (t - t0) / (t1 - t0);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }

    /// Shift the time axis so that `t_new = t_old + offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t + offset).collect(),
            values: self.values.clone(),
        }
    }

    /// Ambient temperature CSV with columns `time_s,temp_c`.
    pub fn load_weather(path: &Path) -> Result<Self, SeriesError> {
        #[derive(Deserialize)]
        struct Row {
            time_s: f64,
            temp_c: f64,
        }
        let rows: Vec<Row> = read_rows(path)?;
        Self::from_rows(path, rows.into_iter().map(|r| (r.time_s, r.temp_c)))
    }

    /// Regulation signal CSV with columns `time_s,signal_pu`.
    pub fn load_signal(path: &Path) -> Result<Self, SeriesError> {
        #[derive(Deserialize)]
        struct Row {
            time_s: f64,
            signal_pu: f64,
        }
        let rows: Vec<Row> = read_rows(path)?;
        Self::from_rows(path, rows.into_iter().map(|r| (r.time_s, r.signal_pu)))
    }

    fn from_rows(path: &Path, rows: impl Iterator<Item = (f64, f64)>) -> Result<Self, SeriesError> {
        let (times, values): (Vec<f64>, Vec<f64>) = rows.unzip();
        let path = path.display().to_string();
        if times.is_empty() {
            return Err(SeriesError::Empty { path });
        }
        check_samples(&path, &times, &values)?;
        Ok(Self { times, values })
    }

    pub fn write_csv(&self, path: &Path, value_column: &str) -> Result<(), SeriesError> {
        let wrap = |source| SeriesError::Csv { path: path.display().to_string(), source };
        let mut w = csv::Writer::from_path(path).map_err(wrap)?;
        w.write_record(["time_s", value_column]).map_err(wrap)?;
        for (t, y) in self.times.iter().zip(&self.values) {
            w.write_record([format!("{t}"), format!("{y}")]).map_err(wrap)?;
        }
        w.flush().map_err(|e| wrap(e.into()))?;
        Ok(())
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SeriesError> {
    let wrap = |source| SeriesError::Csv { path: path.display().to_string(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(wrap)?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(wrap)
}

fn check_samples(path: &str, times: &[f64], values: &[f64]) -> Result<(), SeriesError> {
    for (row, (t, y)) in times.iter().zip(values).enumerate() {
        if !t.is_finite() || !y.is_finite() {
            return Err(SeriesError::Invalid {
                path: path.to_string(),
                row,
                reason: "non-finite sample".into(),
            });
        }
        if row > 0 && *t <= times[row - 1] {
            return Err(SeriesError::Invalid {
                path: path.to_string(),
                row,
                reason: "time_s must be strictly increasing".into(),
            });
        }
    }
    Ok(())
}
