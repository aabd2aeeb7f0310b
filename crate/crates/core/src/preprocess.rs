//! Weekly-count preprocessing: `r(t) → x(t) → d(t) → y(t)`.
//!
//! * `x = log10(r + 1)` reduces skew,
//! * `d = x − M(-26, 26)[x]` removes the one-year running mean,
//! * `y = M(0, 5)[d]` damps intra-month variation.
//!
//! `M(n1, n2)` is the mean over the half-open offset window `[n1, n2)`, i.e.
//! `n2 - n1` samples weighted `1 / (n2 - n1)`. Near the series ends the window
//! is truncated and the mean is taken over the samples that exist.

use std::io::Write;
use std::ops::RangeInclusive;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawSeries;

pub const DETREND_WINDOW: (i64, i64) = (-26, 26);
pub const SMOOTH_WINDOW: (i64, i64) = (0, 5);

/// Shortest series `detrend` accepts: one year of weeks plus one.
pub const MIN_DETREND_LEN: usize = 53;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSeries {
    pub r: Vec<u64>,
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub y: Vec<f64>,
    /// Inclusive index range where the detrending mean has full support.
    pub valid_start: usize,
    pub valid_end: usize,
    /// Sample variance of `y` over the valid range.
    pub variance: f64,
    pub week_start: NaiveDate,
    pub region_id: Option<usize>,
}

impl ProcessedSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn valid_range(&self) -> RangeInclusive<usize> {
        self.valid_start..=self.valid_end
    }

    /// The analysis segment `y[valid_range]` and its first week index.
    pub fn segment(&self) -> (usize, &[f64]) {
        (self.valid_start, &self.y[self.valid_range()])
    }

    /// Stage dump with columns `week,r,x,d,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["week", "r", "x", "d", "y"])?;
        for t in 0..self.len() {
            w.write_record([
                t.to_string(),
                self.r[t].to_string(),
                self.x[t].to_string(),
                self.d[t].to_string(),
                self.y[t].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn log_transform(counts: &[u64]) -> Vec<f64> {
    counts.iter().map(|&c| (c as f64 + 1.0).log10()).collect()
}

/// `out(t) = mean{ x(t + n) : n1 <= n < n2, 0 <= t + n < N }`.
pub fn moving_average(x: &[f64], n1: i64, n2: i64) -> Result<Vec<f64>> {
    if n1 >= n2 {
        return Err(Error::param(format!(
            "moving-average window requires n1 < n2, got ({n1}, {n2})"
        )));
    }
    if x.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as i64;
    let out = (0..n)
        .map(|t| {
            let lo = (t + n1).max(0);
            let hi = (t + n2).min(n); // exclusive
            if lo >= hi {
                return f64::NAN;
            }
            let sum: f64 = x[lo as usize..hi as usize].iter().sum();
            sum / (hi - lo) as f64
        })
        .collect();
    Ok(out)
}

pub fn detrend(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < MIN_DETREND_LEN {
        return Err(Error::SeriesTooShort {
            needed: MIN_DETREND_LEN,
            got: x.len(),
        });
    }
    let trend = moving_average(x, DETREND_WINDOW.0, DETREND_WINDOW.1)?;
    Ok(x.iter().zip(&trend).map(|(v, m)| v - m).collect())
}

pub fn smooth(d: &[f64]) -> Result<Vec<f64>> {
    const MIN: usize = 6;
    if d.len() < MIN {
        return Err(Error::SeriesTooShort {
            needed: MIN,
            got: d.len(),
        });
    }
    moving_average(d, SMOOTH_WINDOW.0, SMOOTH_WINDOW.1)
}

/// Inclusive range where the ±26-week mean is fully supported.
pub fn valid_range(n: usize) -> Option<RangeInclusive<usize>> {
    (n >= MIN_DETREND_LEN).then(|| 26..=n - 27)
}

pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn pipeline(raw: &RawSeries) -> Result<ProcessedSeries> {
    let x = log_transform(&raw.counts);
    let d = detrend(&x)?;
    let y = smooth(&d)?;
    let range = valid_range(y.len()).expect("detrend checked the length");
    let variance = sample_variance(&y[range.clone()]);
    Ok(ProcessedSeries {
        r: raw.counts.clone(),
        x,
        d,
        y,
        valid_start: *range.start(),
        valid_end: *range.end(),
        variance,
        week_start: raw.week_start,
        region_id: raw.region_id,
    })
}
