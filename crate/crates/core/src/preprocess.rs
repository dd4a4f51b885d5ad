//! Cleaning and alignment of raw daily meter series.
//!
//! The chain is `detect_outliers -> interpolate -> smooth -> align -> deviation`.
//! Each step is a pure function; firms can be processed independently.

use chrono::{Duration, NaiveDate};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, mean, std_dev};

pub const DEFAULT_OUTLIER_WINDOW: usize = 15;
pub const DEFAULT_OUTLIER_K: f64 = 2.0;
pub const DEFAULT_INTERP_LOOKBACK: usize = 14;
pub const DEFAULT_SMOOTH_WINDOW: usize = 7;
pub const DEFAULT_SPAN: usize = 95;

/// Raw daily consumption for one firm. `None` marks a missing reading.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub firm_id: String,
    pub start: NaiveDate,
    pub values: Vec<Option<f64>>,
}

/// Daily consumption with every day populated.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSeries {
    pub firm_id: String,
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

/// Reference and test windows reindexed to offsets `-span..=span` around their base points.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub firm_id: String,
    pub span: usize,
    pub reference: Vec<f64>,
    pub test: Vec<f64>,
}

/// `y` at each offset: smoothed test minus smoothed reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSeries {
    pub firm_id: String,
    pub span: usize,
    pub y: Vec<f64>,
}

fn offsets_for(span: usize) -> impl Iterator<Item = i32> {
    let s = span as i32;
    -s..=s
}

fn check_values(firm_id: &str, start: NaiveDate, values: &[Option<f64>]) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NegativeValue {
                    firm_id: firm_id.to_string(),
                    date: start + Duration::days(i as i64),
                    value: v,
                });
            }
        }
    }
    Ok(())
}

impl RawSeries {
    pub fn new(
        firm_id: impl Into<String>,
        start: NaiveDate,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        let firm_id = firm_id.into();
        check_values(&firm_id, start, &values)?;
        Ok(Self {
            firm_id,
            start,
            values,
        })
    }

    /// Builds a series from dated readings, which must be sorted with a one-day step.
    pub fn from_dated(
        firm_id: impl Into<String>,
        readings: &[(NaiveDate, Option<f64>)],
    ) -> Result<Self> {
        let firm_id = firm_id.into();
        let Some(&(start, _)) = readings.first() else {
            return Err(Error::EmptySeries);
        };
        for (i, (date, _)) in readings.iter().enumerate() {
            if *date != start + Duration::days(i as i64) {
                return Err(Error::NonContiguous {
                    firm_id,
                    date: *date,
                });
            }
        }
        Self::new(firm_id, start, readings.iter().map(|r| r.1).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.values.len() as i64 - 1)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.values.len()).map(move |i| self.start + Duration::days(i as i64))
    }
}

impl CleanSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.values.len() as i64 - 1)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.values.len()).then_some(d as usize)
    }

    /// Value on `date`, if covered.
    pub fn at(&self, date: NaiveDate) -> Option<f64> {
        self.index_of(date).map(|i| self.values[i])
    }
}

impl AlignedPair {
    pub fn offsets(&self) -> impl Iterator<Item = i32> {
        offsets_for(self.span)
    }
}

impl DeviationSeries {
    pub fn new(firm_id: impl Into<String>, y: Vec<f64>) -> Result<Self> {
        if y.len().is_multiple_of(2) {
            return Err(Error::param("y", "length must be odd (2*span + 1)"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("y", "values must be finite"));
        }
        Ok(Self {
            firm_id: firm_id.into(),
            span: y.len() / 2,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn offsets(&self) -> impl Iterator<Item = i32> {
        offsets_for(self.span)
    }
}

/// Flags days whose value lies more than `k` standard deviations from the
/// mean of the centred window around them (the day itself excluded).
///
/// Missing days are never flagged; days with fewer than two valid
/// neighbours are left unflagged.
pub fn detect_outliers(series: &RawSeries, window_days: usize, k: f64) -> Result<Vec<bool>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if window_days < 3 || window_days.is_multiple_of(2) {
        return Err(Error::param("window_days", "must be odd and >= 3"));
    }
    if !(k > 0.0) {
        return Err(Error::param("k", "must be positive"));
    }
    let half = window_days / 2;
    let n = series.len();
    let mut mask = vec![false; n];
    let mut neighbours = Vec::with_capacity(window_days);
    for t in 0..n {
        let Some(value) = series.values[t] else {
            continue;
        };
        neighbours.clear();
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(n - 1);
        neighbours.extend(
            (lo..=hi)
                .filter(|&j| j != t)
                .filter_map(|j| series.values[j]),
        );
        if neighbours.len() < 2 {
            continue;
        }
        let m = mean(&neighbours).unwrap_or(0.0);
        let s = std_dev(&neighbours).unwrap_or(0.0);
        mask[t] = (value - m).abs() > k * s;
    }
    Ok(mask)
}

/// Fills missing and flagged days with the mean of up to 14 trailing valid days.
pub fn interpolate(series: &RawSeries, outlier_mask: &[bool]) -> Result<CleanSeries> {
    interpolate_with(series, outlier_mask, DEFAULT_INTERP_LOOKBACK)
}

/// As [`interpolate`] with a configurable lookback. When no valid day precedes
/// a gap, the leading `lookback` valid days after it are used instead.
pub fn interpolate_with(
    series: &RawSeries,
    outlier_mask: &[bool],
    lookback: usize,
) -> Result<CleanSeries> {
    if outlier_mask.len() != series.len() {
        return Err(Error::LengthMismatch {
            expected: series.len(),
            got: outlier_mask.len(),
        });
    }
    if lookback == 0 {
        return Err(Error::param("lookback", "must be >= 1"));
    }
    let valid: Vec<usize> = (0..series.len())
        .filter(|&i| series.values[i].is_some() && !outlier_mask[i])
        .collect();
    if valid.is_empty() {
        return Err(Error::NothingToInterpolate(series.firm_id.clone()));
    }
    let value = |i: usize| series.values[i].unwrap_or(0.0);
    let values = (0..series.len())
        .map(|t| {
            if let (Some(v), false) = (series.values[t], outlier_mask[t]) {
                return v;
            }
            // number of valid days strictly before t
            let before = valid.partition_point(|&i| i < t);
            let picked = if before > 0 {
                &valid[before.saturating_sub(lookback)..before]
            } else {
                &valid[..lookback.min(valid.len())]
            };
            compensated_sum(picked.iter().map(|&i| value(i))) / picked.len() as f64
        })
        .collect();
    Ok(CleanSeries {
        firm_id: series.firm_id.clone(),
        start: series.start,
        values,
    })
}

/// Trailing moving average; the first `window_days - 1` days use a shrunken window.
pub fn smooth(series: &CleanSeries, window_days: usize) -> Result<CleanSeries> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if window_days == 0 {
        return Err(Error::param("window_days", "must be >= 1"));
    }
    let values = (0..series.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window_days);
            let w = &series.values[lo..=t];
            compensated_sum(w.iter().copied()) / w.len() as f64
        })
        .collect();
    Ok(CleanSeries {
        firm_id: series.firm_id.clone(),
        start: series.start,
        values,
    })
}

fn window(series: &CleanSeries, base: NaiveDate, span: usize) -> Result<Vec<f64>> {
    let from = base - Duration::days(span as i64);
    let to = base + Duration::days(span as i64);
    let gap = |from, to| Error::CoverageGap {
        firm_id: series.firm_id.clone(),
        from,
        to,
    };
    if series.is_empty() {
        return Err(gap(from, to));
    }
    if series.start > from {
        return Err(gap(from, to.min(series.start - Duration::days(1))));
    }
    if series.end() < to {
        return Err(gap(from.max(series.end() + Duration::days(1)), to));
    }
    let i0 = (from - series.start).num_days() as usize;
    Ok(series.values[i0..=i0 + 2 * span].to_vec())
}

/// Reindexes both series so offset 0 falls on their respective base dates.
pub fn align(
    reference: &CleanSeries,
    test: &CleanSeries,
    ref_base: NaiveDate,
    test_base: NaiveDate,
    span: usize,
) -> Result<AlignedPair> {
    Ok(AlignedPair {
        firm_id: test.firm_id.clone(),
        span,
        reference: window(reference, ref_base, span)?,
        test: window(test, test_base, span)?,
    })
}

pub fn deviation(pair: &AlignedPair) -> DeviationSeries {
    DeviationSeries {
        firm_id: pair.firm_id.clone(),
        span: pair.span,
        y: pair
            .test
            .iter()
            .zip(&pair.reference)
            .map(|(t, r)| t - r)
            .collect(),
    }
}

/// Window and threshold settings for the cleaning chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub outlier_window: usize,
    pub outlier_k: f64,
    pub interp_lookback: usize,
    pub smooth_window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            outlier_window: DEFAULT_OUTLIER_WINDOW,
            outlier_k: DEFAULT_OUTLIER_K,
            interp_lookback: DEFAULT_INTERP_LOOKBACK,
            smooth_window: DEFAULT_SMOOTH_WINDOW,
        }
    }
}

/// Output of the full cleaning chain for one firm.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub clean: CleanSeries,
    pub deviation: DeviationSeries,
}

/// Runs outlier rejection, interpolation, smoothing, alignment and
/// differencing on one firm whose series spans both windows.
pub fn prepare(
    raw: &RawSeries,
    config: &PreprocessConfig,
    ref_base: NaiveDate,
    test_base: NaiveDate,
    span: usize,
) -> Result<Prepared> {
    let mask = detect_outliers(raw, config.outlier_window, config.outlier_k)?;
    let clean = interpolate_with(raw, &mask, config.interp_lookback)?;
    let smoothed = smooth(&clean, config.smooth_window)?;
    let pair = align(&smoothed, &smoothed, ref_base, test_base, span)?;
    Ok(Prepared {
        clean,
        deviation: deviation(&pair),
    })
}
