//! Per-firm estimation fan-out and assembly of the index panel.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;

use crate::ecu::FirmDay;
use crate::error::{Error, Result};
use crate::hmm::{self, FilterOutput, FitOptions, FitReport, Regime};
use crate::preprocess::{prepare, CleanSeries, DeviationSeries, PreprocessConfig, RawSeries};
use crate::simgen::{firm_seed, SyntheticPanel};

/// One firm as read from the input panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmInput {
    pub series: RawSeries,
    pub sector_code: String,
    pub district_code: String,
}

impl From<&SyntheticPanel> for Vec<FirmInput> {
    fn from(panel: &SyntheticPanel) -> Self {
        panel
            .firms
            .iter()
            .map(|f| FirmInput {
                series: f.series.clone(),
                sector_code: f.sector_code.clone(),
                district_code: f.district_code.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub ref_base: NaiveDate,
    pub test_base: NaiveDate,
    pub span: usize,
    pub preprocess: PreprocessConfig,
    pub fit: FitOptions,
    pub seed: u64,
    /// 0 lets rayon pick.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ref_base: NaiveDate::from_ymd_opt(2019, 2, 4).expect("valid date"),
            test_base: NaiveDate::from_ymd_opt(2020, 1, 24).expect("valid date"),
            span: crate::preprocess::DEFAULT_SPAN,
            preprocess: PreprocessConfig::default(),
            fit: FitOptions::default(),
            seed: 0,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.span < 1 {
            return Err(Error::param("span", "must be >= 1"));
        }
        if !(self.fit.tol > 0.0) {
            return Err(Error::param("em_tol", "must be positive"));
        }
        if self.fit.max_iter == 0 {
            return Err(Error::param("em_max_iter", "must be >= 1"));
        }
        let p = &self.preprocess;
        if p.outlier_window < 3 || p.outlier_window.is_multiple_of(2) {
            return Err(Error::param("outlier_window", "must be odd and >= 3"));
        }
        if !(p.outlier_k > 0.0) {
            return Err(Error::param("outlier_k", "must be positive"));
        }
        if p.interp_lookback == 0 {
            return Err(Error::param("interp_lookback", "must be >= 1"));
        }
        if p.smooth_window == 0 {
            return Err(Error::param("smooth_window", "must be >= 1"));
        }
        Ok(())
    }

    pub fn offset_date(&self, offset: i32) -> NaiveDate {
        self.test_base + Duration::days(offset as i64)
    }
}

#[derive(Debug, Clone)]
pub struct FirmFit {
    pub firm_id: String,
    pub sector_code: String,
    pub district_code: String,
    pub deviation: DeviationSeries,
    /// Cleaned, unsmoothed test-window consumption per offset.
    pub test_kwh: Vec<f64>,
    /// Cleaned, unsmoothed reference-window consumption per offset.
    pub ref_kwh: Vec<f64>,
    pub report: FitReport,
    pub filter: FilterOutput,
}

impl FirmFit {
    /// Recessionary probabilities as they enter the index: zero for
    /// degenerate fits.
    pub fn index_mu_r(&self) -> Vec<f64> {
        if self.report.degenerate {
            vec![0.0; self.filter.filtered.len()]
        } else {
            self.filter.mu(Regime::Recessionary)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub firm_id: String,
    pub message: String,
}

fn window_of(clean: &CleanSeries, base: NaiveDate, span: usize) -> Vec<f64> {
    (-(span as i64)..=span as i64)
        .map(|d| clean.at(base + Duration::days(d)).unwrap_or(0.0))
        .collect()
}

pub fn fit_firm(input: &FirmInput, config: &PipelineConfig) -> Result<FirmFit> {
    let prepared = prepare(
        &input.series,
        &config.preprocess,
        config.ref_base,
        config.test_base,
        config.span,
    )?;
    let options = FitOptions {
        seed: firm_seed(config.seed, &input.series.firm_id),
        ..config.fit.clone()
    };
    let report = hmm::fit(&prepared.deviation.y, &options)?;
    let filter = hmm::forward_filter(&prepared.deviation.y, &report.model)?;
    Ok(FirmFit {
        firm_id: input.series.firm_id.clone(),
        sector_code: input.sector_code.clone(),
        district_code: input.district_code.clone(),
        test_kwh: window_of(&prepared.clean, config.test_base, config.span),
        ref_kwh: window_of(&prepared.clean, config.ref_base, config.span),
        deviation: prepared.deviation,
        report,
        filter,
    })
}

/// Fits every firm, in parallel when `workers != 1`. Results are sorted by
/// firm id; firms that fail are reported as diagnostics and skipped.
pub fn fit_panel(inputs: &[FirmInput], config: &PipelineConfig) -> Result<(Vec<FirmFit>, Vec<Diagnostic>)> {
    config.validate()?;
    let run = || -> Vec<std::result::Result<FirmFit, Diagnostic>> {
        inputs
            .par_iter()
            .map(|f| {
                fit_firm(f, config).map_err(|e| Diagnostic {
                    firm_id: f.series.firm_id.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    };
    let results = if config.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)
    };
    let mut fits = Vec::new();
    let mut diags = Vec::new();
    for r in results {
        match r {
            Ok(f) => fits.push(f),
            Err(d) => diags.push(d),
        }
    }
    fits.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
    diags.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
    Ok((fits, diags))
}

/// Flattens fitted firms into index records, one per firm and offset.
pub fn firm_days(fits: &[FirmFit], span: usize) -> Vec<FirmDay> {
    fits.iter()
        .flat_map(|f| {
            let mu = f.index_mu_r();
            (0..f.test_kwh.len()).map(move |i| FirmDay {
                firm_id: f.firm_id.clone(),
                offset: i as i32 - span as i32,
                ele: f.test_kwh[i],
                mu_r: mu[i],
                sector_code: f.sector_code.clone(),
                district_code: f.district_code.clone(),
            })
        })
        .collect()
}

/// Reference-window consumption summed over firms, per offset.
pub fn reference_totals(fits: &[FirmFit]) -> Vec<f64> {
    let n = fits.first().map_or(0, |f| f.ref_kwh.len());
    (0..n)
        .map(|i| crate::numeric::compensated_sum(fits.iter().map(|f| f.ref_kwh[i])))
        .collect()
}

/// Groups firms by sector code, in key order.
pub fn by_sector(fits: &[FirmFit]) -> BTreeMap<&str, Vec<&FirmFit>> {
    let mut m: BTreeMap<&str, Vec<&FirmFit>> = BTreeMap::new();
    for f in fits {
        m.entry(f.sector_code.as_str()).or_default().push(f);
    }
    m
}
