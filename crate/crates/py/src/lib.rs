//! Python bindings: preprocessing, regime fitting and filtering, index
//! aggregation and the synthetic panel generator.

use chrono::NaiveDate;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ecu_core::ecu::{ecu_grouped, FirmDay as CoreFirmDay, GroupBy};
use ecu_core::hmm::{self, Regime};
use ecu_core::pipeline::{self, FirmInput, PipelineConfig};
use ecu_core::preprocess::{self, PreprocessConfig, RawSeries};
use ecu_core::simgen;

fn err(e: ecu_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn date(s: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| PyValueError::new_err(format!("`{s}`: {e}")))
}

#[pyclass(name = "RegimeParams", get_all, set_all, from_py_object)]
#[derive(Clone, Copy)]
pub struct PyRegimeParams {
    alpha: f64,
    beta: f64,
    sigma: f64,
}

#[pymethods]
impl PyRegimeParams {
    #[new]
    fn new(alpha: f64, beta: f64, sigma: f64) -> Self {
        Self { alpha, beta, sigma }
    }

    fn mean_at(&self, t: usize) -> f64 {
        self.core().mean_at(t)
    }

    fn __repr__(&self) -> String {
        format!("RegimeParams(alpha={}, beta={}, sigma={})", self.alpha, self.beta, self.sigma)
    }
}

impl PyRegimeParams {
    fn core(&self) -> hmm::RegimeParams {
        hmm::RegimeParams::new(self.alpha, self.beta, self.sigma)
    }
}

impl From<hmm::RegimeParams> for PyRegimeParams {
    fn from(p: hmm::RegimeParams) -> Self {
        Self::new(p.alpha, p.beta, p.sigma)
    }
}

/// Two-regime model; index 0 is prosperous, index 1 recessionary.
#[pyclass(name = "RegimeModel", get_all, set_all, from_py_object)]
#[derive(Clone)]
pub struct PyRegimeModel {
    q: [[f64; 2]; 2],
    prosperous: PyRegimeParams,
    recessionary: PyRegimeParams,
    pi0: [f64; 2],
}

#[pymethods]
impl PyRegimeModel {
    #[new]
    #[pyo3(signature = (q, prosperous, recessionary, pi0 = [0.5, 0.5]))]
    fn new(q: [[f64; 2]; 2], prosperous: PyRegimeParams, recessionary: PyRegimeParams, pi0: [f64; 2]) -> PyResult<Self> {
        let m = Self {
            q,
            prosperous,
            recessionary,
            pi0,
        };
        m.core().validate().map_err(err)?;
        Ok(m)
    }

    fn __repr__(&self) -> String {
        format!(
            "RegimeModel(q={:?}, prosperous={}, recessionary={}, pi0={:?})",
            self.q,
            self.prosperous.__repr__(),
            self.recessionary.__repr__(),
            self.pi0
        )
    }
}

impl PyRegimeModel {
    fn core(&self) -> hmm::RegimeModel {
        hmm::RegimeModel {
            q: self.q,
            params: [self.prosperous.core(), self.recessionary.core()],
            pi0: self.pi0,
        }
    }
}

impl From<hmm::RegimeModel> for PyRegimeModel {
    fn from(m: hmm::RegimeModel) -> Self {
        Self {
            q: m.q,
            prosperous: m.params[0].into(),
            recessionary: m.params[1].into(),
            pi0: m.pi0,
        }
    }
}

#[pyclass(name = "FilterOutput", get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFilterOutput {
    filtered: Vec<[f64; 2]>,
    predicted: Vec<[f64; 2]>,
    loglik: f64,
}

#[pymethods]
impl PyFilterOutput {
    /// Filtered recessionary probabilities.
    fn mu_r(&self) -> Vec<f64> {
        self.filtered.iter().map(|p| p[Regime::Recessionary as usize]).collect()
    }

    fn mu_p(&self) -> Vec<f64> {
        self.filtered.iter().map(|p| p[Regime::Prosperous as usize]).collect()
    }
}

impl From<hmm::FilterOutput> for PyFilterOutput {
    fn from(f: hmm::FilterOutput) -> Self {
        Self {
            filtered: f.filtered,
            predicted: f.predicted,
            loglik: f.loglik,
        }
    }
}

#[pyclass(name = "FitReport", get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFitReport {
    model: PyRegimeModel,
    iterations: usize,
    loglik_trace: Vec<f64>,
    converged: bool,
    degenerate: bool,
}

#[pymethods]
impl PyFitReport {
    #[getter]
    fn loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

impl From<hmm::FitReport> for PyFitReport {
    fn from(r: hmm::FitReport) -> Self {
        Self {
            model: r.model.into(),
            iterations: r.iterations,
            loglik_trace: r.loglik_trace,
            converged: r.converged,
            degenerate: r.degenerate,
        }
    }
}

/// One firm's daily series with its codes. `values` uses `None` for missing days.
#[pyclass(name = "Firm", get_all, set_all, from_py_object)]
#[derive(Clone)]
pub struct PyFirm {
    firm_id: String,
    start: String,
    values: Vec<Option<f64>>,
    sector_code: String,
    district_code: String,
    shock_depth: f64,
    shock_onset: Option<i32>,
}

#[pymethods]
impl PyFirm {
    #[new]
    #[pyo3(signature = (firm_id, start, values, sector_code, district_code))]
    fn new(firm_id: String, start: String, values: Vec<Option<f64>>, sector_code: String, district_code: String) -> PyResult<Self> {
        date(&start)?;
        Ok(Self {
            firm_id,
            start,
            values,
            sector_code,
            district_code,
            shock_depth: 0.0,
            shock_onset: None,
        })
    }

    fn __repr__(&self) -> String {
        format!("Firm({}, {}, {} days)", self.firm_id, self.sector_code, self.values.len())
    }
}

impl PyFirm {
    fn input(&self) -> PyResult<FirmInput> {
        Ok(FirmInput {
            series: RawSeries::new(self.firm_id.clone(), date(&self.start)?, self.values.clone()).map_err(err)?,
            sector_code: self.sector_code.clone(),
            district_code: self.district_code.clone(),
        })
    }
}

/// Per-firm pipeline output.
#[pyclass(name = "FirmResult", get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFirmResult {
    firm_id: String,
    sector_code: String,
    district_code: String,
    y: Vec<f64>,
    ele: Vec<f64>,
    mu_r: Vec<f64>,
    report: PyFitReport,
}

/// Outlier mask of a daily series: centered window, threshold `k` standard deviations.
#[pyfunction]
#[pyo3(signature = (values, window = 15, k = 2.0))]
fn detect_outliers(values: Vec<Option<f64>>, window: usize, k: f64) -> PyResult<Vec<bool>> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let s = RawSeries::new("series", start, values).map_err(err)?;
    preprocess::detect_outliers(&s, window, k).map_err(err)
}

/// Deviation series of one firm: cleaned, smoothed test window minus reference window.
#[pyfunction]
#[pyo3(signature = (start, values, ref_base = "2019-02-04", test_base = "2020-01-24", span = 95))]
fn deviation_series(start: &str, values: Vec<Option<f64>>, ref_base: &str, test_base: &str, span: usize) -> PyResult<Vec<f64>> {
    let s = RawSeries::new("series", date(start)?, values).map_err(err)?;
    let p = preprocess::prepare(&s, &PreprocessConfig::default(), date(ref_base)?, date(test_base)?, span).map_err(err)?;
    Ok(p.deviation.y)
}

#[pyfunction]
fn forward_filter(y: Vec<f64>, model: &PyRegimeModel) -> PyResult<PyFilterOutput> {
    hmm::forward_filter(&y, &model.core()).map(Into::into).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y, init, tol = hmm::DEFAULT_TOL, max_iter = hmm::DEFAULT_MAX_ITER))]
fn em_fit(y: Vec<f64>, init: &PyRegimeModel, tol: f64, max_iter: usize) -> PyResult<PyFitReport> {
    hmm::em_fit(&y, &init.core(), tol, max_iter).map(Into::into).map_err(err)
}

/// EM from the deterministic start plus `restarts` random starts; best log-likelihood wins.
#[pyfunction]
#[pyo3(signature = (y, tol = hmm::DEFAULT_TOL, max_iter = hmm::DEFAULT_MAX_ITER, restarts = 0, seed = 0))]
fn fit(y: Vec<f64>, tol: f64, max_iter: usize, restarts: usize, seed: u64) -> PyResult<PyFitReport> {
    let options = hmm::FitOptions {
        tol,
        max_iter,
        restarts,
        seed,
    };
    hmm::fit(&y, &options).map(Into::into).map_err(err)
}

/// Draws a regime path and observations; regimes are 0 (prosperous) or 1.
#[pyfunction]
fn sample_path(model: &PyRegimeModel, length: usize, seed: u64) -> PyResult<(Vec<u8>, Vec<f64>)> {
    let (states, y) = hmm::sample_path(&model.core(), length, seed).map_err(err)?;
    Ok((states.into_iter().map(|s| s as u8).collect(), y))
}

/// Index series from `(firm_id, offset, ele, mu_r, sector_code, district_code)`
/// records. Returns `(group_key, offset, value or None, total_weight, firm_count)`.
#[pyfunction]
#[pyo3(signature = (records, group_by = "aggregate"))]
#[allow(clippy::type_complexity)]
fn ecu(
    records: Vec<(String, i32, f64, f64, String, String)>,
    group_by: &str,
) -> PyResult<Vec<(String, i32, Option<f64>, f64, usize)>> {
    let g = GroupBy::parse(group_by).ok_or_else(|| PyValueError::new_err(format!("unknown grouping `{group_by}`")))?;
    let days: Vec<CoreFirmDay> = records
        .into_iter()
        .map(|(firm_id, offset, ele, mu_r, sector_code, district_code)| CoreFirmDay {
            firm_id,
            offset,
            ele,
            mu_r,
            sector_code,
            district_code,
        })
        .collect();
    let series = ecu_grouped(&days, g, None).map_err(err)?;
    Ok(series
        .into_iter()
        .flat_map(|s| {
            let key = s.group_key;
            s.points
                .into_iter()
                .map(move |p| (key.clone(), p.offset, p.value, p.total_weight, p.firm_count))
        })
        .collect())
}

/// Synthetic panel with the default scenario; keyword overrides for the common knobs.
#[pyfunction]
#[pyo3(signature = (n_firms = 200, seed = 42, noise_sd = None, growth_mean = None, affected_fraction = None, null = false))]
fn simulate(
    n_firms: usize,
    seed: u64,
    noise_sd: Option<f64>,
    growth_mean: Option<f64>,
    affected_fraction: Option<f64>,
    null: bool,
) -> PyResult<Vec<PyFirm>> {
    let mut c = if null {
        simgen::PanelConfig::null(n_firms, seed)
    } else {
        simgen::PanelConfig {
            n_firms,
            seed,
            ..simgen::PanelConfig::default()
        }
    };
    if let Some(v) = noise_sd {
        c.noise_sd = v;
    }
    if let Some(v) = growth_mean {
        c.growth_mean = v;
    }
    if let Some(v) = affected_fraction {
        c.shock.affected_fraction = v;
    }
    let panel = simgen::generate(&c).map_err(err)?;
    Ok(panel
        .firms
        .into_iter()
        .map(|f| PyFirm {
            firm_id: f.series.firm_id,
            start: f.series.start.to_string(),
            values: f.series.values,
            sector_code: f.sector_code,
            district_code: f.district_code,
            shock_depth: f.shock_depth,
            shock_onset: f.shock_onset,
        })
        .collect())
}

/// Preprocesses and fits every firm. Returns results sorted by firm id and
/// `(firm_id, message)` for firms that could not be fitted.
#[pyfunction]
#[pyo3(signature = (firms, seed = 0, workers = 0, restarts = 0))]
fn fit_panel(firms: Vec<PyFirm>, seed: u64, workers: usize, restarts: usize) -> PyResult<(Vec<PyFirmResult>, Vec<(String, String)>)> {
    let inputs = firms.iter().map(PyFirm::input).collect::<PyResult<Vec<_>>>()?;
    let mut cfg = PipelineConfig {
        seed,
        workers,
        ..PipelineConfig::default()
    };
    cfg.fit.restarts = restarts;
    let (fits, diags) = pipeline::fit_panel(&inputs, &cfg).map_err(err)?;
    let results = fits
        .into_iter()
        .map(|f| PyFirmResult {
            mu_r: f.index_mu_r(),
            firm_id: f.firm_id,
            sector_code: f.sector_code,
            district_code: f.district_code,
            y: f.deviation.y,
            ele: f.test_kwh,
            report: f.report.into(),
        })
        .collect();
    Ok((results, diags.into_iter().map(|d| (d.firm_id, d.message)).collect()))
}

#[pymodule]
fn ecu_index(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegimeParams>()?;
    m.add_class::<PyRegimeModel>()?;
    m.add_class::<PyFilterOutput>()?;
    m.add_class::<PyFitReport>()?;
    m.add_class::<PyFirm>()?;
    m.add_class::<PyFirmResult>()?;
    m.add_function(wrap_pyfunction!(detect_outliers, m)?)?;
    m.add_function(wrap_pyfunction!(deviation_series, m)?)?;
    m.add_function(wrap_pyfunction!(forward_filter, m)?)?;
    m.add_function(wrap_pyfunction!(em_fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(sample_path, m)?)?;
    m.add_function(wrap_pyfunction!(self::ecu, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_panel, m)?)?;
    Ok(())
}
