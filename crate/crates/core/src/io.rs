//! CSV readers and writers for every pipeline stage.
//!
//! Every file starts with a `# seed=<n>` comment line recording the root
//! seed, followed by a header row. Readers skip `#` lines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ecu::{EcuSeries, SrpiPoint};
use crate::error::{Error, Result};
use crate::hmm::{RegimeModel, RegimeParams};
use crate::pipeline::{Diagnostic, FirmFit, FirmInput};
use crate::preprocess::RawSeries;

pub const PANEL_FILE: &str = "panel.csv";
pub const SHOCKS_FILE: &str = "shocks.csv";
pub const DEVIATIONS_FILE: &str = "deviations.csv";
pub const MODELS_FILE: &str = "models.csv";
pub const PROBABILITIES_FILE: &str = "probabilities.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const ECU_FILE: &str = "ecu.csv";
pub const SRPI_FILE: &str = "srpi.csv";

fn writer(path: &Path, seed: u64) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# seed={seed}")?;
    Ok(csv::Writer::from_writer(out))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    reader(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, seed: u64, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(path, seed)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the seed recorded in a file's leading comment, if any.
pub fn read_seed(path: &Path) -> Result<Option<u64>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# seed="))
        .and_then(|s| s.trim().parse().ok()))
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    firm_id: String,
    date: NaiveDate,
    kwh: Option<f64>,
    sector_code: String,
    district_code: String,
}

pub fn write_panel(path: &Path, seed: u64, firms: &[FirmInput]) -> Result<()> {
    let mut w = writer(path, seed)?;
    for f in firms {
        for (date, kwh) in f.series.dates().zip(&f.series.values) {
            w.serialize(PanelRow {
                firm_id: f.series.firm_id.clone(),
                date,
                kwh: *kwh,
                sector_code: f.sector_code.clone(),
                district_code: f.district_code.clone(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel CSV. Rows may come in any order; days absent between a
/// firm's first and last date are treated as missing readings.
pub fn read_panel(path: &Path) -> Result<Vec<FirmInput>> {
    struct Acc {
        sector: String,
        district: String,
        days: BTreeMap<NaiveDate, Option<f64>>,
    }
    let mut firms: BTreeMap<String, Acc> = BTreeMap::new();
    for row in reader(path)?.deserialize() {
        let row: PanelRow = row?;
        let acc = firms.entry(row.firm_id.clone()).or_insert_with(|| Acc {
            sector: row.sector_code.clone(),
            district: row.district_code.clone(),
            days: BTreeMap::new(),
        });
        if acc.sector != row.sector_code || acc.district != row.district_code {
            return Err(Error::Config(format!(
                "firm `{}` has inconsistent codes on {}",
                row.firm_id, row.date
            )));
        }
        if acc.days.insert(row.date, row.kwh).is_some() {
            return Err(Error::Config(format!(
                "duplicate reading for `{}` on {}",
                row.firm_id, row.date
            )));
        }
    }
    if firms.is_empty() {
        return Err(Error::EmptyPanel);
    }
    firms
        .into_iter()
        .map(|(id, acc)| {
            let (&start, _) = acc.days.first_key_value().expect("non-empty");
            let (&end, _) = acc.days.last_key_value().expect("non-empty");
            let values = (0..=(end - start).num_days())
                .map(|d| acc.days.get(&(start + Duration::days(d))).copied().flatten())
                .collect();
            Ok(FirmInput {
                series: RawSeries::new(id, start, values)?,
                sector_code: acc.sector,
                district_code: acc.district,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockRow {
    pub firm_id: String,
    pub sector_code: String,
    pub district_code: String,
    pub shock_depth: f64,
    pub shock_onset: Option<i32>,
}

pub fn write_shocks(path: &Path, seed: u64, rows: &[ShockRow]) -> Result<()> {
    write_rows(path, seed, rows)
}

pub fn read_shocks(path: &Path) -> Result<Vec<ShockRow>> {
    read_rows(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub firm_id: String,
    pub offset: i32,
    pub y: f64,
}

pub fn write_deviations(path: &Path, seed: u64, fits: &[FirmFit]) -> Result<()> {
    write_rows(
        path,
        seed,
        fits.iter().flat_map(|f| {
            f.deviation.offsets().zip(&f.deviation.y).map(|(offset, &y)| DeviationRow {
                firm_id: f.firm_id.clone(),
                offset,
                y,
            })
        }),
    )
}

pub fn read_deviations(path: &Path) -> Result<Vec<DeviationRow>> {
    read_rows(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub firm_id: String,
    pub alpha_p: f64,
    pub beta_p: f64,
    pub sigma_p: f64,
    pub alpha_r: f64,
    pub beta_r: f64,
    pub sigma_r: f64,
    pub q_pp: f64,
    pub q_rr: f64,
    pub pi0_p: f64,
    pub loglik: f64,
    pub converged: bool,
    pub degenerate: bool,
}

impl ModelRow {
    pub fn from_fit(f: &FirmFit) -> Self {
        let m = &f.report.model;
        let [p, r] = m.params;
        Self {
            firm_id: f.firm_id.clone(),
            alpha_p: p.alpha,
            beta_p: p.beta,
            sigma_p: p.sigma,
            alpha_r: r.alpha,
            beta_r: r.beta,
            sigma_r: r.sigma,
            q_pp: m.q[0][0],
            q_rr: m.q[1][1],
            pi0_p: m.pi0[0],
            loglik: f.report.loglik(),
            converged: f.report.converged,
            degenerate: f.report.degenerate,
        }
    }

    pub fn model(&self) -> RegimeModel {
        RegimeModel {
            q: [[self.q_pp, 1.0 - self.q_pp], [1.0 - self.q_rr, self.q_rr]],
            params: [
                RegimeParams::new(self.alpha_p, self.beta_p, self.sigma_p),
                RegimeParams::new(self.alpha_r, self.beta_r, self.sigma_r),
            ],
            pi0: [self.pi0_p, 1.0 - self.pi0_p],
        }
    }
}

pub fn write_models(path: &Path, seed: u64, fits: &[FirmFit]) -> Result<()> {
    write_rows(path, seed, fits.iter().map(ModelRow::from_fit))
}

pub fn read_models(path: &Path) -> Result<Vec<ModelRow>> {
    read_rows(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub firm_id: String,
    pub offset: i32,
    pub mu_p: f64,
    pub mu_r: f64,
}

pub fn write_probabilities(path: &Path, seed: u64, fits: &[FirmFit]) -> Result<()> {
    write_rows(
        path,
        seed,
        fits.iter().flat_map(|f| {
            f.deviation
                .offsets()
                .zip(&f.filter.filtered)
                .map(|(offset, pair)| ProbabilityRow {
                    firm_id: f.firm_id.clone(),
                    offset,
                    mu_p: pair[0],
                    mu_r: pair[1],
                })
        }),
    )
}

pub fn read_probabilities(path: &Path) -> Result<Vec<ProbabilityRow>> {
    read_rows(path)
}

/// Index weights: cleaned test-window consumption and its reference-window
/// counterpart, per firm and offset, with the firm's codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub firm_id: String,
    pub offset: i32,
    pub sector_code: String,
    pub district_code: String,
    pub ele: f64,
    pub ref_ele: f64,
}

pub fn write_weights(path: &Path, seed: u64, fits: &[FirmFit]) -> Result<()> {
    write_rows(
        path,
        seed,
        fits.iter().flat_map(|f| {
            f.deviation.offsets().enumerate().map(|(i, offset)| WeightRow {
                firm_id: f.firm_id.clone(),
                offset,
                sector_code: f.sector_code.clone(),
                district_code: f.district_code.clone(),
                ele: f.test_kwh[i],
                ref_ele: f.ref_kwh[i],
            })
        }),
    )
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightRow>> {
    read_rows(path)
}

#[derive(Debug, Serialize)]
struct DiagnosticRow<'a> {
    firm_id: &'a str,
    message: &'a str,
}

pub fn write_diagnostics(path: &Path, seed: u64, diags: &[Diagnostic]) -> Result<()> {
    let mut w = writer(path, seed)?;
    if diags.is_empty() {
        w.write_record(["firm_id", "message"])?;
    }
    for d in diags {
        w.serialize(DiagnosticRow {
            firm_id: &d.firm_id,
            message: &d.message,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcuRow {
    pub group_type: String,
    pub group_key: String,
    pub offset: i32,
    pub date: NaiveDate,
    pub ecu: Option<f64>,
    pub total_weight: f64,
    pub firm_count: usize,
}

pub fn write_ecu(path: &Path, seed: u64, test_base: NaiveDate, series: &[EcuSeries]) -> Result<()> {
    write_rows(
        path,
        seed,
        series.iter().flat_map(|s| {
            s.points.iter().map(move |p| EcuRow {
                group_type: s.group_type.as_str().to_string(),
                group_key: s.group_key.clone(),
                offset: p.offset,
                date: test_base + Duration::days(p.offset as i64),
                ecu: p.value,
                total_weight: p.total_weight,
                firm_count: p.firm_count,
            })
        }),
    )
}

pub fn read_ecu(path: &Path) -> Result<Vec<EcuRow>> {
    read_rows(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrpiRow {
    pub offset: i32,
    pub date: NaiveDate,
    pub srpi: f64,
    pub delta_srpi: f64,
}

pub fn write_srpi(path: &Path, seed: u64, test_base: NaiveDate, points: &[SrpiPoint]) -> Result<()> {
    write_rows(
        path,
        seed,
        points.iter().map(|p| SrpiRow {
            offset: p.offset,
            date: test_base + Duration::days(p.offset as i64),
            srpi: p.srpi,
            delta_srpi: p.delta_srpi,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub offset: i32,
    pub date: NaiveDate,
    pub y: f64,
    pub mu_p: f64,
    pub mu_r: f64,
}

pub fn write_report(path: &Path, seed: u64, rows: &[ReportRow]) -> Result<()> {
    write_rows(path, seed, rows)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    read_rows(path)
}
