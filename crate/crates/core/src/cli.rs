//! Command-line stages: `simulate -> fit -> index -> report`, with file
//! handoffs through one output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::codes::CodeMap;
use crate::config::RunConfig;
use crate::ecu::{ecu_grouped, srpi, FirmDay, GroupBy};
use crate::error::{Error, Result};
use crate::io::{self, ReportRow, ShockRow};
use crate::pipeline::{fit_panel, FirmInput};
use crate::simgen::generate;

#[derive(Debug, Parser)]
#[command(name = "ecu", version, about = "Economic condition uncertainty index from firm electricity data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit threads, 0 for all cores (overrides `workers`)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Root seed (overrides `seed`)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel CSV
    Simulate(Common),
    /// Preprocess and fit every firm of the panel
    Fit(Common),
    /// Build ECU and sRPI series from fit outputs
    Index(Common),
    /// Per-offset deviation and regime probabilities of one firm
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        firm: String,
    },
}

impl Common {
    /// Loads the config file, if any, and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            c.out_dir = out.clone();
        }
        if let Some(w) = self.workers {
            c.pipeline.workers = w;
        }
        if let Some(s) = self.seed {
            c.pipeline.seed = s;
            c.panel.seed = s;
            c.seed_set = true;
        }
        Ok(c)
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(&c.resolve()?),
        Command::Fit(c) => cmd_fit(&c.resolve()?),
        Command::Index(c) => cmd_index(&c.resolve()?),
        Command::Report { common, firm } => cmd_report(&common.resolve()?, firm),
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingFile(path.display().to_string()))
    }
}

fn seed_of(path: &Path, fallback: u64) -> Result<u64> {
    Ok(io::read_seed(path)?.unwrap_or(fallback))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    cfg.panel.validate()?;
    let panel = generate(&cfg.panel)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let inputs: Vec<FirmInput> = (&panel).into();
    let path = cfg.out_dir.join(io::PANEL_FILE);
    io::write_panel(&path, cfg.panel.seed, &inputs)?;
    let shocks: Vec<ShockRow> = panel
        .firms
        .iter()
        .map(|f| ShockRow {
            firm_id: f.series.firm_id.clone(),
            sector_code: f.sector_code.clone(),
            district_code: f.district_code.clone(),
            shock_depth: f.shock_depth,
            shock_onset: f.shock_onset,
        })
        .collect();
    io::write_shocks(&cfg.out_dir.join(io::SHOCKS_FILE), cfg.panel.seed, &shocks)?;
    Ok(format!(
        "simulated {} firms x {} days -> {}",
        inputs.len(),
        cfg.panel.n_days(),
        path.display()
    ))
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<String> {
    cfg.pipeline.validate()?;
    let panel = require(cfg.panel_path())?;
    let inputs = io::read_panel(&panel)?;
    let mut pipeline = cfg.pipeline.clone();
    if !cfg.seed_set {
        pipeline.seed = seed_of(&panel, pipeline.seed)?;
    }
    let (fits, diags) = fit_panel(&inputs, &pipeline)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    let seed = pipeline.seed;
    io::write_deviations(&out.join(io::DEVIATIONS_FILE), seed, &fits)?;
    io::write_models(&out.join(io::MODELS_FILE), seed, &fits)?;
    io::write_probabilities(&out.join(io::PROBABILITIES_FILE), seed, &fits)?;
    io::write_weights(&out.join(io::WEIGHTS_FILE), seed, &fits)?;
    io::write_diagnostics(&out.join(io::DIAGNOSTICS_FILE), seed, &diags)?;
    let converged = fits.iter().filter(|f| f.report.converged).count();
    let degenerate = fits.iter().filter(|f| f.report.degenerate).count();
    let mut msg = format!(
        "fitted {} firms: {converged} converged, {degenerate} degenerate, {} skipped",
        fits.len(),
        diags.len()
    );
    for d in &diags {
        msg.push_str(&format!("\nskipped {}: {}", d.firm_id, d.message));
    }
    Ok(msg)
}

pub fn cmd_index(cfg: &RunConfig) -> Result<String> {
    let out = &cfg.out_dir;
    let models_path = require(out.join(io::MODELS_FILE))?;
    let probs_path = require(out.join(io::PROBABILITIES_FILE))?;
    let weights_path = require(out.join(io::WEIGHTS_FILE))?;
    let codes = match &cfg.code_map {
        Some(p) => Some(CodeMap::from_csv(&require(p.clone())?)?),
        None => None,
    };
    let seed = seed_of(&models_path, cfg.pipeline.seed)?;

    let degenerate: BTreeSet<String> = io::read_models(&models_path)?
        .into_iter()
        .filter(|m| m.degenerate)
        .map(|m| m.firm_id)
        .collect();
    let mu: BTreeMap<(String, i32), f64> = io::read_probabilities(&probs_path)?
        .into_iter()
        .map(|p| ((p.firm_id, p.offset), p.mu_r))
        .collect();
    let weights = io::read_weights(&weights_path)?;
    let mut days = Vec::with_capacity(weights.len());
    let mut ref_totals: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for w in weights {
        let key = (w.firm_id, w.offset);
        let mu_r = *mu.get(&key).ok_or_else(|| {
            Error::Config(format!("no probability for `{}` at offset {}", key.0, key.1))
        })?;
        ref_totals.entry(w.offset).or_default().push(w.ref_ele);
        days.push(FirmDay {
            mu_r: if degenerate.contains(&key.0) { 0.0 } else { mu_r },
            firm_id: key.0,
            offset: key.1,
            ele: w.ele,
            sector_code: w.sector_code,
            district_code: w.district_code,
        });
    }
    if days.is_empty() {
        return Err(Error::EmptyPanel);
    }

    let mut series = ecu_grouped(&days, GroupBy::Aggregate, codes.as_ref())?;
    for g in &cfg.groupings {
        series.extend(ecu_grouped(&days, *g, codes.as_ref())?);
    }
    let ref_totals: Vec<f64> = ref_totals
        .values()
        .map(|v| crate::numeric::compensated_sum(v.iter().copied()))
        .collect();
    let srpi_points = srpi(&days, &ref_totals)?;

    let test_base = cfg.pipeline.test_base;
    io::write_ecu(&out.join(io::ECU_FILE), seed, test_base, &series)?;
    io::write_srpi(&out.join(io::SRPI_FILE), seed, test_base, &srpi_points)?;
    Ok(format!(
        "wrote {} series ({} points) and {} sRPI points to {}",
        series.len(),
        series.iter().map(|s| s.points.len()).sum::<usize>(),
        srpi_points.len(),
        out.display()
    ))
}

/// Report file name for a firm.
pub fn report_file(firm_id: &str) -> String {
    let safe: String = firm_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("report_{safe}.csv")
}

pub fn cmd_report(cfg: &RunConfig, firm_id: &str) -> Result<String> {
    let out = &cfg.out_dir;
    let dev_path = require(out.join(io::DEVIATIONS_FILE))?;
    let probs_path = require(out.join(io::PROBABILITIES_FILE))?;
    let seed = seed_of(&dev_path, cfg.pipeline.seed)?;
    let ys: BTreeMap<i32, f64> = io::read_deviations(&dev_path)?
        .into_iter()
        .filter(|d| d.firm_id == firm_id)
        .map(|d| (d.offset, d.y))
        .collect();
    if ys.is_empty() {
        return Err(Error::UnknownFirm(firm_id.to_string()));
    }
    let mut rows = Vec::with_capacity(ys.len());
    for p in io::read_probabilities(&probs_path)?.into_iter().filter(|p| p.firm_id == firm_id) {
        let y = *ys
            .get(&p.offset)
            .ok_or_else(|| Error::Config(format!("no deviation for `{firm_id}` at offset {}", p.offset)))?;
        rows.push(ReportRow {
            offset: p.offset,
            date: cfg.pipeline.offset_date(p.offset),
            y,
            mu_p: p.mu_p,
            mu_r: p.mu_r,
        });
    }
    rows.sort_by_key(|r| r.offset);
    let path = out.join(report_file(firm_id));
    io::write_report(&path, seed, &rows)?;

    let mut text = format!("firm {firm_id}\n{:>6}  {:<10}  {:>12}  {:>6}  {:>6}\n", "offset", "date", "y", "mu_p", "mu_r");
    for r in &rows {
        text.push_str(&format!(
            "{:>6}  {}  {:>12.3}  {:>6.3}  {:>6.3}\n",
            r.offset, r.date, r.y, r.mu_p, r.mu_r
        ));
    }
    let high = rows.iter().filter(|r| r.mu_r > 0.5).count();
    text.push_str(&format!(
        "{high} of {} days with mu_r > 0.5; written to {}",
        rows.len(),
        path.display()
    ));
    Ok(text)
}
