//! Flat key-value run configuration, read from TOML.
//!
//! Every key is optional. Run keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `input_panel` | panel CSV read by `fit` (default `<out_dir>/panel.csv`) |
//! | `code_map` | optional sector/district code CSV; unknown codes then fail |
//! | `out_dir` | output directory (default `out`) |
//! | `ref_base`, `test_base` | base dates of the two windows |
//! | `span` | days on each side of the base date |
//! | `outlier_window`, `outlier_k` | outlier window (odd) and threshold |
//! | `interp_lookback`, `smooth_window` | interpolation and smoothing windows |
//! | `em_tol`, `em_max_iter`, `restarts` | EM stopping rule and extra random starts |
//! | `seed`, `workers` | root seed; fit threads (0 = all cores) |
//! | `groupings` | comma list of `sector`, `district`, `tier` |
//!
//! Simulation keys: `n_firms`, `margin_days`, `sector_mix` and
//! `district_mix` (`CODE:share,...`), `base_kwh_min`, `base_kwh_max`,
//! `weekly_amplitude`, `annual_amplitude`, `holiday_ref_start`,
//! `holiday_test_start`, `holiday_days`, `holiday_depth`, `holiday_ramp_days`,
//! `growth_mean`, `growth_sd`, `noise_sd`, `shock_start_offset`,
//! `shock_duration_days`, `shock_half_life_days`, `shock_onset_spread_days`,
//! `shock_affected_fraction`, `shock_depth_primary`, `shock_depth_secondary`,
//! `shock_depth_tertiary`, `shock_depth_sectors` (`CODE:depth,...`),
//! `missing_rate`, `outlier_rate`, `resolution_kwh`.
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use toml::{Table, Value};

use crate::codes::Tier;
use crate::ecu::GroupBy;
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::simgen::PanelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_panel: Option<PathBuf>,
    pub code_map: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Groupings written by `index` besides the aggregate.
    pub groupings: Vec<GroupBy>,
    /// Whether `seed` was given; `fit` otherwise takes the panel's seed.
    pub seed_set: bool,
    pub pipeline: PipelineConfig,
    pub panel: PanelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let mut panel = PanelConfig::default();
        panel.seed = pipeline.seed;
        Self {
            input_panel: None,
            code_map: None,
            out_dir: PathBuf::from("out"),
            groupings: vec![GroupBy::Sector, GroupBy::District, GroupBy::Tier],
            seed_set: false,
            pipeline,
            panel,
        }
    }
}

struct Keys(Table);

impl Keys {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.0.remove(key)
    }

    fn int(&mut self, key: &'static str) -> Result<Option<i64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) => Ok(Some(i)),
            Some(_) => Err(Error::param(key, "expected an integer")),
        }
    }

    fn count(&mut self, key: &'static str) -> Result<Option<usize>> {
        match self.int(key)? {
            Some(i) if i < 0 => Err(Error::param(key, format!("must be >= 0, got {i}"))),
            other => Ok(other.map(|i| i as usize)),
        }
    }

    fn float(&mut self, key: &'static str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(f)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(_) => Err(Error::param(key, "expected a number")),
        }
    }

    fn text(&mut self, key: &'static str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(Error::param(key, "expected a string")),
        }
    }

    fn date(&mut self, key: &'static str) -> Result<Option<NaiveDate>> {
        let raw = match self.take(key) {
            None => return Ok(None),
            Some(Value::String(s)) => s,
            Some(Value::Datetime(d)) => d.to_string(),
            Some(_) => return Err(Error::param(key, "expected a YYYY-MM-DD date")),
        };
        NaiveDate::parse_from_str(&raw, "%Y-%m-%d")
            .map(Some)
            .map_err(|e| Error::param(key, format!("`{raw}`: {e}")))
    }
}

/// Parses `CODE:value,CODE:value`.
fn parse_pairs(key: &'static str, s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (code, v) = p
                .split_once(':')
                .ok_or_else(|| Error::param(key, format!("`{p}` is not CODE:value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::param(key, format!("`{p}` has a non-numeric value")))?;
            Ok((code.trim().to_string(), v))
        })
        .collect()
}

fn parse_groupings(s: &str) -> Result<Vec<GroupBy>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let g = GroupBy::parse(part)
            .ok_or_else(|| Error::param("groupings", format!("unknown grouping `{part}`")))?;
        if g != GroupBy::Aggregate && !out.contains(&g) {
            out.push(g);
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut k = Keys(table);
        let mut c = RunConfig::default();
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() { p } else { base_dir.join(p) }
        };

        c.input_panel = k.text("input_panel")?.map(resolve);
        c.code_map = k.text("code_map")?.map(resolve);
        if let Some(p) = k.text("out_dir")? {
            c.out_dir = resolve(p);
        }
        if let Some(g) = k.text("groupings")? {
            c.groupings = parse_groupings(&g)?;
        }

        let (pl, pn) = (&mut c.pipeline, &mut c.panel);
        if let Some(d) = k.date("ref_base")? {
            pl.ref_base = d;
            pn.ref_base = d;
        }
        if let Some(d) = k.date("test_base")? {
            pl.test_base = d;
            pn.test_base = d;
        }
        pn.holiday.ref_start = k.date("holiday_ref_start")?.unwrap_or(pn.ref_base);
        pn.holiday.test_start = k.date("holiday_test_start")?.unwrap_or(pn.test_base);
        if let Some(s) = k.count("span")? {
            pl.span = s;
            pn.span = s;
        }
        if let Some(s) = k.int("seed")? {
            let s = u64::try_from(s).map_err(|_| Error::param("seed", "must be >= 0"))?;
            pl.seed = s;
            pn.seed = s;
            c.seed_set = true;
        }
        if let Some(w) = k.count("workers")? {
            pl.workers = w;
        }

        let p = &mut pl.preprocess;
        if let Some(v) = k.count("outlier_window")? {
            p.outlier_window = v;
        }
        if let Some(v) = k.float("outlier_k")? {
            p.outlier_k = v;
        }
        if let Some(v) = k.count("interp_lookback")? {
            p.interp_lookback = v;
        }
        if let Some(v) = k.count("smooth_window")? {
            p.smooth_window = v;
        }
        if let Some(v) = k.float("em_tol")? {
            pl.fit.tol = v;
        }
        if let Some(v) = k.count("em_max_iter")? {
            pl.fit.max_iter = v;
        }
        if let Some(v) = k.count("restarts")? {
            pl.fit.restarts = v;
        }

        match k.int("n_firms")? {
            Some(n) if n <= 0 => return Err(Error::param("n_firms", format!("must be positive, got {n}"))),
            Some(n) => pn.n_firms = n as usize,
            None => {}
        }
        if let Some(v) = k.count("margin_days")? {
            pn.margin_days = v;
        }
        if let Some(s) = k.text("sector_mix")? {
            pn.sector_mix = parse_pairs("sector_mix", &s)?;
        }
        if let Some(s) = k.text("district_mix")? {
            pn.district_mix = parse_pairs("district_mix", &s)?;
        }
        if let Some(v) = k.float("base_kwh_min")? {
            pn.base_kwh.0 = v;
        }
        if let Some(v) = k.float("base_kwh_max")? {
            pn.base_kwh.1 = v;
        }
        let floats: [(&'static str, &mut f64); 11] = [
            ("weekly_amplitude", &mut pn.weekly_amplitude),
            ("annual_amplitude", &mut pn.annual_amplitude),
            ("holiday_depth", &mut pn.holiday.depth),
            ("growth_mean", &mut pn.growth_mean),
            ("growth_sd", &mut pn.growth_sd),
            ("noise_sd", &mut pn.noise_sd),
            ("shock_half_life_days", &mut pn.shock.half_life_days),
            ("shock_affected_fraction", &mut pn.shock.affected_fraction),
            ("missing_rate", &mut pn.missing_rate),
            ("outlier_rate", &mut pn.outlier_rate),
            ("resolution_kwh", &mut pn.resolution_kwh),
        ];
        for (key, slot) in floats {
            if let Some(v) = k.float(key)? {
                *slot = v;
            }
        }
        let days: [(&'static str, &mut u32); 4] = [
            ("holiday_days", &mut pn.holiday.days),
            ("holiday_ramp_days", &mut pn.holiday.ramp_days),
            ("shock_duration_days", &mut pn.shock.duration_days),
            ("shock_onset_spread_days", &mut pn.shock.onset_spread_days),
        ];
        for (key, slot) in days {
            if let Some(v) = k.count(key)? {
                *slot = u32::try_from(v).map_err(|_| Error::param(key, "too large"))?;
            }
        }
        if let Some(v) = k.int("shock_start_offset")? {
            pn.shock.start_offset =
                i32::try_from(v).map_err(|_| Error::param("shock_start_offset", "out of range"))?;
        }
        for (key, tier) in [
            ("shock_depth_primary", Tier::Primary),
            ("shock_depth_secondary", Tier::Secondary),
            ("shock_depth_tertiary", Tier::Tertiary),
        ] {
            if let Some(v) = k.float(key)? {
                pn.shock.depth_by_tier.insert(tier, v);
            }
        }
        if let Some(s) = k.text("shock_depth_sectors")? {
            pn.shock.depth_by_sector = parse_pairs("shock_depth_sectors", &s)?.into_iter().collect();
        }

        if let Some(key) = k.0.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        Ok(c)
    }

    /// Panel CSV read by `fit`.
    pub fn panel_path(&self) -> PathBuf {
        self.input_panel
            .clone()
            .unwrap_or_else(|| self.out_dir.join(crate::io::PANEL_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml(text, Path::new("/cfg"))
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn keys_reach_their_fields() {
        let c = parse(
            r#"
            n_firms = 12
            seed = 7
            test_base = 2020-01-24
            ref_base = "2019-02-04"
            span = 30
            out_dir = "runs/a"
            sector_mix = "S02:0.5, T01:0.5"
            shock_depth_tertiary = 0.9
            shock_depth_sectors = "T03:1"
            noise_sd = 0
            groupings = "tier,sector"
            restarts = 2
            "#,
        )
        .unwrap();
        assert_eq!(c.panel.n_firms, 12);
        assert_eq!((c.panel.seed, c.pipeline.seed), (7, 7));
        assert_eq!(c.pipeline.span, 30);
        assert_eq!(c.panel.span, 30);
        assert_eq!(c.out_dir, PathBuf::from("/cfg/runs/a"));
        assert_eq!(c.panel.sector_mix, vec![("S02".into(), 0.5), ("T01".into(), 0.5)]);
        assert_eq!(c.panel.shock.depth_by_tier[&Tier::Tertiary], 0.9);
        assert_eq!(c.panel.shock.depth_by_sector["T03"], 1.0);
        assert_eq!(c.panel.noise_sd, 0.0);
        assert_eq!(c.groupings, vec![GroupBy::Tier, GroupBy::Sector]);
        assert_eq!(c.pipeline.fit.restarts, 2);
        assert_eq!(c.panel.holiday.test_start, c.panel.test_base);
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse("n_firms = -5").unwrap_err().to_string();
        assert!(err.contains("n_firms"), "{err}");
        let err = parse("span = \"x\"").unwrap_err().to_string();
        assert!(err.contains("span"), "{err}");
        let err = parse("nfirms = 5").unwrap_err().to_string();
        assert!(err.contains("nfirms"), "{err}");
        let err = parse("groupings = \"sector,planet\"").unwrap_err().to_string();
        assert!(err.contains("planet"), "{err}");
    }

    #[test]
    fn empty_groupings_mean_aggregate_only() {
        assert!(parse("groupings = \"\"").unwrap().groupings.is_empty());
    }
}
