//! Synthetic multi-firm daily consumption panels.
//!
//! Each firm's consumption is a product of a baseline level, a weekday
//! pattern, an annual cycle phased to the holiday base date, a holiday
//! trough, year-over-year growth and multiplicative noise. Shocked firms are
//! additionally scaled by a lockdown multiplier in the test year. Missing
//! readings and outliers are injected last, and values are rounded to the
//! meter resolution.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::codes::{CodeMap, Tier};
use crate::error::{Error, Result};
use crate::preprocess::RawSeries;

/// Default truth threshold: a day is recessionary while the multiplier is below `1 - EPS`.
pub const TRUTH_EPSILON: f64 = 0.05;

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShockConfig {
    /// First shocked day, as an offset from the test base date.
    pub start_offset: i32,
    /// Days held at full depth before recovery begins.
    pub duration_days: u32,
    /// Recovery half-life of the remaining shortfall, days.
    pub half_life_days: f64,
    /// Each shocked firm's onset is delayed by a uniform draw from `0..=spread`.
    pub onset_spread_days: u32,
    /// Probability that a firm is affected at all.
    pub affected_fraction: f64,
    pub depth_by_tier: BTreeMap<Tier, f64>,
    /// Per-sector overrides of the tier depth.
    pub depth_by_sector: BTreeMap<String, f64>,
}

impl ShockConfig {
    pub fn none() -> Self {
        Self {
            start_offset: 0,
            duration_days: 0,
            half_life_days: 12.0,
            onset_spread_days: 0,
            affected_fraction: 0.0,
            depth_by_tier: BTreeMap::new(),
            depth_by_sector: BTreeMap::new(),
        }
    }

    pub fn depth_for(&self, sector: &str, tier: Tier) -> f64 {
        self.depth_by_sector
            .get(sector)
            .or_else(|| self.depth_by_tier.get(&tier))
            .copied()
            .unwrap_or(0.0)
    }
}

impl Default for ShockConfig {
    fn default() -> Self {
        Self {
            start_offset: 10,
            duration_days: 0,
            half_life_days: 12.0,
            onset_spread_days: 10,
            affected_fraction: 0.8,
            depth_by_tier: [
                (Tier::Primary, 0.3),
                (Tier::Secondary, 0.3),
                (Tier::Tertiary, 0.7),
            ]
            .into_iter()
            .collect(),
            depth_by_sector: BTreeMap::new(),
        }
    }
}

/// Shock multiplier `days_since_onset` days after a firm's onset.
pub fn shock_multiplier(days_since_onset: i64, depth: f64, duration_days: u32, half_life_days: f64) -> f64 {
    if days_since_onset < 0 || depth <= 0.0 {
        return 1.0;
    }
    let after = days_since_onset - duration_days as i64;
    if after < 0 {
        1.0 - depth
    } else {
        1.0 - depth * (-(after as f64) / half_life_days * std::f64::consts::LN_2).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolidayConfig {
    /// First holiday day in the reference and test years.
    pub ref_start: NaiveDate,
    pub test_start: NaiveDate,
    pub days: u32,
    /// Fractional consumption drop at the bottom of the trough.
    pub depth: f64,
    /// Linear ramp length on each side of the trough.
    pub ramp_days: u32,
}

impl HolidayConfig {
    /// Holiday factor for a date given the holiday start of its year.
    fn factor(&self, date: NaiveDate, start: NaiveDate) -> f64 {
        let d = (date - start).num_days();
        let end = self.days as i64 - 1;
        let ramp = self.ramp_days as i64;
        let closeness = if (0..=end).contains(&d) {
            1.0
        } else if d < 0 && d >= -ramp {
            1.0 - (-d) as f64 / (ramp + 1) as f64
        } else if d > end && d <= end + ramp {
            1.0 - (d - end) as f64 / (ramp + 1) as f64
        } else {
            0.0
        };
        1.0 - self.depth * closeness
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelConfig {
    pub n_firms: usize,
    pub seed: u64,
    pub ref_base: NaiveDate,
    pub test_base: NaiveDate,
    pub span: usize,
    /// Extra days simulated before the reference window and after the test
    /// window, so trailing and centered windows see full data at the edges.
    pub margin_days: usize,
    /// `(sector code, proportion)`; proportions sum to 1.
    pub sector_mix: Vec<(String, f64)>,
    pub district_mix: Vec<(String, f64)>,
    /// Log-uniform range of firm baselines, kWh/day.
    pub base_kwh: (f64, f64),
    /// Fractional weekend reduction.
    pub weekly_amplitude: f64,
    /// Amplitude of the annual cosine cycle.
    pub annual_amplitude: f64,
    pub holiday: HolidayConfig,
    /// Test-year growth factor is `1 + g`, `g ~ N(growth_mean, growth_sd)`.
    pub growth_mean: f64,
    pub growth_sd: f64,
    /// Standard deviation of the multiplicative daily noise.
    pub noise_sd: f64,
    pub shock: ShockConfig,
    pub missing_rate: f64,
    pub outlier_rate: f64,
    /// Meter resolution; values are rounded to a multiple of it. 0 disables rounding.
    pub resolution_kwh: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        let codes = CodeMap::default();
        let n_districts = codes.districts.len() as f64;
        Self {
            n_firms: 200,
            seed: 42,
            ref_base: ymd(2019, 2, 4),
            test_base: ymd(2020, 1, 24),
            span: 95,
            margin_days: 14,
            sector_mix: codes.sectors.values().map(|s| (s.code.clone(), s.share)).collect(),
            district_mix: codes.districts.keys().map(|c| (c.clone(), 1.0 / n_districts)).collect(),
            base_kwh: (1000.0, 20000.0),
            weekly_amplitude: 0.15,
            annual_amplitude: 0.1,
            holiday: HolidayConfig {
                ref_start: ymd(2019, 2, 4),
                test_start: ymd(2020, 1, 24),
                days: 7,
                depth: 0.6,
                ramp_days: 5,
            },
            growth_mean: -0.05,
            growth_sd: 0.02,
            noise_sd: 0.05,
            shock: ShockConfig::default(),
            missing_rate: 0.01,
            outlier_rate: 0.005,
            resolution_kwh: 1.0,
        }
    }
}

impl PanelConfig {
    /// Quiet panel: no noise, shock, growth, corruption or weekday pattern,
    /// with the holiday at the same offset in both years.
    pub fn null(n_firms: usize, seed: u64) -> Self {
        let mut c = Self {
            n_firms,
            seed,
            ..Self::default()
        };
        c.noise_sd = 0.0;
        c.growth_sd = 0.0;
        c.growth_mean = 0.0;
        c.weekly_amplitude = 0.0;
        c.missing_rate = 0.0;
        c.outlier_rate = 0.0;
        c.shock = ShockConfig::none();
        c.holiday.ref_start = c.ref_base;
        c.holiday.test_start = c.test_base;
        c
    }

    pub fn start_date(&self) -> NaiveDate {
        self.ref_base - Duration::days((self.span + self.margin_days) as i64)
    }

    pub fn end_date(&self) -> NaiveDate {
        self.test_base + Duration::days((self.span + self.margin_days) as i64)
    }

    pub fn n_days(&self) -> usize {
        (self.end_date() - self.start_date()).num_days() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let mix_ok = |mix: &[(String, f64)]| {
            !mix.is_empty()
                && mix.iter().all(|(_, p)| *p >= 0.0)
                && (mix.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if self.n_firms == 0 {
            return Err(Error::param("n_firms", "must be positive"));
        }
        if !mix_ok(&self.sector_mix) {
            return Err(Error::param("sector_mix", "proportions must be >= 0 and sum to 1"));
        }
        if !mix_ok(&self.district_mix) {
            return Err(Error::param("district_mix", "proportions must be >= 0 and sum to 1"));
        }
        if self.test_base <= self.ref_base {
            return Err(Error::param("test_base", "must follow ref_base"));
        }
        if !(self.base_kwh.0 > 0.0 && self.base_kwh.1 >= self.base_kwh.0) {
            return Err(Error::param("base_kwh", "need 0 < min <= max"));
        }
        let rate = |name: &'static str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(name, "must be in [0,1)"))
            }
        };
        rate("missing_rate", self.missing_rate)?;
        rate("outlier_rate", self.outlier_rate)?;
        let frac = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(name, "must be in [0,1]"))
            }
        };
        frac("weekly_amplitude", self.weekly_amplitude)?;
        frac("holiday_depth", self.holiday.depth)?;
        frac("shock_affected_fraction", self.shock.affected_fraction)?;
        for d in self.shock.depth_by_tier.values().chain(self.shock.depth_by_sector.values()) {
            frac("shock_depth", *d)?;
        }
        if !(self.annual_amplitude >= 0.0 && self.annual_amplitude < 1.0) {
            return Err(Error::param("annual_amplitude", "must be in [0,1)"));
        }
        if !(self.noise_sd >= 0.0) || !(self.growth_sd >= 0.0) {
            return Err(Error::param("noise_sd", "standard deviations must be >= 0"));
        }
        if !(self.shock.half_life_days > 0.0) {
            return Err(Error::param("shock_half_life_days", "must be positive"));
        }
        if !(self.resolution_kwh >= 0.0) {
            return Err(Error::param("resolution_kwh", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFirm {
    pub series: RawSeries,
    pub sector_code: String,
    pub district_code: String,
    /// Depth applied to this firm; 0 for unaffected firms.
    pub shock_depth: f64,
    /// Test-base offset of this firm's shock onset, if shocked.
    pub shock_onset: Option<i32>,
}

impl SyntheticFirm {
    pub fn is_shocked(&self) -> bool {
        self.shock_onset.is_some() && self.shock_depth > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub config: PanelConfig,
    pub firms: Vec<SyntheticFirm>,
}

/// Stable per-firm seed derived from the root seed and the firm id.
pub fn firm_seed(root: u64, firm_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(firm_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Largest-remainder apportionment of `n` items to the given proportions,
/// shuffled so positions carry no information.
fn apportion(n: usize, mix: &[(String, f64)], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut counts: Vec<(usize, f64, usize)> = mix
        .iter()
        .enumerate()
        .map(|(i, (_, p))| {
            let exact = p * n as f64;
            (i, exact - exact.floor(), exact.floor() as usize)
        })
        .collect();
    let assigned: usize = counts.iter().map(|c| c.2).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].1.total_cmp(&counts[a].1).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i].2 += 1;
    }
    let mut out: Vec<String> = counts
        .iter()
        .flat_map(|&(i, _, c)| std::iter::repeat_n(mix[i].0.clone(), c))
        .collect();
    out.shuffle(rng);
    out
}

fn weekday_factor(date: NaiveDate, amplitude: f64) -> f64 {
    match date.weekday() {
        Weekday::Sat | Weekday::Sun => 1.0 - amplitude,
        _ => 1.0,
    }
}

pub fn generate(config: &PanelConfig) -> Result<SyntheticPanel> {
    config.validate()?;
    let codes = CodeMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sectors = apportion(config.n_firms, &config.sector_mix, &mut rng);
    let districts = apportion(config.n_firms, &config.district_mix, &mut rng);
    let width = config.n_firms.to_string().len().max(5);

    let firms = sectors
        .into_iter()
        .zip(districts)
        .enumerate()
        .map(|(i, (sector, district))| {
            let firm_id = format!("F{:0width$}", i + 1, width = width);
            let tier = codes
                .tier_of(&sector)
                .or_else(|_| {
                    sector
                        .get(..1)
                        .and_then(Tier::parse)
                        .ok_or_else(|| Error::UnknownCode {
                            kind: "sector",
                            code: sector.clone(),
                        })
                })?;
            Ok(generate_firm(config, firm_id, sector, district, tier))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticPanel {
        config: config.clone(),
        firms,
    })
}

fn generate_firm(
    config: &PanelConfig,
    firm_id: String,
    sector: String,
    district: String,
    tier: Tier,
) -> SyntheticFirm {
    let mut rng = ChaCha8Rng::seed_from_u64(firm_seed(config.seed, &firm_id));
    let (lo, hi) = config.base_kwh;
    let base = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    let z: f64 = StandardNormal.sample(&mut rng);
    let growth = (1.0 + config.growth_mean + config.growth_sd * z).max(0.0);

    let shocked = rng.random::<f64>() < config.shock.affected_fraction;
    let depth = if shocked {
        config.shock.depth_for(&sector, tier)
    } else {
        0.0
    };
    let lag = rng.random_range(0..=config.shock.onset_spread_days) as i32;
    let onset = (shocked && depth > 0.0).then_some(config.shock.start_offset + lag);

    let start = config.start_date();
    let n = config.n_days();
    // the test year begins halfway between the two base dates
    let split = config.ref_base + (config.test_base - config.ref_base) / 2;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let date = start + Duration::days(i as i64);
        let in_test = date >= split;
        let (base_date, holiday_start) = if in_test {
            (config.test_base, config.holiday.test_start)
        } else {
            (config.ref_base, config.holiday.ref_start)
        };
        let phase = (date - base_date).num_days() as f64 / 365.25;
        let annual = 1.0 + config.annual_amplitude * (2.0 * std::f64::consts::PI * phase).cos();
        let mut v = base
            * weekday_factor(date, config.weekly_amplitude)
            * annual
            * config.holiday.factor(date, holiday_start);
        if in_test {
            v *= growth;
            if let Some(onset) = onset {
                let since = (date - config.test_base).num_days() - onset as i64;
                v *= shock_multiplier(since, depth, config.shock.duration_days, config.shock.half_life_days);
            }
        }
        if config.noise_sd > 0.0 {
            let e: f64 = StandardNormal.sample(&mut rng);
            v *= (1.0 + config.noise_sd * e).max(0.0);
        }
        values.push(v);
    }

    let mut readings: Vec<Option<f64>> = Vec::with_capacity(n);
    for v in values {
        let mut v = v;
        if config.outlier_rate > 0.0 && rng.random::<f64>() < config.outlier_rate {
            v *= rng.random_range(3.0..6.0);
        }
        if config.resolution_kwh > 0.0 {
            v = (v / config.resolution_kwh).round() * config.resolution_kwh;
        }
        let missing = config.missing_rate > 0.0 && rng.random::<f64>() < config.missing_rate;
        readings.push((!missing).then_some(v.max(0.0)));
    }

    SyntheticFirm {
        series: RawSeries {
            firm_id,
            start,
            values: readings,
        },
        sector_code: sector,
        district_code: district,
        shock_depth: depth,
        shock_onset: onset,
    }
}

/// Ground truth per firm and day of the panel: `true` while the applied shock
/// multiplier is below `1 - epsilon`.
pub fn truth_labels(panel: &SyntheticPanel, epsilon: f64) -> Vec<Vec<bool>> {
    let c = &panel.config;
    panel
        .firms
        .iter()
        .map(|f| {
            f.series
                .dates()
                .map(|date| match f.shock_onset {
                    Some(onset) => {
                        let since = (date - c.test_base).num_days() - onset as i64;
                        shock_multiplier(since, f.shock_depth, c.shock.duration_days, c.shock.half_life_days)
                            < 1.0 - epsilon
                    }
                    None => false,
                })
                .collect()
        })
        .collect()
}

/// Test-base offset at which a firm's multiplier first rises to `1 - epsilon`,
/// from the closed form of the exponential recovery.
pub fn recovery_offset(onset: i32, depth: f64, duration_days: u32, half_life_days: f64, epsilon: f64) -> f64 {
    if depth <= epsilon {
        return onset as f64;
    }
    onset as f64 + duration_days as f64 + half_life_days * (depth / epsilon).log2()
}
