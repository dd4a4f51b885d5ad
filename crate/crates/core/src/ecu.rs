//! Consumption-weighted aggregation of recessionary probabilities.
//!
//! `ECU_t = sum_k ele_{k,t} * mu_{k,r,t} / sum_k ele_{k,t}` over the firms of a
//! group. The same formula serves the aggregate, per-sector, per-tier and
//! per-district indexes; only the partition changes.

use std::collections::BTreeMap;
use std::fmt;

use crate::codes::CodeMap;
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct FirmDay {
    pub firm_id: String,
    pub offset: i32,
    /// Daily consumption used as the weight, kWh.
    pub ele: f64,
    /// Filtered recessionary probability.
    pub mu_r: f64,
    pub sector_code: String,
    pub district_code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupBy {
    Aggregate,
    Sector,
    /// Top level of the sector code (primary/secondary/tertiary).
    Tier,
    District,
}

impl GroupBy {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::Aggregate => "aggregate",
            GroupBy::Sector => "sector",
            GroupBy::Tier => "tier",
            GroupBy::District => "district",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aggregate" | "none" | "" => Some(GroupBy::Aggregate),
            "sector" => Some(GroupBy::Sector),
            "tier" => Some(GroupBy::Tier),
            "district" | "region" => Some(GroupBy::District),
            _ => None,
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcuPoint {
    pub offset: i32,
    /// `None` where the group has no consumption at this offset.
    pub value: Option<f64>,
    pub total_weight: f64,
    pub firm_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcuSeries {
    pub group_type: GroupBy,
    pub group_key: String,
    pub points: Vec<EcuPoint>,
}

impl EcuSeries {
    pub fn value_at(&self, offset: i32) -> Option<f64> {
        let first = self.points.first()?.offset;
        let i = usize::try_from(offset - first).ok()?;
        self.points.get(i).and_then(|p| p.value)
    }

    /// Values with gaps carried as NaN, convenient for plotting and scans.
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value.unwrap_or(f64::NAN)).collect()
    }
}

fn check_record(r: &FirmDay) -> Result<()> {
    if !(0.0..=1.0).contains(&r.mu_r) {
        return Err(Error::param("mu_r", format!("{} outside [0,1] for `{}`", r.mu_r, r.firm_id)));
    }
    if !(r.ele >= 0.0) || !r.ele.is_finite() {
        return Err(Error::param("ele", format!("{} invalid for `{}`", r.ele, r.firm_id)));
    }
    Ok(())
}

fn weighted(records: &[&FirmDay]) -> (f64, f64) {
    let w = compensated_sum(records.iter().map(|r| r.ele));
    let wm = compensated_sum(records.iter().map(|r| r.ele * r.mu_r));
    (w, wm)
}

/// Index value at one offset. Records are assumed to share that offset.
pub fn ecu_at(records: &[FirmDay]) -> Result<f64> {
    let refs: Vec<&FirmDay> = records.iter().collect();
    for r in &refs {
        check_record(r)?;
    }
    let (w, wm) = weighted(&refs);
    if !(w > 0.0) {
        return Err(Error::NoConsumingFirms(records.first().map_or(0, |r| r.offset)));
    }
    Ok((wm / w).clamp(0.0, 1.0))
}

fn key_of(r: &FirmDay, group_by: GroupBy, codes: Option<&CodeMap>) -> Result<String> {
    if let Some(codes) = codes {
        codes.sector(&r.sector_code)?;
        codes.district(&r.district_code)?;
    }
    Ok(match group_by {
        GroupBy::Aggregate => "all".to_string(),
        GroupBy::Sector => r.sector_code.clone(),
        GroupBy::District => r.district_code.clone(),
        GroupBy::Tier => match codes {
            Some(c) => c.tier_of(&r.sector_code)?.as_str().to_string(),
            None => crate::codes::Tier::parse(r.sector_code.get(..1).unwrap_or(""))
                .ok_or_else(|| Error::UnknownCode {
                    kind: "sector",
                    code: r.sector_code.clone(),
                })?
                .as_str()
                .to_string(),
        },
    })
}

/// Partitions the panel by `group_by` and computes one series per group,
/// sorted by key. Every series spans the panel's full offset range; offsets
/// where a group has zero total weight are gaps. When `codes` is supplied,
/// sector and district codes must appear in it.
pub fn ecu_grouped(
    panel: &[FirmDay],
    group_by: GroupBy,
    codes: Option<&CodeMap>,
) -> Result<Vec<EcuSeries>> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let lo = panel.iter().map(|r| r.offset).min().unwrap_or(0);
    let hi = panel.iter().map(|r| r.offset).max().unwrap_or(0);
    let width = (hi - lo + 1) as usize;

    let mut groups: BTreeMap<String, Vec<Vec<&FirmDay>>> = BTreeMap::new();
    for r in panel {
        check_record(r)?;
        let key = key_of(r, group_by, codes)?;
        groups.entry(key).or_insert_with(|| vec![Vec::new(); width])[(r.offset - lo) as usize].push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(key, by_offset)| EcuSeries {
            group_type: group_by,
            group_key: key,
            points: by_offset
                .iter()
                .enumerate()
                .map(|(i, recs)| {
                    let (w, wm) = weighted(recs);
                    EcuPoint {
                        offset: lo + i as i32,
                        value: (w > 0.0).then(|| (wm / w).clamp(0.0, 1.0)),
                        total_weight: w,
                        firm_count: recs.len(),
                    }
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrpiPoint {
    pub offset: i32,
    pub srpi: f64,
    pub delta_srpi: f64,
}

/// Simplified resumption power: total consumption per offset, and the
/// trailing `window`-day mean of its difference from the reference totals.
/// `reference_totals[i]` belongs to the `i`-th offset of the panel's range.
pub fn srpi_with(panel: &[FirmDay], reference_totals: &[f64], window: usize) -> Result<Vec<SrpiPoint>> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    if window == 0 {
        return Err(Error::param("window", "must be >= 1"));
    }
    let mut totals: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    let lo = panel.iter().map(|r| r.offset).min().unwrap_or(0);
    let hi = panel.iter().map(|r| r.offset).max().unwrap_or(0);
    for o in lo..=hi {
        totals.insert(o, Vec::new());
    }
    for r in panel {
        totals.entry(r.offset).or_default().push(r.ele);
    }
    if reference_totals.len() != totals.len() {
        return Err(Error::LengthMismatch {
            expected: totals.len(),
            got: reference_totals.len(),
        });
    }
    let srpi: Vec<f64> = totals.values().map(|v| compensated_sum(v.iter().copied())).collect();
    let diff: Vec<f64> = srpi.iter().zip(reference_totals).map(|(s, r)| s - r).collect();
    Ok(totals
        .keys()
        .enumerate()
        .map(|(i, &offset)| {
            let from = (i + 1).saturating_sub(window);
            let w = &diff[from..=i];
            SrpiPoint {
                offset,
                srpi: srpi[i],
                delta_srpi: compensated_sum(w.iter().copied()) / w.len() as f64,
            }
        })
        .collect())
}

/// [`srpi_with`] using the 7-day smoothing window.
pub fn srpi(panel: &[FirmDay], reference_totals: &[f64]) -> Result<Vec<SrpiPoint>> {
    srpi_with(panel, reference_totals, 7)
}
