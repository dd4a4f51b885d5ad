//! Sector and district code tables.
//!
//! Sector codes are two-level: a tier letter (`P`, `S`, `T`) followed by a
//! two-digit sub-sector number. The built-in table lists the twenty
//! sub-sectors of the sample together with their share of firms and average
//! daily consumption, which seed the synthetic generator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Primary,
    Secondary,
    Tertiary,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Primary => "primary",
            Tier::Secondary => "secondary",
            Tier::Tertiary => "tertiary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "primary" | "p" => Some(Tier::Primary),
            "secondary" | "s" => Some(Tier::Secondary),
            "tertiary" | "t" => Some(Tier::Tertiary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorInfo {
    pub code: String,
    pub name: String,
    pub tier: Tier,
    /// Share of firms in the sample, as a fraction.
    pub share: f64,
    /// Average daily consumption, kWh.
    pub mean_kwh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistrictInfo {
    pub code: String,
    pub name: String,
}

// (code, name, tier, share %, mean kWh/day)
const SECTORS: &[(&str, &str, Tier, f64, f64)] = &[
    ("P01", "Agriculture, forestry, husbandry and fishery", Tier::Primary, 0.34, 1871.40),
    ("S01", "Mining", Tier::Secondary, 0.09, 3377.60),
    ("S02", "Manufacturing", Tier::Secondary, 42.54, 8654.80),
    ("S03", "Electricity, heat, gas and water production and supply", Tier::Secondary, 1.13, 11592.03),
    ("S04", "Construction", Tier::Secondary, 2.38, 2661.97),
    ("T01", "Wholesale and retail", Tier::Tertiary, 8.70, 4454.09),
    ("T02", "Transportation, storage and postal services", Tier::Tertiary, 4.11, 11335.49),
    ("T03", "Hotel and catering", Tier::Tertiary, 2.33, 4699.18),
    ("T04", "Information transmission, software and information technology services", Tier::Tertiary, 2.18, 8734.28),
    ("T05", "Finance", Tier::Tertiary, 1.59, 7614.70),
    ("T06", "Real estate", Tier::Tertiary, 16.73, 6331.18),
    ("T07", "Leasing and business services", Tier::Tertiary, 4.03, 7337.30),
    ("T08", "Scientific research and technology", Tier::Tertiary, 1.49, 8596.99),
    ("T09", "Water conservancy, environment and public facilities management", Tier::Tertiary, 3.39, 1940.06),
    ("T10", "Residential services, repair and other services", Tier::Tertiary, 0.35, 2217.51),
    ("T11", "Education", Tier::Tertiary, 0.78, 8440.72),
    ("T12", "Health and social work", Tier::Tertiary, 1.54, 8963.35),
    ("T13", "Culture, sports and entertainment", Tier::Tertiary, 1.49, 2936.55),
    ("T14", "Public administration, social security and social organizations", Tier::Tertiary, 2.36, 3274.85),
    ("T15", "Others", Tier::Tertiary, 2.45, 3669.08),
];

const DISTRICTS: &[(&str, &str)] = &[
    ("D01", "Huangpu"),
    ("D02", "Xuhui"),
    ("D03", "Changning"),
    ("D04", "Jingan"),
    ("D05", "Putuo"),
    ("D06", "Hongkou"),
    ("D07", "Yangpu"),
    ("D08", "Minhang"),
    ("D09", "Baoshan"),
    ("D10", "Jiading"),
    ("D11", "Pudong"),
    ("D12", "Jinshan"),
    ("D13", "Songjiang"),
    ("D14", "Qingpu"),
    ("D15", "Fengxian"),
    ("D16", "Chongming"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CodeMap {
    pub sectors: BTreeMap<String, SectorInfo>,
    pub districts: BTreeMap<String, DistrictInfo>,
}

impl Default for CodeMap {
    fn default() -> Self {
        let sectors = SECTORS
            .iter()
            .map(|&(code, name, tier, pct, kwh)| {
                (
                    code.to_string(),
                    SectorInfo {
                        code: code.into(),
                        name: name.into(),
                        tier,
                        share: pct / 100.0,
                        mean_kwh: kwh,
                    },
                )
            })
            .collect();
        let districts = DISTRICTS
            .iter()
            .map(|&(code, name)| {
                (
                    code.to_string(),
                    DistrictInfo {
                        code: code.into(),
                        name: name.into(),
                    },
                )
            })
            .collect();
        Self { sectors, districts }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CodeRow {
    kind: String,
    code: String,
    name: String,
    #[serde(default)]
    tier: String,
    #[serde(default)]
    share: Option<f64>,
    #[serde(default)]
    mean_kwh: Option<f64>,
}

impl CodeMap {
    /// Reads a `kind,code,name,tier,share,mean_kwh` CSV. `kind` is `sector`
    /// or `district`; the last three columns only apply to sectors.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut map = CodeMap {
            sectors: BTreeMap::new(),
            districts: BTreeMap::new(),
        };
        for row in reader.deserialize() {
            let row: CodeRow = row?;
            match row.kind.as_str() {
                "sector" => {
                    let tier = Tier::parse(&row.tier)
                        .or_else(|| row.code.get(..1).and_then(Tier::parse))
                        .ok_or_else(|| Error::Config(format!("no tier for sector `{}`", row.code)))?;
                    map.sectors.insert(
                        row.code.clone(),
                        SectorInfo {
                            code: row.code,
                            name: row.name,
                            tier,
                            share: row.share.unwrap_or(0.0),
                            mean_kwh: row.mean_kwh.unwrap_or(0.0),
                        },
                    );
                }
                "district" => {
                    map.districts.insert(
                        row.code.clone(),
                        DistrictInfo {
                            code: row.code,
                            name: row.name,
                        },
                    );
                }
                other => return Err(Error::Config(format!("unknown code kind `{other}`"))),
            }
        }
        Ok(map)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in self.sectors.values() {
            w.serialize(CodeRow {
                kind: "sector".into(),
                code: s.code.clone(),
                name: s.name.clone(),
                tier: s.tier.as_str().into(),
                share: Some(s.share),
                mean_kwh: Some(s.mean_kwh),
            })?;
        }
        for d in self.districts.values() {
            w.serialize(CodeRow {
                kind: "district".into(),
                code: d.code.clone(),
                name: d.name.clone(),
                tier: String::new(),
                share: None,
                mean_kwh: None,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sector(&self, code: &str) -> Result<&SectorInfo> {
        self.sectors.get(code).ok_or_else(|| Error::UnknownCode {
            kind: "sector",
            code: code.to_string(),
        })
    }

    pub fn district(&self, code: &str) -> Result<&DistrictInfo> {
        self.districts.get(code).ok_or_else(|| Error::UnknownCode {
            kind: "district",
            code: code.to_string(),
        })
    }

    pub fn tier_of(&self, sector_code: &str) -> Result<Tier> {
        self.sector(sector_code).map(|s| s.tier)
    }
}
