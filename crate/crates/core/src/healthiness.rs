//! Traffic-light healthiness scoring (green 1, amber 2, red 3) over fat,
//! saturated fat, sugars and salt per 100 g.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grams of salt (NaCl) per gram of sodium.
pub const SODIUM_TO_SALT: f64 = 2.54;

const DEFAULT_THRESHOLDS: &str = include_str!("../data/fsa_thresholds.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub green_max: f64,
    pub amber_max: f64,
}

impl Band {
    /// Boundary values score the healthier band.
    pub fn points(&self, amount: f64) -> u8 {
        if amount <= self.green_max {
            1
        } else if amount <= self.amber_max {
            2
        } else {
            3
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsaThresholds {
    pub fat: Band,
    pub saturated_fat: Band,
    pub sugars: Band,
    pub salt: Band,
}

impl Default for FsaThresholds {
    fn default() -> Self {
        Self::read_csv(DEFAULT_THRESHOLDS.as_bytes()).expect("bundled thresholds parse")
    }
}

impl FsaThresholds {
    /// Reads `nutrient,green_max,amber_max` CSV; all four nutrients
    /// (fat, saturated_fat, sugars, salt) must be present.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut bands = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |reason: String| Error::Parse {
                path: "thresholds".into(),
                line: i + 2,
                reason,
            };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", rec.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("not a number: `{s}`")))
            };
            let band = Band {
                green_max: num(&rec[1])?,
                amber_max: num(&rec[2])?,
            };
            if band.green_max.is_nan() || band.green_max >= band.amber_max {
                return Err(bad(format!(
                    "green_max must be below amber_max for {}",
                    &rec[0]
                )));
            }
            bands.insert(rec[0].to_string(), band);
        }
        let take = |name: &str| {
            bands
                .get(name)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("thresholds missing `{name}`")))
        };
        Ok(Self {
            fat: take("fat")?,
            saturated_fat: take("saturated_fat")?,
            sugars: take("sugars")?,
            salt: take("salt")?,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsaScore {
    pub fat_pts: u8,
    pub satfat_pts: u8,
    pub sugars_pts: u8,
    pub salt_pts: u8,
    pub total: u8,
}

impl FsaScore {
    /// Components in report order: fat, satfat, sugars, salt, total.
    pub fn components(&self) -> [(&'static str, u8); 5] {
        [
            ("fat", self.fat_pts),
            ("satfat", self.satfat_pts),
            ("sugars", self.sugars_pts),
            ("salt", self.salt_pts),
            ("total", self.total),
        ]
    }
}

pub fn salt_from_sodium(sodium_g: f64) -> Result<f64> {
    if sodium_g < 0.0 || sodium_g.is_nan() {
        return Err(Error::Negative(sodium_g));
    }
    Ok(SODIUM_TO_SALT * sodium_g)
}

/// Scores per-100 g amounts. Needs `fat`, `saturated_fat`, `sugars` and
/// `sodium`; salt is derived from sodium.
pub fn fsa_score(per_100g: &BTreeMap<String, f64>, thresholds: &FsaThresholds) -> Result<FsaScore> {
    let get = |k: &str| {
        per_100g
            .get(k)
            .copied()
            .ok_or_else(|| Error::MissingNutrient(k.to_string()))
    };
    let fat_pts = thresholds.fat.points(get("fat")?);
    let satfat_pts = thresholds.saturated_fat.points(get("saturated_fat")?);
    let sugars_pts = thresholds.sugars.points(get("sugars")?);
    let salt_pts = thresholds.salt.points(salt_from_sodium(get("sodium")?)?);
    Ok(FsaScore {
        fat_pts,
        satfat_pts,
        sugars_pts,
        salt_pts,
        total: fat_pts + satfat_pts + sugars_pts + salt_pts,
    })
}

/// `recipe_id,fat_pts,satfat_pts,sugars_pts,salt_pts,total` CSV.
pub fn write_scores_csv<W: Write>(scores: &[(String, FsaScore)], w: W) -> Result<()> {
    let mut csv = crate::csvio::writer(w);
    csv.write_record([
        "recipe_id",
        "fat_pts",
        "satfat_pts",
        "sugars_pts",
        "salt_pts",
        "total",
    ])?;
    for (id, s) in scores {
        csv.write_record([
            id.clone(),
            s.fat_pts.to_string(),
            s.satfat_pts.to_string(),
            s.sugars_pts.to_string(),
            s.salt_pts.to_string(),
            s.total.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn amounts(fat: f64, satfat: f64, sugars: f64, sodium: f64) -> BTreeMap<String, f64> {
        [
            ("fat", fat),
            ("saturated_fat", satfat),
            ("sugars", sugars),
            ("sodium", sodium),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    #[test]
    fn default_table() {
        let t = FsaThresholds::default();
        assert_eq!(
            t.fat,
            Band {
                green_max: 3.0,
                amber_max: 17.5
            }
        );
        assert_eq!(
            t.saturated_fat,
            Band {
                green_max: 1.5,
                amber_max: 5.0
            }
        );
        assert_eq!(
            t.sugars,
            Band {
                green_max: 5.0,
                amber_max: 22.5
            }
        );
        assert_eq!(
            t.salt,
            Band {
                green_max: 0.3,
                amber_max: 1.5
            }
        );
    }

    #[test]
    fn salt_conversion() {
        assert_eq!(salt_from_sodium(0.0).unwrap(), 0.0);
        assert_eq!(salt_from_sodium(1.0).unwrap(), 2.54);
        assert!((salt_from_sodium(0.4).unwrap() - 1.016).abs() < 1e-15);
        assert!(salt_from_sodium(-0.1).is_err());
    }

    #[test]
    fn all_green_and_all_red() {
        let t = FsaThresholds::default();
        assert_eq!(
            fsa_score(&amounts(1.0, 0.5, 2.0, 0.05), &t).unwrap().total,
            4
        );
        let red = fsa_score(&amounts(20.0, 6.0, 30.0, 1.0), &t).unwrap();
        assert_eq!(
            (
                red.fat_pts,
                red.satfat_pts,
                red.sugars_pts,
                red.salt_pts,
                red.total
            ),
            (3, 3, 3, 3, 12)
        );
    }

    #[test]
    fn boundary_is_green() {
        let s = fsa_score(&amounts(3.0, 0.0, 0.0, 0.0), &FsaThresholds::default()).unwrap();
        assert_eq!(s.fat_pts, 1);
    }

    #[test]
    fn missing_nutrient_named() {
        let mut m = amounts(1.0, 1.0, 1.0, 1.0);
        m.remove("sugars");
        match fsa_score(&m, &FsaThresholds::default()) {
            Err(Error::MissingNutrient(n)) => assert_eq!(n, "sugars"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn threshold_csv_validation() {
        let bad = "nutrient,green_max,amber_max\nfat,5,3\n";
        assert!(FsaThresholds::read_csv(bad.as_bytes()).is_err());
        let partial = "nutrient,green_max,amber_max\nfat,3,17.5\n";
        assert!(FsaThresholds::read_csv(partial.as_bytes()).is_err());
    }

    #[test]
    fn grid_totals_in_range() {
        let t = FsaThresholds::default();
        let fat = [0.0, 3.0, 3.01, 17.5, 17.51, 80.0];
        let sat = [0.0, 1.5, 1.51, 5.0, 5.01];
        let sug = [0.0, 5.0, 5.01, 22.5, 22.51];
        let sod = [0.0, 0.3 / 2.54, 0.12, 1.5 / 2.54, 0.6, 3.0];
        for &a in &fat {
            for &b in &sat {
                for &c in &sug {
                    for &d in &sod {
                        let s = fsa_score(&amounts(a, b, c, d), &t).unwrap();
                        assert!((4..=12).contains(&s.total));
                    }
                }
            }
        }
    }
}
