//! Recipe corpora: JSON Lines loading with per-line rejection, nutrient
//! normalization by dry weight, sugar-to-fiber partitioning and selection of
//! annotation candidates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::midranks;
use crate::{Error, Result};

/// Nutrients every accepted recipe must carry.
pub const REQUIRED_NUTRIENTS: [&str; 7] = [
    "fat",
    "saturated_fat",
    "carbohydrates",
    "sugars",
    "fiber",
    "protein",
    "sodium",
];

/// Nutrient keys that hold energy rather than mass. They are excluded from
/// the dry-weight sum.
pub const ENERGY_KEYS: [&str; 3] = ["calories", "energy", "energy_kcal"];

/// Category tag marking recipes the source site files as low glycemic.
pub const LOW_GLYCEMIC_TAG: &str = "low-glycemic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub title: String,
    pub ingredients: Vec<String>,
    pub directions: Vec<String>,
    pub nutrients: BTreeMap<String, f64>,
    #[serde(default)]
    pub category_tags: BTreeSet<String>,
}

impl Recipe {
    pub fn nutrient(&self, name: &str) -> Result<f64> {
        self.nutrients
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingNutrient(name.to_string()))
    }

    /// Checks the invariants of an accepted recipe and returns the first
    /// violated rule as a short reason string.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.ingredients.len() < 2 {
            return Err("fewer than two ingredients".into());
        }
        if self.directions.len() < 2 {
            return Err("fewer than two direction sentences".into());
        }
        if self.nutrients.values().any(|v| !v.is_finite()) {
            return Err("non-finite nutrient".into());
        }
        if self.nutrients.values().any(|&v| v < 0.0) {
            return Err("negative nutrient".into());
        }
        if let Some(k) = REQUIRED_NUTRIENTS
            .iter()
            .find(|k| !self.nutrients.contains_key(**k))
        {
            return Err(format!("missing nutrient {k}"));
        }
        let dry: f64 = self
            .nutrients
            .iter()
            .filter(|(k, _)| !is_energy(k))
            .map(|(_, v)| v)
            .sum();
        if dry <= 0.0 {
            return Err("zero dry weight".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub recipes: Vec<Recipe>,
    pub rejections: Vec<Rejection>,
}

/// Loads a JSON Lines corpus. Malformed or invalid lines become rejection
/// records; only an unreadable file is fatal.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let reason = match serde_json::from_str::<Recipe>(&line) {
            Err(e) => Some(format!("invalid json: {e}")),
            Ok(r) => match r.validate() {
                Err(reason) => Some(reason),
                Ok(()) if !seen.insert(r.id.clone()) => Some(format!("duplicate id {}", r.id)),
                Ok(()) => {
                    out.recipes.push(r);
                    None
                }
            },
        };
        if let Some(reason) = reason {
            out.rejections.push(Rejection {
                line: line_no,
                reason,
            });
        }
    }
    Ok(out)
}

/// Writes recipes as JSON Lines, one object per line.
pub fn write_corpus<W: Write>(recipes: &[Recipe], mut w: W) -> Result<()> {
    for r in recipes {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

/// Writes rejection records as `line,reason` CSV.
pub fn write_rejections<W: Write>(rejections: &[Rejection], w: W) -> Result<()> {
    let mut csv = crate::csvio::writer(w);
    csv.write_record(["line", "reason"])?;
    for r in rejections {
        csv.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    csv.flush().map_err(|e| Error::io("<rejections>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedNutrition {
    pub dry_weight: f64,
    pub normalized: BTreeMap<String, f64>,
    pub per_100g: BTreeMap<String, f64>,
    /// sugars / fiber; +inf when fiber is zero and sugars positive, 0 when
    /// both are zero.
    pub sf_ratio: f64,
}

fn is_energy(key: &str) -> bool {
    ENERGY_KEYS.contains(&key)
}

pub fn derive_nutrition(r: &Recipe) -> Result<DerivedNutrition> {
    let dry_weight: f64 = r
        .nutrients
        .iter()
        .filter(|(k, _)| !is_energy(k))
        .map(|(_, v)| *v)
        .sum();
    if dry_weight <= 0.0 {
        return Err(Error::ZeroDryWeight);
    }
    let normalized: BTreeMap<String, f64> = r
        .nutrients
        .iter()
        .map(|(k, v)| (k.clone(), v / dry_weight))
        .collect();
    let per_100g = normalized
        .iter()
        .map(|(k, v)| (k.clone(), 100.0 * v))
        .collect();
    let sugars = r.nutrients.get("sugars").copied().unwrap_or(0.0);
    let fiber = r.nutrients.get("fiber").copied().unwrap_or(0.0);
    let sf_ratio = match (sugars > 0.0, fiber > 0.0) {
        (_, true) => sugars / fiber,
        (true, false) => f64::INFINITY,
        (false, false) => 0.0,
    };
    Ok(DerivedNutrition {
        dry_weight,
        normalized,
        per_100g,
        sf_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SfPartition {
    Low,
    Mid,
    High,
}

impl SfPartition {
    pub const ALL: [SfPartition; 3] = [SfPartition::Low, SfPartition::Mid, SfPartition::High];
    pub const LOW_CUTOFF: f64 = 1.0;
    pub const HIGH_CUTOFF: f64 = 13.0;

    /// Total over `[0, +inf]`; NaN is treated as HIGH.
    pub fn from_ratio(sf_ratio: f64) -> Self {
        if sf_ratio < Self::LOW_CUTOFF {
            SfPartition::Low
        } else if sf_ratio < Self::HIGH_CUTOFF {
            SfPartition::Mid
        } else {
            SfPartition::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SfPartition::Low => "LOW",
            SfPartition::Mid => "MID",
            SfPartition::High => "HIGH",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn partition_by_sf(d: &DerivedNutrition) -> SfPartition {
    SfPartition::from_ratio(d.sf_ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSelection {
    /// Selected ids ordered by partition, then rank-sum, then id.
    pub ids: Vec<String>,
    pub per_partition: [usize; 3],
    pub warnings: Vec<String>,
}

/// Picks `n_total` recipes for annotation.
///
/// Each source's probabilities are midranked ascending over all recipes;
/// within every S/F partition the recipes with the lowest rank-sums are
/// taken, ties going to the smaller id. Quotas are ⌈n/3⌉ for LOW and MID
/// with HIGH taking the remainder; a short partition gives its shortfall to
/// the others.
pub fn select_annotation_candidates(
    recipes: &[Recipe],
    probs_a: &HashMap<String, f64>,
    probs_b: &HashMap<String, f64>,
    n_total: usize,
) -> Result<CandidateSelection> {
    if n_total > recipes.len() {
        return Err(Error::Invalid(format!(
            "requested {n_total} candidates from {} recipes",
            recipes.len()
        )));
    }
    let lookup = |m: &HashMap<String, f64>, id: &str, src: &str| {
        m.get(id)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("no {src} probability for recipe {id}")))
    };
    let mut pa = Vec::with_capacity(recipes.len());
    let mut pb = Vec::with_capacity(recipes.len());
    let mut parts = Vec::with_capacity(recipes.len());
    for r in recipes {
        pa.push(lookup(probs_a, &r.id, "source A")?);
        pb.push(lookup(probs_b, &r.id, "source B")?);
        parts.push(partition_by_sf(&derive_nutrition(r)?));
    }
    let (ra, rb) = (midranks(&pa), midranks(&pb));

    let mut buckets: [Vec<(f64, &str)>; 3] = Default::default();
    for (i, r) in recipes.iter().enumerate() {
        buckets[parts[i].index()].push((ra[i] + rb[i], r.id.as_str()));
    }
    for b in &mut buckets {
        b.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(y.1)));
    }

    let per = n_total.div_ceil(3);
    let mut quota = [0usize; 3];
    let mut remaining = n_total;
    for q in quota.iter_mut() {
        *q = per.min(remaining);
        remaining -= *q;
    }
    let mut warnings = Vec::new();
    let mut shortfall = 0;
    for p in SfPartition::ALL {
        let i = p.index();
        if buckets[i].len() < quota[i] {
            let msg = format!(
                "partition {} has {} recipes, fewer than its quota of {}",
                p.as_str(),
                buckets[i].len(),
                quota[i]
            );
            log::warn!("{msg}");
            warnings.push(msg);
            shortfall += quota[i] - buckets[i].len();
            quota[i] = buckets[i].len();
        }
    }
    for i in 0..3 {
        let spare = buckets[i].len() - quota[i];
        let extra = spare.min(shortfall);
        quota[i] += extra;
        shortfall -= extra;
    }

    let ids = (0..3)
        .flat_map(|i| buckets[i][..quota[i]].iter().map(|(_, id)| id.to_string()))
        .collect();
    Ok(CandidateSelection {
        ids,
        per_partition: quota,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn recipe(id: &str, nutrients: &[(&str, f64)]) -> Recipe {
        Recipe {
            id: id.into(),
            title: format!("recipe {id}"),
            ingredients: vec!["1 cup flour".into(), "2 eggs".into()],
            directions: vec!["Mix.".into(), "Bake.".into()],
            nutrients: nutrients.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            category_tags: BTreeSet::new(),
        }
    }

    fn full(id: &str, sugars: f64, fiber: f64) -> Recipe {
        recipe(
            id,
            &[
                ("fat", 5.0),
                ("saturated_fat", 1.0),
                ("carbohydrates", 20.0),
                ("sugars", sugars),
                ("fiber", fiber),
                ("protein", 6.0),
                ("sodium", 0.5),
            ],
        )
    }

    #[test]
    fn loads_valid_and_rejects_bad_lines() {
        let good = serde_json::to_string(&full("a", 1.0, 1.0)).unwrap();
        let mut one_ing = full("b", 1.0, 1.0);
        one_ing.ingredients.truncate(1);
        let mut neg = full("c", -1.0, 1.0);
        neg.id = "c".into();
        let text = format!(
            "{good}\n{}\n{}\nnot json\n\n",
            serde_json::to_string(&one_ing).unwrap(),
            serde_json::to_string(&neg).unwrap()
        );
        let c = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(c.recipes.len(), 1);
        assert_eq!(c.rejections.len(), 3);
        assert_eq!(
            c.rejections[0],
            Rejection {
                line: 2,
                reason: "fewer than two ingredients".into()
            }
        );
        assert_eq!(c.rejections[1].reason, "negative nutrient");
        assert_eq!(c.rejections[2].line, 4);
    }

    #[test]
    fn missing_required_nutrient_is_rejected() {
        let r = recipe("x", &[("fat", 1.0)]);
        let c = read_corpus(serde_json::to_string(&r).unwrap().as_bytes()).unwrap();
        assert_eq!(c.rejections[0].reason, "missing nutrient saturated_fat");
    }

    #[test]
    fn three_recipe_file() {
        let text: String = ["a", "b", "c"]
            .iter()
            .map(|id| serde_json::to_string(&full(id, 2.0, 1.0)).unwrap() + "\n")
            .collect();
        let c = read_corpus(text.as_bytes()).unwrap();
        assert_eq!((c.recipes.len(), c.rejections.len()), (3, 0));
    }

    #[test]
    fn derive_basic_arithmetic() {
        let d = derive_nutrition(&recipe(
            "a",
            &[("sugars", 10.0), ("fiber", 2.0), ("fat", 8.0)],
        ))
        .unwrap();
        assert_eq!(d.dry_weight, 20.0);
        assert_eq!(d.sf_ratio, 5.0);
        assert_eq!(d.normalized["sugars"], 0.5);
        assert_eq!(d.per_100g["sugars"], 50.0);
    }

    #[test]
    fn derive_excludes_energy() {
        let d = derive_nutrition(&recipe("a", &[("sugars", 10.0), ("calories", 400.0)])).unwrap();
        assert_eq!(d.dry_weight, 10.0);
        assert_eq!(d.normalized["calories"], 40.0);
    }

    #[test]
    fn sf_degenerate_cases() {
        let inf = derive_nutrition(&recipe("a", &[("sugars", 5.0), ("fiber", 0.0)])).unwrap();
        assert_eq!(inf.sf_ratio, f64::INFINITY);
        assert_eq!(partition_by_sf(&inf), SfPartition::High);
        let zero = derive_nutrition(&recipe(
            "a",
            &[("sugars", 0.0), ("fiber", 0.0), ("fat", 1.0)],
        ))
        .unwrap();
        assert_eq!(zero.sf_ratio, 0.0);
    }

    #[test]
    fn zero_dry_weight() {
        let r = recipe("a", &[("sugars", 0.0), ("calories", 10.0)]);
        assert!(matches!(derive_nutrition(&r), Err(Error::ZeroDryWeight)));
    }

    #[test]
    fn partition_cutoffs() {
        assert_eq!(SfPartition::from_ratio(0.5), SfPartition::Low);
        assert_eq!(SfPartition::from_ratio(1.0), SfPartition::Mid);
        assert_eq!(SfPartition::from_ratio(5.0), SfPartition::Mid);
        assert_eq!(SfPartition::from_ratio(13.0), SfPartition::High);
        assert_eq!(SfPartition::from_ratio(20.0), SfPartition::High);
    }

    fn partitioned_set(per: usize) -> Vec<Recipe> {
        let mut out = Vec::new();
        for i in 0..per {
            out.push(full(&format!("low{i:03}"), 0.5, 1.0));
            out.push(full(&format!("mid{i:03}"), 5.0, 1.0));
            out.push(full(&format!("high{i:03}"), 20.0, 1.0));
        }
        out
    }

    fn uniform(rs: &[Recipe]) -> HashMap<String, f64> {
        rs.iter().map(|r| (r.id.clone(), 0.5)).collect()
    }

    #[test]
    fn quota_333_each() {
        let rs = partitioned_set(400);
        let sel = select_annotation_candidates(&rs, &uniform(&rs), &uniform(&rs), 999).unwrap();
        assert_eq!(sel.per_partition, [333, 333, 333]);
        assert_eq!(sel.ids.len(), 999);
    }

    #[test]
    fn uniform_probabilities_fall_back_to_id_order() {
        let rs = partitioned_set(9);
        let sel = select_annotation_candidates(&rs, &uniform(&rs), &uniform(&rs), 9).unwrap();
        assert_eq!(sel.per_partition, [3, 3, 3]);
        assert_eq!(&sel.ids[..3], &["low000", "low001", "low002"]);
        assert_eq!(&sel.ids[6..], &["high000", "high001", "high002"]);
    }

    #[test]
    fn short_partition_redistributes() {
        let mut rs = partitioned_set(10);
        rs.retain(|r| !r.id.starts_with("mid") || r.id.as_str() < "mid002");
        let sel = select_annotation_candidates(&rs, &uniform(&rs), &uniform(&rs), 12).unwrap();
        assert_eq!(sel.per_partition, [6, 2, 4]);
        assert_eq!(sel.ids.len(), 12);
        assert_eq!(sel.warnings.len(), 1);
    }

    proptest! {
        #[test]
        fn derive_is_scale_covariant(vals in proptest::collection::vec(0.01f64..50.0, 3), c in 0.1f64..20.0) {
            let base = recipe("a", &[("sugars", vals[0]), ("fiber", vals[1]), ("fat", vals[2])]);
            let scaled = recipe("a", &[("sugars", vals[0] * c), ("fiber", vals[1] * c), ("fat", vals[2] * c)]);
            let (d0, d1) = (derive_nutrition(&base).unwrap(), derive_nutrition(&scaled).unwrap());
            prop_assert!((d1.dry_weight - c * d0.dry_weight).abs() < 1e-9 * d1.dry_weight);
            prop_assert!((d1.sf_ratio - d0.sf_ratio).abs() < 1e-9 * d0.sf_ratio.max(1.0));
            for (k, v) in &d0.normalized {
                prop_assert!((d1.normalized[k] - v).abs() < 1e-12);
            }
        }

        #[test]
        fn selection_is_order_invariant(seed in 0u64..1000, rot in 0usize..30) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rs = partitioned_set(10);
            let pa: HashMap<String, f64> = rs.iter().map(|r| (r.id.clone(), (rng.gen_range(0..5) as f64) / 4.0)).collect();
            let pb: HashMap<String, f64> = rs.iter().map(|r| (r.id.clone(), rng.gen::<f64>())).collect();
            let mut shuffled = rs.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            let a = select_annotation_candidates(&rs, &pa, &pb, 10).unwrap();
            let b = select_annotation_candidates(&shuffled, &pa, &pb, 10).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn corpus_round_trips(n in 1usize..6, sugar in 0.0f64..30.0) {
            let rs: Vec<Recipe> = (0..n).map(|i| {
                let mut r = full(&format!("r{i}"), sugar, 1.5);
                r.category_tags.insert(LOW_GLYCEMIC_TAG.into());
                r.title = format!("Tom's \"best\" dish #{i}");
                r
            }).collect();
            let mut buf = Vec::new();
            write_corpus(&rs, &mut buf).unwrap();
            let back = read_corpus(buf.as_slice()).unwrap();
            prop_assert_eq!(back.recipes, rs);
        }
    }
}
