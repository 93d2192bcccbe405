//! Crowd judgments: Krippendorff's alpha for agreement, Dawid-Skene EM for
//! label aggregation, and UD/HD binarization.
//!
//! Ratings follow the aggregated convention: 1 = strongly disagree that the
//! recipe has low glycemic impact, 5 = strongly agree. NOT_SURE is a sixth
//! response class for Dawid-Skene and missing data for alpha.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

pub const N_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rating {
    Score(u8),
    NotSure,
}

impl Rating {
    /// Class index: 0..=4 for scores 1..=5, 5 for NOT_SURE.
    pub fn class_index(self) -> usize {
        match self {
            Rating::Score(s) => usize::from(s - 1),
            Rating::NotSure => 5,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i < 5 {
            Rating::Score(i as u8 + 1)
        } else {
            Rating::NotSure
        }
    }

    pub fn score(self) -> Option<u8> {
        match self {
            Rating::Score(s) => Some(s),
            Rating::NotSure => None,
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rating::Score(s) => write!(f, "{s}"),
            Rating::NotSure => f.write_str("NS"),
        }
    }
}

impl FromStr for Rating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "NS" | "ns" | "NOT_SURE" => Ok(Rating::NotSure),
            t => match t.parse::<u8>() {
                Ok(v @ 1..=5) => Ok(Rating::Score(v)),
                _ => Err(Error::Invalid(format!("invalid rating `{t}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub worker_id: String,
    pub recipe_id: String,
    pub rating: Rating,
}

impl Judgment {
    pub fn new(worker_id: impl Into<String>, recipe_id: impl Into<String>, rating: Rating) -> Self {
        Self {
            worker_id: worker_id.into(),
            recipe_id: recipe_id.into(),
            rating,
        }
    }
}

/// Judgments indexed by recipe and worker (both in sorted id order).
#[derive(Debug, Clone)]
pub struct JudgmentSet {
    judgments: Vec<Judgment>,
    recipes: Vec<String>,
    workers: Vec<String>,
    /// per recipe: (worker index, class index)
    by_recipe: Vec<Vec<(usize, usize)>>,
}

impl JudgmentSet {
    /// Fails on a repeated (worker, recipe) pair.
    pub fn new(judgments: Vec<Judgment>) -> Result<Self> {
        let mut seen = HashSet::new();
        for j in &judgments {
            if !seen.insert((j.worker_id.as_str(), j.recipe_id.as_str())) {
                return Err(Error::Invalid(format!(
                    "worker {} judged recipe {} more than once",
                    j.worker_id, j.recipe_id
                )));
            }
        }
        let recipes: Vec<String> = judgments
            .iter()
            .map(|j| j.recipe_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let workers: Vec<String> = judgments
            .iter()
            .map(|j| j.worker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut by_recipe = vec![Vec::new(); recipes.len()];
        for j in &judgments {
            let r = recipes.binary_search(&j.recipe_id).expect("indexed");
            let w = workers.binary_search(&j.worker_id).expect("indexed");
            by_recipe[r].push((w, j.rating.class_index()));
        }
        for v in &mut by_recipe {
            v.sort_unstable();
        }
        Ok(Self {
            judgments,
            recipes,
            workers,
            by_recipe,
        })
    }

    /// Reads `worker_id,recipe_id,rating` CSV with a header row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != 3 {
                return Err(Error::Parse {
                    path: "judgments".into(),
                    line,
                    reason: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let rating = rec[2].parse().map_err(|e: Error| Error::Parse {
                path: "judgments".into(),
                line,
                reason: e.to_string(),
            })?;
            out.push(Judgment::new(&rec[0], &rec[1], rating));
        }
        Self::new(out)
    }

    pub fn judgments(&self) -> &[Judgment] {
        &self.judgments
    }

    pub fn recipes(&self) -> &[String] {
        &self.recipes
    }

    pub fn workers(&self) -> &[String] {
        &self.workers
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// (worker index, class index) pairs for the recipe at `idx`.
    pub fn recipe_judgments(&self, idx: usize) -> &[(usize, usize)] {
        &self.by_recipe[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMetric {
    Nominal,
    #[default]
    Ordinal,
    Interval,
}

/// Squared difference δ² between rating values `c` and `k` (1-based).
/// `marginals[v-1]` is the number of pairable values equal to v.
fn metric_delta(metric: AlphaMetric, c: usize, k: usize, marginals: &[f64; 5]) -> f64 {
    match metric {
        AlphaMetric::Nominal => f64::from(u8::from(c != k)),
        AlphaMetric::Interval => {
            let d = c as f64 - k as f64;
            d * d
        }
        AlphaMetric::Ordinal => {
            let (lo, hi) = (c.min(k), c.max(k));
            let span: f64 = marginals[lo - 1..hi].iter().sum();
            let d = span - (marginals[c - 1] + marginals[k - 1]) / 2.0;
            d * d
        }
    }
}

/// Krippendorff's alpha over numeric ratings via the coincidence matrix.
/// NOT_SURE is treated as missing; recipes with fewer than two numeric
/// ratings are not pairable and are ignored.
pub fn krippendorff_alpha(js: &JudgmentSet, metric: AlphaMetric) -> Result<f64> {
    // coincidences[c][k], values 1..=5 at index 0..=4
    let mut coincidences = [[0.0f64; 5]; 5];
    let mut any_unit = false;
    for idx in 0..js.recipes.len() {
        let values: Vec<usize> = js.by_recipe[idx]
            .iter()
            .filter(|(_, c)| *c < 5)
            .map(|(_, c)| *c)
            .collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        any_unit = true;
        let weight = 1.0 / (m - 1) as f64;
        for (i, &a) in values.iter().enumerate() {
            for (j, &b) in values.iter().enumerate() {
                if i != j {
                    coincidences[a][b] += weight;
                }
            }
        }
    }
    if !any_unit {
        return Err(Error::NoOverlap);
    }
    let mut marginals = [0.0f64; 5];
    for (c, row) in coincidences.iter().enumerate() {
        marginals[c] = row.iter().sum();
    }
    let n: f64 = marginals.iter().sum();
    let (mut observed, mut expected) = (0.0, 0.0);
    for c in 0..5 {
        for k in 0..5 {
            let delta = metric_delta(metric, c + 1, k + 1, &marginals);
            observed += coincidences[c][k] * delta;
            expected += marginals[c] * marginals[k] * delta;
        }
    }
    if expected == 0.0 {
        return Err(Error::DegenerateData);
    }
    if observed == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DawidSkeneOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Additive smoothing on confusion-matrix counts.
    pub smoothing: f64,
}

impl Default for DawidSkeneOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            smoothing: 0.01,
        }
    }
}

pub type ConfusionMatrix = [[f64; N_CLASSES]; N_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub recipe_id: String,
    pub label: Rating,
    pub posterior: [f64; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DawidSkeneResult {
    /// One label per recipe, in recipe-id order.
    pub labels: Vec<AggregatedLabel>,
    /// Row = true class, column = response; rows sum to 1.
    pub confusions: BTreeMap<String, ConfusionMatrix>,
    pub priors: [f64; N_CLASSES],
    /// Smoothing-penalized log-likelihood after each iteration. EM never
    /// decreases this quantity.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Argmax with ties going to the lower class index (the lower rating).
fn argmax_low(p: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

fn log_sum_exp(v: &[f64; N_CLASSES]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Dawid-Skene EM over per-worker confusion matrices.
///
/// Posteriors start at normalized vote counts. Each iteration runs an
/// M-step (class priors; smoothed, row-normalized confusion matrices)
/// followed by an E-step. Stops when the largest posterior change drops
/// below `tol` or after `max_iters` iterations.
pub fn dawid_skene(js: &JudgmentSet, opts: &DawidSkeneOptions) -> Result<DawidSkeneResult> {
    if js.is_empty() {
        return Err(Error::EmptyJudgments);
    }
    let n_items = js.recipes.len();
    let n_workers = js.workers.len();

    let mut posterior: Vec<[f64; N_CLASSES]> = js
        .by_recipe
        .iter()
        .map(|jr| {
            let mut p = [0.0; N_CLASSES];
            for &(_, c) in jr {
                p[c] += 1.0;
            }
            let total = jr.len() as f64;
            p.iter_mut().for_each(|v| *v /= total);
            p
        })
        .collect();

    let mut priors = [0.0; N_CLASSES];
    let mut confusions = vec![[[0.0; N_CLASSES]; N_CLASSES]; n_workers];
    // A lone worker's off-diagonal confusion mass is unidentifiable, and
    // smoothing it leaks posterior mass toward the larger classes until they
    // absorb the smaller ones.
    let smoothing = if n_workers == 1 { 0.0 } else { opts.smoothing };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;

        // M-step, reduced in recipe order.
        priors = [0.0; N_CLASSES];
        let mut counts = vec![[[0.0; N_CLASSES]; N_CLASSES]; n_workers];
        for (i, p) in posterior.iter().enumerate() {
            for k in 0..N_CLASSES {
                priors[k] += p[k];
            }
            for &(w, l) in &js.by_recipe[i] {
                for k in 0..N_CLASSES {
                    counts[w][k][l] += p[k];
                }
            }
        }
        priors.iter_mut().for_each(|v| *v /= n_items as f64);
        for (w, cm) in counts.iter().enumerate() {
            for k in 0..N_CLASSES {
                let row_total: f64 = cm[k].iter().sum::<f64>() + smoothing * N_CLASSES as f64;
                for l in 0..N_CLASSES {
                    confusions[w][k][l] = if row_total > 0.0 {
                        (cm[k][l] + smoothing) / row_total
                    } else {
                        1.0 / N_CLASSES as f64
                    };
                }
            }
        }

        // E-step
        let log_priors = priors.map(f64::ln);
        let log_conf: Vec<ConfusionMatrix> = confusions
            .iter()
            .map(|cm| cm.map(|row| row.map(f64::ln)))
            .collect();
        let step = par::map_range(n_items, |i| {
            let mut lp = log_priors;
            for &(w, l) in &js.by_recipe[i] {
                for k in 0..N_CLASSES {
                    lp[k] += log_conf[w][k][l];
                }
            }
            let z = log_sum_exp(&lp);
            (lp.map(|v| (v - z).exp()), z)
        });

        let mut loglik: f64 = step.iter().map(|(_, z)| z).sum();
        if smoothing > 0.0 {
            let penalty: f64 = log_conf.iter().flatten().flatten().sum();
            loglik += smoothing * penalty;
        }
        trace.push(loglik);

        let mut delta = 0.0f64;
        for (old, (new, _)) in posterior.iter_mut().zip(step) {
            for k in 0..N_CLASSES {
                delta = delta.max((old[k] - new[k]).abs());
            }
            *old = new;
        }
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    let labels = js
        .recipes
        .iter()
        .zip(&posterior)
        .map(|(id, p)| AggregatedLabel {
            recipe_id: id.clone(),
            label: Rating::from_class_index(argmax_low(p)),
            posterior: *p,
        })
        .collect();
    let confusions = js.workers.iter().cloned().zip(confusions).collect();
    Ok(DawidSkeneResult {
        labels,
        confusions,
        priors,
        log_likelihood: trace,
        iterations,
        converged,
    })
}

/// `recipe_id,label,p1,p2,p3,p4,p5,pNS` CSV.
pub fn write_labels_csv<W: Write>(labels: &[AggregatedLabel], w: W) -> Result<()> {
    let mut csv = crate::csvio::writer(w);
    csv.write_record(["recipe_id", "label", "p1", "p2", "p3", "p4", "p5", "pNS"])?;
    for l in labels {
        let mut rec = vec![l.recipe_id.clone(), l.label.to_string()];
        rec.extend(l.posterior.iter().map(|p| p.to_string()));
        csv.write_record(rec)?;
    }
    csv.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

/// Reads labels written by [`write_labels_csv`]. Only `recipe_id` and
/// `label` are required; missing posterior columns become a one-hot vector.
pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<AggregatedLabel>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, label_col) = match (col("recipe_id"), col("label")) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Invalid(
                "labels CSV needs recipe_id and label columns".into(),
            ))
        }
    };
    let p_cols: Vec<Option<usize>> = ["p1", "p2", "p3", "p4", "p5", "pNS"]
        .iter()
        .map(|n| col(n))
        .collect();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse_err = |reason: String| Error::Parse {
            path: "labels".into(),
            line: i + 2,
            reason,
        };
        let label: Rating = rec
            .get(label_col)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| parse_err(e.to_string()))?;
        let mut posterior = [0.0; N_CLASSES];
        if p_cols.iter().all(Option::is_some) {
            for (k, c) in p_cols.iter().enumerate() {
                let raw = rec.get(c.expect("checked")).unwrap_or("");
                posterior[k] = raw
                    .parse()
                    .map_err(|_| parse_err(format!("bad probability `{raw}`")))?;
            }
        } else {
            posterior[label.class_index()] = 1.0;
        }
        out.push(AggregatedLabel {
            recipe_id: rec.get(id_col).unwrap_or("").to_string(),
            label,
            posterior,
        });
    }
    Ok(out)
}

/// Binary class. UD (unhealthy for diabetics) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryClass {
    #[serde(rename = "UD")]
    Ud,
    #[serde(rename = "HD")]
    Hd,
}

impl BinaryClass {
    pub fn is_positive(self) -> bool {
        self == BinaryClass::Ud
    }

    /// ±1 encoding with UD = +1.
    pub fn sign(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BinaryClass::Ud => BinaryClass::Hd,
            BinaryClass::Hd => BinaryClass::Ud,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryClass::Ud => "UD",
            BinaryClass::Hd => "HD",
        }
    }

    /// UD for ratings ≤ 3, HD for ≥ 4, None for NOT_SURE.
    pub fn from_rating(r: Rating) -> Option<Self> {
        match r {
            Rating::Score(s) if s <= 3 => Some(BinaryClass::Ud),
            Rating::Score(_) => Some(BinaryClass::Hd),
            Rating::NotSure => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryLabel {
    pub recipe_id: String,
    pub class: BinaryClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Binarized {
    pub labels: Vec<BinaryLabel>,
    pub excluded: usize,
}

pub fn binarize(labels: &[AggregatedLabel]) -> Binarized {
    let mut out = Binarized::default();
    for l in labels {
        match BinaryClass::from_rating(l.label) {
            Some(class) => out.labels.push(BinaryLabel {
                recipe_id: l.recipe_id.clone(),
                class,
            }),
            None => out.excluded += 1,
        }
    }
    out
}
