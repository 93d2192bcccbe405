//! Nested stratified cross-validation with (C, threshold) grid search,
//! UD-positive metrics and Kruskal-Wallis/Dunn comparison of variants.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify, predict_proba, train_lr, TrainOptions, TrainedClassifier};
use crate::crowd::BinaryClass;
use crate::features::{FeatureContext, FeatureSet, FittedArtifacts, SplitFeatures};
use crate::stats::{dunn_test, kruskal_wallis, Adjustment, Sample};
use crate::{par, rng, Error, Result};

pub const N_FOLDS: usize = 5;
pub const MIN_ROWS: usize = 10;
pub const MIN_PER_CLASS: usize = 5;
pub const ALPHA: f64 = 0.05;

/// Confusion counts with UD as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn from_predictions(predicted: &[BinaryClass], truth: &[BinaryClass]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (p, t) in predicted.iter().zip(truth) {
            match (p.is_positive(), t.is_positive()) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

/// Row indices into the label vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub outer: Vec<Split>,
    /// `inner[k]` splits the training rows of `outer[k]`.
    pub inner: Vec<Vec<Split>>,
}

/// Deals shuffled rows of each class round-robin over `k` folds, continuing
/// the deal position from one class to the next so fold sizes differ by at
/// most one.
pub fn stratified_folds<R: rand::Rng>(
    rows: &[usize],
    labels: &[BinaryClass],
    k: usize,
    rng: &mut R,
) -> Vec<Split> {
    let mut test: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut position = 0;
    for class in [BinaryClass::Ud, BinaryClass::Hd] {
        let mut members: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| labels[r] == class)
            .collect();
        members.shuffle(rng);
        for r in members {
            test[position % k].push(r);
            position += 1;
        }
    }
    test.into_iter()
        .map(|mut t| {
            t.sort_unstable();
            let train = rows
                .iter()
                .copied()
                .filter(|r| t.binary_search(r).is_err())
                .collect();
            Split { train, test: t }
        })
        .collect()
}

pub fn make_fold_plan(labels: &[BinaryClass], seed: u64) -> Result<FoldPlan> {
    if labels.len() < MIN_ROWS {
        return Err(Error::Invalid(format!(
            "need at least {MIN_ROWS} labeled rows for cross-validation, got {}",
            labels.len()
        )));
    }
    for class in [BinaryClass::Ud, BinaryClass::Hd] {
        let count = labels.iter().filter(|&&l| l == class).count();
        if count < MIN_PER_CLASS {
            return Err(Error::TooSmallToStratify {
                class: class.as_str().to_string(),
                count,
                needed: MIN_PER_CLASS,
            });
        }
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let outer = stratified_folds(&all, labels, N_FOLDS, &mut rng::substream(seed, "folds"));
    let inner = outer
        .iter()
        .enumerate()
        .map(|(k, split)| {
            let mut r = rng::substream(seed, &format!("inner-folds-{k}"));
            stratified_folds(&split.train, labels, N_FOLDS, &mut r)
        })
        .collect();
    Ok(FoldPlan { seed, outer, inner })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c_grid: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            c_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
            thresholds: (45..=55).map(|i| f64::from(i) / 100.0).collect(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.thresholds.is_empty() {
            return Err(Error::Invalid("grids must be nonempty".into()));
        }
        if let Some(c) = self.c_grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::Invalid(format!("C must be positive, got {c}")));
        }
        let (lo, hi) = crate::classifier::THRESHOLD_RANGE;
        if let Some(t) = self
            .thresholds
            .iter()
            .find(|t| !(lo - 1e-12..=hi + 1e-12).contains(*t))
        {
            return Err(Error::Invalid(format!(
                "threshold {t} outside [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    #[serde(rename = "C")]
    pub c: f64,
    pub threshold: f64,
    /// Mean inner-fold F1 indexed `[C][threshold]`; empty when the grid has
    /// a single point and no search ran.
    pub mean_f1: Vec<Vec<f64>>,
}

/// F1 of `probabilities` against `truth` at each threshold.
pub fn threshold_f1_table(
    probabilities: &[f64],
    truth: &[BinaryClass],
    thresholds: &[f64],
) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&t| Metrics::from_predictions(&classify(probabilities, t), truth).f1)
        .collect()
}

/// Index of the best (C, threshold) in `table[c][t]`: highest score, then
/// smaller C, then threshold nearest 0.5, then the lower threshold.
pub fn select_best(table: &[Vec<f64>], c_grid: &[f64], thresholds: &[f64]) -> (usize, usize) {
    let mut best = (0, 0);
    for (ci, row) in table.iter().enumerate() {
        for (ti, &score) in row.iter().enumerate() {
            let (bc, bt) = best;
            let incumbent = table[bc][bt];
            let better =
                score > incumbent
                    || (score == incumbent
                        && (c_grid[ci], (thresholds[ti] - 0.5).abs(), thresholds[ti]).partial_cmp(
                            &(c_grid[bc], (thresholds[bt] - 0.5).abs(), thresholds[bt]),
                        ) == Some(std::cmp::Ordering::Less));
            if better {
                best = (ci, ti);
            }
        }
    }
    best
}

/// Picks (C, threshold) by mean F1 over `inner` splits. `build` must fit
/// every label-dependent artifact on its first argument only.
pub fn grid_search<B>(
    labels: &[BinaryClass],
    inner: &[Split],
    build: B,
    grid: &GridSpec,
    opts: &TrainOptions,
) -> Result<GridChoice>
where
    B: Fn(&[usize], &[usize]) -> Result<SplitFeatures> + Sync + Send,
{
    grid.validate()?;
    if grid.c_grid.len() == 1 && grid.thresholds.len() == 1 {
        return Ok(GridChoice {
            c: grid.c_grid[0],
            threshold: grid.thresholds[0],
            mean_f1: Vec::new(),
        });
    }
    let features = par::map_slice(inner, |s| build(&s.train, &s.test))
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Invalid(format!("inner fold {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let n_c = grid.c_grid.len();
    let scores = par::map_range(inner.len() * n_c, |k| {
        let (fi, ci) = (k / n_c, k % n_c);
        let split = &inner[fi];
        let train_y: Vec<BinaryClass> = split.train.iter().map(|&r| labels[r]).collect();
        let test_y: Vec<BinaryClass> = split.test.iter().map(|&r| labels[r]).collect();
        let model = train_lr(&features[fi].train, &train_y, grid.c_grid[ci], opts)
            .map_err(|e| Error::Invalid(format!("inner fold {fi}, C={}: {e}", grid.c_grid[ci])))?;
        let probs = predict_proba(&model, &features[fi].eval)?;
        Ok(threshold_f1_table(&probs, &test_y, &grid.thresholds))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n_inner = inner.len() as f64;
    let mean_f1: Vec<Vec<f64>> = (0..n_c)
        .map(|ci| {
            (0..grid.thresholds.len())
                .map(|ti| {
                    (0..inner.len())
                        .map(|fi| scores[fi * n_c + ci][ti])
                        .sum::<f64>()
                        / n_inner
                })
                .collect()
        })
        .collect();
    let (ci, ti) = select_best(&mean_f1, &grid.c_grid, &grid.thresholds);
    Ok(GridChoice {
        c: grid.c_grid[ci],
        threshold: grid.thresholds[ti],
        mean_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    #[serde(rename = "C")]
    pub c: f64,
    pub threshold: f64,
    pub artifacts: FittedArtifacts,
    pub model: TrainedClassifier,
}

/// Grid search on the inner splits of outer fold `k`, refit on its whole
/// training part and score its test part.
pub fn run_outer_fold(
    ctx: &FeatureContext,
    set: &FeatureSet,
    labels: &[BinaryClass],
    plan: &FoldPlan,
    k: usize,
    grid: &GridSpec,
    opts: &TrainOptions,
) -> Result<FoldResult> {
    let split = &plan.outer[k];
    let build = |tr: &[usize], ev: &[usize]| ctx.build_split(set, labels, tr, ev);
    let choice = grid_search(labels, &plan.inner[k], build, grid, opts)?;
    let feats = ctx.build_split(set, labels, &split.train, &split.test)?;
    let train_y: Vec<BinaryClass> = split.train.iter().map(|&r| labels[r]).collect();
    let test_y: Vec<BinaryClass> = split.test.iter().map(|&r| labels[r]).collect();
    let mut model = train_lr(&feats.train, &train_y, choice.c, opts)?;
    model.threshold = choice.threshold;
    model.feature_set = Some(set.name.clone());
    model.fold = Some(k);
    let probs = predict_proba(&model, &feats.eval)?;
    let metrics = Metrics::from_predictions(&classify(&probs, model.threshold), &test_y);
    Ok(FoldResult {
        fold: k,
        metrics,
        c: choice.c,
        threshold: choice.threshold,
        artifacts: feats.artifacts,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub folds: Vec<FoldResult>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
}

impl VariantReport {
    fn new(name: String, folds: Vec<FoldResult>) -> Self {
        let n = folds.len() as f64;
        let mean = |f: fn(&Metrics) -> f64| folds.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        Self {
            mean_precision: mean(|m| m.precision),
            mean_recall: mean(|m| m.recall),
            mean_f1: mean(|m| m.f1),
            name,
            folds,
        }
    }

    pub fn fold_f1(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.metrics.f1).collect()
    }

    /// Most frequent per-fold (C, threshold); ties go to the smaller C,
    /// then the threshold nearest 0.5.
    pub fn consensus_hyperparameters(&self) -> (f64, f64) {
        consensus_hyperparameters(self.folds.iter().map(|f| (f.c, f.threshold)))
    }
}

pub fn consensus_hyperparameters(choices: impl IntoIterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut counts: Vec<((f64, f64), usize)> = Vec::new();
    for pair in choices {
        match counts.iter_mut().find(|(p, _)| *p == pair) {
            Some((_, n)) => *n += 1,
            None => counts.push((pair, 1)),
        }
    }
    counts.sort_by(|((c1, t1), n1), ((c2, t2), n2)| {
        n2.cmp(n1)
            .then(c1.total_cmp(c2))
            .then((t1 - 0.5).abs().total_cmp(&(t2 - 0.5).abs()))
            .then(t1.total_cmp(t2))
    });
    counts.first().map_or((1.0, 0.5), |(p, _)| *p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantFailure {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFlag {
    pub best: String,
    pub other: String,
    pub z: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub statistic: f64,
    pub p_value: f64,
    pub best: String,
    pub alpha: f64,
    pub pairs: Vec<PairFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub variants: Vec<VariantReport>,
    pub failures: Vec<VariantFailure>,
    pub significance: Option<Significance>,
}

/// Runs every variant through all outer folds of `plan`. A failing fold
/// drops its variant with a recorded reason; other variants continue.
pub fn run_nested_cv(
    ctx: &FeatureContext,
    labels: &[BinaryClass],
    sets: &[FeatureSet],
    plan: &FoldPlan,
    grid: &GridSpec,
    opts: &TrainOptions,
) -> Result<EvalReport> {
    if labels.len() != ctx.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: ctx.n_rows(),
            got: labels.len(),
        });
    }
    grid.validate()?;
    let outcomes = par::map_slice(sets, |set| {
        par::map_range(plan.outer.len(), |k| {
            run_outer_fold(ctx, set, labels, plan, k, grid, opts)
                .map_err(|e| format!("fold {k}: {e}"))
        })
        .into_iter()
        .collect::<std::result::Result<Vec<_>, String>>()
    });
    let mut report = EvalReport {
        seed: plan.seed,
        variants: Vec::new(),
        failures: Vec::new(),
        significance: None,
    };
    for (set, outcome) in sets.iter().zip(outcomes) {
        match outcome {
            Ok(folds) => report
                .variants
                .push(VariantReport::new(set.name.clone(), folds)),
            Err(reason) => {
                log::warn!("variant {} failed: {reason}", set.name);
                report.failures.push(VariantFailure {
                    name: set.name.clone(),
                    reason,
                });
            }
        }
    }
    report.significance = compare_variants(&report)?;
    Ok(report)
}

/// Kruskal-Wallis over per-fold F1 by variant, then Dunn (Bonferroni over
/// all pairs) for each variant against the best-mean one. `None` with
/// fewer than two variants.
pub fn compare_variants(report: &EvalReport) -> Result<Option<Significance>> {
    if report.variants.len() < 2 {
        return Ok(None);
    }
    let samples: Vec<Sample> = report
        .variants
        .iter()
        .map(|v| Sample::new(v.name.clone(), v.fold_f1()))
        .collect();
    let best_idx = report.variants.iter().enumerate().fold(0, |b, (i, v)| {
        if v.mean_f1 > report.variants[b].mean_f1 {
            i
        } else {
            b
        }
    });
    let best = report.variants[best_idx].name.clone();
    let others = report.variants.iter().filter(|v| v.name != best);

    let (statistic, p_value, pairs) = match kruskal_wallis(&samples) {
        Ok(kw) => {
            let dunn = dunn_test(&samples, Adjustment::Bonferroni)?;
            let pairs = others
                .map(|v| {
                    let c = dunn
                        .iter()
                        .find(|c| {
                            (c.group_a == best && c.group_b == v.name)
                                || (c.group_b == best && c.group_a == v.name)
                        })
                        .expect("every pair is tested");
                    let z = if c.group_a == best { c.z } else { -c.z };
                    PairFlag {
                        best: best.clone(),
                        other: v.name.clone(),
                        z,
                        p_value: c.p_value,
                        adjusted_p: c.adjusted_p,
                        significant: c.adjusted_p < ALPHA,
                    }
                })
                .collect();
            (kw.statistic, kw.p_value, pairs)
        }
        Err(Error::DegenerateRanks) => {
            let pairs = others
                .map(|v| PairFlag {
                    best: best.clone(),
                    other: v.name.clone(),
                    z: 0.0,
                    p_value: 1.0,
                    adjusted_p: 1.0,
                    significant: false,
                })
                .collect();
            (0.0, 1.0, pairs)
        }
        Err(e) => return Err(e),
    };
    Ok(Some(Significance {
        statistic,
        p_value,
        best,
        alpha: ALPHA,
        pairs,
    }))
}

/// `variant,fold,precision,recall,F1,C,threshold`, one row per variant and
/// outer fold.
pub fn write_report_csv<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut csv = crate::csvio::writer(w);
    csv.write_record([
        "variant",
        "fold",
        "precision",
        "recall",
        "F1",
        "C",
        "threshold",
    ])?;
    for v in &report.variants {
        for f in &v.folds {
            csv.write_record([
                v.name.clone(),
                f.fold.to_string(),
                f.metrics.precision.to_string(),
                f.metrics.recall.to_string(),
                f.metrics.f1.to_string(),
                f.c.to_string(),
                f.threshold.to_string(),
            ])?;
        }
    }
    csv.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub folds: Vec<FoldSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub variants: BTreeMap<String, VariantSummary>,
    pub failures: Vec<VariantFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significance: Option<Significance>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        let variants = r
            .variants
            .iter()
            .map(|v| {
                let folds = v
                    .folds
                    .iter()
                    .map(|f| FoldSummary {
                        fold: f.fold,
                        precision: f.metrics.precision,
                        recall: f.metrics.recall,
                        f1: f.metrics.f1,
                        c: f.c,
                        threshold: f.threshold,
                    })
                    .collect();
                (
                    v.name.clone(),
                    VariantSummary {
                        mean_precision: v.mean_precision,
                        mean_recall: v.mean_recall,
                        mean_f1: v.mean_f1,
                        folds,
                    },
                )
            })
            .collect();
        Self {
            seed: r.seed,
            variants,
            failures: r.failures.clone(),
            significance: r.significance.clone(),
        }
    }
}

pub fn write_summary_json<W: Write>(report: &EvalReport, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, &EvalSummary::from(report))?;
    w.write_all(b"\n").map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowd::BinaryClass::{Hd, Ud};
    use crate::features::{Block, Column, ColumnKind, FeatureMatrix};
    use std::sync::Arc;

    fn labels(n_ud: usize, n_hd: usize) -> Vec<BinaryClass> {
        let mut v = vec![Ud; n_ud];
        v.extend(vec![Hd; n_hd]);
        v
    }

    #[test]
    fn metrics_identity() {
        let m = Metrics::from_counts(3, 1, 4, 2);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
        assert_eq!(Metrics::from_counts(0, 0, 5, 3).f1, 0.0);
        let pred = [Ud, Ud, Hd, Hd, Ud];
        let truth = [Ud, Hd, Ud, Hd, Ud];
        assert_eq!(
            Metrics::from_predictions(&pred, &truth),
            Metrics::from_counts(2, 1, 1, 1)
        );
    }

    #[test]
    fn fold_sizes_for_990_rows() {
        let y = labels(506, 484);
        let plan = make_fold_plan(&y, 42).unwrap();
        let mut seen = vec![false; y.len()];
        for s in &plan.outer {
            assert_eq!(s.test.len(), 198);
            let ud = s.test.iter().filter(|&&r| y[r] == Ud).count();
            assert!([(101, 97), (102, 96)].contains(&(ud, 198 - ud)), "{ud}");
            for &r in &s.test {
                assert!(!seen[r]);
                seen[r] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
        for (k, inner) in plan.inner.iter().enumerate() {
            for s in inner {
                assert!(s
                    .test
                    .iter()
                    .chain(&s.train)
                    .all(|r| plan.outer[k].test.binary_search(r).is_err()));
            }
        }
        assert_eq!(plan, make_fold_plan(&y, 42).unwrap());
        assert_ne!(plan, make_fold_plan(&y, 43).unwrap());
    }

    #[test]
    fn fold_plan_errors() {
        assert!(make_fold_plan(&labels(4, 2), 1).is_err());
        assert!(matches!(
            make_fold_plan(&labels(20, 4), 1),
            Err(Error::TooSmallToStratify { count: 4, .. })
        ));
    }

    #[test]
    fn default_grid_has_66_points() {
        let g = GridSpec::default();
        assert_eq!(g.c_grid.len() * g.thresholds.len(), 66);
        assert_eq!(g.thresholds.first(), Some(&0.45));
        assert_eq!(g.thresholds.last(), Some(&0.55));
    }

    #[test]
    fn planted_threshold_055_wins() {
        // UD rows sit at 0.56 and 0.60, HD rows at 0.46..0.54: only 0.55
        // separates the classes perfectly.
        let probs = [0.56, 0.60, 0.46, 0.50, 0.54];
        let truth = [Ud, Ud, Hd, Hd, Hd];
        let grid = GridSpec::default();
        let table = threshold_f1_table(&probs, &truth, &grid.thresholds);
        let (_, ti) = select_best(std::slice::from_ref(&table), &[1.0], &grid.thresholds);
        assert_eq!(grid.thresholds[ti], 0.55);
        assert!(table[..10].iter().all(|&f| f < table[10]));
    }

    #[test]
    fn tie_breaks() {
        let c = [0.1, 1.0];
        let t = [0.45, 0.49, 0.5, 0.51];
        let table = vec![vec![0.5, 0.8, 0.7, 0.8], vec![0.8, 0.8, 0.8, 0.8]];
        // equal scores everywhere at 0.8: smaller C, then nearest 0.5, then lower
        assert_eq!(select_best(&table, &c, &t), (0, 1));
        let table = vec![vec![0.1; 4], vec![0.1, 0.2, 0.2, 0.2]];
        assert_eq!(select_best(&table, &c, &t), (1, 2));
    }

    #[test]
    fn consensus_choice() {
        assert_eq!(
            consensus_hyperparameters([(1.0, 0.5), (10.0, 0.5), (1.0, 0.5)]),
            (1.0, 0.5)
        );
        assert_eq!(
            consensus_hyperparameters([(10.0, 0.5), (1.0, 0.53), (1.0, 0.48)]),
            (1.0, 0.48)
        );
    }

    fn synthetic_block(y: &[BinaryClass], signal: f64) -> FeatureMatrix {
        let rows = y
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let jitter = ((i * 37) % 17) as f64 / 17.0 - 0.5;
                vec![l.sign() * signal + jitter, ((i * 53) % 11) as f64]
            })
            .collect();
        FeatureMatrix::from_rows(
            (0..y.len()).map(|i| format!("r{i}")).collect(),
            vec![
                Column::new("a", ColumnKind::Other),
                Column::new("b", ColumnKind::Other),
            ],
            rows,
        )
        .unwrap()
    }

    fn context(y: &[BinaryClass]) -> FeatureContext {
        FeatureContext::precomputed_only((0..y.len()).map(|i| format!("r{i}")).collect())
    }

    #[test]
    fn nested_cv_on_precomputed_blocks() {
        let y: Vec<BinaryClass> = (0..60).map(|i| if i % 3 == 0 { Hd } else { Ud }).collect();
        let ctx = context(&y);
        let strong = FeatureSet::custom(
            "strong",
            vec![Block::Precomputed(Arc::new(synthetic_block(&y, 2.0)))],
        );
        let weak = FeatureSet::custom(
            "weak",
            vec![Block::Precomputed(Arc::new(synthetic_block(&y, 0.0)))],
        );
        let plan = make_fold_plan(&y, 5).unwrap();
        let grid = GridSpec {
            c_grid: vec![0.1, 1.0],
            thresholds: vec![0.45, 0.5, 0.55],
        };
        let report = run_nested_cv(
            &ctx,
            &y,
            &[strong, weak],
            &plan,
            &grid,
            &TrainOptions::default(),
        )
        .unwrap();
        assert_eq!(report.variants.len(), 2);
        let strong = &report.variants[0];
        assert!(strong.mean_f1 > 0.95);
        let mean = strong.fold_f1().iter().sum::<f64>() / 5.0;
        assert!((mean - strong.mean_f1).abs() < 1e-12);
        let sig = report.significance.as_ref().unwrap();
        assert_eq!(sig.best, "strong");
        assert_eq!(sig.pairs.len(), 1);

        let mut csv = Vec::new();
        write_report_csv(&report, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("variant,fold,precision,recall,F1,C,threshold\n"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn failing_variant_is_isolated() {
        let y: Vec<BinaryClass> = (0..30).map(|i| if i % 2 == 0 { Hd } else { Ud }).collect();
        let ctx = context(&y);
        let good = FeatureSet::custom(
            "good",
            vec![Block::Precomputed(Arc::new(synthetic_block(&y, 1.0)))],
        );
        let bad = FeatureSet::custom("bad", vec![Block::Nutritional]);
        let plan = make_fold_plan(&y, 1).unwrap();
        let grid = GridSpec {
            c_grid: vec![1.0],
            thresholds: vec![0.5],
        };
        let report = run_nested_cv(
            &ctx,
            &y,
            &[good, bad],
            &plan,
            &grid,
            &TrainOptions::default(),
        )
        .unwrap();
        assert_eq!(report.variants.len(), 1);
        assert_eq!(report.failures[0].name, "bad");
        assert!(report.significance.is_none());
    }

    fn report_with(f1s: &[(&str, Vec<f64>)]) -> EvalReport {
        let variants = f1s
            .iter()
            .map(|(name, fs)| {
                let folds = fs
                    .iter()
                    .enumerate()
                    .map(|(k, &f)| FoldResult {
                        fold: k,
                        metrics: Metrics {
                            tp: 0,
                            fp: 0,
                            tn: 0,
                            fn_: 0,
                            precision: f,
                            recall: f,
                            f1: f,
                        },
                        c: 1.0,
                        threshold: 0.5,
                        artifacts: FittedArtifacts {
                            nb: None,
                            standardizer: crate::features::Standardizer { params: vec![] },
                        },
                        model: TrainedClassifier {
                            weights: vec![],
                            bias: 0.0,
                            c: 1.0,
                            threshold: 0.5,
                            columns: vec![],
                            feature_set: None,
                            fold: None,
                            iterations: 0,
                            converged: true,
                        },
                    })
                    .collect();
                VariantReport::new(name.to_string(), folds)
            })
            .collect();
        EvalReport {
            seed: 0,
            variants,
            failures: vec![],
            significance: None,
        }
    }

    #[test]
    fn compare_identical_variants() {
        let r = report_with(&[("a", vec![0.7; 5]), ("b", vec![0.7; 5])]);
        let s = compare_variants(&r).unwrap().unwrap();
        assert_eq!((s.statistic, s.p_value), (0.0, 1.0));
        assert!(s.pairs.iter().all(|p| !p.significant));
    }

    #[test]
    fn compare_separated_variants() {
        let r = report_with(&[("lo", vec![0.5; 5]), ("hi", vec![0.9; 5])]);
        let s = compare_variants(&r).unwrap().unwrap();
        assert_eq!(s.best, "hi");
        assert!((s.statistic - 9.0).abs() < 1e-9);
        let p = &s.pairs[0];
        assert!((p.z - 3.0).abs() < 1e-9);
        assert!((p.p_value - 0.0026997960632601866).abs() < 1e-12);
        assert!(p.significant);
    }

    #[test]
    fn single_variant_has_no_significance() {
        assert!(compare_variants(&report_with(&[("a", vec![0.5; 5])]))
            .unwrap()
            .is_none());
    }
}
