//! Subcommand implementations. Each validates and parses every input
//! before the output directory is touched.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use glyset::classifier::{predict_proba, train_lr, TrainOptions, TrainedClassifier};
use glyset::corpus::{
    derive_nutrition, load_corpus, partition_by_sf, select_annotation_candidates, write_corpus,
    write_rejections, CandidateSelection, Recipe, SfPartition, LOW_GLYCEMIC_TAG,
};
use glyset::crowd::{
    binarize, dawid_skene, krippendorff_alpha, read_labels_csv, write_labels_csv, AggregatedLabel,
    AlphaMetric, BinaryClass, DawidSkeneOptions, JudgmentSet, Rating,
};
use glyset::eval::{
    make_fold_plan, run_nested_cv, write_report_csv, write_summary_json, EvalReport,
};
use glyset::features::{
    fit_nb_weights, fit_standardizer, load_embeddings, nutritional_matrix, FeatureContext,
    FeatureSet, FeatureSources, DEFAULT_NU_COLUMNS,
};
use glyset::healthiness::{fsa_score, write_scores_csv, FsaScore, FsaThresholds};
use glyset::stats::{dunn_test, kruskal_wallis, pearson_r, Adjustment, Sample};
use glyset::textprep::IngredientParser;

use crate::config::{optional, require, RunConfig};

/// Output directory handle; created lazily on the first write.
struct Output<'a> {
    dir: &'a Path,
}

impl<'a> Output<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write<F>(&self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }
}

fn load_accepted(path: &Path) -> Result<Vec<Recipe>> {
    let loaded = load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    if !loaded.rejections.is_empty() {
        log::warn!(
            "{} corpus lines rejected; run `ingest` for details",
            loaded.rejections.len()
        );
    }
    Ok(loaded.recipes)
}

fn load_labels(path: &Path) -> Result<Vec<AggregatedLabel>> {
    let file = File::open(path).with_context(|| format!("opening labels {}", path.display()))?;
    read_labels_csv(file).with_context(|| format!("reading labels {}", path.display()))
}

/// Corpus recipes that carry a label, in corpus order.
fn align_labels(recipes: Vec<Recipe>, labels: &[AggregatedLabel]) -> (Vec<Recipe>, Vec<Rating>) {
    let by_id: HashMap<&str, Rating> = labels
        .iter()
        .map(|l| (l.recipe_id.as_str(), l.label))
        .collect();
    let mut matched = 0;
    let (kept, ratings): (Vec<Recipe>, Vec<Rating>) = recipes
        .into_iter()
        .filter_map(|r| {
            let rating = by_id.get(r.id.as_str()).copied()?;
            matched += 1;
            Some((r, rating))
        })
        .unzip();
    if matched < labels.len() {
        log::warn!(
            "{} labels refer to recipes missing from the corpus",
            labels.len() - matched
        );
    }
    (kept, ratings)
}

/// Labeled recipes with a UD/HD class; NOT_SURE labels are dropped.
fn binary_subset(
    recipes: Vec<Recipe>,
    ratings: Vec<Rating>,
) -> (Vec<Recipe>, Vec<BinaryClass>, Vec<Rating>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    let mut excluded = 0;
    for (r, rating) in recipes.into_iter().zip(ratings) {
        match BinaryClass::from_rating(rating) {
            Some(c) => {
                out.0.push(r);
                out.1.push(c);
                out.2.push(rating);
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::info!("{excluded} NOT_SURE labels excluded");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub partitions: BTreeMap<String, usize>,
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let path = require(&cfg.corpus, "corpus")?;
    let loaded = load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
    let mut partitions: BTreeMap<String, usize> = SfPartition::ALL
        .iter()
        .map(|p| (p.as_str().to_string(), 0))
        .collect();
    for r in &loaded.recipes {
        let d = derive_nutrition(r).with_context(|| format!("recipe {}", r.id))?;
        *partitions
            .get_mut(partition_by_sf(&d).as_str())
            .expect("all partitions present") += 1;
    }
    let summary = IngestSummary {
        accepted: loaded.recipes.len(),
        rejected: loaded.rejections.len(),
        partitions,
    };
    let out = Output::new(&cfg.out);
    out.write("corpus.jsonl", |w| Ok(write_corpus(&loaded.recipes, w)?))?;
    out.write("rejections.csv", |w| {
        Ok(write_rejections(&loaded.rejections, w)?)
    })?;
    out.write_json("ingest_summary.json", &summary)?;
    Ok(summary)
}

/// Probability each recipe's own noisy label gets from a C = 1 model on
/// nutritional features, or `None` when the label has a single class.
fn own_label_probabilities(
    recipes: &[Recipe],
    labels: &[BinaryClass],
    source: &str,
) -> Result<Option<HashMap<String, f64>>> {
    let has = |c: BinaryClass| labels.contains(&c);
    if !(has(BinaryClass::Ud) && has(BinaryClass::Hd)) {
        log::warn!("{source} labels have a single class; it cannot rank recipes");
        return Ok(None);
    }
    let x = nutritional_matrix(recipes, &DEFAULT_NU_COLUMNS)?;
    let all: Vec<usize> = (0..recipes.len()).collect();
    let x = fit_standardizer(&x, &all).apply(&x)?;
    let model = train_lr(&x, labels, 1.0, &TrainOptions::default())
        .with_context(|| format!("training the {source} model"))?;
    let probs = predict_proba(&model, &x)?;
    Ok(Some(
        recipes
            .iter()
            .zip(labels.iter().zip(probs))
            .map(|(r, (l, p))| (r.id.clone(), if l.is_positive() { p } else { 1.0 - p }))
            .collect(),
    ))
}

pub fn cmd_curate(cfg: &RunConfig) -> Result<CandidateSelection> {
    let path = require(&cfg.corpus, "corpus")?;
    let recipes = load_accepted(path)?;
    if cfg.n > recipes.len() {
        bail!(
            "asked for {} candidates but the corpus has {} valid recipes",
            cfg.n,
            recipes.len()
        );
    }
    let tag_labels: Vec<BinaryClass> = recipes
        .iter()
        .map(|r| {
            if r.category_tags.contains(LOW_GLYCEMIC_TAG) {
                BinaryClass::Hd
            } else {
                BinaryClass::Ud
            }
        })
        .collect();
    let sf_labels = recipes
        .iter()
        .map(|r| {
            let low = partition_by_sf(&derive_nutrition(r)?) == SfPartition::Low;
            Ok(if low {
                BinaryClass::Hd
            } else {
                BinaryClass::Ud
            })
        })
        .collect::<glyset::Result<Vec<_>>>()?;

    let uniform = || {
        recipes
            .iter()
            .map(|r| (r.id.clone(), 0.5))
            .collect::<HashMap<_, _>>()
    };
    let probs_b = own_label_probabilities(&recipes, &sf_labels, "S/F")?.unwrap_or_else(uniform);
    let probs_a = match own_label_probabilities(&recipes, &tag_labels, "category-tag")? {
        Some(p) => p,
        None => {
            log::warn!("no usable `{LOW_GLYCEMIC_TAG}` tags; ranking by the S/F source alone");
            probs_b.clone()
        }
    };
    let selection = select_annotation_candidates(&recipes, &probs_a, &probs_b, cfg.n)?;
    let partitions: HashMap<&str, SfPartition> = recipes
        .iter()
        .map(|r| Ok((r.id.as_str(), partition_by_sf(&derive_nutrition(r)?))))
        .collect::<glyset::Result<_>>()?;
    Output::new(&cfg.out).write("candidates.csv", |w| {
        let mut csv = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        csv.write_record(["recipe_id", "partition"])?;
        for id in &selection.ids {
            csv.write_record([id.as_str(), partitions[id.as_str()].as_str()])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    Ok(selection)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSummary {
    pub recipes: usize,
    pub workers: usize,
    pub judgments: usize,
    pub alpha_ordinal: Option<f64>,
    pub alpha_nominal: Option<f64>,
    pub alpha_interval: Option<f64>,
    pub ud: usize,
    pub hd: usize,
    pub excluded_not_sure: usize,
    pub em_iterations: usize,
    pub em_converged: bool,
}

pub fn cmd_aggregate(cfg: &RunConfig) -> Result<AggregateSummary> {
    let path = require(&cfg.judgments, "judgments")?;
    let file = File::open(path).with_context(|| format!("opening judgments {}", path.display()))?;
    let js = JudgmentSet::read_csv(file)
        .with_context(|| format!("reading judgments {}", path.display()))?;
    let alpha = |metric| match krippendorff_alpha(&js, metric) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("Krippendorff's alpha ({metric:?}) undefined: {e}");
            None
        }
    };
    let (alpha_ordinal, alpha_nominal, alpha_interval) = (
        alpha(AlphaMetric::Ordinal),
        alpha(AlphaMetric::Nominal),
        alpha(AlphaMetric::Interval),
    );
    let ds = dawid_skene(&js, &DawidSkeneOptions::default())?;
    let binary = binarize(&ds.labels);
    let ud = binary
        .labels
        .iter()
        .filter(|l| l.class.is_positive())
        .count();
    let summary = AggregateSummary {
        recipes: js.recipes().len(),
        workers: js.workers().len(),
        judgments: js.judgments().len(),
        alpha_ordinal,
        alpha_nominal,
        alpha_interval,
        ud,
        hd: binary.labels.len() - ud,
        excluded_not_sure: binary.excluded,
        em_iterations: ds.iterations,
        em_converged: ds.converged,
    };
    let out = Output::new(&cfg.out);
    out.write("labels.csv", |w| Ok(write_labels_csv(&ds.labels, w)?))?;
    out.write("binary_labels.csv", |w| {
        let mut csv = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        csv.write_record(["recipe_id", "class"])?;
        for l in &binary.labels {
            csv.write_record([l.recipe_id.as_str(), l.class.as_str()])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write_json("agreement.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub component: String,
    pub pearson_r: Option<f64>,
    pub pearson_p: Option<f64>,
    pub kw_h: Option<f64>,
    pub kw_p: Option<f64>,
    pub dunn_z: Option<f64>,
    pub dunn_p: Option<f64>,
    pub significant: bool,
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<Vec<AnalysisRow>> {
    let corpus_path = require(&cfg.corpus, "corpus")?;
    let labels_path = require(&cfg.labels, "labels")?;
    let thresholds = match optional(&cfg.fsa_thresholds, "fsa-thresholds")? {
        Some(p) => FsaThresholds::from_file(p)?,
        None => FsaThresholds::default(),
    };
    let labels = load_labels(labels_path)?;
    let (recipes, ratings) = align_labels(load_accepted(corpus_path)?, &labels);
    let (recipes, classes, ratings) = binary_subset(recipes, ratings);
    if recipes.is_empty() {
        bail!("no corpus recipe has a numeric label");
    }
    let scores: Vec<(String, FsaScore)> = recipes
        .iter()
        .map(|r| {
            Ok((
                r.id.clone(),
                fsa_score(&derive_nutrition(r)?.per_100g, &thresholds)?,
            ))
        })
        .collect::<glyset::Result<_>>()?;
    let judgment: Vec<f64> = ratings
        .iter()
        .map(|r| f64::from(r.score().expect("numeric")))
        .collect();

    let mut rows = Vec::new();
    for (ci, name) in ["fat", "satfat", "sugars", "salt", "total"]
        .iter()
        .enumerate()
    {
        let values: Vec<f64> = scores
            .iter()
            .map(|(_, s)| f64::from(s.components()[ci].1))
            .collect();
        let (pearson_r, pearson_p) = match pearson_r(&judgment, &values) {
            Ok((r, p)) => (Some(r), Some(p)),
            Err(e) => {
                log::warn!("Pearson r for {name} undefined: {e}");
                (None, None)
            }
        };
        let group = |c: BinaryClass| -> Vec<f64> {
            values
                .iter()
                .zip(&classes)
                .filter(|(_, &k)| k == c)
                .map(|(v, _)| *v)
                .collect()
        };
        let samples = [
            Sample::new("UD", group(BinaryClass::Ud)),
            Sample::new("HD", group(BinaryClass::Hd)),
        ];
        let mut row = AnalysisRow {
            component: name.to_string(),
            pearson_r,
            pearson_p,
            kw_h: None,
            kw_p: None,
            dunn_z: None,
            dunn_p: None,
            significant: false,
        };
        match kruskal_wallis(&samples) {
            Ok(kw) => {
                let dunn = dunn_test(&samples, Adjustment::Bonferroni)?;
                row.kw_h = Some(kw.statistic);
                row.kw_p = Some(kw.p_value);
                row.dunn_z = Some(dunn[0].z);
                row.dunn_p = Some(dunn[0].adjusted_p);
                row.significant =
                    kw.p_value < glyset::eval::ALPHA && dunn[0].adjusted_p < glyset::eval::ALPHA;
            }
            Err(glyset::Error::DegenerateRanks) => {
                row.kw_h = Some(0.0);
                row.kw_p = Some(1.0);
                row.dunn_z = Some(0.0);
                row.dunn_p = Some(1.0);
            }
            Err(e) => log::warn!("Kruskal-Wallis for {name} skipped: {e}"),
        }
        rows.push(row);
    }

    let out = Output::new(&cfg.out);
    out.write("fsa_scores.csv", |w| Ok(write_scores_csv(&scores, w)?))?;
    out.write("analysis.csv", |w| {
        let mut csv = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        csv.write_record([
            "component",
            "pearson_r",
            "pearson_p",
            "kw_h",
            "kw_p",
            "dunn_z",
            "dunn_p",
            "significant",
        ])?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &rows {
            csv.write_record([
                r.component.clone(),
                f(r.pearson_r),
                f(r.pearson_p),
                f(r.kw_h),
                f(r.kw_p),
                f(r.dunn_z),
                f(r.dunn_p),
                r.significant.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    Ok(rows)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let sets = cfg.feature_sets()?;
    let grid = cfg.grid();
    grid.validate()?;
    let corpus_path = require(&cfg.corpus, "corpus")?;
    let labels_path = require(&cfg.labels, "labels")?;
    let embeddings_path = optional(&cfg.embeddings, "embeddings")?;
    let parser = match optional(&cfg.stoplist, "stoplist")? {
        Some(p) => IngredientParser::from_file(p)?,
        None => IngredientParser::default(),
    };
    let embeddings = match embeddings_path {
        Some(p) if sets.iter().any(FeatureSet::needs_embeddings) => Some(load_embeddings(p)?),
        _ => None,
    };
    let labels = load_labels(labels_path)?;
    let (recipes, ratings) = align_labels(load_accepted(corpus_path)?, &labels);
    let (recipes, classes, _) = binary_subset(recipes, ratings);
    let plan = make_fold_plan(&classes, cfg.seed)?;

    let mut sources = FeatureSources::new(&recipes);
    sources.parser = parser;
    sources.embeddings = embeddings.as_ref();
    sources.min_count = cfg.min_count;
    let ctx = FeatureContext::build(&sources, &sets)?;
    let opts = TrainOptions::default();
    let report = run_nested_cv(&ctx, &classes, &sets, &plan, &grid, &opts)?;

    let all: Vec<usize> = (0..classes.len()).collect();
    let mut finals = Vec::new();
    for v in &report.variants {
        let set = sets
            .iter()
            .find(|s| s.name == v.name)
            .expect("reported variants were requested");
        let (c, threshold) = v.consensus_hyperparameters();
        let feats = ctx.build_split(set, &classes, &all, &[])?;
        let mut model = train_lr(&feats.train, &classes, c, &opts)?;
        model.threshold = threshold;
        model.feature_set = Some(v.name.clone());
        finals.push(model);
    }

    let out = Output::new(&cfg.out);
    out.write("report.csv", |w| Ok(write_report_csv(&report, w)?))?;
    out.write("summary.json", |w| Ok(write_summary_json(&report, w)?))?;
    for m in &finals {
        let name = m.feature_set.as_deref().expect("set above");
        out.write(&format!("models/{name}.json"), |w| {
            m.write_json(&mut *w)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedWeight {
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct InspectReport {
    pub model_weights: Vec<RankedWeight>,
    pub nb_positive: Vec<RankedWeight>,
    pub nb_negative: Vec<RankedWeight>,
}

pub fn cmd_inspect(cfg: &RunConfig) -> Result<InspectReport> {
    let model_path = require(&cfg.model, "model")?;
    let model = TrainedClassifier::from_file(model_path)
        .with_context(|| format!("reading model {}", model_path.display()))?;
    let corpus = optional(&cfg.corpus, "corpus")?;
    let labels = optional(&cfg.labels, "labels")?;

    let mut pairs: Vec<(&String, f64)> = model
        .columns
        .iter()
        .zip(model.weights.iter().copied())
        .collect();
    if pairs.iter().any(|(c, _)| c.starts_with("nu:")) {
        pairs.retain(|(c, _)| c.starts_with("nu:"));
    }
    pairs.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(b.0)));
    let mut report = InspectReport {
        model_weights: pairs
            .into_iter()
            .take(cfg.top_k)
            .map(|(n, w)| RankedWeight {
                name: n.clone(),
                weight: w,
            })
            .collect(),
        ..Default::default()
    };

    if let (Some(corpus), Some(labels)) = (corpus, labels) {
        let labels = load_labels(labels)?;
        let (recipes, ratings) = align_labels(load_accepted(corpus)?, &labels);
        let (recipes, classes, _) = binary_subset(recipes, ratings);
        let mut sources = FeatureSources::new(&recipes);
        sources.min_count = cfg.min_count;
        let ctx = FeatureContext::build(&sources, &[FeatureSet::named("bow-basic")?])?;
        let counts = ctx.basic_counts().expect("bow-basic built");
        let vocab = ctx.basic_vocabulary().expect("bow-basic built");
        let all: Vec<usize> = (0..classes.len()).collect();
        let nb = fit_nb_weights(counts, &classes, &all)?;
        let (pos, neg) = nb.ranked(vocab.tokens(), cfg.top_k);
        let conv = |v: Vec<(&str, f64)>| {
            v.into_iter()
                .map(|(t, w)| RankedWeight {
                    name: t.to_string(),
                    weight: w,
                })
                .collect()
        };
        report.nb_positive = conv(pos);
        report.nb_negative = conv(neg);
    } else if corpus.is_some() || labels.is_some() {
        log::warn!("NB-weight ranking needs both a corpus and labels; skipping it");
    }

    let out = Output::new(&cfg.out);
    let weights: Vec<_> = report
        .model_weights
        .iter()
        .enumerate()
        .map(|(i, r)| ("abs", i + 1, r))
        .collect();
    out.write("inspect_weights.csv", |w| {
        write_ranked(w, ["order", "rank", "column", "weight"], &weights)
    })?;
    if !report.nb_positive.is_empty() {
        let rows: Vec<_> = report
            .nb_positive
            .iter()
            .enumerate()
            .map(|(i, r)| ("UD", i + 1, r))
            .chain(
                report
                    .nb_negative
                    .iter()
                    .enumerate()
                    .map(|(i, r)| ("HD", i + 1, r)),
            )
            .collect();
        out.write("inspect_nb.csv", |w| {
            write_ranked(w, ["direction", "rank", "token", "ratio"], &rows)
        })?;
    }
    Ok(report)
}

fn write_ranked<W: Write>(
    w: W,
    header: [&str; 4],
    rows: &[(&str, usize, &RankedWeight)],
) -> Result<()> {
    let mut csv = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    csv.write_record(header)?;
    for (group, rank, r) in rows {
        csv.write_record([
            group.to_string(),
            rank.to_string(),
            r.name.clone(),
            r.weight.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
