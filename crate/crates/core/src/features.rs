//! Feature representations and their train-only fitted transforms.
//!
//! Label-free blocks (bag-of-words counts, averaged embeddings, nutritional
//! vectors) are computed once per corpus in a [`FeatureContext`]. Anything
//! that depends on labels or on row statistics (NB log-count ratios, the
//! standardizer) is fitted per split from an explicit set of training rows.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{derive_nutrition, Recipe};
use crate::crowd::BinaryClass;
use crate::textprep::{tokenize, tokenize_parsed, IngredientParser, TokenizedRecipe, Vocabulary};
use crate::{par, Error, Result};

/// Nutritional columns in output order; dry weight is appended as the 20th.
pub const DEFAULT_NU_COLUMNS: [&str; 19] = [
    "calories",
    "fat",
    "saturated_fat",
    "cholesterol",
    "sodium",
    "potassium",
    "carbohydrates",
    "fiber",
    "sugars",
    "protein",
    "vitamin_a",
    "vitamin_c",
    "calcium",
    "iron",
    "thiamin",
    "niacin",
    "vitamin_b6",
    "magnesium",
    "folate",
];

pub const NB_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Count,
    NbWeighted,
    Embedding,
    Nutritional,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub standardizable: bool,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
            standardizable: kind != ColumnKind::NbWeighted,
        }
    }
}

/// Dense row-major matrix, one row per recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    columns: Vec<Column>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, columns: Vec<Column>, data: Vec<f64>) -> Result<Self> {
        let expected = ids.len() * columns.len();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / columns.len(),
                col: pos % columns.len(),
            });
        }
        Ok(Self { ids, columns, data })
    }

    pub fn from_rows(ids: Vec<String>, columns: Vec<Column>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = columns.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(ids, columns, rows.into_iter().flatten().collect())
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols() + col]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            columns: self.columns.clone(),
            data,
        }
    }

    /// CSV with an `id` column followed by one column per feature.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = crate::csvio::writer(w);
        let mut header = vec!["id".to_string()];
        header.extend(self.column_names());
        csv.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush().map_err(|e| Error::io("<features>", e))?;
        Ok(())
    }
}

/// Appends columns of several matrices that share the same row ids.
pub fn concat(blocks: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
    if blocks.iter().any(|b| b.ids != first.ids) {
        return Err(Error::RowMismatch);
    }
    if blocks.len() == 1 {
        return Ok(first.clone());
    }
    let columns: Vec<Column> = blocks
        .iter()
        .flat_map(|b| b.columns.iter().cloned())
        .collect();
    let mut data = Vec::with_capacity(first.n_rows() * columns.len());
    for i in 0..first.n_rows() {
        for b in blocks {
            data.extend_from_slice(b.row(i));
        }
    }
    Ok(FeatureMatrix {
        ids: first.ids.clone(),
        columns,
        data,
    })
}

/// Occurrence counts of vocabulary tokens; unknown tokens are dropped.
pub fn bow_counts(tr: &TokenizedRecipe, vocab: &Vocabulary) -> Vec<f64> {
    let mut counts = vec![0.0; vocab.len()];
    for t in &tr.all_tokens {
        if let Some(i) = vocab.get(t) {
            counts[i] += 1.0;
        }
    }
    counts
}

pub fn bow_matrix(
    corpus: &[TokenizedRecipe],
    vocab: &Vocabulary,
    prefix: &str,
) -> Result<FeatureMatrix> {
    let columns = vocab
        .tokens()
        .iter()
        .map(|t| Column::new(format!("{prefix}:{t}"), ColumnKind::Count))
        .collect();
    let rows = par::map_slice(corpus, |tr| bow_counts(tr, vocab));
    FeatureMatrix::from_rows(corpus.iter().map(|t| t.id.clone()).collect(), columns, rows)
}

/// Tokens with their ratios, best first.
pub type Ranked<'a> = Vec<(&'a str, f64)>;

/// Naive Bayes log-count ratios, one per count column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbWeights {
    pub ratios: Vec<f64>,
    pub alpha: f64,
}

/// Fits r = log((p/‖p‖₁) / (q/‖q‖₁)) with p, q the α-smoothed per-class
/// count sums. Only `labels[i]` for `i` in `train_rows` is read.
pub fn fit_nb_weights(
    counts: &FeatureMatrix,
    labels: &[BinaryClass],
    train_rows: &[usize],
) -> Result<NbWeights> {
    fit_nb_weights_with_alpha(counts, labels, train_rows, NB_ALPHA)
}

pub fn fit_nb_weights_with_alpha(
    counts: &FeatureMatrix,
    labels: &[BinaryClass],
    train_rows: &[usize],
    alpha: f64,
) -> Result<NbWeights> {
    if labels.len() != counts.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: counts.n_rows(),
            got: labels.len(),
        });
    }
    let d = counts.n_cols();
    let mut p = vec![alpha; d];
    let mut q = vec![alpha; d];
    let (mut has_pos, mut has_neg) = (false, false);
    for &i in train_rows {
        let target = if labels[i].is_positive() {
            has_pos = true;
            &mut p
        } else {
            has_neg = true;
            &mut q
        };
        for (acc, v) in target.iter_mut().zip(counts.row(i)) {
            *acc += v;
        }
    }
    if !(has_pos && has_neg) {
        return Err(Error::SingleClass);
    }
    let (p_norm, q_norm) = (p.iter().sum::<f64>().ln(), q.iter().sum::<f64>().ln());
    // a difference of log terms keeps a label swap an exact negation
    let ratios = p
        .iter()
        .zip(&q)
        .map(|(pi, qi)| (pi.ln() - p_norm) - (qi.ln() - q_norm))
        .collect();
    Ok(NbWeights { ratios, alpha })
}

pub fn apply_nb_weights(x: &[f64], w: &NbWeights) -> Result<Vec<f64>> {
    if x.len() != w.ratios.len() {
        return Err(Error::DimensionMismatch {
            expected: w.ratios.len(),
            got: x.len(),
        });
    }
    Ok(x.iter().zip(&w.ratios).map(|(c, r)| c * r).collect())
}

impl NbWeights {
    /// Reweights a count matrix; output columns are tagged `nb_weighted`
    /// and excluded from standardization.
    pub fn transform(&self, counts: &FeatureMatrix) -> Result<FeatureMatrix> {
        if counts.n_cols() != self.ratios.len() {
            return Err(Error::DimensionMismatch {
                expected: self.ratios.len(),
                got: counts.n_cols(),
            });
        }
        let columns = counts
            .columns
            .iter()
            .map(|c| {
                let token = c.name.split_once(':').map_or(c.name.as_str(), |(_, t)| t);
                Column::new(format!("nbbow:{token}"), ColumnKind::NbWeighted)
            })
            .collect();
        let d = self.ratios.len();
        let data = counts
            .data
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.ratios[k % d])
            .collect();
        FeatureMatrix::new(counts.ids.clone(), columns, data)
    }

    /// Top `k` tokens by ratio in each direction: (most UD-indicative
    /// descending, most HD-indicative ascending). Ties go to the token
    /// that sorts first.
    pub fn ranked<'a>(&self, tokens: &'a [String], k: usize) -> (Ranked<'a>, Ranked<'a>) {
        let mut pairs: Vec<(&str, f64)> = tokens
            .iter()
            .map(String::as_str)
            .zip(self.ratios.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let positive = pairs.iter().take(k).copied().collect();
        pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        let negative = pairs.iter().take(k).copied().collect();
        (positive, negative)
    }
}

/// Pre-trained word vectors of uniform dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// Loads a whitespace-separated vector file (`token v1 .. vD` per line,
/// optional `count dim` header). Later duplicates replace earlier ones.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (table, warnings) = read_embeddings(BufReader::new(file), &path.display().to_string())?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(table)
}

pub fn read_embeddings<R: BufRead>(
    reader: R,
    source: &str,
) -> Result<(EmbeddingTable, Vec<String>)> {
    let mut table = EmbeddingTable::default();
    let mut warnings = Vec::new();
    let mut declared: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if idx == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            declared = fields[1].parse().ok();
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            reason,
        };
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse_err("non-numeric vector component".into()))?;
        let expected = if table.dim > 0 {
            Some(table.dim)
        } else {
            declared
        };
        match expected {
            Some(d) if d != values.len() => {
                return Err(parse_err(format!(
                    "expected {d} dimensions, found {}",
                    values.len()
                )));
            }
            _ if values.is_empty() => return Err(parse_err("token without a vector".into())),
            _ => table.dim = values.len(),
        }
        if table
            .vectors
            .insert(fields[0].to_string(), values)
            .is_some()
        {
            warnings.push(format!(
                "{source}:{line_no}: duplicate token `{}`, keeping the later vector",
                fields[0]
            ));
        }
    }
    if table.dim == 0 {
        if let Some(d) = declared {
            table.dim = d;
        }
    }
    Ok((table, warnings))
}

fn mean_vector<'a>(
    tokens: impl Iterator<Item = &'a String>,
    table: &EmbeddingTable,
) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; table.dim];
    let mut matched = 0usize;
    for t in tokens {
        if let Some(v) = table.get(t) {
            matched += 1;
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
    }
    if matched > 0 {
        sum.iter_mut().for_each(|s| *s /= matched as f64);
    }
    (sum, matched)
}

/// Unweighted mean of the vectors of in-table tokens; the zero vector when
/// nothing matches.
pub fn embed_recipe(tr: &TokenizedRecipe, table: &EmbeddingTable) -> Vec<f64> {
    let (v, matched) = mean_vector(tr.all_tokens.iter(), table);
    if matched == 0 {
        log::warn!(
            "recipe {}: no token has an embedding, using the zero vector",
            tr.id
        );
    }
    v
}

/// Like [`embed_recipe`] but tokens outside `vocab` are skipped.
pub fn embed_recipe_in_vocab(
    tr: &TokenizedRecipe,
    table: &EmbeddingTable,
    vocab: &Vocabulary,
) -> Vec<f64> {
    let (v, matched) = mean_vector(
        tr.all_tokens.iter().filter(|t| vocab.get(t).is_some()),
        table,
    );
    if matched == 0 {
        log::warn!(
            "recipe {}: no in-vocabulary token has an embedding, using the zero vector",
            tr.id
        );
    }
    v
}

pub fn embedding_matrix(
    corpus: &[TokenizedRecipe],
    table: &EmbeddingTable,
    vocab: Option<&Vocabulary>,
) -> Result<FeatureMatrix> {
    let columns = (0..table.dim())
        .map(|i| Column::new(format!("emb:{i}"), ColumnKind::Embedding))
        .collect();
    let rows = par::map_slice(corpus, |tr| match vocab {
        Some(v) => embed_recipe_in_vocab(tr, table, v),
        None => embed_recipe(tr, table),
    });
    FeatureMatrix::from_rows(corpus.iter().map(|t| t.id.clone()).collect(), columns, rows)
}

/// Normalized nutrient amounts in `columns` order followed by dry weight.
pub fn nutritional_vector<S: AsRef<str>>(
    r: &Recipe,
    d: &crate::corpus::DerivedNutrition,
    columns: &[S],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(columns.len() + 1);
    for c in columns {
        let c = c.as_ref();
        if !r.nutrients.contains_key(c) {
            return Err(Error::MissingNutrient(c.to_string()));
        }
        out.push(d.normalized[c]);
    }
    out.push(d.dry_weight);
    Ok(out)
}

pub fn nutritional_matrix<S: AsRef<str> + Sync>(
    recipes: &[Recipe],
    columns: &[S],
) -> Result<FeatureMatrix> {
    let mut cols: Vec<Column> = columns
        .iter()
        .map(|c| Column::new(format!("nu:{}", c.as_ref()), ColumnKind::Nutritional))
        .collect();
    cols.push(Column::new("nu:dry_weight", ColumnKind::Nutritional));
    let rows = par::map_slice(recipes, |r| {
        nutritional_vector(r, &derive_nutrition(r)?, columns)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(recipes.iter().map(|r| r.id.clone()).collect(), cols, rows)
}

/// Per-column (mean, population sd) for standardizable, non-constant
/// columns; `None` columns pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub params: Vec<Option<(f64, f64)>>,
}

pub fn fit_standardizer(x: &FeatureMatrix, train_rows: &[usize]) -> Standardizer {
    let d = x.n_cols();
    let n = train_rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in train_rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &r in train_rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut constant = 0usize;
    let params = x
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if !c.standardizable || train_rows.is_empty() {
                return None;
            }
            let sd = (var[j] / n).sqrt();
            if sd > 0.0 {
                Some((mean[j], sd))
            } else {
                constant += 1;
                None
            }
        })
        .collect();
    if constant > 0 {
        log::debug!("{constant} constant columns left unscaled");
    }
    Standardizer { params }
}

impl Standardizer {
    fn map(&self, x: &FeatureMatrix, f: impl Fn(f64, f64, f64) -> f64) -> Result<FeatureMatrix> {
        if x.n_cols() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: x.n_cols(),
            });
        }
        let d = self.params.len();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| match self.params[k % d] {
                Some((m, s)) => f(v, m, s),
                None => v,
            })
            .collect();
        FeatureMatrix::new(x.ids.clone(), x.columns.clone(), data)
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.map(x, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.map(x, |v, m, s| v * s + m)
    }
}

pub fn apply_standardizer(s: &Standardizer, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    s.apply(x)
}

/// One building block of a feature set.
#[derive(Debug, Clone)]
pub enum Block {
    BowBasic,
    BowParsed,
    NbBow,
    Embedding,
    Nutritional,
    /// Caller-supplied columns, row-aligned with the corpus.
    Precomputed(Arc<FeatureMatrix>),
}

/// A named combination of blocks, concatenated in order.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub name: String,
    pub blocks: Vec<Block>,
}

impl FeatureSet {
    pub const NAMES: [&'static str; 7] = [
        "bow-basic",
        "bow-parsed",
        "nb-bow",
        "embedding",
        "nu",
        "nu+nb-bow",
        "nu+embedding",
    ];

    pub fn named(name: &str) -> Result<Self> {
        let blocks = match name {
            "bow-basic" => vec![Block::BowBasic],
            "bow-parsed" => vec![Block::BowParsed],
            "nb-bow" => vec![Block::NbBow],
            "embedding" => vec![Block::Embedding],
            "nu" => vec![Block::Nutritional],
            "nu+nb-bow" => vec![Block::Nutritional, Block::NbBow],
            "nu+embedding" => vec![Block::Nutritional, Block::Embedding],
            other => {
                return Err(Error::Invalid(format!(
                    "unknown variant `{other}`; valid variants: {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            blocks,
        })
    }

    pub fn custom(name: impl Into<String>, blocks: Vec<Block>) -> Self {
        Self {
            name: name.into(),
            blocks,
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        self.blocks.iter().any(|b| matches!(b, Block::Embedding))
    }
}

/// Inputs for building label-free feature blocks.
pub struct FeatureSources<'a> {
    pub recipes: &'a [Recipe],
    pub parser: IngredientParser,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub nu_columns: Vec<String>,
    pub min_count: usize,
}

impl<'a> FeatureSources<'a> {
    pub fn new(recipes: &'a [Recipe]) -> Self {
        Self {
            recipes,
            parser: IngredientParser::default(),
            embeddings: None,
            nu_columns: DEFAULT_NU_COLUMNS.iter().map(|s| s.to_string()).collect(),
            min_count: crate::textprep::DEFAULT_MIN_COUNT,
        }
    }
}

/// Everything a fold needs to reproduce its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedArtifacts {
    pub nb: Option<NbWeights>,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone)]
pub struct SplitFeatures {
    pub train: FeatureMatrix,
    pub eval: FeatureMatrix,
    pub artifacts: FittedArtifacts,
}

/// Label-free feature blocks for one corpus, computed once and sliced per
/// split.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    ids: Vec<String>,
    basic: Option<(Vocabulary, FeatureMatrix)>,
    parsed: Option<(Vocabulary, FeatureMatrix)>,
    embedding: Option<FeatureMatrix>,
    nutritional: Option<FeatureMatrix>,
}

impl FeatureContext {
    pub fn build(sources: &FeatureSources<'_>, sets: &[FeatureSet]) -> Result<Self> {
        let wants = |f: fn(&Block) -> bool| sets.iter().any(|s| s.blocks.iter().any(f));
        let need_basic = wants(|b| matches!(b, Block::BowBasic | Block::NbBow | Block::Embedding));
        let need_parsed = wants(|b| matches!(b, Block::BowParsed));
        let need_emb = wants(|b| matches!(b, Block::Embedding));
        let need_nu = wants(|b| matches!(b, Block::Nutritional));

        let ids: Vec<String> = sources.recipes.iter().map(|r| r.id.clone()).collect();
        let mut ctx = Self {
            ids,
            basic: None,
            parsed: None,
            embedding: None,
            nutritional: None,
        };
        let mut basic_tokens = None;
        if need_basic {
            let toks = par::map_slice(sources.recipes, tokenize);
            let vocab = Vocabulary::build(&toks, sources.min_count);
            let m = bow_matrix(&toks, &vocab, "bow")?;
            ctx.basic = Some((vocab, m));
            basic_tokens = Some(toks);
        }
        if need_parsed {
            let toks = par::map_slice(sources.recipes, |r| tokenize_parsed(r, &sources.parser));
            let vocab = Vocabulary::build(&toks, sources.min_count);
            let m = bow_matrix(&toks, &vocab, "bowp")?;
            ctx.parsed = Some((vocab, m));
        }
        if need_emb {
            let table = sources.embeddings.ok_or_else(|| {
                Error::Invalid("embedding variant requested without an embedding file".into())
            })?;
            let (vocab, _) = ctx.basic.as_ref().expect("built above");
            let toks = basic_tokens.as_ref().expect("built above");
            ctx.embedding = Some(embedding_matrix(toks, table, Some(vocab))?);
        }
        if need_nu {
            ctx.nutritional = Some(nutritional_matrix(sources.recipes, &sources.nu_columns)?);
        }
        Ok(ctx)
    }

    /// A context whose feature sets consist of precomputed blocks only.
    pub fn precomputed_only(ids: Vec<String>) -> Self {
        Self {
            ids,
            basic: None,
            parsed: None,
            embedding: None,
            nutritional: None,
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    /// Vocabulary behind the bow-basic, nb-bow and embedding blocks.
    pub fn basic_vocabulary(&self) -> Option<&Vocabulary> {
        self.basic.as_ref().map(|(v, _)| v)
    }

    pub fn basic_counts(&self) -> Option<&FeatureMatrix> {
        self.basic.as_ref().map(|(_, m)| m)
    }

    fn block_missing(name: &str) -> Error {
        Error::Invalid(format!(
            "feature block `{name}` was not built for this context"
        ))
    }

    /// Assembles `set` for `train_rows` and `eval_rows`. Label-dependent
    /// and scaling artifacts are fitted on `train_rows` only.
    pub fn build_split(
        &self,
        set: &FeatureSet,
        labels: &[BinaryClass],
        train_rows: &[usize],
        eval_rows: &[usize],
    ) -> Result<SplitFeatures> {
        let mut nb = None;
        let mut blocks = Vec::with_capacity(set.blocks.len());
        for block in &set.blocks {
            let m = match block {
                Block::BowBasic => self
                    .basic
                    .as_ref()
                    .ok_or_else(|| Self::block_missing("bow-basic"))?
                    .1
                    .clone(),
                Block::BowParsed => self
                    .parsed
                    .as_ref()
                    .ok_or_else(|| Self::block_missing("bow-parsed"))?
                    .1
                    .clone(),
                Block::NbBow => {
                    let counts = &self
                        .basic
                        .as_ref()
                        .ok_or_else(|| Self::block_missing("nb-bow"))?
                        .1;
                    let w = fit_nb_weights(counts, labels, train_rows)?;
                    let m = w.transform(counts)?;
                    nb = Some(w);
                    m
                }
                Block::Embedding => self
                    .embedding
                    .clone()
                    .ok_or_else(|| Self::block_missing("embedding"))?,
                Block::Nutritional => self
                    .nutritional
                    .clone()
                    .ok_or_else(|| Self::block_missing("nu"))?,
                Block::Precomputed(m) => {
                    if m.ids() != self.ids.as_slice() {
                        return Err(Error::RowMismatch);
                    }
                    (**m).clone()
                }
            };
            blocks.push(m);
        }
        let full = concat(&blocks)?;
        let standardizer = fit_standardizer(&full, train_rows);
        let train = standardizer.apply(&full.select_rows(train_rows))?;
        let eval = standardizer.apply(&full.select_rows(eval_rows))?;
        Ok(SplitFeatures {
            train,
            eval,
            artifacts: FittedArtifacts { nb, standardizer },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowd::BinaryClass::{Hd, Ud};
    use proptest::prelude::*;

    fn tr(id: &str, tokens: &[&str]) -> TokenizedRecipe {
        TokenizedRecipe {
            id: id.into(),
            tokens_title: vec![],
            tokens_ingredients: vec![],
            tokens_directions: vec![],
            all_tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn counts(rows: &[&[f64]]) -> FeatureMatrix {
        let d = rows[0].len();
        FeatureMatrix::from_rows(
            (0..rows.len()).map(|i| format!("r{i}")).collect(),
            (0..d)
                .map(|j| Column::new(format!("bow:t{j}"), ColumnKind::Count))
                .collect(),
            rows.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn bow_counting() {
        let v = Vocabulary::build(
            &[tr("a", &["flour", "flour", "sugar", "sugar", "sugar"])],
            1,
        );
        // sugar (3) sorts before flour (2)
        assert_eq!(
            bow_counts(&tr("x", &["flour", "flour", "sugar"]), &v),
            vec![1.0, 2.0]
        );
        assert_eq!(bow_counts(&tr("x", &["salt"]), &v), vec![0.0, 0.0]);
    }

    #[test]
    fn nb_symmetric_token_is_zero() {
        let x = counts(&[&[2.0, 1.0], &[2.0, 1.0]]);
        let w = fit_nb_weights(&x, &[Ud, Hd], &[0, 1]).unwrap();
        assert!(w.ratios[0].abs() < 1e-15);
    }

    #[test]
    fn nb_single_class_errors() {
        let x = counts(&[&[1.0], &[2.0]]);
        assert!(matches!(
            fit_nb_weights(&x, &[Ud, Ud], &[0, 1]),
            Err(Error::SingleClass)
        ));
        // the HD row exists but is outside the training rows
        assert!(matches!(
            fit_nb_weights(&x, &[Ud, Hd], &[0]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn nb_four_doc_fixture() {
        // p = 1 + [3,1,1] = [4,2,2] (sum 8); q = 1 + [0,3,4] = [1,4,5] (sum 10)
        let x = counts(&[
            &[2.0, 0.0, 1.0],
            &[1.0, 1.0, 0.0],
            &[0.0, 2.0, 1.0],
            &[0.0, 1.0, 3.0],
        ]);
        let w = fit_nb_weights(&x, &[Ud, Ud, Hd, Hd], &[0, 1, 2, 3]).unwrap();
        let expected = [5.0f64.ln(), 0.625f64.ln(), 0.5f64.ln()];
        for (r, e) in w.ratios.iter().zip(expected) {
            assert!((r - e).abs() < 1e-12);
        }
        let applied = apply_nb_weights(x.row(0), &w).unwrap();
        assert!((applied[0] - 2.0 * 5.0f64.ln()).abs() < 1e-12);
        assert_eq!(applied[1], 0.0);
        assert!((applied[2] - 0.5f64.ln()).abs() < 1e-12);
        let m = w.transform(&x).unwrap();
        assert_eq!(m.row(0), applied.as_slice());
    }

    #[test]
    fn apply_nb_examples() {
        let w = NbWeights {
            ratios: vec![0.5, -1.0],
            alpha: 1.0,
        };
        assert_eq!(apply_nb_weights(&[0.0, 0.0], &w).unwrap(), vec![0.0, 0.0]);
        assert_eq!(apply_nb_weights(&[2.0, 0.0], &w).unwrap(), vec![1.0, 0.0]);
        assert!(apply_nb_weights(&[1.0], &w).is_err());
    }

    #[test]
    fn embeddings_with_and_without_header() {
        let (a, _) = read_embeddings("x 1 2 3\ny 4 5 6\n".as_bytes(), "t").unwrap();
        let (b, _) = read_embeddings("2 3\nx 1 2 3\ny 4 5 6\n".as_bytes(), "t").unwrap();
        assert_eq!(a, b);
        assert_eq!((a.len(), a.dim()), (2, 3));
    }

    #[test]
    fn embeddings_ragged_and_duplicate() {
        match read_embeddings("x 1 2 3\ny 4 5\n".as_bytes(), "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let (t, warnings) = read_embeddings("x 1 2\nx 3 4\n".as_bytes(), "t").unwrap();
        assert_eq!(t.get("x").unwrap(), &[3.0, 4.0]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn embedding_averages() {
        let (t, _) = read_embeddings("a 1 -2\nb -1 2\nc 3 3\n".as_bytes(), "t").unwrap();
        assert_eq!(embed_recipe(&tr("r", &["c"]), &t), vec![3.0, 3.0]);
        assert_eq!(embed_recipe(&tr("r", &["a", "b"]), &t), vec![0.0, 0.0]);
        assert_eq!(embed_recipe(&tr("r", &["zzz"]), &t), vec![0.0, 0.0]);
    }

    #[test]
    fn standardize_train_column() {
        let x = counts(&[&[1.0, 7.0], &[2.0, 7.0], &[3.0, 7.0]]);
        let s = fit_standardizer(&x, &[0, 1, 2]);
        let z = s.apply(&x).unwrap();
        let col: Vec<f64> = (0..3).map(|i| z.get(i, 0)).collect();
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(
            (0..3).map(|i| z.get(i, 1)).collect::<Vec<_>>(),
            vec![7.0; 3]
        );
    }

    #[test]
    fn test_rows_use_train_statistics() {
        let x = counts(&[&[1.0], &[2.0], &[3.0], &[100.0]]);
        let s = fit_standardizer(&x, &[0, 1, 2]);
        let z = s.apply(&x.select_rows(&[3])).unwrap();
        let train_sd = (2.0f64 / 3.0).sqrt();
        assert!((z.get(0, 0) - 98.0 / train_sd).abs() < 1e-12);
        let all = fit_standardizer(&x, &[0, 1, 2, 3])
            .apply(&x.select_rows(&[3]))
            .unwrap();
        assert!((all.get(0, 0) - z.get(0, 0)).abs() > 1.0);
    }

    #[test]
    fn nutritional_passthrough() {
        let nutrients: std::collections::BTreeMap<String, f64> = DEFAULT_NU_COLUMNS
            .iter()
            .map(|c| (c.to_string(), 1.0))
            .chain([("calories".to_string(), 250.0)])
            .collect();
        let r = Recipe {
            id: "r".into(),
            title: "t".into(),
            ingredients: vec!["a".into(), "b".into()],
            directions: vec!["x.".into(), "y.".into()],
            nutrients,
            category_tags: Default::default(),
        };
        let d = derive_nutrition(&r).unwrap();
        let v = nutritional_vector(&r, &d, &DEFAULT_NU_COLUMNS).unwrap();
        assert_eq!(v.len(), 20);
        assert_eq!(v[19], d.dry_weight);
        assert_eq!(v[1], d.normalized["fat"]);
        let mut doubled = r.clone();
        doubled.nutrients.values_mut().for_each(|v| *v *= 2.0);
        let v2 = nutritional_vector(
            &doubled,
            &derive_nutrition(&doubled).unwrap(),
            &DEFAULT_NU_COLUMNS,
        )
        .unwrap();
        for i in 1..19 {
            assert!((v[i] - v2[i]).abs() < 1e-12);
        }
        assert!((v2[19] - 2.0 * v[19]).abs() < 1e-9);
        assert!(matches!(
            nutritional_vector(&r, &d, &["chromium"]),
            Err(Error::MissingNutrient(_))
        ));
    }

    #[test]
    fn nb_columns_are_not_standardized() {
        let x = counts(&[&[1.0], &[3.0]]);
        let w = NbWeights {
            ratios: vec![2.0],
            alpha: 1.0,
        };
        let nbm = w.transform(&x).unwrap();
        let s = fit_standardizer(&nbm, &[0, 1]);
        assert_eq!(s.params, vec![None]);
        assert_eq!(nbm.columns()[0].name, "nbbow:t0");
    }

    #[test]
    fn concat_checks_rows() {
        let a = counts(&[&[1.0], &[2.0]]);
        assert_eq!(concat(std::slice::from_ref(&a)).unwrap(), a);
        let b = FeatureMatrix::from_rows(
            vec!["x".into(), "y".into()],
            vec![Column::new("c", ColumnKind::Other)],
            vec![vec![1.0], vec![2.0]],
        )
        .unwrap();
        assert!(matches!(concat(&[a.clone(), b]), Err(Error::RowMismatch)));
        let ab = concat(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(ab.n_cols(), 2);
        assert_eq!(ab.row(1), &[2.0, 2.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            FeatureMatrix::new(
                vec!["a".into()],
                vec![Column::new("c", ColumnKind::Other)],
                vec![f64::NAN]
            ),
            Err(Error::NonFinite { row: 0, col: 0 })
        ));
    }

    #[test]
    fn unknown_variant_lists_valid_names() {
        let err = FeatureSet::named("lgbm").unwrap_err().to_string();
        assert!(err.contains("nu+nb-bow"));
    }

    proptest! {
        #[test]
        fn nb_label_swap_negates(rows in proptest::collection::vec(proptest::collection::vec(0u8..5, 4), 4..10)) {
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
            let n = rows.len();
            let x = FeatureMatrix::from_rows((0..n).map(|i| i.to_string()).collect(),
                (0..4).map(|j| Column::new(format!("bow:{j}"), ColumnKind::Count)).collect(), rows).unwrap();
            let labels: Vec<BinaryClass> = (0..n).map(|i| if i % 2 == 0 { Ud } else { Hd }).collect();
            let swapped: Vec<BinaryClass> = labels.iter().map(|l| l.flipped()).collect();
            let all: Vec<usize> = (0..n).collect();
            let a = fit_nb_weights(&x, &labels, &all).unwrap();
            let b = fit_nb_weights(&x, &swapped, &all).unwrap();
            for (ra, rb) in a.ratios.iter().zip(&b.ratios) {
                prop_assert_eq!(*ra, -*rb);
            }
        }

        #[test]
        fn bow_sum_is_in_vocab_token_count(tokens in proptest::collection::vec("[a-f]", 0..30)) {
            let vocab = Vocabulary::build(&[tr("v", &["a", "b", "c", "a"])], 1);
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            let t = tr("x", &refs);
            let expected = tokens.iter().filter(|s| vocab.get(s).is_some()).count() as f64;
            prop_assert_eq!(bow_counts(&t, &vocab).iter().sum::<f64>(), expected);
        }

        #[test]
        fn embedding_is_order_invariant(mut idx in proptest::collection::vec(0usize..3, 1..10)) {
            let (t, _) = read_embeddings("a 1.5 -2\nb -1 2.25\nc 3 3\n".as_bytes(), "t").unwrap();
            let names = ["a", "b", "c"];
            let fwd: Vec<&str> = idx.iter().map(|&i| names[i]).collect();
            idx.reverse();
            let rev: Vec<&str> = idx.iter().map(|&i| names[i]).collect();
            let (x, y) = (embed_recipe(&tr("r", &fwd), &t), embed_recipe(&tr("r", &rev), &t));
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn standardizer_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 3), 2..12)) {
            let n = rows.len();
            let x = FeatureMatrix::from_rows((0..n).map(|i| i.to_string()).collect(),
                (0..3).map(|j| Column::new(format!("nu:{j}"), ColumnKind::Nutritional)).collect(), rows).unwrap();
            let train: Vec<usize> = (0..n).step_by(2).collect();
            let s = fit_standardizer(&x, &train);
            let back = s.invert(&s.apply(&x).unwrap()).unwrap();
            for (a, b) in x.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
