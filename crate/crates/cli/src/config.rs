//! Run configuration: a JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use glyset::eval::GridSpec;
use glyset::features::FeatureSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub fsa_thresholds: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub variants: Vec<String>,
    pub c_grid: Vec<f64>,
    pub threshold_grid: Vec<f64>,
    pub min_count: usize,
    /// Number of candidates for `curate`.
    pub n: usize,
    /// Rows per direction for `inspect`.
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        Self {
            corpus: None,
            judgments: None,
            labels: None,
            embeddings: None,
            stoplist: None,
            fsa_thresholds: None,
            model: None,
            out: PathBuf::from("out"),
            seed: 42,
            jobs: None,
            variants: Vec::new(),
            c_grid: grid.c_grid,
            threshold_grid: grid.thresholds,
            min_count: glyset::textprep::DEFAULT_MIN_COUNT,
            n: 1000,
            top_k: 20,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            c_grid: self.c_grid.clone(),
            thresholds: self.threshold_grid.clone(),
        }
    }

    /// Requested variants, or every variant the inputs support.
    pub fn feature_sets(&self) -> Result<Vec<FeatureSet>> {
        let names: Vec<String> = if self.variants.is_empty() {
            FeatureSet::NAMES
                .iter()
                .filter(|n| self.embeddings.is_some() || !n.contains("embedding"))
                .map(|n| n.to_string())
                .collect()
        } else {
            self.variants.clone()
        };
        let sets = names
            .iter()
            .map(|n| FeatureSet::named(n))
            .collect::<glyset::Result<Vec<_>>>()?;
        if self.embeddings.is_none() {
            if let Some(s) = sets.iter().find(|s| s.needs_embeddings()) {
                bail!("variant `{}` needs an embeddings file", s.name);
            }
        }
        Ok(sets)
    }
}

/// Returns the path or an error naming the missing setting.
pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .with_context(|| format!("no {what} given (set it in the config or pass --{what})"))?;
    if !p.exists() {
        bail!("{what} file {} does not exist", p.display());
    }
    Ok(p)
}

/// Checks an optional path exists when set.
pub fn optional<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<Option<&'a Path>> {
    match path.as_deref() {
        Some(p) if !p.exists() => bail!("{what} file {} does not exist", p.display()),
        other => Ok(other),
    }
}
