//! Command-line front end: parses flags, merges them over the JSON config
//! and dispatches to the subcommands.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

pub use commands::{cmd_aggregate, cmd_analyze, cmd_curate, cmd_evaluate, cmd_ingest, cmd_inspect};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "glyset",
    version,
    about = "Glycemic-impact recipe labeling and classification"
)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated feature-set variants for `evaluate`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Recipe corpus (JSON Lines).
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Crowd judgments CSV (worker_id,recipe_id,rating).
    #[arg(long, global = true)]
    pub judgments: Option<PathBuf>,
    /// Aggregated labels CSV as written by `aggregate`.
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Word vectors, one token per line.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Ingredient quantity stop-list.
    #[arg(long, global = true)]
    pub stoplist: Option<PathBuf>,
    /// Traffic-light thresholds CSV.
    #[arg(long, global = true)]
    pub fsa_thresholds: Option<PathBuf>,
    /// Trained model JSON for `inspect`.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and write accepted recipes, rejections and a summary.
    Ingest,
    /// Select recipes for crowd annotation.
    Curate {
        /// Number of candidates.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Measure agreement and aggregate crowd judgments into labels.
    Aggregate,
    /// Relate labels to traffic-light healthiness scores.
    Analyze,
    /// Nested cross-validation over feature-set variants.
    Evaluate,
    /// Rank model weights and NB log-count ratios.
    Inspect {
        /// Rows per ranking.
        #[arg(long)]
        k: Option<usize>,
    },
}

impl Cli {
    /// The config file (if any) with every given flag applied on top.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let set = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        };
        set(&mut cfg.corpus, &self.corpus);
        set(&mut cfg.judgments, &self.judgments);
        set(&mut cfg.labels, &self.labels);
        set(&mut cfg.embeddings, &self.embeddings);
        set(&mut cfg.stoplist, &self.stoplist);
        set(&mut cfg.fsa_thresholds, &self.fsa_thresholds);
        set(&mut cfg.model, &self.model);
        if let Some(out) = &self.out {
            cfg.out.clone_from(out);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        if let Some(v) = &self.variants {
            cfg.variants = v
                .iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
        }
        match self.command {
            Command::Curate { n: Some(n) } => cfg.n = n,
            Command::Inspect { k: Some(k) } => cfg.top_k = k,
            _ => {}
        }
        if cfg.jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        Ok(cfg)
    }
}

/// Runs one subcommand and returns a one-line human summary.
pub fn run(cli: Cli) -> Result<String> {
    let cfg = cli.resolve_config()?;
    let jobs = cfg.jobs;
    glyset::par::with_jobs(jobs, move || dispatch(&cli.command, &cfg))
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<String> {
    let out = cfg.out.display();
    Ok(match command {
        Command::Ingest => {
            let s = cmd_ingest(cfg)?;
            format!(
                "ingest: {} accepted, {} rejected -> {out}",
                s.accepted, s.rejected
            )
        }
        Command::Curate { .. } => {
            let s = cmd_curate(cfg)?;
            let [l, m, h] = s.per_partition;
            format!(
                "curate: {} candidates (LOW {l}, MID {m}, HIGH {h}) -> {out}",
                s.ids.len()
            )
        }
        Command::Aggregate => {
            let s = cmd_aggregate(cfg)?;
            let alpha = s
                .alpha_ordinal
                .map_or("undefined".to_string(), |a| format!("{a:.4}"));
            format!(
                "aggregate: {} UD, {} HD, {} NOT_SURE excluded; ordinal alpha {alpha} -> {out}",
                s.ud, s.hd, s.excluded_not_sure
            )
        }
        Command::Analyze => {
            let rows = cmd_analyze(cfg)?;
            let flagged: Vec<&str> = rows
                .iter()
                .filter(|r| r.significant)
                .map(|r| r.component.as_str())
                .collect();
            format!(
                "analyze: significant UD/HD differences in [{}] -> {out}",
                flagged.join(", ")
            )
        }
        Command::Evaluate => {
            let r = cmd_evaluate(cfg)?;
            let means: Vec<String> = r
                .variants
                .iter()
                .map(|v| format!("{} F1 {:.3}", v.name, v.mean_f1))
                .collect();
            format!("evaluate: {} -> {out}", means.join("; "))
        }
        Command::Inspect { .. } => {
            let r = cmd_inspect(cfg)?;
            format!(
                "inspect: {} model weights, {} NB tokens per direction -> {out}",
                r.model_weights.len(),
                r.nb_positive.len()
            )
        }
    })
}
