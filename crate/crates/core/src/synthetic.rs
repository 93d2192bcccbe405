//! Seeded synthetic data: recipe corpora with a planted nutritional label
//! rule, simulated crowd judgments and pure-noise feature blocks.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::corpus::{derive_nutrition, Recipe, LOW_GLYCEMIC_TAG};
use crate::crowd::{AggregatedLabel, BinaryClass, Judgment, JudgmentSet, Rating, N_CLASSES};
use crate::features::{Column, ColumnKind, FeatureMatrix, DEFAULT_NU_COLUMNS};
use crate::{rng, Result};

const UD_WORDS: [&str; 8] = [
    "pasta", "cake", "frosting", "linguine", "bread", "syrup", "cookie", "potato",
];
const HD_WORDS: [&str; 8] = [
    "spinach", "salmon", "kale", "lentil", "broccoli", "tofu", "zucchini", "almond",
];
const FILLER: [&str; 16] = [
    "salt", "pepper", "oil", "garlic", "onion", "water", "lemon", "herbs", "butter", "stock",
    "egg", "milk", "vinegar", "cumin", "basil", "thyme",
];
const VERBS: [&str; 8] = [
    "stir", "bake", "simmer", "chop", "whisk", "season", "serve", "roast",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedOptions {
    pub n: usize,
    /// Slope of the planted logistic rule on (carbohydrate − protein)
    /// fraction of dry weight.
    pub slope: f64,
    /// Probability that an indicative word of the true class is added to
    /// each ingredient line; the other class's words appear at a quarter of
    /// this rate.
    pub token_signal: f64,
}

impl Default for PlantedOptions {
    fn default() -> Self {
        Self {
            n: 1000,
            slope: 40.0,
            token_signal: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub recipes: Vec<Recipe>,
    pub labels: Vec<BinaryClass>,
    /// σ(slope · (carb_frac − protein_frac − median)) per recipe.
    pub probabilities: Vec<f64>,
}

impl PlantedCorpus {
    /// Aggregated labels with rating 2 for UD and 4 for HD.
    pub fn aggregated_labels(&self) -> Vec<AggregatedLabel> {
        self.recipes
            .iter()
            .zip(&self.labels)
            .map(|(r, l)| {
                let label = if l.is_positive() {
                    Rating::Score(2)
                } else {
                    Rating::Score(4)
                };
                let mut posterior = [0.0; N_CLASSES];
                posterior[label.class_index()] = 1.0;
                AggregatedLabel {
                    recipe_id: r.id.clone(),
                    label,
                    posterior,
                }
            })
            .collect()
    }

    /// Share of UD labels.
    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().filter(|l| l.is_positive()).count() as f64 / self.labels.len() as f64
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

/// Recipes whose UD label is drawn from a logistic function of the
/// carbohydrate and protein shares of dry weight, with class-indicative
/// ingredient words layered on top.
pub fn planted_corpus(seed: u64, opts: &PlantedOptions) -> Result<PlantedCorpus> {
    let mut nutrient_rng = rng::substream(seed, "synthetic-nutrients");
    let mut recipes = Vec::with_capacity(opts.n);
    let mut margins = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let mut nutrients = BTreeMap::new();
        for &c in DEFAULT_NU_COLUMNS.iter() {
            let v = match c {
                "calories" => nutrient_rng.gen_range(100.0..900.0),
                "carbohydrates" => nutrient_rng.gen_range(5.0..90.0),
                "protein" => nutrient_rng.gen_range(3.0..60.0),
                "fat" => nutrient_rng.gen_range(1.0..40.0),
                "saturated_fat" => nutrient_rng.gen_range(0.1..12.0),
                "sugars" => nutrient_rng.gen_range(0.5..40.0),
                "fiber" => nutrient_rng.gen_range(0.2..12.0),
                "sodium" | "potassium" | "cholesterol" | "calcium" => {
                    nutrient_rng.gen_range(0.01..1.5)
                }
                _ => nutrient_rng.gen_range(0.0001..0.05),
            };
            nutrients.insert(c.to_string(), v);
        }
        let recipe = Recipe {
            id: format!("syn{i:05}"),
            title: String::new(),
            ingredients: Vec::new(),
            directions: Vec::new(),
            nutrients,
            category_tags: Default::default(),
        };
        let d = derive_nutrition(&recipe)?;
        margins.push(d.normalized["carbohydrates"] - d.normalized["protein"]);
        recipes.push(recipe);
    }
    let mut sorted = margins.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);

    let mut label_rng = rng::substream(seed, "synthetic-labels");
    let mut text_rng = rng::substream(seed, "synthetic-text");
    let mut labels = Vec::with_capacity(opts.n);
    let mut probabilities = Vec::with_capacity(opts.n);
    for (recipe, m) in recipes.iter_mut().zip(&margins) {
        let p = sigmoid(opts.slope * (m - median));
        let label = if label_rng.gen::<f64>() < p {
            BinaryClass::Ud
        } else {
            BinaryClass::Hd
        };
        let (own, other) = if label.is_positive() {
            (&UD_WORDS, &HD_WORDS)
        } else {
            (&HD_WORDS, &UD_WORDS)
        };
        let n_ing = text_rng.gen_range(3..7);
        recipe.ingredients = (0..n_ing)
            .map(|_| {
                let mut line = format!(
                    "{} cup {}",
                    text_rng.gen_range(1..4),
                    pick(&mut text_rng, &FILLER)
                );
                if text_rng.gen::<f64>() < opts.token_signal {
                    line.push(' ');
                    line.push_str(pick(&mut text_rng, own));
                }
                if text_rng.gen::<f64>() < opts.token_signal / 4.0 {
                    line.push(' ');
                    line.push_str(pick(&mut text_rng, other));
                }
                line
            })
            .collect();
        let n_dir = text_rng.gen_range(2..5);
        recipe.directions = (0..n_dir)
            .map(|_| {
                format!(
                    "{} the {}.",
                    pick(&mut text_rng, &VERBS),
                    pick(&mut text_rng, &FILLER)
                )
            })
            .collect();
        recipe.title = format!(
            "{} with {}",
            pick(&mut text_rng, &FILLER),
            pick(&mut text_rng, &FILLER)
        );
        if !label.is_positive() && text_rng.gen::<f64>() < 0.3 {
            recipe.category_tags.insert(LOW_GLYCEMIC_TAG.to_string());
        }
        labels.push(label);
        probabilities.push(p);
    }
    Ok(PlantedCorpus {
        recipes,
        labels,
        probabilities,
    })
}

/// F1 of predicting UD for every row: 2π / (1 + π) for UD share π.
pub fn all_positive_f1(positive_rate: f64) -> f64 {
    if positive_rate <= 0.0 {
        0.0
    } else {
        2.0 * positive_rate / (1.0 + positive_rate)
    }
}

/// Uniform(−1, 1) columns carrying no label information.
pub fn noise_block(ids: &[String], dim: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut r = rng::substream(seed, "synthetic-noise");
    let columns = (0..dim)
        .map(|j| Column::new(format!("noise:{j}"), ColumnKind::Other))
        .collect();
    let data = (0..ids.len() * dim)
        .map(|_| r.gen_range(-1.0..1.0))
        .collect();
    FeatureMatrix::new(ids.to_vec(), columns, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdOptions {
    pub n_recipes: usize,
    pub n_workers: usize,
    /// Probability a worker reports the true class; the rest is spread
    /// evenly over the other five responses.
    pub accuracy: f64,
}

impl Default for CrowdOptions {
    fn default() -> Self {
        Self {
            n_recipes: 200,
            n_workers: 5,
            accuracy: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedCrowd {
    pub judgments: JudgmentSet,
    /// True rating per recipe id.
    pub truth: BTreeMap<String, Rating>,
}

/// Every worker rates every recipe; true ratings are uniform over 1–5.
pub fn simulate_crowd(seed: u64, opts: &CrowdOptions) -> Result<SimulatedCrowd> {
    let mut r = rng::substream(seed, "synthetic-crowd");
    let off = (1.0 - opts.accuracy) / (N_CLASSES - 1) as f64;
    let rows: Vec<WeightedIndex<f64>> = (0..N_CLASSES)
        .map(|k| {
            let w: Vec<f64> = (0..N_CLASSES)
                .map(|j| if j == k { opts.accuracy } else { off })
                .collect();
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();
    let mut truth = BTreeMap::new();
    let mut judgments = Vec::with_capacity(opts.n_recipes * opts.n_workers);
    for i in 0..opts.n_recipes {
        let id = format!("rec{i:04}");
        let true_class = r.gen_range(0..5);
        truth.insert(id.clone(), Rating::from_class_index(true_class));
        for w in 0..opts.n_workers {
            let response = rows[true_class].sample(&mut r);
            judgments.push(Judgment::new(
                format!("w{w}"),
                id.clone(),
                Rating::from_class_index(response),
            ));
        }
    }
    Ok(SimulatedCrowd {
        judgments: JudgmentSet::new(judgments)?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_corpus_is_valid_and_balanced() {
        let c = planted_corpus(
            1,
            &PlantedOptions {
                n: 300,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.recipes.len(), 300);
        assert!(c.recipes.iter().all(|r| r.validate().is_ok()));
        assert!((c.positive_rate() - 0.5).abs() < 0.1);
    }

    #[test]
    fn planted_corpus_is_seeded() {
        let opts = PlantedOptions {
            n: 50,
            ..Default::default()
        };
        let (a, b) = (
            planted_corpus(9, &opts).unwrap(),
            planted_corpus(9, &opts).unwrap(),
        );
        assert_eq!(a.recipes, b.recipes);
        assert_eq!(a.labels, b.labels);
        assert_ne!(planted_corpus(10, &opts).unwrap().recipes, a.recipes);
    }

    #[test]
    fn baseline_f1() {
        assert_eq!(all_positive_f1(0.5), 2.0 / 3.0);
        assert_eq!(all_positive_f1(0.0), 0.0);
    }

    #[test]
    fn crowd_accuracy_matches() {
        let s = simulate_crowd(
            3,
            &CrowdOptions {
                n_recipes: 400,
                ..Default::default()
            },
        )
        .unwrap();
        let hits = s
            .judgments
            .judgments()
            .iter()
            .filter(|j| s.truth[&j.recipe_id] == j.rating)
            .count() as f64;
        let rate = hits / s.judgments.judgments().len() as f64;
        assert!((rate - 0.8).abs() < 0.03, "{rate}");
    }
}
