//! Rank-based and correlational tests: Pearson r, Kruskal-Wallis H and
//! Dunn's pairwise post-hoc test.
//!
//! Ties are handled with midranks throughout. p-values come from the
//! asymptotic distributions (t, chi-square, standard normal).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::{Error, Result};

/// A named group of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub group_id: String,
    pub values: Vec<f64>,
}

impl Sample {
    pub fn new(group_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            group_id: group_id.into(),
            values,
        }
    }
}

/// A group with midranks assigned jointly over all groups of a test.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSample {
    pub group_id: String,
    pub values: Vec<f64>,
    pub midranks: Vec<f64>,
}

impl RankedSample {
    pub fn mean_rank(&self) -> f64 {
        self.midranks.iter().sum::<f64>() / self.midranks.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub group_a: String,
    pub group_b: String,
    pub z: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub pairwise: Option<Vec<PairwiseComparison>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjustment {
    None,
    #[default]
    Bonferroni,
}

/// Midranks (1-based) of `values`; tied values share the mean of the ranks
/// they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Σ (t³ − t) over tie groups of `values`.
pub fn tie_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        let t = (end - start) as f64;
        total += t * t * t - t;
        start = end;
    }
    total
}

/// Ranks all groups jointly.
pub fn rank_jointly(groups: &[Sample]) -> Vec<RankedSample> {
    let pooled: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.values.iter().copied())
        .collect();
    let ranks = midranks(&pooled);
    let mut offset = 0;
    groups
        .iter()
        .map(|g| {
            let n = g.values.len();
            let sample = RankedSample {
                group_id: g.group_id.clone(),
                values: g.values.clone(),
                midranks: ranks[offset..offset + n].to_vec(),
            };
            offset += n;
            sample
        })
        .collect()
}

/// Pearson correlation and its two-sided p-value from a t distribution
/// with n − 2 degrees of freedom.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Invalid(format!(
            "pearson_r needs at least 3 pairs, got {n}"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok((r, p))
}

fn check_groups(groups: &[Sample]) -> Result<usize> {
    if groups.len() < 2 {
        return Err(Error::Invalid("need at least two groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.values.is_empty()) {
        return Err(Error::Invalid(format!("group `{}` is empty", g.group_id)));
    }
    let n: usize = groups.iter().map(|g| g.values.len()).sum();
    if n < 5 {
        return Err(Error::Invalid(format!(
            "need at least 5 observations for the chi-square approximation, got {n}"
        )));
    }
    if groups
        .iter()
        .any(|g| g.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Invalid("non-finite observation".into()));
    }
    let first = groups[0].values[0];
    if groups.iter().all(|g| g.values.iter().all(|&v| v == first)) {
        return Err(Error::DegenerateRanks);
    }
    Ok(n)
}

/// Kruskal-Wallis H with tie correction; p from chi-square with k − 1 df.
pub fn kruskal_wallis(groups: &[Sample]) -> Result<TestResult> {
    let n = check_groups(groups)? as f64;
    let ranked = rank_jointly(groups);
    let pooled: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.values.iter().copied())
        .collect();
    let centre = (n + 1.0) / 2.0;
    let spread: f64 = ranked
        .iter()
        .map(|g| g.values.len() as f64 * (g.mean_rank() - centre).powi(2))
        .sum();
    let h_raw = 12.0 / (n * (n + 1.0)) * spread;
    let correction = 1.0 - tie_sum(&pooled) / (n * n * n - n);
    let h = h_raw / correction;
    let df = (groups.len() - 1) as f64;
    let chi = ChiSquared::new(df).expect("df > 0");
    let p = if h <= 0.0 {
        1.0
    } else {
        chi.sf(h).clamp(0.0, 1.0)
    };
    Ok(TestResult {
        statistic: h.max(0.0),
        p_value: p,
        pairwise: None,
    })
}

/// Dunn's test over every pair of groups (i < j in input order).
pub fn dunn_test(groups: &[Sample], adjustment: Adjustment) -> Result<Vec<PairwiseComparison>> {
    let n = check_groups(groups)? as f64;
    let ranked = rank_jointly(groups);
    let pooled: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.values.iter().copied())
        .collect();
    let variance = n * (n + 1.0) / 12.0 - tie_sum(&pooled) / (12.0 * (n - 1.0));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let k = groups.len();
    let n_pairs = (k * (k - 1) / 2) as f64;
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&ranked[i], &ranked[j]);
            let se =
                (variance * (1.0 / a.values.len() as f64 + 1.0 / b.values.len() as f64)).sqrt();
            let diff = a.mean_rank() - b.mean_rank();
            let z = if diff == 0.0 { 0.0 } else { diff / se };
            let p = (2.0 * normal.sf(z.abs())).clamp(0.0, 1.0);
            let adjusted_p = match adjustment {
                Adjustment::None => p,
                Adjustment::Bonferroni => (p * n_pairs).min(1.0),
            };
            out.push(PairwiseComparison {
                group_a: a.group_id.clone(),
                group_b: b.group_id.clone(),
                z,
                p_value: p,
                adjusted_p,
            });
        }
    }
    Ok(out)
}

/// Kruskal-Wallis followed by Dunn's test, bundled into one result.
pub fn kruskal_wallis_dunn(groups: &[Sample], adjustment: Adjustment) -> Result<TestResult> {
    let mut kw = kruskal_wallis(groups)?;
    kw.pairwise = Some(dunn_test(groups, adjustment)?);
    Ok(kw)
}
