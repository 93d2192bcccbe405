//! L2-regularized logistic regression with an unregularized intercept and a
//! decision threshold.
//!
//! Minimizes `½‖w‖² + C Σᵢ log(1 + exp(−yᵢ(w·xᵢ + b)))` with `y = +1` for UD
//! using a truncated Newton method (conjugate-gradient inner solve,
//! backtracking line search) started from zero.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crowd::BinaryClass;
use crate::features::FeatureMatrix;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const THRESHOLD_RANGE: (f64, f64) = (0.45, 0.55);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub threshold: f64,
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_set: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(skip)]
    pub iterations: usize,
    #[serde(skip)]
    pub converged: bool,
}

impl TrainedClassifier {
    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        let (lo, hi) = THRESHOLD_RANGE;
        if !(lo - 1e-12..=hi + 1e-12).contains(&threshold) {
            return Err(Error::Invalid(format!(
                "threshold {threshold} outside [{lo}, {hi}]"
            )));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let m: Self = serde_json::from_reader(r)?;
        if m.weights.len() != m.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: m.columns.len(),
                got: m.weights.len(),
            });
        }
        Ok(m)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_json(std::io::BufReader::new(f))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a FeatureMatrix,
    y: Vec<f64>,
    c: f64,
}

impl Problem<'_> {
    fn d(&self) -> usize {
        self.x.n_cols()
    }

    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        (0..self.x.n_rows())
            .map(|i| dot(self.x.row(i), w) + b)
            .collect()
    }

    fn objective_at(&self, w: &[f64], z: &[f64]) -> f64 {
        let loss: f64 = z
            .iter()
            .zip(&self.y)
            .map(|(zi, yi)| softplus(-yi * zi))
            .sum();
        0.5 * dot(w, w) + self.c * loss
    }

    /// Gradient in (w, b) and the per-row Hessian weights σ(z)(1−σ(z)).
    fn gradient_at(&self, w: &[f64], z: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let mut gw = w.to_vec();
        let mut gb = 0.0;
        let mut curv = Vec::with_capacity(z.len());
        for (i, (zi, yi)) in z.iter().zip(&self.y).enumerate() {
            let coef = -self.c * yi * sigmoid(-yi * zi);
            axpy(coef, self.x.row(i), &mut gw);
            gb += coef;
            let s = sigmoid(*zi);
            curv.push(s * (1.0 - s));
        }
        (gw, gb, curv)
    }

    fn hess_vec(&self, curv: &[f64], vw: &[f64], vb: f64) -> (Vec<f64>, f64) {
        let mut hw = vw.to_vec();
        let mut hb = 0.0;
        for (i, di) in curv.iter().enumerate() {
            let row = self.x.row(i);
            let u = self.c * di * (dot(row, vw) + vb);
            axpy(u, row, &mut hw);
            hb += u;
        }
        (hw, hb)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn signs(y: &[BinaryClass]) -> Vec<f64> {
    y.iter().map(|c| c.sign()).collect()
}

fn check_labels(x: &FeatureMatrix, y: &[BinaryClass]) -> Result<()> {
    if y.len() != x.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Objective value at (w, b).
pub fn lr_objective(
    x: &FeatureMatrix,
    y: &[BinaryClass],
    c: f64,
    w: &[f64],
    b: f64,
) -> Result<f64> {
    check_labels(x, y)?;
    let p = Problem { x, y: signs(y), c };
    Ok(p.objective_at(w, &p.margins(w, b)))
}

/// Analytic gradient at (w, b): (∂/∂w, ∂/∂b).
pub fn lr_gradient(
    x: &FeatureMatrix,
    y: &[BinaryClass],
    c: f64,
    w: &[f64],
    b: f64,
) -> Result<(Vec<f64>, f64)> {
    check_labels(x, y)?;
    let p = Problem { x, y: signs(y), c };
    let (gw, gb, _) = p.gradient_at(w, &p.margins(w, b));
    Ok((gw, gb))
}

/// Trains at regularization `c`; the returned model has threshold 0.5.
pub fn train_lr(
    x: &FeatureMatrix,
    y: &[BinaryClass],
    c: f64,
    opts: &TrainOptions,
) -> Result<TrainedClassifier> {
    check_labels(x, y)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Invalid(format!("C must be positive, got {c}")));
    }
    if !(y.iter().any(|l| l.is_positive()) && y.iter().any(|l| !l.is_positive())) {
        return Err(Error::SingleClass);
    }
    if let Some(pos) = x.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / x.n_cols().max(1),
            col: pos % x.n_cols().max(1),
        });
    }
    let p = Problem { x, y: signs(y), c };
    let d = p.d();
    let cg_cap = (d + 1).min(250);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut z = vec![0.0; x.n_rows()];
    let mut f = p.objective_at(&w, &z);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let (gw, gb, curv) = p.gradient_at(&w, &z);
        let gnorm_inf = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gnorm_inf < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Conjugate gradient on H s = -g.
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        let cg_tol = gnorm2.sqrt().min(0.5) * gnorm2.sqrt();
        let (mut sw, mut sb) = (vec![0.0; d], 0.0);
        let (mut rw, mut rb): (Vec<f64>, f64) = (gw.iter().map(|g| -g).collect(), -gb);
        let (mut pw, mut pb) = (rw.clone(), rb);
        let mut rs = gnorm2;
        for _ in 0..cg_cap {
            let (hw, hb) = p.hess_vec(&curv, &pw, pb);
            let php = dot(&pw, &hw) + pb * hb;
            if php <= 0.0 {
                break;
            }
            let alpha = rs / php;
            axpy(alpha, &pw, &mut sw);
            sb += alpha * pb;
            axpy(-alpha, &hw, &mut rw);
            rb -= alpha * hb;
            let rs_new = dot(&rw, &rw) + rb * rb;
            if rs_new.sqrt() <= cg_tol {
                break;
            }
            let beta = rs_new / rs;
            for (pi, ri) in pw.iter_mut().zip(&rw) {
                *pi = ri + beta * *pi;
            }
            pb = rb + beta * pb;
            rs = rs_new;
        }
        let mut slope = dot(&gw, &sw) + gb * sb;
        if slope.is_nan() || slope >= 0.0 {
            sw = gw.iter().map(|g| -g).collect();
            sb = -gb;
            slope = -gnorm2;
        }

        // Backtracking (Armijo) along s, reusing X·s for the margins.
        let xs: Vec<f64> = (0..x.n_rows()).map(|i| dot(x.row(i), &sw) + sb).collect();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let w_new: Vec<f64> = w.iter().zip(&sw).map(|(wi, si)| wi + step * si).collect();
            let z_new: Vec<f64> = z.iter().zip(&xs).map(|(zi, si)| zi + step * si).collect();
            let f_new = p.objective_at(&w_new, &z_new);
            if f_new <= f + 1e-4 * step * slope {
                accepted = Some((w_new, z_new, f_new));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((w_new, z_new, f_new)) => {
                let decrease = f - f_new;
                b += step * sb;
                w = w_new;
                z = z_new;
                f = f_new;
                // Below this the gradient is rounding noise and no step can help.
                if decrease <= 4.0 * f64::EPSILON * f.abs().max(1.0) {
                    log::debug!("objective stagnated after {iterations} iterations");
                    break;
                }
            }
            None => {
                log::debug!("line search stalled after {iterations} iterations");
                break;
            }
        }
    }
    if !converged {
        log::debug!(
            "logistic regression stopped at {iterations} iterations without reaching tol {}",
            opts.tol
        );
    }
    Ok(TrainedClassifier {
        weights: w,
        bias: b,
        c,
        threshold: DEFAULT_THRESHOLD,
        columns: x.column_names(),
        feature_set: None,
        fold: None,
        iterations,
        converged,
    })
}

fn check_dims(m: &TrainedClassifier, x: &FeatureMatrix) -> Result<()> {
    if x.n_cols() != m.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: m.weights.len(),
            got: x.n_cols(),
        });
    }
    Ok(())
}

/// σ(w·x + b) per row.
pub fn predict_proba(m: &TrainedClassifier, x: &FeatureMatrix) -> Result<Vec<f64>> {
    check_dims(m, x)?;
    Ok((0..x.n_rows())
        .map(|i| sigmoid(dot(x.row(i), &m.weights) + m.bias))
        .collect())
}

/// UD when the probability reaches `threshold`.
pub fn classify(probabilities: &[f64], threshold: f64) -> Vec<BinaryClass> {
    probabilities
        .iter()
        .map(|&p| {
            if p >= threshold {
                BinaryClass::Ud
            } else {
                BinaryClass::Hd
            }
        })
        .collect()
}

pub fn predict(m: &TrainedClassifier, x: &FeatureMatrix) -> Result<Vec<BinaryClass>> {
    Ok(classify(&predict_proba(m, x)?, m.threshold))
}
