//! Regularized multiclass LDA with one-versus-all decomposition, plus
//! the sigmoid and softmax posterior transforms.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{regularized_solve, Matrix};

/// Shrinkage strength applied as ridge·trace(Σ)/F on the pooled scatter.
pub const DEFAULT_RIDGE: f64 = 1e-4;
pub const DEFAULT_SIGMOID_SCALE: f64 = 16.0;
pub const DEFAULT_SOFTMAX_BETA: f64 = 1e-3;

/// One-versus-all linear discriminants: one weight column and intercept
/// per class, ordered by `class_ids`.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub weights: Matrix,
    pub intercepts: Array1<f64>,
    pub class_ids: Vec<usize>,
    pub ridge: f64,
}

/// Score-to-posterior squashing applied per layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosteriorTransform {
    Sigmoid { scale: f64 },
    Softmax { beta: f64 },
}

impl PosteriorTransform {
    pub fn apply(&self, scores: &Matrix) -> Matrix {
        match *self {
            PosteriorTransform::Sigmoid { scale } => sigmoid_posteriors(scores, scale),
            PosteriorTransform::Softmax { beta } => softmax_posteriors(scores, beta),
        }
    }
}

/// Fit a one-versus-all LDA on N×F features. The pooled within-class
/// covariance S_w/(N−G) is shrunk by ridge·trace/F before inversion;
/// each class gets w = Σ⁻¹(μ_c − μ_rest) and the matching intercept
/// −½(μ_c + μ_rest)ᵀw + ln(n_c/n_rest).
pub fn fit_lda(features: &Matrix, labels: &[usize], ridge: f64) -> Result<LdaModel> {
    let (n, f) = features.dim();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {} feature rows",
            labels.len(),
            n
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "LDA needs at least 2 samples, got {n}"
        )));
    }
    if ridge < 0.0 {
        return Err(Error::Domain("ridge must be nonnegative".into()));
    }

    let mut class_ids: Vec<usize> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let g = class_ids.len();
    if g < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 distinct labels, got {g}"
        )));
    }
    let index_of = |id: usize| class_ids.binary_search(&id).expect("known label");

    let mut counts = vec![0usize; g];
    let mut means = Array2::<f64>::zeros((g, f));
    for (i, &l) in labels.iter().enumerate() {
        let c = index_of(l);
        counts[c] += 1;
        let mut row = means.row_mut(c);
        row += &features.row(i);
    }
    for c in 0..g {
        let mut row = means.row_mut(c);
        row /= counts[c] as f64;
    }

    // Pooled within-class covariance via class-centered rows.
    let mut centered = features.clone();
    for (i, &l) in labels.iter().enumerate() {
        let c = index_of(l);
        let mut row = centered.row_mut(i);
        row -= &means.row(c);
    }
    let dof = (n - g).max(1) as f64;
    let sigma = centered.t().dot(&centered) / dof;
    let trace: f64 = sigma.diag().sum();
    let ridge_amount = ridge * trace / f as f64;

    // Grand totals let each complement mean come out of the class means.
    let total: Array1<f64> = means
        .axis_iter(Axis(0))
        .zip(&counts)
        .fold(Array1::zeros(f), |acc, (row, &cnt)| {
            acc + &row.mapv(|v| v * cnt as f64)
        });
    let mut rhs = Array2::<f64>::zeros((f, g));
    let mut rest_means = Array2::<f64>::zeros((g, f));
    for c in 0..g {
        let n_rest = (n - counts[c]) as f64;
        let rest = (&total - &(means.row(c).to_owned() * counts[c] as f64)) / n_rest;
        let diff = &means.row(c) - &rest;
        rhs.column_mut(c).assign(&diff);
        rest_means.row_mut(c).assign(&rest);
    }

    let weights = regularized_solve(&sigma, &rhs, ridge_amount)?;

    let mut intercepts = Array1::<f64>::zeros(g);
    for c in 0..g {
        let midpoint = (&means.row(c) + &rest_means.row(c)) * 0.5;
        let prior = (counts[c] as f64 / (n - counts[c]) as f64).ln();
        intercepts[c] = -midpoint.dot(&weights.column(c)) + prior;
    }

    Ok(LdaModel {
        weights,
        intercepts,
        class_ids,
        ridge,
    })
}

/// Affine class scores: features·weights + intercepts, columns ordered
/// as `class_ids`.
pub fn decision_scores(model: &LdaModel, features: &Matrix) -> Result<Matrix> {
    if features.ncols() != model.weights.nrows() {
        return Err(Error::Dimension(format!(
            "feature dim {} does not match model dim {}",
            features.ncols(),
            model.weights.nrows()
        )));
    }
    let mut scores = features.dot(&model.weights);
    for mut row in scores.rows_mut() {
        row += &model.intercepts;
    }
    Ok(scores)
}

/// Elementwise 1/(1 + e^(−x/σ)).
pub fn sigmoid_posteriors(scores: &Matrix, scale: f64) -> Matrix {
    scores.mapv(|x| 1.0 / (1.0 + (-x / scale).exp()))
}

/// Row-wise softmax with temperature β, max-subtracted for stability.
pub fn softmax_posteriors(scores: &Matrix, beta: f64) -> Matrix {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (beta * (x - max)).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Row-wise argmax; ties resolve to the lowest column index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of predictions that disagree with the labels.
pub fn error_rate(predicted: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predicted.len(), labels.len());
    let wrong = predicted
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    wrong as f64 / predicted.len() as f64
}
