//! Multinomial cross-entropy objective with L2 penalty.
//!
//! The objective is convex; full-batch gradient descent on it is what `train`
//! runs. `loss` and `gradient` are public so independent checks (finite
//! differences, loss-curve monotonicity) can probe the same surface the
//! trainer optimizes.

use crate::backends::OutcomeLabel;
use crate::scalar::Scalar;

pub const LABEL_COUNT: usize = OutcomeLabel::COUNT;

/// One training sample: sorted sparse features plus a label index.
#[derive(Debug, Clone)]
pub struct SparseRow<S: Scalar> {
    pub features: Vec<(u32, S)>,
    pub label: usize,
}

/// A fixed-width training set.
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    pub rows: Vec<SparseRow<S>>,
    pub feature_count: usize,
}

/// Dense per-label weights plus biases, row-major by label.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<S: Scalar> {
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub feature_count: usize,
}

impl<S: Scalar> Weights<S> {
    pub fn zeros(feature_count: usize) -> Self {
        Weights {
            w: vec![S::zero(); LABEL_COUNT * feature_count],
            b: vec![S::zero(); LABEL_COUNT],
            feature_count,
        }
    }

    pub fn weight(&self, label: OutcomeLabel, feature: u32) -> S {
        self.w[label.index() * self.feature_count + feature as usize]
    }

    pub fn bias(&self, label: OutcomeLabel) -> S {
        self.b[label.index()]
    }

    /// Raw per-label scores for one sparse row.
    pub fn scores(&self, features: &[(u32, S)]) -> [S; LABEL_COUNT] {
        let mut scores = [S::zero(); LABEL_COUNT];
        for (label, score) in scores.iter_mut().enumerate() {
            let row = &self.w[label * self.feature_count..(label + 1) * self.feature_count];
            let mut acc = self.b[label];
            for (id, value) in features {
                acc += row[*id as usize] * *value;
            }
            *score = acc;
        }
        scores
    }
}

/// Numerically stable softmax, renormalized so the entries sum to one.
pub fn softmax<S: Scalar>(scores: &[S; LABEL_COUNT]) -> [S; LABEL_COUNT] {
    let max = scores
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out = [S::zero(); LABEL_COUNT];
    let mut sum = S::zero();
    for (i, score) in scores.iter().enumerate() {
        let e = (*score - max).exp();
        out[i] = e;
        sum += e;
    }
    for value in &mut out {
        *value /= sum;
    }
    out
}

fn log_sum_exp<S: Scalar>(scores: &[S; LABEL_COUNT]) -> S {
    let max = scores
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum: S = scores.iter().map(|s| (*s - max).exp()).sum();
    max + sum.ln()
}

/// Mean negative log-likelihood plus (l2/2)·‖w‖² (bias unpenalized).
pub fn loss<S: Scalar>(dataset: &Dataset<S>, weights: &Weights<S>, l2: S) -> S {
    let n = S::from_usize(dataset.rows.len()).unwrap();
    let mut total = S::zero();
    for row in &dataset.rows {
        let scores = weights.scores(&row.features);
        total += log_sum_exp(&scores) - scores[row.label];
    }
    let penalty: S = weights.w.iter().map(|w| *w * *w).sum();
    total / n + l2 * penalty / S::from_f64_lossy(2.0)
}

/// Analytic gradient of [`loss`] in the same shape as the weights.
pub fn gradient<S: Scalar>(dataset: &Dataset<S>, weights: &Weights<S>, l2: S) -> Weights<S> {
    let mut grad = Weights::zeros(weights.feature_count);
    for row in &dataset.rows {
        let probabilities = softmax(&weights.scores(&row.features));
        for (label, p) in probabilities.iter().enumerate() {
            let indicator = if label == row.label { S::one() } else { S::zero() };
            let coefficient = *p - indicator;
            grad.b[label] += coefficient;
            let base = label * grad.feature_count;
            for (id, value) in &row.features {
                grad.w[base + *id as usize] += coefficient * *value;
            }
        }
    }
    let n = S::from_usize(dataset.rows.len()).unwrap();
    for g in &mut grad.w {
        *g /= n;
    }
    for g in &mut grad.b {
        *g /= n;
    }
    for (g, w) in grad.w.iter_mut().zip(weights.w.iter()) {
        *g += l2 * *w;
    }
    grad
}
