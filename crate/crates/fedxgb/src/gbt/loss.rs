//! Loss functions and their per-instance gradients.

use super::GradientPair;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    Softmax { classes: usize },
}

impl Loss {
    /// Number of parallel score columns (= trees per round).
    pub fn groups(&self) -> usize {
        match self {
            Loss::Logistic => 1,
            Loss::Softmax { classes } => *classes,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy gradients at raw score `score` for label y in {0,1}:
/// g = sigma(score) - y, h = sigma(score) * (1 - sigma(score)).
pub fn logistic_gradients(score: f64, y: f64) -> GradientPair {
    let p = sigmoid(score);
    GradientPair {
        g: p - y,
        h: p * (1.0 - p),
    }
}

pub fn logistic_loss(score: f64, y: f64) -> f64 {
    let p = sigmoid(score).clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Softmax probabilities with max-shift for stability.
pub fn softmax_probs(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Cross-entropy gradients per class at the given probabilities:
/// g_c = p_c - [y = c], h_c = p_c * (1 - p_c).
pub fn softmax_gradients(probs: &[f64], label: usize) -> Vec<GradientPair> {
    probs
        .iter()
        .enumerate()
        .map(|(c, &p)| GradientPair {
            g: p - if c == label { 1.0 } else { 0.0 },
            h: p * (1.0 - p),
        })
        .collect()
}

pub fn softmax_loss(scores: &[f64], label: usize) -> f64 {
    let p = softmax_probs(scores)[label].clamp(1e-15, 1.0);
    -p.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reference: central finite differences of the loss.
    fn numeric_logistic(score: f64, y: f64) -> GradientPair {
        // First derivative from the loss; second from the analytic first,
        // which avoids the cancellation of a double difference.
        let eps = 1e-5;
        let l = |s: f64| logistic_loss(s, y);
        let d = |s: f64| logistic_gradients(s, y).g;
        GradientPair {
            g: (l(score + eps) - l(score - eps)) / (2.0 * eps),
            h: (d(score + eps) - d(score - eps)) / (2.0 * eps),
        }
    }

    #[test]
    fn logistic_at_zero_score_positive_label() {
        let gp = logistic_gradients(0.0, 1.0);
        assert_eq!(gp.g, -0.5);
        assert_eq!(gp.h, 0.25);
    }

    #[test]
    fn logistic_matches_finite_differences() {
        let mut worst_g: f64 = 0.0;
        let mut worst_h: f64 = 0.0;
        for i in 0..100 {
            let score = -4.0 + 8.0 * (i as f64) / 99.0;
            for y in [0.0, 1.0] {
                let exact = logistic_gradients(score, y);
                let approx = numeric_logistic(score, y);
                worst_g = worst_g.max((exact.g - approx.g).abs() / exact.g.abs().max(1e-3));
                worst_h = worst_h.max((exact.h - approx.h).abs() / exact.h.abs().max(1e-3));
            }
        }
        assert!(worst_g < 1e-5, "gradient mismatch {worst_g}");
        assert!(worst_h < 1e-4, "hessian mismatch {worst_h}");
    }

    #[test]
    fn uniform_ten_class_softmax_gradients() {
        let probs = softmax_probs(&[0.0; 10]);
        let gps = softmax_gradients(&probs, 3);
        assert!((gps[3].g + 0.9).abs() < 1e-12);
        assert!((gps[3].h - 0.09).abs() < 1e-12);
        assert!((gps[0].g - 0.1).abs() < 1e-12);
        let total: f64 = gps.iter().map(|g| g.g).sum();
        assert!(total.abs() < 1e-12, "softmax gradients sum to zero");
    }

    #[test]
    fn softmax_matches_finite_differences() {
        let scores = [0.3, -1.2, 0.7, 2.0];
        let label = 2usize;
        let eps = 1e-5;
        let probs = softmax_probs(&scores);
        let gps = softmax_gradients(&probs, label);
        for c in 0..scores.len() {
            let mut up = scores;
            up[c] += eps;
            let mut dn = scores;
            dn[c] -= eps;
            let g_num = (softmax_loss(&up, label) - softmax_loss(&dn, label)) / (2.0 * eps);
            let h_num = (softmax_loss(&up, label) - 2.0 * softmax_loss(&scores, label)
                + softmax_loss(&dn, label))
                / (eps * eps);
            assert!((gps[c].g - g_num).abs() < 1e-6, "class {c} gradient");
            assert!((gps[c].h - h_num).abs() < 1e-4, "class {c} hessian");
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-12);
    }
}
