//! Multinomial logistic classifier with L2 regularization.
//!
//! Trained by full-batch gradient descent with a backtracking step so the
//! regularized cross-entropy is non-increasing at every epoch. Softmax
//! outputs give native probabilities for the model-agnostic explainer.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapcaError};
use crate::sparse_pca::ComponentValues;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearProbConfig {
    pub l2_strength: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LinearProbConfig {
    fn default() -> Self {
        Self {
            l2_strength: 1e-2,
            epochs: 300,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearProbModel {
    /// One weight row per class.
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
    pub l2_strength: f64,
    /// Loss after every accepted epoch.
    pub loss_trace: Vec<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl LinearProbModel {
    pub fn predict_proba(&self, cv: &ComponentValues) -> Result<Array2<f64>> {
        self.predict_proba_matrix(&cv.values)
    }

    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.ncols() {
            return Err(ShapcaError::DimensionMismatch(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.weights.ncols()
            )));
        }
        let mut logits = x.dot(&self.weights.t());
        for (c, &b) in self.bias.iter().enumerate() {
            logits.column_mut(c).mapv_inplace(|v| v + b);
        }
        Ok(softmax_rows(&logits))
    }

    pub fn predict(&self, cv: &ComponentValues) -> Result<Vec<usize>> {
        Ok(super::forest::argmax_rows(&self.predict_proba(cv)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn loss_and_grad(
    x: &Array2<f64>,
    onehot: &Array2<f64>,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut logits = x.dot(&weights.t());
    for (c, &b) in bias.iter().enumerate() {
        logits.column_mut(c).mapv_inplace(|v| v + b);
    }
    let probs = softmax_rows(&logits);
    let mut ce = 0.0;
    for (p_row, y_row) in probs.rows().into_iter().zip(onehot.rows()) {
        for (p, y) in p_row.iter().zip(y_row.iter()) {
            if *y > 0.0 {
                ce -= y * p.max(1e-300).ln();
            }
        }
    }
    let reg: f64 = weights.iter().map(|w| w * w).sum::<f64>();
    let loss = ce / n + 0.5 * l2 * reg;

    let diff = &probs - onehot;
    let grad_w = diff.t().dot(x) / n + &(weights * l2);
    let grad_b = diff.sum_axis(Axis(0)) / n;
    (loss, grad_w, grad_b)
}

pub fn fit_linear(
    cv: &ComponentValues,
    labels: &[usize],
    cfg: &LinearProbConfig,
) -> Result<LinearProbModel> {
    let x = &cv.values;
    let n = x.nrows();
    if labels.len() != n {
        return Err(ShapcaError::LengthMismatch {
            labels: labels.len(),
            rows: n,
        });
    }
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    if n_classes < 2 {
        return Err(ShapcaError::SingleClassTraining);
    }
    if !(cfg.l2_strength > 0.0) {
        return Err(ShapcaError::InvalidParameter(format!(
            "l2_strength must be positive, got {}",
            cfg.l2_strength
        )));
    }
    let k = x.ncols();
    let mut onehot = Array2::zeros((n, n_classes));
    for (i, &l) in labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }

    let mut weights = Array2::zeros((n_classes, k));
    let mut bias = Array1::zeros(n_classes);
    let mut step = cfg.learning_rate;
    let (mut loss, mut grad_w, mut grad_b) =
        loss_and_grad(x, &onehot, &weights, &bias, cfg.l2_strength);
    let mut trace = vec![loss];

    for _ in 0..cfg.epochs {
        // Backtracking: shrink the step until the loss does not increase.
        let mut accepted = false;
        for _ in 0..40 {
            let w_try = &weights - &(&grad_w * step);
            let b_try = &bias - &(&grad_b * step);
            let (l_try, gw_try, gb_try) =
                loss_and_grad(x, &onehot, &w_try, &b_try, cfg.l2_strength);
            if l_try <= loss {
                weights = w_try;
                bias = b_try;
                loss = l_try;
                grad_w = gw_try;
                grad_b = gb_try;
                step *= 1.1;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(loss);
        if !accepted {
            break;
        }
    }

    Ok(LinearProbModel {
        weights,
        bias: bias.to_vec(),
        l2_strength: cfg.l2_strength,
        loss_trace: trace,
    })
}
