//! Shapley attribution of component values to class-probability outputs.
//!
//! Three routes: exact path-dependent TreeSHAP for forests, KernelSHAP
//! for any probabilistic model, and a brute-force coalition enumeration
//! used to verify both.

mod brute;
mod kernel;
mod tree;

pub use brute::brute_force_shap;
pub use kernel::{kernel_shap, CoalitionBudget};
pub use tree::tree_shap;

use ndarray::{Array2, Array3, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapcaError};
use crate::models::{ForestModel, LinearProbModel};
use crate::sparse_pca::ComponentValues;

/// Anything that maps feature rows to per-class probabilities. Inputs are
/// shape-checked by the explainers before batch evaluation.
pub trait ProbModel: Sync {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn proba(&self, x: &Array2<f64>) -> Array2<f64>;
}

impl ProbModel for ForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn proba(&self, x: &Array2<f64>) -> Array2<f64> {
        self.predict_proba_matrix(x)
            .expect("shape validated by explainer")
    }
}

impl ProbModel for LinearProbModel {
    fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn proba(&self, x: &Array2<f64>) -> Array2<f64> {
        self.predict_proba_matrix(x)
            .expect("shape validated by explainer")
    }
}

/// A raw linear response surface `f_c(x) = w_c . x + b_c`. Its Shapley
/// values have the closed form `w_{c,k} (x_k - E[x_k])`, which makes it
/// the reference model for explainer verification.
#[derive(Debug, Clone)]
pub struct LinearValueModel {
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
}

impl ProbModel for LinearValueModel {
    fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn proba(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights.t());
        for (c, &b) in self.bias.iter().enumerate() {
            out.column_mut(c).mapv_inplace(|v| v + b);
        }
        out
    }
}

/// Shapley values phi[sample, component, class] plus the per-class
/// baseline expectation phi0.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionTensor {
    pub phi: Array3<f64>,
    pub phi0: Vec<f64>,
}

impl AttributionTensor {
    pub fn n_samples(&self) -> usize {
        self.phi.shape()[0]
    }

    pub fn n_components(&self) -> usize {
        self.phi.shape()[1]
    }

    pub fn n_classes(&self) -> usize {
        self.phi.shape()[2]
    }

    /// Largest additivity violation |phi0 + sum_k phi - f| over all
    /// samples and classes.
    pub fn additivity_gap(&self, probs: &Array2<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_samples() {
            for c in 0..self.n_classes() {
                let total: f64 = (0..self.n_components())
                    .map(|k| self.phi[[i, k, c]])
                    .sum();
                worst = worst.max((self.phi0[c] + total - probs[[i, c]]).abs());
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = AttributionDoc::from_tensor(self);
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: AttributionDoc = serde_json::from_str(text)?;
        doc.into_tensor()
    }

    /// CSV of nonzero entries: `sample,component,class,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,component,class,value\n");
        for ((i, k, c), &v) in self.phi.indexed_iter() {
            if v != 0.0 {
                out.push_str(&format!("{i},{k},{c},{v}\n"));
            }
        }
        out
    }
}

/// Index-triplet serialization of the attribution tensor.
#[derive(Debug, Serialize, Deserialize)]
struct AttributionDoc {
    n_samples: usize,
    n_components: usize,
    n_classes: usize,
    phi0: Vec<f64>,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl AttributionDoc {
    fn from_tensor(t: &AttributionTensor) -> Self {
        let entries = t
            .phi
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((i, k, c), &v)| (i, k, c, v))
            .collect();
        Self {
            n_samples: t.n_samples(),
            n_components: t.n_components(),
            n_classes: t.n_classes(),
            phi0: t.phi0.clone(),
            entries,
        }
    }

    fn into_tensor(self) -> Result<AttributionTensor> {
        let mut phi = Array3::zeros((self.n_samples, self.n_components, self.n_classes));
        for (i, k, c, v) in self.entries {
            if i >= self.n_samples || k >= self.n_components || c >= self.n_classes {
                return Err(ShapcaError::IndexOutOfRange(format!(
                    "attribution entry ({i},{k},{c}) outside tensor shape"
                )));
            }
            phi[[i, k, c]] = v;
        }
        Ok(AttributionTensor {
            phi,
            phi0: self.phi0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundSelection {
    TrainingSet,
    KMeansSummary(usize),
}

/// Reference rows defining the baseline expectation; weights sum to one.
#[derive(Debug, Clone)]
pub struct BackgroundSet {
    pub rows: Array2<f64>,
    pub weights: Vec<f64>,
}

impl BackgroundSet {
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(ShapcaError::EmptyBackground);
        }
        let w = 1.0 / rows.nrows() as f64;
        let weights = vec![w; rows.nrows()];
        Ok(Self { rows, weights })
    }

    pub fn from_training(cv: &ComponentValues) -> Result<Self> {
        Self::from_rows(cv.values.clone())
    }

    /// Lloyd k-means summary with cluster-size weights.
    pub fn k_means_summary(cv: &ComponentValues, m: usize, seed: u64) -> Result<Self> {
        let x = &cv.values;
        let n = x.nrows();
        if n == 0 {
            return Err(ShapcaError::EmptyBackground);
        }
        let m = m.min(n).max(1);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        while chosen.len() < m {
            let c = rng.random_range(0..n);
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        let mut centroids = x.select(Axis(0), &chosen);
        let mut assign = vec![0usize; n];
        for _ in 0..50 {
            let mut changed = false;
            for i in 0..n {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..m {
                    let d: f64 = x
                        .row(i)
                        .iter()
                        .zip(centroids.row(c).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                if assign[i] != best {
                    assign[i] = best;
                    changed = true;
                }
            }
            let mut sums = Array2::<f64>::zeros(centroids.dim());
            let mut counts = vec![0usize; m];
            for i in 0..n {
                counts[assign[i]] += 1;
                let mut row = sums.row_mut(assign[i]);
                row += &x.row(i);
            }
            for c in 0..m {
                if counts[c] > 0 {
                    let mut row = sums.row_mut(c);
                    row.mapv_inplace(|v| v / counts[c] as f64);
                    centroids.row_mut(c).assign(&sums.row(c));
                }
            }
            if !changed {
                break;
            }
        }
        let mut counts = vec![0usize; m];
        for &a in &assign {
            counts[a] += 1;
        }
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(Self {
            rows: centroids,
            weights,
        })
    }

    /// Default rule: the full training matrix up to 200 rows, otherwise a
    /// 100-centroid k-means summary.
    pub fn auto(cv: &ComponentValues, seed: u64) -> Result<Self> {
        if cv.n_samples() <= 200 {
            Self::from_training(cv)
        } else {
            Self::k_means_summary(cv, 100, seed)
        }
    }

    pub fn select(cv: &ComponentValues, sel: BackgroundSelection, seed: u64) -> Result<Self> {
        match sel {
            BackgroundSelection::TrainingSet => Self::from_training(cv),
            BackgroundSelection::KMeansSummary(m) => Self::k_means_summary(cv, m, seed),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Weighted-average model output with the features in `mask` pinned to
/// `x` and the rest drawn from the background rows.
pub(crate) fn coalition_value(
    model: &dyn ProbModel,
    x: &ArrayView1<f64>,
    background: &BackgroundSet,
    mask: u64,
) -> Vec<f64> {
    let k = x.len();
    let b = background.len();
    let mut composite = background.rows.clone();
    for j in 0..k {
        if mask & (1 << j) != 0 {
            composite.column_mut(j).fill(x[j]);
        }
    }
    let probs = model.proba(&composite);
    let c = probs.ncols();
    let mut out = vec![0.0; c];
    for r in 0..b {
        let w = background.weights[r];
        for cls in 0..c {
            out[cls] += w * probs[[r, cls]];
        }
    }
    out
}

pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
