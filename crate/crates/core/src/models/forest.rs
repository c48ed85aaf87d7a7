//! Random forest with Gini-impurity greedy splits.
//!
//! Trees store per-node training counts (cover) and per-leaf empirical
//! class frequencies; both are required by the tree explainer. Split
//! candidates are midpoints between consecutive sorted unique feature
//! values, with gain ties broken toward the lower feature index and then
//! the lower threshold so retraining is reproducible.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapcaError};
use crate::sparse_pca::ComponentValues;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; `None` means ceil(sqrt(K)).
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 1,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_train: usize,
    },
    Leaf {
        class_probs: Vec<f64>,
        n_train: usize,
    },
}

impl TreeNode {
    pub fn n_train(&self) -> usize {
        match self {
            TreeNode::Internal { n_train, .. } | TreeNode::Leaf { n_train, .. } => *n_train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Leaf probabilities for one sample.
    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                TreeNode::Leaf { class_probs, .. } => return class_probs,
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        fn depth(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Internal { left, right, .. } => {
                    1 + depth(nodes, *left).max(depth(nodes, *right))
                }
            }
        }
        depth(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub bootstrap_indices: Vec<Vec<usize>>,
}

impl ForestModel {
    pub fn predict_proba(&self, cv: &ComponentValues) -> Result<Array2<f64>> {
        self.predict_proba_matrix(&cv.values)
    }

    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return Err(ShapcaError::DimensionMismatch(format!(
                "input has {} features, forest expects {}",
                x.ncols(),
                self.n_features
            )));
        }
        let n = x.nrows();
        let mut out = Array2::zeros((n, self.n_classes));
        let inv = 1.0 / self.trees.len() as f64;
        let mut buf = Vec::with_capacity(self.n_features);
        for i in 0..n {
            buf.clear();
            buf.extend(x.row(i).iter());
            for tree in &self.trees {
                let probs = tree.predict_row(&buf);
                for (c, &p) in probs.iter().enumerate() {
                    out[[i, c]] += p * inv;
                }
            }
        }
        Ok(out)
    }

    pub fn predict(&self, cv: &ComponentValues) -> Result<Vec<usize>> {
        let probs = self.predict_proba(cv)?;
        Ok(argmax_rows(&probs))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Argmax per row with ties resolved toward the lower class index.
pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = row[0];
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let f = c as f64 / t;
            f * f
        })
        .sum::<f64>()
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    labels: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    max_features: usize,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, samples: &[usize]) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in samples {
            counts[self.labels[i]] += 1;
        }
        let n = samples.len();
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        self.nodes.push(TreeNode::Leaf {
            class_probs: probs,
            n_train: n,
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha20Rng) -> usize {
        let n = samples.len();
        let mut counts = vec![0usize; self.n_classes];
        for &i in &samples {
            counts[self.labels[i]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || n < 2 * self.min_leaf.max(1) {
            return self.leaf(&samples);
        }

        let k = self.x.ncols();
        let mut features: Vec<usize> = (0..k).collect();
        features.shuffle(rng);
        features.truncate(self.max_features.min(k));
        features.sort_unstable();

        let parent_gini = gini(&counts, n);
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
        for &f in &features {
            sorted.clear();
            sorted.extend(samples.iter().map(|&i| (self.x[[i, f]], self.labels[i])));
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut left_counts = vec![0usize; self.n_classes];
            let mut left_n = 0usize;
            for w in 0..n - 1 {
                left_counts[sorted[w].1] += 1;
                left_n += 1;
                if sorted[w].0 == sorted[w + 1].0 {
                    continue;
                }
                let right_n = n - left_n;
                if left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let mut right_counts = vec![0usize; self.n_classes];
                for c in 0..self.n_classes {
                    right_counts[c] = counts[c] - left_counts[c];
                }
                let weighted = (left_n as f64 * gini(&left_counts, left_n)
                    + right_n as f64 * gini(&right_counts, right_n))
                    / n as f64;
                let gain = parent_gini - weighted;
                let threshold = 0.5 * (sorted[w].0 + sorted[w + 1].0);
                let better = match &best {
                    None => gain > 0.0,
                    Some((g, _, _)) => gain > *g,
                };
                if better {
                    best = Some((gain, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.leaf(&samples);
        };

        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.x[[i, feature]] <= threshold);

        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Internal {
            feature,
            threshold,
            left: 0,
            right: 0,
            n_train: n,
        });
        let left = self.build(left_samples, depth + 1, rng);
        let right = self.build(right_samples, depth + 1, rng);
        if let TreeNode::Internal {
            left: l, right: r, ..
        } = &mut self.nodes[idx]
        {
            *l = left;
            *r = right;
        }
        idx
    }
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 over the combined value
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fit_forest(
    cv: &ComponentValues,
    labels: &[usize],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    fit_forest_matrix(&cv.values, labels, cfg)
}

pub fn fit_forest_matrix(
    x: &Array2<f64>,
    labels: &[usize],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    let n = x.nrows();
    let k = x.ncols();
    if labels.len() != n {
        return Err(ShapcaError::LengthMismatch {
            labels: labels.len(),
            rows: n,
        });
    }
    if n < 2 {
        return Err(ShapcaError::InvalidParameter(format!(
            "forest training needs at least 2 samples, got {n}"
        )));
    }
    if cfg.n_trees == 0 {
        return Err(ShapcaError::InvalidParameter("n_trees must be positive".into()));
    }
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let distinct = {
        let mut seen = vec![false; n_classes];
        for &l in labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(ShapcaError::SingleClassTraining);
    }
    let max_features = cfg
        .max_features
        .unwrap_or_else(|| (k as f64).sqrt().ceil() as usize)
        .clamp(1, k);

    let results: Vec<(Tree, Vec<usize>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(cfg.seed, t as u64));
            let bootstrap: Vec<usize> = (0..n)
                .map(|_| rand::Rng::random_range(&mut rng, 0..n))
                .collect();
            let mut builder = TreeBuilder {
                x,
                labels,
                n_classes,
                max_depth: cfg.max_depth,
                min_leaf: cfg.min_leaf.max(1),
                max_features,
                nodes: Vec::new(),
            };
            builder.build(bootstrap.clone(), 0, &mut rng);
            (
                Tree {
                    nodes: builder.nodes,
                },
                bootstrap,
            )
        })
        .collect();

    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut bootstrap_indices = Vec::with_capacity(cfg.n_trees);
    for (tree, bs) in results {
        trees.push(tree);
        bootstrap_indices.push(bs);
    }
    Ok(ForestModel {
        trees,
        n_features: k,
        n_classes,
        seed: cfg.seed,
        bootstrap_indices,
    })
}
