//! Exact path-dependent TreeSHAP for forests.
//!
//! The conditional expectations are defined by the per-node training
//! cover counts; a forest's attribution is the cover-weighted per-tree
//! attribution averaged over trees, matching the ensemble-mean
//! probability output. The path bookkeeping follows the standard
//! polynomial algorithm for trees.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Result, ShapcaError};
use crate::models::{ForestModel, Tree, TreeNode};
use crate::sparse_pca::ComponentValues;
use crate::shap::AttributionTensor;

#[derive(Debug, Clone)]
struct PathItem {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

impl PathItem {
    fn empty() -> Self {
        Self {
            feature: None,
            zero_fraction: 0.0,
            one_fraction: 0.0,
            pweight: 0.0,
        }
    }
}

fn extend_path(
    path: &mut [PathItem],
    depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    path[depth] = PathItem {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind_path(path: &mut [PathItem], depth: usize, index: usize) {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one = path[depth].pweight;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one * (depth + 1) as f64 / ((i + 1) as f64 * one_fraction);
            next_one = tmp - path[i].pweight * zero_fraction * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].pweight =
                path[i].pweight * (depth + 1) as f64 / (zero_fraction * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathItem], depth: usize, index: usize) -> f64 {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        for i in (0..depth).rev() {
            let tmp = next_one / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one = path[i].pweight - tmp * zero_fraction * (depth - i) as f64;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].pweight / (zero_fraction * (depth - i) as f64);
        }
    }
    total * (depth + 1) as f64
}

struct Recursion<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    /// Per-tree weight, 1 / n_trees.
    scale: f64,
    /// phi[k][c] accumulator for one sample.
    phi: &'a mut Array2<f64>,
}

impl<'a> Recursion<'a> {
    #[allow(clippy::too_many_arguments)]
    fn descend(
        &mut self,
        node_index: usize,
        path: &mut [PathItem],
        depth: usize,
        parent_zero: f64,
        parent_one: f64,
        parent_feature: Option<usize>,
    ) {
        extend_path(path, depth, parent_zero, parent_one, parent_feature);
        let mut depth = depth;
        match &self.tree.nodes[node_index] {
            TreeNode::Leaf { class_probs, .. } => {
                for index in 1..=depth {
                    let weight = unwound_path_sum(path, depth, index);
                    let item = &path[index];
                    let factor =
                        weight * (item.one_fraction - item.zero_fraction) * self.scale;
                    let feature = item.feature.expect("interior path items carry a feature");
                    for (c, &p) in class_probs.iter().enumerate() {
                        self.phi[[feature, c]] += factor * p;
                    }
                }
            }
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
                n_train,
            } => {
                let (hot, cold) = if self.x[*feature] <= *threshold {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                let hot_zero =
                    self.tree.nodes[hot].n_train() as f64 / *n_train as f64;
                let cold_zero =
                    self.tree.nodes[cold].n_train() as f64 / *n_train as f64;
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;
                if let Some(prev) =
                    (1..=depth).find(|&i| path[i].feature == Some(*feature))
                {
                    incoming_zero = path[prev].zero_fraction;
                    incoming_one = path[prev].one_fraction;
                    unwind_path(path, depth, prev);
                    depth -= 1;
                }
                let (parent_path, child_path) = path.split_at_mut(depth + 1);
                child_path[0..parent_path.len()].clone_from_slice(parent_path);
                self.descend(
                    hot,
                    child_path,
                    depth + 1,
                    hot_zero * incoming_zero,
                    incoming_one,
                    Some(*feature),
                );
                child_path[0..parent_path.len()].clone_from_slice(parent_path);
                self.descend(
                    cold,
                    child_path,
                    depth + 1,
                    cold_zero * incoming_zero,
                    0.0,
                    Some(*feature),
                );
            }
        }
    }
}

/// Cover-weighted expectation of a tree's leaf probabilities.
fn tree_expectation(tree: &Tree, node_index: usize, out: &mut [f64], weight: f64) {
    match &tree.nodes[node_index] {
        TreeNode::Leaf { class_probs, .. } => {
            for (c, &p) in class_probs.iter().enumerate() {
                out[c] += weight * p;
            }
        }
        TreeNode::Internal {
            left,
            right,
            n_train,
            ..
        } => {
            let denom = *n_train as f64;
            tree_expectation(
                tree,
                *left,
                out,
                weight * tree.nodes[*left].n_train() as f64 / denom,
            );
            tree_expectation(
                tree,
                *right,
                out,
                weight * tree.nodes[*right].n_train() as f64 / denom,
            );
        }
    }
}

fn validate_model(model: &ForestModel) -> Result<()> {
    for tree in &model.trees {
        for (idx, node) in tree.nodes.iter().enumerate() {
            if node.n_train() == 0 {
                return Err(ShapcaError::ZeroCoverNode { node: idx });
            }
            if let TreeNode::Internal { feature, .. } = node {
                if *feature >= model.n_features {
                    return Err(ShapcaError::DimensionMismatch(format!(
                        "node {idx} splits on feature {feature}, model has {}",
                        model.n_features
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Exact Shapley values of every component for every sample and class,
/// under the tree-path-dependent conditional expectation.
pub fn tree_shap(model: &ForestModel, cv: &ComponentValues) -> Result<AttributionTensor> {
    if cv.n_components() != model.n_features {
        return Err(ShapcaError::DimensionMismatch(format!(
            "component values have {} columns, forest expects {}",
            cv.n_components(),
            model.n_features
        )));
    }
    validate_model(model)?;
    let n = cv.n_samples();
    let k = model.n_features;
    let c = model.n_classes;
    let t = model.trees.len();
    let scale = 1.0 / t as f64;

    let mut phi0 = vec![0.0; c];
    for tree in &model.trees {
        tree_expectation(tree, 0, &mut phi0, scale);
    }

    let max_depth = model
        .trees
        .iter()
        .map(|tr| tr.max_depth())
        .max()
        .unwrap_or(1)
        + 2;
    let path_len = max_depth * (max_depth + 1) / 2;

    let per_sample: Vec<Array2<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = cv.values.row(i).to_vec();
            let mut phi = Array2::zeros((k, c));
            for tree in &model.trees {
                let mut path = vec![PathItem::empty(); path_len];
                let mut rec = Recursion {
                    tree,
                    x: &x,
                    scale,
                    phi: &mut phi,
                };
                rec.descend(0, &mut path, 0, 1.0, 1.0, None);
            }
            phi
        })
        .collect();

    let mut phi = Array3::zeros((n, k, c));
    for (i, sample_phi) in per_sample.into_iter().enumerate() {
        for ((kk, cc), &v) in sample_phi.indexed_iter() {
            phi[[i, kk, cc]] = v;
        }
    }
    Ok(AttributionTensor { phi, phi0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shap::{brute_force_shap, BackgroundSet};
    use ndarray::array;

    fn stump(threshold: f64, left_probs: Vec<f64>, right_probs: Vec<f64>, cover: (usize, usize)) -> Tree {
        Tree {
            nodes: vec![
                TreeNode::Internal {
                    feature: 0,
                    threshold,
                    left: 1,
                    right: 2,
                    n_train: cover.0 + cover.1,
                },
                TreeNode::Leaf {
                    class_probs: left_probs,
                    n_train: cover.0,
                },
                TreeNode::Leaf {
                    class_probs: right_probs,
                    n_train: cover.1,
                },
            ],
        }
    }

    #[test]
    fn single_stump_splits_the_difference() {
        let model = ForestModel {
            trees: vec![stump(0.0, vec![1.0, 0.0], vec![0.0, 1.0], (50, 50))],
            n_features: 2,
            n_classes: 2,
            seed: 0,
            bootstrap_indices: vec![],
        };
        let cv = ComponentValues {
            values: array![[1.0, 7.0]],
        };
        let at = tree_shap(&model, &cv).unwrap();
        // Sample lands right; expectation is [0.5, 0.5].
        assert!((at.phi0[1] - 0.5).abs() < 1e-12);
        assert!((at.phi[[0, 0, 1]] - 0.5).abs() < 1e-12);
        assert!((at.phi[[0, 1, 1]]).abs() < 1e-12);
        assert!((at.phi[[0, 0, 0]] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_tree_attributes_nothing() {
        let model = ForestModel {
            trees: vec![Tree {
                nodes: vec![TreeNode::Leaf {
                    class_probs: vec![0.3, 0.7],
                    n_train: 10,
                }],
            }],
            n_features: 3,
            n_classes: 2,
            seed: 0,
            bootstrap_indices: vec![],
        };
        let cv = ComponentValues {
            values: array![[1.0, 2.0, 3.0]],
        };
        let at = tree_shap(&model, &cv).unwrap();
        assert!(at.phi.iter().all(|&v| v == 0.0));
        assert_eq!(at.phi0, vec![0.3, 0.7]);
    }

    #[test]
    fn zero_cover_node_is_rejected() {
        let model = ForestModel {
            trees: vec![stump(0.0, vec![1.0, 0.0], vec![0.0, 1.0], (0, 10))],
            n_features: 1,
            n_classes: 2,
            seed: 0,
            bootstrap_indices: vec![],
        };
        let cv = ComponentValues {
            values: array![[1.0]],
        };
        assert!(matches!(
            tree_shap(&model, &cv),
            Err(ShapcaError::ZeroCoverNode { node: 1 })
        ));
    }

    #[test]
    fn additivity_holds_on_a_trained_forest() {
        use crate::models::{fit_forest, ForestConfig};
        let values = ndarray::Array2::from_shape_fn((40, 3), |(i, j)| {
            ((i * 13 + j * 5) % 11) as f64 - 5.0
        });
        let labels: Vec<usize> = (0..40).map(|i| (i % 3 == 0) as usize).collect();
        let cv = ComponentValues { values };
        let model = fit_forest(
            &cv,
            &labels,
            &ForestConfig {
                n_trees: 12,
                max_depth: 5,
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let at = tree_shap(&model, &cv).unwrap();
        let probs = model.predict_proba(&cv).unwrap();
        assert!(at.additivity_gap(&probs) < 1e-8);
    }

    #[test]
    fn binary_class_attributions_are_antisymmetric() {
        use crate::models::{fit_forest, ForestConfig};
        let values = ndarray::Array2::from_shape_fn((30, 2), |(i, j)| ((i * 7 + j) % 9) as f64);
        let labels: Vec<usize> = (0..30).map(|i| (i % 2 == 0) as usize).collect();
        let cv = ComponentValues { values };
        let model = fit_forest(
            &cv,
            &labels,
            &ForestConfig {
                n_trees: 6,
                max_depth: 4,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let at = tree_shap(&model, &cv).unwrap();
        for i in 0..at.n_samples() {
            for k in 0..at.n_components() {
                assert!((at.phi[[i, k, 0]] + at.phi[[i, k, 1]]).abs() < 1e-10);
            }
        }
    }

    /// Builds a tree over a product-grid background so the path-dependent
    /// conditional expectations coincide exactly with the interventional
    /// game; the brute-force enumeration then serves as an oracle.
    /// Feature j takes the values in `marginals[j]`; covers are the counts
    /// of grid points routed through each node.
    pub(crate) fn grid_tree(
        marginals: &[Vec<f64>],
        splits: &[(usize, f64)],
        rng_probs: &mut impl FnMut() -> Vec<f64>,
    ) -> (Tree, Array2<f64>) {
        // Full factorial background grid.
        let k = marginals.len();
        let mut grid: Vec<Vec<f64>> = vec![vec![]];
        for m in marginals {
            let mut next = Vec::new();
            for row in &grid {
                for &v in m {
                    let mut r = row.clone();
                    r.push(v);
                    next.push(r);
                }
            }
            grid = next;
        }
        let flat: Vec<f64> = grid.iter().flatten().copied().collect();
        let bg = Array2::from_shape_vec((grid.len(), k), flat).unwrap();

        // Build a chain of splits; each level splits the current node's
        // remaining grid rows.
        fn build(
            nodes: &mut Vec<TreeNode>,
            rows: Vec<usize>,
            bg: &Array2<f64>,
            splits: &[(usize, f64)],
            rng_probs: &mut impl FnMut() -> Vec<f64>,
        ) -> usize {
            if splits.is_empty() || rows.len() < 2 {
                nodes.push(TreeNode::Leaf {
                    class_probs: rng_probs(),
                    n_train: rows.len().max(1),
                });
                return nodes.len() - 1;
            }
            let (feature, threshold) = splits[0];
            let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&r| bg[[r, feature]] <= threshold);
            if l_rows.is_empty() || r_rows.is_empty() {
                nodes.push(TreeNode::Leaf {
                    class_probs: rng_probs(),
                    n_train: rows.len(),
                });
                return nodes.len() - 1;
            }
            let idx = nodes.len();
            nodes.push(TreeNode::Internal {
                feature,
                threshold,
                left: 0,
                right: 0,
                n_train: rows.len(),
            });
            let left = build(nodes, l_rows, bg, &splits[1..], rng_probs);
            let right = build(nodes, r_rows, bg, &splits[1..], rng_probs);
            if let TreeNode::Internal { left: l, right: r, .. } = &mut nodes[idx] {
                *l = left;
                *r = right;
            }
            idx
        }

        let mut nodes = Vec::new();
        build(&mut nodes, (0..bg.nrows()).collect(), &bg, splits, rng_probs);
        (Tree { nodes }, bg)
    }

    #[test]
    fn matches_brute_force_with_repeated_feature_on_path() {
        // Feature 0 has three marginal values and is split twice on the
        // same path, exercising the unwind logic.
        let marginals = vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0]];
        let mut counter = 0usize;
        let mut probs = move || {
            counter += 1;
            let p = (counter as f64 * 0.1371).fract();
            vec![p, 1.0 - p]
        };
        let (tree, bg) = grid_tree(
            &marginals,
            &[(0, 0.5), (1, 0.5), (0, 1.5)],
            &mut probs,
        );
        let model = ForestModel {
            trees: vec![tree],
            n_features: 2,
            n_classes: 2,
            seed: 0,
            bootstrap_indices: vec![],
        };
        let background = BackgroundSet::from_rows(bg).unwrap();
        let samples = array![[0.0, 0.0], [2.0, 1.0], [1.0, 0.0], [2.0, 0.0]];
        let cv = ComponentValues {
            values: samples.clone(),
        };
        let at = tree_shap(&model, &cv).unwrap();
        for (i, row) in samples.rows().into_iter().enumerate() {
            let (phi_bf, phi0_bf) = brute_force_shap(&model, row, &background).unwrap();
            for k in 0..2 {
                for c in 0..2 {
                    assert!(
                        (at.phi[[i, k, c]] - phi_bf[[k, c]]).abs() < 1e-9,
                        "sample {i} phi[{k},{c}]: tree {} vs brute {}",
                        at.phi[[i, k, c]],
                        phi_bf[[k, c]]
                    );
                }
            }
            for c in 0..2 {
                assert!((at.phi0[c] - phi0_bf[c]).abs() < 1e-9);
            }
        }
    }
}
