//! KernelSHAP: Shapley values via the Shapley-kernel weighted
//! least-squares regression over feature coalitions.
//!
//! The efficiency constraint `sum(phi) = f(x) - phi0` is enforced exactly
//! by eliminating the last unknown. Exhaustive mode enumerates all proper
//! coalitions and reproduces exact Shapley values; sampled mode draws
//! coalitions from the kernel's size distribution in complement pairs.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::error::{Result, ShapcaError};
use crate::shap::{coalition_value, mix_seed, AttributionTensor, BackgroundSet, ProbModel};

const EXHAUSTIVE_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoalitionBudget {
    /// All 2^K - 2 proper coalitions.
    Exhaustive,
    /// This many sampled coalitions (complements included).
    Sampled(usize),
}

fn binom_f(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut out = 1.0f64;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

fn shapley_kernel_weight(k: usize, size: usize) -> f64 {
    (k - 1) as f64 / (binom_f(k, size) * (size * (k - size)) as f64)
}

/// Solves A X = B for X (m x c) in place, Gaussian elimination with
/// partial pivoting.
fn solve_multi(a: &mut Array2<f64>, b: &mut Array2<f64>) -> Result<()> {
    let m = a.nrows();
    let c = b.ncols();
    for col in 0..m {
        let mut pivot = col;
        let mut best = a[[col, col]].abs();
        for r in (col + 1)..m {
            if a[[r, col]].abs() > best {
                best = a[[r, col]].abs();
                pivot = r;
            }
        }
        if best < 1e-12 {
            return Err(ShapcaError::DegenerateRegression(
                "coalition design matrix is singular".into(),
            ));
        }
        if pivot != col {
            for j in 0..m {
                let tmp = a[[col, j]];
                a[[col, j]] = a[[pivot, j]];
                a[[pivot, j]] = tmp;
            }
            for j in 0..c {
                let tmp = b[[col, j]];
                b[[col, j]] = b[[pivot, j]];
                b[[pivot, j]] = tmp;
            }
        }
        let d = a[[col, col]];
        for r in (col + 1)..m {
            let f = a[[r, col]] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..m {
                a[[r, j]] -= f * a[[col, j]];
            }
            for j in 0..c {
                b[[r, j]] -= f * b[[col, j]];
            }
        }
    }
    for col in (0..m).rev() {
        for j in 0..c {
            let mut s = b[[col, j]];
            for r in (col + 1)..m {
                s -= a[[col, r]] * b[[r, j]];
            }
            b[[col, j]] = s / a[[col, col]];
        }
    }
    Ok(())
}

fn coalition_set(
    k: usize,
    budget: CoalitionBudget,
    rng: &mut ChaCha20Rng,
) -> Result<BTreeMap<u64, f64>> {
    let mut set: BTreeMap<u64, f64> = BTreeMap::new();
    match budget {
        CoalitionBudget::Exhaustive => {
            if k > EXHAUSTIVE_LIMIT {
                return Err(ShapcaError::CoalitionGuard {
                    k,
                    limit: EXHAUSTIVE_LIMIT,
                });
            }
            let full = (1u64 << k) - 1;
            for mask in 1..full {
                let size = mask.count_ones() as usize;
                set.insert(mask, shapley_kernel_weight(k, size));
            }
        }
        CoalitionBudget::Sampled(n) => {
            // Size distribution proportional to the kernel mass of each
            // size class; subsets uniform within a size.
            let probs: Vec<f64> = (1..k).map(|s| (k - 1) as f64 / (s * (k - s)) as f64).collect();
            let total: f64 = probs.iter().sum();
            let mut indices: Vec<usize> = (0..k).collect();
            for _ in 0..n.div_ceil(2) {
                let u: f64 = rng.random_range(0.0..total);
                let mut acc = 0.0;
                let mut size = 1;
                for (s, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        size = s + 1;
                        break;
                    }
                }
                // partial Fisher-Yates for a uniform subset of this size
                for i in 0..size {
                    let j = rng.random_range(i..k);
                    indices.swap(i, j);
                }
                let mut mask = 0u64;
                for &f in &indices[..size] {
                    mask |= 1 << f;
                }
                let full = (1u64 << k) - 1;
                *set.entry(mask).or_insert(0.0) += 1.0;
                *set.entry(full ^ mask).or_insert(0.0) += 1.0;
            }
            if set.len() < k {
                return Err(ShapcaError::DegenerateRegression(format!(
                    "{} distinct coalitions < K = {k}",
                    set.len()
                )));
            }
        }
    }
    Ok(set)
}

/// Kernel-regression Shapley values for every row of `rows`.
pub fn kernel_shap(
    model: &dyn ProbModel,
    rows: &Array2<f64>,
    background: &BackgroundSet,
    budget: CoalitionBudget,
    seed: u64,
) -> Result<AttributionTensor> {
    let k = model.n_features();
    let c = model.n_classes();
    if rows.ncols() != k {
        return Err(ShapcaError::DimensionMismatch(format!(
            "rows have {} features, model expects {k}",
            rows.ncols()
        )));
    }
    if background.is_empty() {
        return Err(ShapcaError::EmptyBackground);
    }
    if background.rows.ncols() != k {
        return Err(ShapcaError::DimensionMismatch(format!(
            "background has {} features, model expects {k}",
            background.rows.ncols()
        )));
    }

    // phi0: weighted mean model output over the background rows.
    let bg_probs = model.proba(&background.rows);
    let mut phi0 = vec![0.0; c];
    for (r, &w) in background.weights.iter().enumerate() {
        for cls in 0..c {
            phi0[cls] += w * bg_probs[[r, cls]];
        }
    }

    let n = rows.nrows();
    let fx_all = model.proba(&rows.to_owned());

    let per_sample: Vec<Result<Array2<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = rows.row(i);
            let mut phi = Array2::zeros((k, c));
            if k == 1 {
                for cls in 0..c {
                    phi[[0, cls]] = fx_all[[i, cls]] - phi0[cls];
                }
                return Ok(phi);
            }

            let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, i as u64));
            let coalitions = coalition_set(k, budget, &mut rng)?;

            let m = k - 1;
            let mut a = Array2::<f64>::zeros((m, m));
            let mut b = Array2::<f64>::zeros((m, c));
            let mut design = vec![0.0f64; m];
            for (&mask, &w) in &coalitions {
                let v = coalition_value(model, &x, background, mask);
                let z_last = ((mask >> (k - 1)) & 1) as f64;
                for (j, d) in design.iter_mut().enumerate() {
                    let z_j = ((mask >> j) & 1) as f64;
                    *d = z_j - z_last;
                }
                for r in 0..m {
                    if design[r] == 0.0 {
                        continue;
                    }
                    let wr = w * design[r];
                    for s in 0..m {
                        a[[r, s]] += wr * design[s];
                    }
                    for cls in 0..c {
                        let e_cls = fx_all[[i, cls]] - phi0[cls];
                        let y = v[cls] - phi0[cls] - z_last * e_cls;
                        b[[r, cls]] += wr * y;
                    }
                }
            }
            solve_multi(&mut a, &mut b)?;
            for cls in 0..c {
                let mut rest = 0.0;
                for j in 0..m {
                    phi[[j, cls]] = b[[j, cls]];
                    rest += b[[j, cls]];
                }
                phi[[k - 1, cls]] = (fx_all[[i, cls]] - phi0[cls]) - rest;
            }
            Ok(phi)
        })
        .collect();

    let mut phi = Array3::zeros((n, k, c));
    for (i, sample) in per_sample.into_iter().enumerate() {
        let sample = sample?;
        for ((kk, cc), &v) in sample.indexed_iter() {
            phi[[i, kk, cc]] = v;
        }
    }
    Ok(AttributionTensor { phi, phi0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shap::{brute_force_shap, LinearValueModel};
    use ndarray::array;

    #[test]
    fn exhaustive_matches_closed_form_linear_shapley() {
        let weights = array![[0.5, -1.5, 2.0, 0.25], [-0.5, 1.5, -2.0, -0.25]];
        let model = LinearValueModel {
            weights: weights.clone(),
            bias: vec![0.4, 0.6],
        };
        // zero-mean background
        let bg = BackgroundSet::from_rows(array![
            [1.0, 2.0, -1.0, 0.5],
            [-1.0, -2.0, 1.0, -0.5]
        ])
        .unwrap();
        let rows = array![[0.7, -0.3, 1.1, -2.0], [0.0, 1.0, 0.0, 3.0]];
        let at = kernel_shap(&model, &rows, &bg, CoalitionBudget::Exhaustive, 0).unwrap();
        for i in 0..2 {
            for c in 0..2 {
                for k in 0..4 {
                    let expect = weights[[c, k]] * rows[[i, k]];
                    assert!(
                        (at.phi[[i, k, c]] - expect).abs() < 1e-6,
                        "phi[{i},{k},{c}] = {} vs {expect}",
                        at.phi[[i, k, c]]
                    );
                }
            }
        }
    }

    #[test]
    fn single_feature_gets_everything() {
        let model = LinearValueModel {
            weights: array![[3.0]],
            bias: vec![0.5],
        };
        let bg = BackgroundSet::from_rows(array![[1.0], [3.0]]).unwrap();
        let rows = array![[2.0]];
        let at = kernel_shap(&model, &rows, &bg, CoalitionBudget::Exhaustive, 0).unwrap();
        let fx = 3.0 * 2.0 + 0.5;
        let phi0 = 0.5 + 3.0 * 2.0;
        assert_eq!(at.phi[[0, 0, 0]], fx - phi0);
    }

    #[test]
    fn exhaustive_matches_brute_force_on_forest() {
        use crate::models::{fit_forest, ForestConfig};
        use crate::sparse_pca::ComponentValues;
        let values = Array2::from_shape_fn((30, 4), |(i, j)| (((i + 2) * (j + 3)) % 7) as f64);
        let labels: Vec<usize> = (0..30).map(|i| (i % 3 == 0) as usize).collect();
        let cv = ComponentValues {
            values: values.clone(),
        };
        let model = fit_forest(
            &cv,
            &labels,
            &ForestConfig {
                n_trees: 5,
                max_depth: 3,
                seed: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let bg = BackgroundSet::from_rows(values.slice(ndarray::s![0..10, ..]).to_owned()).unwrap();
        let rows = values.slice(ndarray::s![10..14, ..]).to_owned();
        let at = kernel_shap(&model, &rows, &bg, CoalitionBudget::Exhaustive, 0).unwrap();
        for (i, row) in rows.rows().into_iter().enumerate() {
            let (phi_bf, phi0_bf) = brute_force_shap(&model, row, &bg).unwrap();
            for k in 0..4 {
                for c in 0..2 {
                    assert!(
                        (at.phi[[i, k, c]] - phi_bf[[k, c]]).abs() < 1e-6,
                        "phi[{i},{k},{c}]: kernel {} vs brute {}",
                        at.phi[[i, k, c]],
                        phi_bf[[k, c]]
                    );
                }
            }
            for c in 0..2 {
                assert!((at.phi0[c] - phi0_bf[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_mode_keeps_exact_efficiency_and_approximates() {
        let weights = array![[1.0, -2.0, 0.5, 3.0, -1.0, 0.75]];
        let model = LinearValueModel {
            weights: weights.clone(),
            bias: vec![0.0],
        };
        let bg = BackgroundSet::from_rows(array![
            [0.5, 0.5, -0.5, 0.0, 1.0, -1.0],
            [-0.5, -0.5, 0.5, 0.0, -1.0, 1.0]
        ])
        .unwrap();
        let rows = array![[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]];
        let budget = CoalitionBudget::Sampled(2 * 6 + 2048);
        let at = kernel_shap(&model, &rows, &bg, budget, 11).unwrap();
        let fx = model.proba(&rows.to_owned());
        assert!(at.additivity_gap(&fx) < 1e-10);
        for k in 0..6 {
            let expect = weights[[0, k]] * rows[[0, k]];
            assert!(
                (at.phi[[0, k, 0]] - expect).abs() < 5e-2,
                "sampled phi[{k}] = {} vs {expect}",
                at.phi[[0, k, 0]]
            );
        }
    }

    #[test]
    fn sampled_mode_is_deterministic() {
        let model = LinearValueModel {
            weights: array![[1.0, -1.0, 2.0, 0.5, 1.5]],
            bias: vec![0.1],
        };
        let bg = BackgroundSet::from_rows(Array2::zeros((3, 5))).unwrap();
        let rows = array![[1.0, 2.0, 3.0, 4.0, 5.0]];
        let a = kernel_shap(&model, &rows, &bg, CoalitionBudget::Sampled(64), 7).unwrap();
        let b = kernel_shap(&model, &rows, &bg, CoalitionBudget::Sampled(64), 7).unwrap();
        assert_eq!(a.phi, b.phi);
    }

    #[test]
    fn tiny_budget_is_degenerate() {
        let model = LinearValueModel {
            weights: Array2::ones((1, 8)),
            bias: vec![0.0],
        };
        let bg = BackgroundSet::from_rows(Array2::zeros((1, 8))).unwrap();
        let rows = Array2::ones((1, 8));
        assert!(matches!(
            kernel_shap(&model, &rows, &bg, CoalitionBudget::Sampled(2), 0),
            Err(ShapcaError::DegenerateRegression(_))
        ));
    }

    #[test]
    fn exhaustive_guard_fires() {
        let model = LinearValueModel {
            weights: Array2::ones((1, 26)),
            bias: vec![0.0],
        };
        let bg = BackgroundSet::from_rows(Array2::zeros((1, 26))).unwrap();
        let rows = Array2::ones((1, 26));
        assert!(matches!(
            kernel_shap(&model, &rows, &bg, CoalitionBudget::Exhaustive, 0),
            Err(ShapcaError::CoalitionGuard { k: 26, limit: 25 })
        ));
    }
}
