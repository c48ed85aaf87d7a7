//! Brute-force Shapley values by coalition enumeration.
//!
//! The value of a coalition S is the background-averaged model output
//! with the features in S fixed to the explained sample. Exponential in
//! K, so guarded; this is the verification oracle for the fast paths.

use ndarray::{Array2, ArrayView1};

use crate::error::{Result, ShapcaError};
use crate::shap::{coalition_value, BackgroundSet, ProbModel};

const MAX_FEATURES: usize = 20;

fn binom(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out = 1u64;
    for i in 0..k {
        out = out * (n - i) as u64 / (i + 1) as u64;
    }
    out
}

/// Exact Shapley values for one sample: returns (phi of shape K x C,
/// phi0 of length C).
pub fn brute_force_shap(
    model: &dyn ProbModel,
    x: ArrayView1<f64>,
    background: &BackgroundSet,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let k = model.n_features();
    if x.len() != k {
        return Err(ShapcaError::DimensionMismatch(format!(
            "sample has {} features, model expects {k}",
            x.len()
        )));
    }
    if k > MAX_FEATURES {
        return Err(ShapcaError::CoalitionGuard {
            k,
            limit: MAX_FEATURES,
        });
    }
    if background.is_empty() {
        return Err(ShapcaError::EmptyBackground);
    }
    let c = model.n_classes();
    let n_masks = 1usize << k;
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(n_masks);
    for mask in 0..n_masks {
        values.push(coalition_value(model, &x, background, mask as u64));
    }

    // w(s) = s! (K-1-s)! / K! = 1 / (K * C(K-1, s))
    let weights: Vec<f64> = (0..k)
        .map(|s| 1.0 / (k as f64 * binom(k - 1, s) as f64))
        .collect();

    let mut phi = Array2::zeros((k, c));
    for mask in 0..n_masks {
        let size = (mask as u64).count_ones() as usize;
        for feature in 0..k {
            if mask & (1 << feature) != 0 {
                continue;
            }
            let w = weights[size];
            let with = &values[mask | (1 << feature)];
            let without = &values[mask];
            for cls in 0..c {
                phi[[feature, cls]] += w * (with[cls] - without[cls]);
            }
        }
    }
    Ok((phi, values[0].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shap::LinearValueModel;
    use ndarray::array;

    #[test]
    fn symmetric_features_get_equal_credit() {
        let model = LinearValueModel {
            weights: array![[1.0, 1.0]],
            bias: vec![0.0],
        };
        let bg = BackgroundSet::from_rows(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let x = array![3.0, 3.0];
        let (phi, _) = brute_force_shap(&model, x.view(), &bg).unwrap();
        assert!((phi[[0, 0]] - phi[[1, 0]]).abs() < 1e-12);
    }

    #[test]
    fn dummy_feature_gets_zero() {
        let model = LinearValueModel {
            weights: array![[2.0, 0.0]],
            bias: vec![1.0],
        };
        let bg = BackgroundSet::from_rows(array![[0.5, -3.0], [1.5, 9.0]]).unwrap();
        let x = array![2.0, 100.0];
        let (phi, _) = brute_force_shap(&model, x.view(), &bg).unwrap();
        assert_eq!(phi[[1, 0]], 0.0);
        assert!((phi[[0, 0]] - 2.0 * (2.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn efficiency_axiom_holds_exactly() {
        let model = LinearValueModel {
            weights: array![[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]],
            bias: vec![0.3, 0.7],
        };
        let bg =
            BackgroundSet::from_rows(array![[0.1, 0.2, 0.3], [-0.4, 0.5, -0.6], [0.7, -0.8, 0.9]])
                .unwrap();
        let x = array![1.5, -2.5, 3.5];
        let (phi, phi0) = brute_force_shap(&model, x.view(), &bg).unwrap();
        let fx = model.proba(&x.clone().insert_axis(ndarray::Axis(0)).to_owned());
        for c in 0..2 {
            let total: f64 = (0..3).map(|k| phi[[k, c]]).sum();
            assert!((phi0[c] + total - fx[[0, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_guard_fires() {
        let model = LinearValueModel {
            weights: Array2::zeros((1, 21)),
            bias: vec![0.0],
        };
        let bg = BackgroundSet::from_rows(Array2::zeros((1, 21))).unwrap();
        let x = ndarray::Array1::zeros(21);
        assert!(matches!(
            brute_force_shap(&model, x.view(), &bg),
            Err(ShapcaError::CoalitionGuard { k: 21, limit: 20 })
        ));
    }
}
