//! Python bindings for the pipeline's main types and operations:
//! synthetic data, preprocessing, sparse PCA, the random forest, Shapley
//! explainers, back-projection, and the consistency metrics. Matrices
//! cross the boundary as nested lists.

use ndarray::{Array2, Array3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use shapca_core::backproject;
use shapca_core::consistency;
use shapca_core::models::{fit_forest_matrix, ForestConfig, ForestModel};
use shapca_core::preprocess;
use shapca_core::shap::{self, AttributionTensor, BackgroundSet, CoalitionBudget};
use shapca_core::sparse_pca::{self, ComponentValues, SparsePcaConfig, SparsePcaModel};
use shapca_core::synth::{self, SynthConfig};

fn to_py_err(e: shapca_core::ShapcaError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let p = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows have inconsistent lengths"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, p), flat)
        .map_err(|e| PyValueError::new_err(format!("bad matrix shape: {e}")))
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn tensor_from_nested(phi: Vec<Vec<Vec<f64>>>, phi0: Vec<f64>) -> PyResult<AttributionTensor> {
    let n = phi.len();
    let k = phi.first().map(|s| s.len()).unwrap_or(0);
    let c = phi
        .first()
        .and_then(|s| s.first())
        .map(|r| r.len())
        .unwrap_or(0);
    let mut out = Array3::zeros((n, k, c));
    for (i, sample) in phi.iter().enumerate() {
        if sample.len() != k {
            return Err(PyValueError::new_err("ragged attribution tensor"));
        }
        for (kk, row) in sample.iter().enumerate() {
            if row.len() != c {
                return Err(PyValueError::new_err("ragged attribution tensor"));
            }
            for (cc, &v) in row.iter().enumerate() {
                out[[i, kk, cc]] = v;
            }
        }
    }
    Ok(AttributionTensor {
        phi: out,
        phi0,
    })
}

fn tensor_to_nested(t: &AttributionTensor) -> Vec<Vec<Vec<f64>>> {
    let (n, k, c) = (t.n_samples(), t.n_components(), t.n_classes());
    let mut out = vec![vec![vec![0.0; c]; k]; n];
    for ((i, kk, cc), &v) in t.phi.indexed_iter() {
        out[i][kk][cc] = v;
    }
    out
}

/// Synthetic spectra: returns (axis, intensities, labels, groups,
/// class_names).
#[pyfunction]
#[pyo3(signature = (n_samples=300, n_blocks=6, block_width=4.0, noise=0.05, n_classes=2, n_features=200, seed=0))]
#[allow(clippy::type_complexity)]
fn synth_dataset(
    n_samples: usize,
    n_blocks: usize,
    block_width: f64,
    noise: f64,
    n_classes: usize,
    n_features: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<usize>, Vec<String>, Vec<String>)> {
    let cfg = SynthConfig {
        n_samples,
        n_blocks,
        block_width,
        noise,
        n_classes,
        n_features,
        group_size: 4,
        seed,
    };
    let (ds, _) = synth::generate(&cfg).map_err(to_py_err)?;
    Ok((
        ds.axis.values().to_vec(),
        matrix_to_rows(&ds.intensities),
        ds.labels.clone(),
        ds.groups.clone().unwrap_or_default(),
        ds.class_names.clone(),
    ))
}

#[pyfunction]
fn savgol_smooth(y: Vec<f64>, window: usize, polyorder: usize) -> PyResult<Vec<f64>> {
    preprocess::savgol_smooth(&y, window, polyorder).map_err(to_py_err)
}

/// Returns (corrected, baseline).
#[pyfunction]
#[pyo3(signature = (y, lam=5e5, p=0.003, max_iter=50))]
fn baseline_correct(y: Vec<f64>, lam: f64, p: f64, max_iter: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    preprocess::baseline_correct(&y, lam, p, max_iter).map_err(to_py_err)
}

#[pyfunction]
fn normalize_max(y: Vec<f64>) -> PyResult<Vec<f64>> {
    preprocess::normalize_max(&y).map_err(to_py_err)
}

/// Full preprocessing chain over a matrix of spectra: smoothing, baseline
/// subtraction, max normalization (cropping is an axis-level slice the
/// caller applies beforehand).
#[pyfunction]
#[pyo3(signature = (intensities, window=5, polyorder=2, lam=5e5, p=0.003, max_iter=50, normalize=true))]
fn preprocess_matrix(
    intensities: Vec<Vec<f64>>,
    window: usize,
    polyorder: usize,
    lam: f64,
    p: f64,
    max_iter: usize,
    normalize: bool,
) -> PyResult<Vec<Vec<f64>>> {
    intensities
        .into_iter()
        .map(|row| {
            let smoothed = preprocess::savgol_smooth(&row, window, polyorder).map_err(to_py_err)?;
            let (corrected, _) =
                preprocess::baseline_correct(&smoothed, lam, p, max_iter).map_err(to_py_err)?;
            if normalize {
                preprocess::normalize_max(&corrected).map_err(to_py_err)
            } else {
                Ok(corrected)
            }
        })
        .collect()
}

/// Sparse principal component model.
#[pyclass]
struct SparsePca {
    model: SparsePcaModel,
}

#[pymethods]
impl SparsePca {
    #[staticmethod]
    #[pyo3(signature = (x, n_components=10, alpha=1.0, max_iter=300, tol=1e-8, seed=0))]
    fn fit(
        x: Vec<Vec<f64>>,
        n_components: usize,
        alpha: f64,
        max_iter: usize,
        tol: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let x = matrix_from_rows(x)?;
        let cfg = SparsePcaConfig {
            n_components,
            alpha,
            max_iter,
            tol,
            seed,
        };
        let model = sparse_pca::fit(&x, &cfg).map_err(to_py_err)?;
        Ok(Self { model })
    }

    fn transform(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix_from_rows(x)?;
        let cv = sparse_pca::transform(&self.model, &x).map_err(to_py_err)?;
        Ok(matrix_to_rows(&cv.values))
    }

    fn loadings(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.model.loadings)
    }

    fn feature_means(&self) -> Vec<f64> {
        self.model.feature_means.to_vec()
    }

    fn explained_variance(&self) -> Vec<f64> {
        self.model.explained_variance.clone()
    }

    #[getter]
    fn sparsity_fraction(&self) -> f64 {
        self.model.sparsity_fraction
    }

    #[getter]
    fn converged(&self) -> bool {
        self.model.converged
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(to_py_err)
    }
}

/// Normalizes component values column-wise to [-1, 1] by min-max over
/// samples; constant columns map to 0.
#[pyfunction]
fn normalize_components(values: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let cv = ComponentValues {
        values: matrix_from_rows(values)?,
    };
    let out = sparse_pca::normalize_components(&cv).map_err(to_py_err)?;
    Ok(matrix_to_rows(&out.values))
}

/// Random forest classifier with per-leaf class frequencies.
#[pyclass]
struct RandomForest {
    model: ForestModel,
}

#[pymethods]
impl RandomForest {
    #[staticmethod]
    #[pyo3(signature = (x, labels, n_trees=100, max_depth=8, min_leaf=1, seed=0))]
    fn fit(
        x: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_trees: usize,
        max_depth: usize,
        min_leaf: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let x = matrix_from_rows(x)?;
        let cfg = ForestConfig {
            n_trees,
            max_depth,
            min_leaf,
            max_features: None,
            seed,
        };
        let model = fit_forest_matrix(&x, &labels, &cfg).map_err(to_py_err)?;
        Ok(Self { model })
    }

    fn predict_proba(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix_from_rows(x)?;
        let probs = self.model.predict_proba_matrix(&x).map_err(to_py_err)?;
        Ok(matrix_to_rows(&probs))
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let x = matrix_from_rows(x)?;
        let cv = ComponentValues { values: x };
        self.model.predict(&cv).map_err(to_py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(to_py_err)
    }
}

/// Exact TreeSHAP: returns (phi[n][k][c], phi0[c]).
#[pyfunction]
#[allow(clippy::type_complexity)]
fn tree_shap(
    forest: &RandomForest,
    x: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let cv = ComponentValues {
        values: matrix_from_rows(x)?,
    };
    let at = shap::tree_shap(&forest.model, &cv).map_err(to_py_err)?;
    Ok((tensor_to_nested(&at), at.phi0.clone()))
}

/// KernelSHAP against the forest; n_coalitions = 0 means exhaustive.
#[pyfunction]
#[pyo3(signature = (forest, x, background, n_coalitions=0, seed=0))]
#[allow(clippy::type_complexity)]
fn kernel_shap(
    forest: &RandomForest,
    x: Vec<Vec<f64>>,
    background: Vec<Vec<f64>>,
    n_coalitions: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let x = matrix_from_rows(x)?;
    let bg = BackgroundSet::from_rows(matrix_from_rows(background)?).map_err(to_py_err)?;
    let budget = if n_coalitions == 0 {
        CoalitionBudget::Exhaustive
    } else {
        CoalitionBudget::Sampled(n_coalitions)
    };
    let at = shap::kernel_shap(&forest.model, &x, &bg, budget, seed).map_err(to_py_err)?;
    Ok((tensor_to_nested(&at), at.phi0.clone()))
}

/// Class-wise back-projection: returns, per class, (psi, pc_track,
/// n_samples_used) or None for classes with no predicted samples.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn global_explain(
    phi: Vec<Vec<Vec<f64>>>,
    phi0: Vec<f64>,
    yhat: Vec<usize>,
    cvn: Vec<Vec<f64>>,
    loadings: Vec<Vec<f64>>,
) -> PyResult<Vec<Option<(Vec<f64>, Vec<f64>, usize)>>> {
    let at = tensor_from_nested(phi, phi0)?;
    let cvn = ComponentValues {
        values: matrix_from_rows(cvn)?,
    };
    let loadings = matrix_from_rows(loadings)?;
    let out = backproject::global_explain(&at, &yhat, &cvn, &loadings).map_err(to_py_err)?;
    Ok(out
        .into_iter()
        .map(|cg| {
            cg.as_explained()
                .map(|g| (g.psi.clone(), g.pc_track.clone(), g.n_samples_used))
        })
        .collect())
}

/// Sign-split local back-projection: returns (psi_pos, psi_neg, pc_track).
#[pyfunction]
#[allow(clippy::type_complexity)]
fn local_explain(
    phi: Vec<Vec<Vec<f64>>>,
    phi0: Vec<f64>,
    sample: usize,
    class: usize,
    cvn_row: Vec<f64>,
    loadings: Vec<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let at = tensor_from_nested(phi, phi0)?;
    let loadings = matrix_from_rows(loadings)?;
    let le =
        backproject::local_explain(&at, sample, class, &cvn_row, &loadings).map_err(to_py_err)?;
    Ok((le.psi_pos, le.psi_neg, le.pc_track))
}

/// None when a vector has zero norm.
#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> Option<f64> {
    consistency::cosine_sim(&a, &b)
}

/// None when a vector is constant.
#[pyfunction]
fn pearson_correlation(a: Vec<f64>, b: Vec<f64>) -> Option<f64> {
    consistency::pearson_corr(&a, &b)
}

#[pymodule]
fn pyshapca(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SparsePca>()?;
    m.add_class::<RandomForest>()?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(savgol_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_correct, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_max, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_components, m)?)?;
    m.add_function(wrap_pyfunction!(tree_shap, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_shap, m)?)?;
    m.add_function(wrap_pyfunction!(global_explain, m)?)?;
    m.add_function(wrap_pyfunction!(local_explain, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_correlation, m)?)?;
    Ok(())
}
