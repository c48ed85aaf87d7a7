//! Sparse principal component extraction.
//!
//! Fits a K x P loading matrix W minimizing
//! `||Xc - U W||_F^2 + alpha * sum_k ||w_k||_1`
//! by alternating minimization: the code columns of U are updated by
//! least squares projected onto the unit ball, the loadings by
//! coordinate-descent soft thresholding. Component values are the
//! centered projection `(X - mean) W^T`.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapcaError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsePcaConfig {
    pub n_components: usize,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SparsePcaConfig {
    fn default() -> Self {
        Self {
            n_components: 10,
            alpha: 1.0,
            max_iter: 300,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsePcaModel {
    /// Loadings, one row per component.
    pub loadings: Array2<f64>,
    pub feature_means: Array1<f64>,
    /// Sample variance of each component's training scores, descending.
    pub explained_variance: Vec<f64>,
    /// Fraction of exactly-zero loading entries.
    pub sparsity_fraction: f64,
    /// False when the alternating loop hit max_iter before the tolerance.
    pub converged: bool,
    /// Components whose loading row stayed all-zero even after reseeding.
    pub degenerate_components: Vec<usize>,
    /// Objective value after every alternating iteration.
    pub objective_trace: Vec<f64>,
}

impl SparsePcaModel {
    pub fn n_components(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Component values: entry (i, k) is the k-th component score of sample i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentValues {
    pub values: Array2<f64>,
}

impl ComponentValues {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.values.ncols()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn frob_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn objective(residual: &Array2<f64>, w: &Array2<f64>, alpha: f64) -> f64 {
    frob_sq(residual) + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
}

struct FitState {
    code: Array2<f64>,     // N x K
    loadings: Array2<f64>, // K x P
    residual: Array2<f64>, // N x P, Xc - code * loadings
}

impl FitState {
    fn update_code(&mut self) {
        let k = self.loadings.nrows();
        for comp in 0..k {
            let w = self.loadings.row(comp).to_owned();
            let wnorm = w.dot(&w);
            if wnorm <= f64::EPSILON {
                continue;
            }
            let u_old = self.code.column(comp).to_owned();
            // restore: residual += u_old (x) w
            for (i, &ui) in u_old.iter().enumerate() {
                if ui != 0.0 {
                    let mut row = self.residual.row_mut(i);
                    row.scaled_add(ui, &w);
                }
            }
            let mut u_new = self.residual.dot(&w);
            u_new.mapv_inplace(|v| v / wnorm);
            let unorm = u_new.dot(&u_new).sqrt();
            if unorm > 1.0 {
                u_new.mapv_inplace(|v| v / unorm);
            }
            for (i, &ui) in u_new.iter().enumerate() {
                if ui != 0.0 {
                    let mut row = self.residual.row_mut(i);
                    row.scaled_add(-ui, &w);
                }
            }
            self.code.column_mut(comp).assign(&u_new);
        }
    }

    /// Coordinate descent over every loading entry, swept until the
    /// largest change is negligible.
    fn update_loadings(&mut self, xc: &Array2<f64>, alpha: f64) {
        let k = self.loadings.nrows();
        let p = self.loadings.ncols();
        let gram = self.code.t().dot(&self.code); // K x K
        let corr = self.code.t().dot(xc); // K x P
        for _sweep in 0..10 {
            let mut max_delta = 0.0f64;
            let mut max_w = 0.0f64;
            for j in 0..p {
                for comp in 0..k {
                    let g_kk = gram[[comp, comp]];
                    let old = self.loadings[[comp, j]];
                    if g_kk <= f64::EPSILON {
                        self.loadings[[comp, j]] = 0.0;
                        continue;
                    }
                    let mut rho = corr[[comp, j]];
                    for l in 0..k {
                        if l != comp {
                            rho -= gram[[comp, l]] * self.loadings[[l, j]];
                        }
                    }
                    let new = soft_threshold(rho, alpha / 2.0) / g_kk;
                    self.loadings[[comp, j]] = new;
                    max_delta = max_delta.max((new - old).abs());
                    max_w = max_w.max(new.abs());
                }
            }
            if max_delta <= 1e-10 * (1.0 + max_w) {
                break;
            }
        }
        self.residual = xc - &self.code.dot(&self.loadings);
    }
}

pub(crate) struct FitOutput {
    pub model: SparsePcaModel,
    /// Code matrix consistent with the final (reordered, sign-fixed) loadings.
    #[allow(dead_code)]
    pub code: Array2<f64>,
}

fn orthonormalize_columns_in_place(v: &mut Array2<f64>) {
    let cols = v.ncols();
    for j in 0..cols {
        for i in 0..j {
            let proj = v.column(j).dot(&v.column(i));
            let vi = v.column(i).to_owned();
            v.column_mut(j).scaled_add(-proj, &vi);
        }
        let norm: f64 = v.column(j).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.column_mut(j).mapv_inplace(|x| x / norm);
        } else {
            let n = v.nrows();
            let mut col = v.column_mut(j);
            col.fill(0.0);
            col[j % n] = 1.0;
        }
    }
}

/// Warm start: block orthogonal iteration on Xc^T Xc gives the dominant
/// K directions; each is scaled to the magnitude of its data projection
/// so the code columns start near the unit ball boundary.
fn init_loadings(xc: &Array2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let p = xc.ncols();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let mut v = Array2::from_shape_fn((p, k), |_| normal.sample(&mut rng));
    orthonormalize_columns_in_place(&mut v);
    let a = xc.t().dot(xc);
    for _ in 0..50 {
        v = a.dot(&v);
        orthonormalize_columns_in_place(&mut v);
    }
    let mut w = Array2::zeros((k, p));
    for comp in 0..k {
        let dir = v.column(comp);
        let proj = xc.dot(&dir);
        let scale: f64 = proj.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut row = w.row_mut(comp);
        for (dst, &src) in row.iter_mut().zip(dir.iter()) {
            *dst = src * scale;
        }
    }
    w
}

pub fn fit(x: &Array2<f64>, cfg: &SparsePcaConfig) -> Result<SparsePcaModel> {
    Ok(fit_with_code(x, cfg)?.model)
}

pub(crate) fn fit_with_code(x: &Array2<f64>, cfg: &SparsePcaConfig) -> Result<FitOutput> {
    let (n, p) = x.dim();
    let k = cfg.n_components;
    if n < 2 {
        return Err(ShapcaError::InvalidParameter(format!(
            "sparse PCA needs at least 2 samples, got {n}"
        )));
    }
    if k == 0 || k > n.min(p) {
        return Err(ShapcaError::InvalidParameter(format!(
            "n_components {k} must lie in [1, min(N, P)] = [1, {}]",
            n.min(p)
        )));
    }
    if cfg.alpha < 0.0 {
        return Err(ShapcaError::InvalidParameter(format!(
            "alpha must be non-negative, got {}",
            cfg.alpha
        )));
    }

    let means = x.mean_axis(Axis(0)).expect("n >= 2");
    let xc = x - &means.clone().insert_axis(Axis(0));

    let loadings = init_loadings(&xc, k, cfg.seed);
    let code = Array2::zeros((n, k));
    let residual = xc.clone();
    let mut state = FitState {
        code,
        loadings,
        residual,
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iter.max(1) {
        state.update_code();
        state.update_loadings(&xc, cfg.alpha);
        let obj = objective(&state.residual, &state.loadings, cfg.alpha);
        trace.push(obj);
        if (prev - obj).abs() <= cfg.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = obj;
    }

    // Reseed dead components once from the strongest residual row.
    let mut reseeded = false;
    for comp in 0..k {
        let dead = state.loadings.row(comp).iter().all(|&v| v == 0.0);
        if dead {
            let (best_row, best_norm) = state
                .residual
                .axis_iter(Axis(0))
                .enumerate()
                .map(|(i, r)| (i, r.dot(&r)))
                .fold((0, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if best_norm > 0.0 {
                state
                    .loadings
                    .row_mut(comp)
                    .assign(&state.residual.row(best_row));
                reseeded = true;
            }
        }
    }
    if reseeded {
        for _ in 0..10 {
            state.update_code();
            state.update_loadings(&xc, cfg.alpha);
            trace.push(objective(&state.residual, &state.loadings, cfg.alpha));
        }
    }

    let degenerate_unordered: Vec<usize> = (0..k)
        .filter(|&comp| state.loadings.row(comp).iter().all(|&v| v == 0.0))
        .collect();

    // Order components by descending training score variance.
    let scores = xc.dot(&state.loadings.t()); // N x K
    let variances: Vec<f64> = (0..k)
        .map(|comp| {
            let col = scores.column(comp);
            col.dot(&col) / (n as f64 - 1.0)
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| variances[b].partial_cmp(&variances[a]).unwrap());

    let mut sorted = Array2::zeros((k, p));
    let mut sorted_code = Array2::zeros((n, k));
    let mut explained = Vec::with_capacity(k);
    for (new_idx, &old_idx) in order.iter().enumerate() {
        let mut row = state.loadings.row(old_idx).to_owned();
        let mut col = state.code.column(old_idx).to_owned();
        // Sign convention: the largest-magnitude loading entry is positive.
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if row[argmax] < 0.0 {
            row.mapv_inplace(|v| -v);
            col.mapv_inplace(|v| -v);
        }
        sorted.row_mut(new_idx).assign(&row);
        sorted_code.column_mut(new_idx).assign(&col);
        explained.push(variances[old_idx]);
    }
    let degenerate: Vec<usize> = {
        let mut d: Vec<usize> = degenerate_unordered
            .iter()
            .map(|old| order.iter().position(|o| o == old).unwrap())
            .collect();
        d.sort_unstable();
        d
    };

    let zeros = sorted.iter().filter(|&&v| v == 0.0).count();
    let model = SparsePcaModel {
        loadings: sorted,
        feature_means: means,
        explained_variance: explained,
        sparsity_fraction: zeros as f64 / (k * p) as f64,
        converged,
        degenerate_components: degenerate,
        objective_trace: trace,
    };
    Ok(FitOutput {
        model,
        code: sorted_code,
    })
}

/// Projects rows of X through the loadings: `(X - mean) W^T`.
pub fn transform(model: &SparsePcaModel, x: &Array2<f64>) -> Result<ComponentValues> {
    if x.ncols() != model.n_features() {
        return Err(ShapcaError::DimensionMismatch(format!(
            "input has {} features, model expects {}",
            x.ncols(),
            model.n_features()
        )));
    }
    let xc = x - &model.feature_means.clone().insert_axis(Axis(0));
    Ok(ComponentValues {
        values: xc.dot(&model.loadings.t()),
    })
}

/// Per-component min-max statistics, fit on training component values and
/// reused for held-out samples (clipped to [-1.5, 1.5] to flag outliers).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentNormalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl ComponentNormalizer {
    pub fn fit(cv: &ComponentValues) -> Result<Self> {
        if cv.n_samples() < 2 {
            return Err(ShapcaError::InvalidParameter(
                "component normalization needs at least 2 samples".into(),
            ));
        }
        let mut mins = Vec::with_capacity(cv.n_components());
        let mut maxs = Vec::with_capacity(cv.n_components());
        for col in cv.values.columns() {
            mins.push(col.iter().cloned().fold(f64::INFINITY, f64::min));
            maxs.push(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok(Self { mins, maxs })
    }

    /// Maps each column to [-1, 1] by the stored min-max range; constant
    /// columns map to 0; out-of-range values clip at +-1.5.
    pub fn apply(&self, cv: &ComponentValues) -> ComponentValues {
        let mut out = cv.values.clone();
        for (k, mut col) in out.columns_mut().into_iter().enumerate() {
            let (lo, hi) = (self.mins[k], self.maxs[k]);
            if hi > lo {
                let range = hi - lo;
                col.mapv_inplace(|v| (2.0 * (v - lo) / range - 1.0).clamp(-1.5, 1.5));
            } else {
                col.fill(0.0);
            }
        }
        ComponentValues { values: out }
    }
}

/// Min-max normalization of component values to [-1, 1] over the samples
/// of `cv` itself.
pub fn normalize_components(cv: &ComponentValues) -> Result<ComponentValues> {
    Ok(ComponentNormalizer::fit(cv)?.apply(cv))
}
