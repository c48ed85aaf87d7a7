//! Cross-fold explanation consistency protocol.
//!
//! Trains one pipeline per fold, explains an identical held-out set with
//! every fold model, and scores all model pairs by cosine similarity and
//! Pearson correlation of the back-projected explanation vectors. The
//! raw-SHAP baseline explains the classifier on the untransformed
//! wavenumber features, so its vectors live in feature space already.
//! Euclidean distance is deliberately not offered: explanation vectors
//! are mostly zeros, which deflates distance-based scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backproject::{global_explain, local_explain};
use crate::error::{Result, ShapcaError};
use crate::models::{
    argmax_rows, fit_forest_matrix, fit_linear, ForestConfig, LinearProbConfig,
};
use crate::shap::{kernel_shap, tree_shap, BackgroundSet, CoalitionBudget};
use crate::sparse_pca::{self, ComponentNormalizer, ComponentValues, SparsePcaConfig};
use crate::spectra_io::{kfold_indices, KFoldMode, SpectraDataset};

/// Cosine similarity; undefined (None) when either vector has zero norm.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Pearson correlation; undefined (None) when either vector is constant.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ca: Vec<f64> = a.iter().map(|x| x - ma).collect();
    let cb: Vec<f64> = b.iter().map(|x| x - mb).collect();
    cosine_sim(&ca, &cb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMethod {
    Shapca,
    RawShap,
}

impl ProtocolMethod {
    pub fn label(&self) -> &'static str {
        match self {
            ProtocolMethod::Shapca => "shapca",
            ProtocolMethod::RawShap => "raw_shap",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierChoice {
    Forest(ForestConfig),
    Linear(LinearProbConfig),
}

impl ClassifierChoice {
    pub fn label(&self) -> &'static str {
        match self {
            ClassifierChoice::Forest(_) => "forest",
            ClassifierChoice::Linear(_) => "linear",
        }
    }
}

/// Pipeline settings shared by every fold model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub pca: SparsePcaConfig,
    pub classifier: ClassifierChoice,
    /// Coalition budget for the kernel explainer (linear classifier path).
    pub kernel_coalitions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub n_included: usize,
    pub n_excluded: usize,
}

fn summarize(scores: &[Option<f64>]) -> MetricSummary {
    let included: Vec<f64> = scores.iter().filter_map(|s| *s).collect();
    MetricSummary {
        mean: if included.is_empty() {
            None
        } else {
            Some(included.iter().sum::<f64>() / included.len() as f64)
        },
        n_included: included.len(),
        n_excluded: scores.len() - included.len(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassConsistency {
    pub class_name: String,
    pub cosine: MetricSummary,
    pub pearson: MetricSummary,
    /// Upper-triangle pair scores, row-major over (i, j) with i < j.
    pub cosine_pairs: Vec<Option<f64>>,
    pub pearson_pairs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalConsistency {
    pub cosine: MetricSummary,
    pub pearson: MetricSummary,
    /// Fraction of sample pairs excluded because the two models predicted
    /// different classes.
    pub class_mismatch_rate: f64,
    pub cosine_pairs: Vec<Option<f64>>,
    pub pearson_pairs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub method: String,
    pub n_models: usize,
    pub n_pairs: usize,
    pub per_class_global: Vec<ClassConsistency>,
    pub local: LocalConsistency,
}

impl ConsistencyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Explanations one fold model produced on the holdout set.
#[derive(Debug, Clone)]
pub struct FoldExplanations {
    /// Per class: back-projected global vector, None when no holdout
    /// sample was predicted as that class.
    pub global: Vec<Option<Vec<f64>>>,
    /// Per holdout sample: signed local track for its predicted class.
    pub local: Vec<Vec<f64>>,
    pub yhat: Vec<usize>,
}

fn explain_shapca(
    train: &SpectraDataset,
    holdout: &SpectraDataset,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<FoldExplanations> {
    let mut pca_cfg = cfg.pca.clone();
    pca_cfg.seed = seed;
    pca_cfg.n_components = pca_cfg
        .n_components
        .min(train.n_samples().min(train.n_features()));
    let pca = sparse_pca::fit(&train.intensities, &pca_cfg)?;
    let cv_tr = sparse_pca::transform(&pca, &train.intensities)?;
    let cv_ho = sparse_pca::transform(&pca, &holdout.intensities)?;
    let normalizer = ComponentNormalizer::fit(&cv_tr)?;
    let cvn_ho = normalizer.apply(&cv_ho);

    let (yhat, phi) = match &cfg.classifier {
        ClassifierChoice::Forest(fc) => {
            let mut fc = fc.clone();
            fc.seed = seed;
            let forest = fit_forest_matrix(&cv_tr.values, &train.labels, &fc)?;
            let yhat = forest.predict(&cv_ho)?;
            let phi = tree_shap(&forest, &cv_ho)?;
            (yhat, phi)
        }
        ClassifierChoice::Linear(lc) => {
            let model = fit_linear(&cv_tr, &train.labels, lc)?;
            let yhat = model.predict(&cv_ho)?;
            let background = BackgroundSet::auto(&cv_tr, seed)?;
            let budget = CoalitionBudget::Sampled(
                cfg.kernel_coalitions
                    .unwrap_or(2 * pca_cfg.n_components + 2048),
            );
            let phi = kernel_shap(&model, &cv_ho.values, &background, budget, seed)?;
            (yhat, phi)
        }
    };

    let globals = global_explain(&phi, &yhat, &cvn_ho, &pca.loadings)?;
    let global: Vec<Option<Vec<f64>>> = globals
        .into_iter()
        .map(|cg| cg.as_explained().map(|g| g.psi.clone()))
        .collect();
    let local: Vec<Vec<f64>> = (0..holdout.n_samples())
        .map(|i| {
            let row: Vec<f64> = cvn_ho.values.row(i).to_vec();
            let le = local_explain(&phi, i, yhat[i], &row, &pca.loadings)?;
            Ok(le
                .psi_pos
                .iter()
                .zip(&le.psi_neg)
                .map(|(p, n)| p + n)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(FoldExplanations {
        global,
        local,
        yhat,
    })
}

/// SHAP straight on the wavenumber features: the classifier trains on raw
/// intensities and the per-feature attribution vectors need no
/// projection. Global vectors are class-wise means over the samples
/// predicted as that class.
pub fn raw_shap_baseline(
    train: &SpectraDataset,
    holdout: &SpectraDataset,
    classifier: &ClassifierChoice,
    kernel_coalitions: Option<usize>,
    seed: u64,
) -> Result<FoldExplanations> {
    let p = train.n_features();
    let (yhat, phi) = match classifier {
        ClassifierChoice::Forest(fc) => {
            let mut fc = fc.clone();
            fc.seed = seed;
            let forest = fit_forest_matrix(&train.intensities, &train.labels, &fc)?;
            let probs = forest.predict_proba_matrix(&holdout.intensities)?;
            let yhat = argmax_rows(&probs);
            let cv = ComponentValues {
                values: holdout.intensities.clone(),
            };
            let phi = tree_shap(&forest, &cv)?;
            (yhat, phi)
        }
        ClassifierChoice::Linear(lc) => {
            let cv_tr = ComponentValues {
                values: train.intensities.clone(),
            };
            let model = fit_linear(&cv_tr, &train.labels, lc)?;
            let probs = model.predict_proba_matrix(&holdout.intensities)?;
            let yhat = argmax_rows(&probs);
            let background = BackgroundSet::auto(&cv_tr, seed)?;
            let budget =
                CoalitionBudget::Sampled(kernel_coalitions.unwrap_or(2 * p + 2048));
            let phi = kernel_shap(&model, &holdout.intensities, &background, budget, seed)?;
            (yhat, phi)
        }
    };

    let n_classes = phi.n_classes();
    let mut global: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let members: Vec<usize> = (0..holdout.n_samples())
            .filter(|&i| yhat[i] == class)
            .collect();
        if members.is_empty() {
            global.push(None);
            continue;
        }
        let m = members.len() as f64;
        let mut mean = vec![0.0; p];
        for &i in &members {
            for (j, slot) in mean.iter_mut().enumerate() {
                *slot += phi.phi[[i, j, class]] / m;
            }
        }
        global.push(Some(mean));
    }
    let local: Vec<Vec<f64>> = (0..holdout.n_samples())
        .map(|i| (0..p).map(|j| phi.phi[[i, j, yhat[i]]]).collect())
        .collect();
    Ok(FoldExplanations {
        global,
        local,
        yhat,
    })
}

/// All pairwise scores of one vector per model; None entries mark
/// undefined scores or missing vectors.
pub fn pairwise_scores(
    vectors: &[Option<Vec<f64>>],
    metric: fn(&[f64], &[f64]) -> Option<f64>,
) -> Vec<Option<f64>> {
    let f = vectors.len();
    let mut out = Vec::with_capacity(f * (f - 1) / 2);
    for i in 0..f {
        for j in (i + 1)..f {
            let score = match (&vectors[i], &vectors[j]) {
                (Some(a), Some(b)) => metric(a, b),
                _ => None,
            };
            out.push(score);
        }
    }
    out
}

/// Runs the full protocol for one method: k fold-trained pipelines, all
/// explained on the same holdout, scored pairwise.
pub fn run_protocol(
    ds: &SpectraDataset,
    holdout: &SpectraDataset,
    cfg: &ProtocolConfig,
    method: ProtocolMethod,
    k: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    if ds.class_names != holdout.class_names {
        return Err(ShapcaError::InvalidParameter(
            "holdout and training data disagree on the class space".into(),
        ));
    }
    if let (Some(train_groups), Some(holdout_groups)) = (&ds.groups, &holdout.groups) {
        for g in holdout_groups {
            if train_groups.contains(g) {
                return Err(ShapcaError::InvalidParameter(format!(
                    "group {g} appears in both the protocol data and the holdout"
                )));
            }
        }
    }
    let mode = if ds.groups.is_some() {
        KFoldMode::GroupKFold
    } else {
        KFoldMode::StratifiedKFold
    };
    let folds = kfold_indices(ds, k, mode, seed)?;

    let fold_expls: Vec<FoldExplanations> = folds
        .par_iter()
        .enumerate()
        .map(|(fold_idx, (train_idx, _))| {
            let train = ds.select(train_idx);
            let fold_seed = crate::shap::mix_seed(seed, fold_idx as u64);
            match method {
                ProtocolMethod::Shapca => explain_shapca(&train, holdout, cfg, fold_seed),
                ProtocolMethod::RawShap => raw_shap_baseline(
                    &train,
                    holdout,
                    &cfg.classifier,
                    cfg.kernel_coalitions,
                    fold_seed,
                ),
            }
        })
        .collect::<Result<_>>()?;

    let f = fold_expls.len();
    let n_pairs = f * (f - 1) / 2;

    let per_class_global: Vec<ClassConsistency> = (0..ds.n_classes())
        .map(|class| {
            let vectors: Vec<Option<Vec<f64>>> = fold_expls
                .iter()
                .map(|fe| fe.global[class].clone())
                .collect();
            let cos = pairwise_scores(&vectors, cosine_sim);
            let pea = pairwise_scores(&vectors, pearson_corr);
            ClassConsistency {
                class_name: ds.class_names[class].clone(),
                cosine: summarize(&cos),
                pearson: summarize(&pea),
                cosine_pairs: cos,
                pearson_pairs: pea,
            }
        })
        .collect();

    // Local: average over holdout samples where the pair agrees on the
    // predicted class.
    let n_holdout = holdout.n_samples();
    let mut local_cos_pairs = Vec::with_capacity(n_pairs);
    let mut local_pea_pairs = Vec::with_capacity(n_pairs);
    let mut mismatched = 0usize;
    let mut total_sample_pairs = 0usize;
    for i in 0..f {
        for j in (i + 1)..f {
            let mut cos_scores = Vec::new();
            let mut pea_scores = Vec::new();
            for s in 0..n_holdout {
                total_sample_pairs += 1;
                if fold_expls[i].yhat[s] != fold_expls[j].yhat[s] {
                    mismatched += 1;
                    continue;
                }
                if let Some(c) = cosine_sim(&fold_expls[i].local[s], &fold_expls[j].local[s]) {
                    cos_scores.push(c);
                }
                if let Some(r) = pearson_corr(&fold_expls[i].local[s], &fold_expls[j].local[s]) {
                    pea_scores.push(r);
                }
            }
            local_cos_pairs.push(if cos_scores.is_empty() {
                None
            } else {
                Some(cos_scores.iter().sum::<f64>() / cos_scores.len() as f64)
            });
            local_pea_pairs.push(if pea_scores.is_empty() {
                None
            } else {
                Some(pea_scores.iter().sum::<f64>() / pea_scores.len() as f64)
            });
        }
    }

    Ok(ConsistencyReport {
        method: format!("{}+{}", method.label(), cfg.classifier.label()),
        n_models: f,
        n_pairs,
        per_class_global: per_class_global.clone(),
        local: LocalConsistency {
            cosine: summarize(&local_cos_pairs),
            pearson: summarize(&local_pea_pairs),
            class_mismatch_rate: if total_sample_pairs == 0 {
                0.0
            } else {
                mismatched as f64 / total_sample_pairs as f64
            },
            cosine_pairs: local_cos_pairs,
            pearson_pairs: local_pea_pairs,
        },
    })
}

fn fmt_mean(m: &MetricSummary) -> String {
    match m.mean {
        Some(v) => format!("{v:.3}"),
        None => "undefined".into(),
    }
}

/// CSV table: one row per class plus a Local row, one column pair
/// (cosine, pearson) per method report.
pub fn reports_to_csv(reports: &[ConsistencyReport], class_names: &[String]) -> String {
    let mut out = String::from("row");
    for r in reports {
        out.push_str(&format!(",{m}_cosine,{m}_pearson", m = r.method));
    }
    out.push('\n');
    for (c, name) in class_names.iter().enumerate() {
        out.push_str(name);
        for r in reports {
            let cc = &r.per_class_global[c];
            out.push_str(&format!(",{},{}", fmt_mean(&cc.cosine), fmt_mean(&cc.pearson)));
        }
        out.push('\n');
    }
    out.push_str("Local");
    for r in reports {
        out.push_str(&format!(
            ",{},{}",
            fmt_mean(&r.local.cosine),
            fmt_mean(&r.local.pearson)
        ));
    }
    out.push('\n');
    out
}
