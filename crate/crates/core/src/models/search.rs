//! Two-stage joint hyperparameter search: a randomized stage over
//! sampling distributions, then a grid refinement around the stage-one
//! winner. Sparse-PCA and forest settings are scored together under
//! cross-validation; score ties go to the sparser model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{accuracy, fit_forest, macro_f1, ForestConfig};
use crate::sparse_pca::{self, SparsePcaConfig};
use crate::spectra_io::{kfold_indices, KFoldMode, SpectraDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    GroupKFold,
    StratifiedKFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    Accuracy,
    MacroF1,
}

/// Sampling ranges for the randomized stage. Integer ranges are inclusive;
/// alpha is sampled log-uniformly when the lower bound is positive and
/// uniformly otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDistributions {
    pub n_components: (usize, usize),
    pub alpha: (f64, f64),
    pub n_trees: (usize, usize),
    pub max_depth: (usize, usize),
    pub min_leaf: (usize, usize),
}

impl Default for ParamDistributions {
    fn default() -> Self {
        Self {
            n_components: (4, 12),
            alpha: (0.01, 10.0),
            n_trees: (30, 150),
            max_depth: (3, 10),
            min_leaf: (1, 4),
        }
    }
}

/// Refinement offsets applied around the stage-one winner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridStage {
    pub alpha_factors: Vec<f64>,
    pub component_deltas: Vec<i64>,
    pub depth_deltas: Vec<i64>,
}

impl Default for GridStage {
    fn default() -> Self {
        Self {
            alpha_factors: vec![0.5, 1.0, 2.0],
            component_deltas: vec![-2, 0, 2],
            depth_deltas: vec![-1, 0, 1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpec {
    pub n_samples: usize,
    pub distributions: ParamDistributions,
    pub grid: GridStage,
    pub cv_mode: CvMode,
    pub cv_k: usize,
    pub scoring: Scoring,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateScore {
    pub stage: u8,
    pub pca: SparsePcaConfig,
    pub forest: ForestConfig,
    pub mean_score: f64,
    pub std_score: f64,
    pub mean_sparsity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReport {
    pub winner: usize,
    pub table: Vec<CandidateScore>,
    pub scoring: Scoring,
    pub cv_k: usize,
}

impl SearchReport {
    pub fn best(&self) -> &CandidateScore {
        &self.table[self.winner]
    }

    /// CSV score table, one row per evaluated configuration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stage,n_components,alpha,n_trees,max_depth,min_leaf,mean_score,std_score,mean_sparsity,winner\n",
        );
        for (i, c) in self.table.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.stage,
                c.pca.n_components,
                c.pca.alpha,
                c.forest.n_trees,
                c.forest.max_depth,
                c.forest.min_leaf,
                c.mean_score,
                c.std_score,
                c.mean_sparsity,
                (i == self.winner) as u8
            ));
        }
        out
    }
}

/// Ranks candidates: higher mean score wins, exact ties go to the higher
/// sparsity fraction, then to the earlier candidate.
pub fn select_best(table: &[CandidateScore]) -> usize {
    let mut best = 0;
    for (i, c) in table.iter().enumerate().skip(1) {
        let b = &table[best];
        if c.mean_score > b.mean_score
            || (c.mean_score == b.mean_score && c.mean_sparsity > b.mean_sparsity)
        {
            best = i;
        }
    }
    best
}

fn evaluate(
    train: &SpectraDataset,
    pca_cfg: &SparsePcaConfig,
    forest_cfg: &ForestConfig,
    folds: &[(Vec<usize>, Vec<usize>)],
    scoring: Scoring,
) -> Result<(f64, f64, f64)> {
    let mut scores = Vec::with_capacity(folds.len());
    let mut sparsities = Vec::with_capacity(folds.len());
    for (tr, te) in folds {
        let ds_tr = train.select(tr);
        let ds_te = train.select(te);
        let mut cfg = pca_cfg.clone();
        cfg.n_components = cfg
            .n_components
            .min(ds_tr.n_samples().min(ds_tr.n_features()));
        let model = sparse_pca::fit(&ds_tr.intensities, &cfg)?;
        sparsities.push(model.sparsity_fraction);
        let cv_tr = sparse_pca::transform(&model, &ds_tr.intensities)?;
        let cv_te = sparse_pca::transform(&model, &ds_te.intensities)?;
        let forest = fit_forest(&cv_tr, &ds_tr.labels, forest_cfg)?;
        let pred = forest.predict(&cv_te)?;
        let score = match scoring {
            Scoring::Accuracy => accuracy(&ds_te.labels, &pred),
            Scoring::MacroF1 => macro_f1(&ds_te.labels, &pred, train.n_classes()),
        };
        scores.push(score);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / scores.len() as f64;
    let sparsity = sparsities.iter().sum::<f64>() / sparsities.len() as f64;
    Ok((mean, var.sqrt(), sparsity))
}

fn sample_candidate(
    d: &ParamDistributions,
    rng: &mut ChaCha20Rng,
    seed: u64,
) -> (SparsePcaConfig, ForestConfig) {
    let sample_int = |rng: &mut ChaCha20Rng, (lo, hi): (usize, usize)| -> usize {
        if hi <= lo {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let alpha = if d.alpha.1 <= d.alpha.0 {
        d.alpha.0
    } else if d.alpha.0 > 0.0 {
        let (llo, lhi) = (d.alpha.0.ln(), d.alpha.1.ln());
        rng.random_range(llo..=lhi).exp()
    } else {
        rng.random_range(d.alpha.0..=d.alpha.1)
    };
    let pca = SparsePcaConfig {
        n_components: sample_int(rng, d.n_components),
        alpha,
        max_iter: 200,
        tol: 1e-7,
        seed,
    };
    let forest = ForestConfig {
        n_trees: sample_int(rng, d.n_trees),
        max_depth: sample_int(rng, d.max_depth),
        min_leaf: sample_int(rng, d.min_leaf),
        max_features: None,
        seed,
    };
    (pca, forest)
}

/// Runs both stages and returns the winning configuration with the full
/// score table.
pub fn hyperparam_search(train: &SpectraDataset, spec: &SearchSpec) -> Result<SearchReport> {
    if spec.n_samples == 0 {
        return Err(crate::error::ShapcaError::InvalidParameter(
            "randomized stage needs n_samples >= 1".into(),
        ));
    }
    if spec.grid.alpha_factors.is_empty()
        || spec.grid.component_deltas.is_empty()
        || spec.grid.depth_deltas.is_empty()
    {
        return Err(crate::error::ShapcaError::InvalidParameter(
            "grid stage axes must be non-empty".into(),
        ));
    }
    let mode = match spec.cv_mode {
        CvMode::GroupKFold => KFoldMode::GroupKFold,
        CvMode::StratifiedKFold => KFoldMode::StratifiedKFold,
    };
    let folds = kfold_indices(train, spec.cv_k, mode, spec.seed)?;

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let stage1: Vec<(SparsePcaConfig, ForestConfig)> = (0..spec.n_samples)
        .map(|_| sample_candidate(&spec.distributions, &mut rng, spec.seed))
        .collect();

    let mut table: Vec<CandidateScore> = stage1
        .into_par_iter()
        .map(|(pca, forest)| {
            let (mean, std, sparsity) = evaluate(train, &pca, &forest, &folds, spec.scoring)?;
            Ok(CandidateScore {
                stage: 1,
                pca,
                forest,
                mean_score: mean,
                std_score: std,
                mean_sparsity: sparsity,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let stage1_best = select_best(&table);
    let base_pca = table[stage1_best].pca.clone();
    let base_forest = table[stage1_best].forest.clone();

    let mut stage2: Vec<(SparsePcaConfig, ForestConfig)> = Vec::new();
    for &factor in &spec.grid.alpha_factors {
        for &dk in &spec.grid.component_deltas {
            for &dd in &spec.grid.depth_deltas {
                let mut pca = base_pca.clone();
                pca.alpha = (base_pca.alpha * factor).max(0.0);
                pca.n_components = (base_pca.n_components as i64 + dk).max(1) as usize;
                let mut forest = base_forest.clone();
                forest.max_depth = (base_forest.max_depth as i64 + dd).max(1) as usize;
                stage2.push((pca, forest));
            }
        }
    }
    let stage2_scores: Vec<CandidateScore> = stage2
        .into_par_iter()
        .map(|(pca, forest)| {
            let (mean, std, sparsity) = evaluate(train, &pca, &forest, &folds, spec.scoring)?;
            Ok(CandidateScore {
                stage: 2,
                pca,
                forest,
                mean_score: mean,
                std_score: std,
                mean_sparsity: sparsity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    table.extend(stage2_scores);

    let winner = select_best(&table);
    Ok(SearchReport {
        winner,
        table,
        scoring: spec.scoring,
        cv_k: spec.cv_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra_io::SpectralAxis;
    use ndarray::Array2;

    fn score(mean: f64, sparsity: f64) -> CandidateScore {
        CandidateScore {
            stage: 1,
            pca: SparsePcaConfig::default(),
            forest: ForestConfig::default(),
            mean_score: mean,
            std_score: 0.0,
            mean_sparsity: sparsity,
        }
    }

    #[test]
    fn tie_goes_to_higher_sparsity() {
        let table = vec![score(0.9, 0.2), score(0.9, 0.6), score(0.8, 0.9)];
        assert_eq!(select_best(&table), 1);
    }

    #[test]
    fn higher_score_beats_sparsity() {
        let table = vec![score(0.8, 0.9), score(0.95, 0.0)];
        assert_eq!(select_best(&table), 1);
    }

    fn separable_dataset(n: usize, p: usize) -> SpectraDataset {
        let axis = SpectralAxis::new((0..p).map(|j| 400.0 + j as f64).collect(), "").unwrap();
        let intensities = Array2::from_shape_fn((n, p), |(i, j)| {
            let class = (i % 2) as f64;
            let bump = if j >= p / 4 && j < p / 2 { 1.0 } else { 0.0 };
            let anti = if j >= p / 2 && j < 3 * p / 4 { 1.0 } else { 0.0 };
            class * bump + (1.0 - class) * anti + 0.01 * ((i * p + j) % 7) as f64
        });
        SpectraDataset::new(
            axis,
            intensities,
            (0..n).map(|i| i % 2).collect(),
            None,
            vec!["a".into(), "b".into()],
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn search_is_deterministic_and_finds_a_separating_config() {
        let ds = separable_dataset(40, 16);
        let spec = SearchSpec {
            n_samples: 4,
            distributions: ParamDistributions {
                n_components: (2, 4),
                alpha: (0.0, 0.1),
                n_trees: (10, 20),
                max_depth: (1, 5),
                min_leaf: (1, 1),
            },
            grid: GridStage {
                alpha_factors: vec![1.0],
                component_deltas: vec![0],
                depth_deltas: vec![0, 1],
            },
            cv_mode: CvMode::StratifiedKFold,
            cv_k: 2,
            scoring: Scoring::Accuracy,
            seed: 5,
        };
        let a = hyperparam_search(&ds, &spec).unwrap();
        let b = hyperparam_search(&ds, &spec).unwrap();
        assert_eq!(a.winner, b.winner);
        assert_eq!(
            serde_json::to_string(&a.table).unwrap(),
            serde_json::to_string(&b.table).unwrap()
        );
        let best = a.best();
        let max_score = a
            .table
            .iter()
            .map(|c| c.mean_score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.mean_score, max_score);
        assert!(best.mean_score >= 0.9, "winner score {}", best.mean_score);
    }
}
