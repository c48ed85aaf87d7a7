//! Run configuration: one TOML file drives every subcommand; command-line
//! flags override individual keys. A single global seed is hashed with
//! each stage name so stages stay independent under one user-visible
//! seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use shapca_core::consistency::{ClassifierChoice, ProtocolMethod};
use shapca_core::models::{ForestConfig, LinearProbConfig};
use shapca_core::preprocess::{NormalizeMode, PreprocessConfig};
use shapca_core::render::{PanelLayout, RenderSpec};
use shapca_core::shap::BackgroundSelection;
use shapca_core::spectra_io::{SplitMode, SplitSpec};
use shapca_core::sparse_pca::SparsePcaConfig;
use shapca_core::synth::SynthConfig;

/// FNV-1a over the global seed and the stage name.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in global.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for b in stage.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSection {
    #[serde(default = "default_split_mode")]
    pub mode: SplitMode,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_split_mode() -> SplitMode {
    SplitMode::GroupLevel
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            mode: default_split_mode(),
            test_fraction: default_test_fraction(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSection {
    pub crop_min: f64,
    pub crop_max: f64,
    pub savgol_window: usize,
    pub savgol_polyorder: usize,
    pub baseline_lambda: f64,
    pub baseline_p: f64,
    pub baseline_max_iter: usize,
    pub normalize: NormalizeMode,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        Self {
            crop_min: d.crop_min,
            crop_max: d.crop_max,
            savgol_window: d.savgol_window,
            savgol_polyorder: d.savgol_polyorder,
            baseline_lambda: d.baseline_lambda,
            baseline_p: d.baseline_p,
            baseline_max_iter: d.baseline_max_iter,
            normalize: d.normalize,
        }
    }
}

impl PreprocessSection {
    pub fn to_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            crop_min: self.crop_min,
            crop_max: self.crop_max,
            savgol_window: self.savgol_window,
            savgol_polyorder: self.savgol_polyorder,
            baseline_lambda: self.baseline_lambda,
            baseline_p: self.baseline_p,
            baseline_max_iter: self.baseline_max_iter,
            normalize: self.normalize,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsePcaSection {
    pub n_components: usize,
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SparsePcaSection {
    fn default() -> Self {
        let d = SparsePcaConfig::default();
        Self {
            n_components: d.n_components,
            alpha: d.alpha,
            max_iter: d.max_iter,
            tol: d.tol,
        }
    }
}

impl SparsePcaSection {
    pub fn to_config(&self, seed: u64) -> SparsePcaConfig {
        SparsePcaConfig {
            n_components: self.n_components,
            alpha: self.alpha,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Forest,
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSection {
    pub kind: ClassifierKind,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: Option<usize>,
    pub l2_strength: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let f = ForestConfig::default();
        let l = LinearProbConfig::default();
        Self {
            kind: ClassifierKind::Forest,
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            min_leaf: f.min_leaf,
            max_features: f.max_features,
            l2_strength: l.l2_strength,
            epochs: l.epochs,
            learning_rate: l.learning_rate,
        }
    }
}

impl ClassifierSection {
    pub fn forest_config(&self, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            max_features: self.max_features,
            seed,
        }
    }

    pub fn linear_config(&self) -> LinearProbConfig {
        LinearProbConfig {
            l2_strength: self.l2_strength,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
        }
    }

    pub fn to_choice(&self, seed: u64) -> ClassifierChoice {
        match self.kind {
            ClassifierKind::Forest => ClassifierChoice::Forest(self.forest_config(seed)),
            ClassifierKind::Linear => ClassifierChoice::Linear(self.linear_config()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    Tree,
    Kernel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerSection {
    pub kind: ExplainerKind,
    /// training_set or kmeans.
    pub background: String,
    pub kmeans_centroids: usize,
    /// 0 means the default 2K + 2048 sampled coalitions.
    pub n_coalitions: usize,
    pub exhaustive: bool,
}

impl Default for ExplainerSection {
    fn default() -> Self {
        Self {
            kind: ExplainerKind::Tree,
            background: "training_set".into(),
            kmeans_centroids: 100,
            n_coalitions: 0,
            exhaustive: false,
        }
    }
}

impl ExplainerSection {
    pub fn background_selection(&self) -> BackgroundSelection {
        if self.background == "kmeans" {
            BackgroundSelection::KMeansSummary(self.kmeans_centroids)
        } else {
            BackgroundSelection::TrainingSet
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n_samples: usize,
    pub n_blocks: usize,
    pub block_width: f64,
    pub noise: f64,
    pub n_classes: usize,
    pub n_features: usize,
    pub group_size: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_samples: d.n_samples,
            n_blocks: d.n_blocks,
            block_width: d.block_width,
            noise: d.noise,
            n_classes: d.n_classes,
            n_features: d.n_features,
            group_size: d.group_size,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_samples: self.n_samples,
            n_blocks: self.n_blocks,
            block_width: self.block_width,
            noise: self.noise,
            n_classes: self.n_classes,
            n_features: self.n_features,
            group_size: self.group_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub enabled: bool,
    pub n_samples: usize,
    pub cv: String,
    pub k: usize,
    pub scoring: String,
    pub n_components_range: (usize, usize),
    pub alpha_range: (f64, f64),
    pub n_trees_range: (usize, usize),
    pub max_depth_range: (usize, usize),
    pub min_leaf_range: (usize, usize),
    pub alpha_factors: Vec<f64>,
    pub component_deltas: Vec<i64>,
    pub depth_deltas: Vec<i64>,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            enabled: false,
            n_samples: 8,
            cv: "group_kfold".into(),
            k: 5,
            scoring: "accuracy".into(),
            n_components_range: (4, 12),
            alpha_range: (0.01, 10.0),
            n_trees_range: (30, 150),
            max_depth_range: (3, 10),
            min_leaf_range: (1, 4),
            alpha_factors: vec![0.5, 1.0, 2.0],
            component_deltas: vec![-2, 0, 2],
            depth_deltas: vec![-1, 0, 1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSection {
    pub width: u32,
    pub height: u32,
    pub alpha_min: f64,
    pub layout: PanelLayout,
    pub x_label: String,
    pub y_label: String,
}

impl Default for RenderSection {
    fn default() -> Self {
        let d = RenderSpec::default();
        Self {
            width: d.width,
            height: d.height,
            alpha_min: d.alpha_min,
            layout: d.layout,
            x_label: d.x_label,
            y_label: d.y_label,
        }
    }
}

impl RenderSection {
    pub fn to_spec(&self) -> RenderSpec {
        RenderSpec {
            width: self.width,
            height: self.height,
            alpha_min: self.alpha_min,
            layout: self.layout,
            x_label: self.x_label.clone(),
            y_label: self.y_label.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSection {
    pub sample_indices: Vec<usize>,
    /// Explain this class instead of each sample's predicted class.
    pub class_override: Option<usize>,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            sample_indices: vec![0],
            class_override: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencySection {
    pub k: usize,
    pub methods: Vec<ProtocolMethod>,
}

impl Default for ConsistencySection {
    fn default() -> Self {
        Self {
            k: 5,
            methods: vec![ProtocolMethod::Shapca, ProtocolMethod::RawShap],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub split: SplitSection,
    pub preprocess: PreprocessSection,
    pub sparse_pca: SparsePcaSection,
    pub classifier: ClassifierSection,
    pub explainer: ExplainerSection,
    pub synth: SynthSection,
    pub search: SearchSection,
    pub render: RenderSection,
    pub explain: ExplainSection,
    pub consistency: ConsistencySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            output_dir: PathBuf::from("out"),
            dataset: None,
            split: SplitSection::default(),
            preprocess: PreprocessSection::default(),
            sparse_pca: SparsePcaSection::default(),
            classifier: ClassifierSection::default(),
            explainer: ExplainerSection::default(),
            synth: SynthSection::default(),
            search: SearchSection::default(),
            render: RenderSection::default(),
            explain: ExplainSection::default(),
            consistency: ConsistencySection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            mode: self.split.mode,
            test_fraction: self.split.test_fraction,
            seed: stage_seed(self.seed, "split"),
        }
    }

    /// Dataset path: explicit key, else the synth output in output_dir.
    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.output_dir.join("dataset.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.sparse_pca.n_components, 10);
        assert_eq!(cfg.classifier.kind, ClassifierKind::Forest);
    }

    #[test]
    fn stage_seeds_differ_by_stage_and_seed() {
        let a = stage_seed(1, "split");
        let b = stage_seed(1, "pca");
        let c = stage_seed(2, "split");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stage_seed(1, "split"));
    }

    #[test]
    fn full_config_round_trips() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.sparse_pca.alpha, cfg.sparse_pca.alpha);
        assert_eq!(back.consistency.methods.len(), 2);
    }
}
