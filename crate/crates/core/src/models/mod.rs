//! Classifiers over component values: a random forest trained with Gini
//! splits (primary path) and an L2-regularized multinomial logistic
//! model (the model-agnostic explainer path), plus the two-stage
//! hyperparameter search.

mod forest;
mod linear;
mod metrics;
mod search;

pub use forest::{argmax_rows, fit_forest, fit_forest_matrix, ForestConfig, ForestModel, Tree, TreeNode};
pub use linear::{fit_linear, LinearProbConfig, LinearProbModel};
pub use metrics::{accuracy, macro_f1};
pub use search::{
    hyperparam_search, CandidateScore, CvMode, GridStage, ParamDistributions, Scoring,
    SearchReport, SearchSpec,
};
