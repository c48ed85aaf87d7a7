//! Sparse-PCA spectral explanation pipeline: preprocessing, sparse
//! component extraction, tree-ensemble classification, exact Shapley
//! attribution in component space, and back-projection of attributions
//! onto the original wavenumber axis.

pub mod backproject;
pub mod consistency;
pub mod error;
pub mod models;
pub mod preprocess;
pub mod render;
pub mod shap;
pub mod sparse_pca;
pub mod spectra_io;
pub mod synth;

pub use error::{Result, ShapcaError};
