//! Back-projection of component-space attributions and component values
//! onto the original wavenumber axis.
//!
//! Importance tracks distribute component attributions through the
//! absolute loadings, so opacity stays sign-consistent; value tracks use
//! the signed loadings. Global explanations aggregate per predicted
//! class, local explanations split one sample's attribution into
//! supporting and opposing evidence.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapcaError};
use crate::shap::AttributionTensor;
use crate::sparse_pca::ComponentValues;

/// Class-level importance and relative-value tracks over the P
/// wavenumbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalExplanation {
    pub psi: Vec<f64>,
    pub pc_track: Vec<f64>,
    pub n_samples_used: usize,
}

/// Global back-projection result for one class; classes with no
/// predicted samples carry the empty marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassGlobal {
    Explained(GlobalExplanation),
    EmptyClass,
}

impl ClassGlobal {
    pub fn as_explained(&self) -> Option<&GlobalExplanation> {
        match self {
            ClassGlobal::Explained(g) => Some(g),
            ClassGlobal::EmptyClass => None,
        }
    }
}

/// Instance-level tracks: supporting evidence, opposing evidence, and the
/// signed component-value projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub psi_pos: Vec<f64>,
    pub psi_neg: Vec<f64>,
    pub pc_track: Vec<f64>,
    pub predicted_class: usize,
    pub sample_index: usize,
}

fn check_shapes(
    phi: &AttributionTensor,
    cvn: &ComponentValues,
    loadings: &Array2<f64>,
) -> Result<()> {
    let k = loadings.nrows();
    if phi.n_components() != k {
        return Err(ShapcaError::DimensionMismatch(format!(
            "attributions cover {} components, loadings have {k} rows",
            phi.n_components()
        )));
    }
    if cvn.n_components() != k {
        return Err(ShapcaError::DimensionMismatch(format!(
            "component values cover {} components, loadings have {k} rows",
            cvn.n_components()
        )));
    }
    if cvn.n_samples() != phi.n_samples() {
        return Err(ShapcaError::DimensionMismatch(format!(
            "{} attribution samples vs {} component-value samples",
            phi.n_samples(),
            cvn.n_samples()
        )));
    }
    Ok(())
}

/// Class-wise aggregation and back-projection: samples predicted as each
/// class have their class-row attributions averaged, distributed over the
/// wavenumbers through |W|; the averaged normalized component values are
/// projected through the signed loadings as the value track.
pub fn global_explain(
    phi: &AttributionTensor,
    yhat: &[usize],
    cvn: &ComponentValues,
    loadings: &Array2<f64>,
) -> Result<Vec<ClassGlobal>> {
    check_shapes(phi, cvn, loadings)?;
    if yhat.len() != phi.n_samples() {
        return Err(ShapcaError::DimensionMismatch(format!(
            "{} predictions vs {} samples",
            yhat.len(),
            phi.n_samples()
        )));
    }
    let k = loadings.nrows();
    let p = loadings.ncols();
    let n_classes = phi.n_classes();
    let abs_loadings = loadings.mapv(f64::abs);

    let mut out = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let members: Vec<usize> = (0..phi.n_samples()).filter(|&i| yhat[i] == class).collect();
        if members.is_empty() {
            out.push(ClassGlobal::EmptyClass);
            continue;
        }
        let m = members.len() as f64;
        let mut phi_mean = Array1::<f64>::zeros(k);
        let mut pc_mean = Array1::<f64>::zeros(k);
        for &i in &members {
            for comp in 0..k {
                phi_mean[comp] += phi.phi[[i, comp, class]] / m;
                pc_mean[comp] += cvn.values[[i, comp]] / m;
            }
        }
        let mut psi = vec![0.0; p];
        let mut pc_track = vec![0.0; p];
        for comp in 0..k {
            for j in 0..p {
                psi[j] += phi_mean[comp] * abs_loadings[[comp, j]];
                pc_track[j] += pc_mean[comp] * loadings[[comp, j]];
            }
        }
        out.push(ClassGlobal::Explained(GlobalExplanation {
            psi,
            pc_track,
            n_samples_used: members.len(),
        }));
    }
    Ok(out)
}

/// Sign-split back-projection for one sample and class.
pub fn local_explain(
    phi: &AttributionTensor,
    sample: usize,
    class: usize,
    cvn_row: &[f64],
    loadings: &Array2<f64>,
) -> Result<LocalExplanation> {
    let k = loadings.nrows();
    let p = loadings.ncols();
    if sample >= phi.n_samples() {
        return Err(ShapcaError::IndexOutOfRange(format!(
            "sample {sample} out of {} samples",
            phi.n_samples()
        )));
    }
    if class >= phi.n_classes() {
        return Err(ShapcaError::IndexOutOfRange(format!(
            "class {class} out of {} classes",
            phi.n_classes()
        )));
    }
    if phi.n_components() != k || cvn_row.len() != k {
        return Err(ShapcaError::DimensionMismatch(format!(
            "components: attributions {}, row {}, loadings {k}",
            phi.n_components(),
            cvn_row.len()
        )));
    }

    let mut psi_pos = vec![0.0; p];
    let mut psi_neg = vec![0.0; p];
    let mut pc_track = vec![0.0; p];
    for comp in 0..k {
        let v = phi.phi[[sample, comp, class]];
        let (pos, neg) = if v > 0.0 { (v, 0.0) } else { (0.0, v) };
        let pc = cvn_row[comp];
        for j in 0..p {
            let w = loadings[[comp, j]];
            let aw = w.abs();
            psi_pos[j] += pos * aw;
            psi_neg[j] += neg * aw;
            pc_track[j] += pc * w;
        }
    }
    Ok(LocalExplanation {
        psi_pos,
        psi_neg,
        pc_track,
        predicted_class: class,
        sample_index: sample,
    })
}

/// Outcome of the decomposition-completeness check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub pass: bool,
    pub max_deviation: f64,
}

/// Verifies that the split tracks recompose: psi_pos + psi_neg must equal
/// the signed attribution pushed through |W|, within 1e-12.
pub fn combine_sanity(
    le: &LocalExplanation,
    loadings: &Array2<f64>,
    phi_row: &[f64],
) -> SanityReport {
    let k = loadings.nrows();
    let p = loadings.ncols();
    let mut expect = vec![0.0; p];
    for comp in 0..k.min(phi_row.len()) {
        for j in 0..p {
            expect[j] += phi_row[comp] * loadings[[comp, j]].abs();
        }
    }
    let mut max_dev = 0.0f64;
    for j in 0..p {
        let got = le.psi_pos[j] + le.psi_neg[j];
        max_dev = max_dev.max((got - expect[j]).abs());
    }
    SanityReport {
        pass: max_dev <= 1e-12,
        max_deviation: max_dev,
    }
}

/// Serialized explanation document for one class panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalExplanationDoc {
    pub class_name: String,
    pub axis: Vec<f64>,
    pub psi: Vec<f64>,
    pub pc_track: Vec<f64>,
    pub n_samples_used: usize,
    pub empty_class: bool,
    pub mean_spectrum: Vec<f64>,
}

/// Serialized explanation document for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalExplanationDoc {
    pub sample_id: String,
    pub sample_index: usize,
    pub class_name: String,
    pub axis: Vec<f64>,
    pub psi_pos: Vec<f64>,
    pub psi_neg: Vec<f64>,
    pub pc_track: Vec<f64>,
    pub spectrum: Vec<f64>,
}
