//! Subcommand implementations. Every command reads the run config,
//! writes its artifacts under the output directory, and refuses to
//! overwrite existing outputs unless forced. File writes go through a
//! temp-file rename so re-runs replace artifacts atomically.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use shapca_core::backproject::{
    global_explain, local_explain, ClassGlobal, GlobalExplanationDoc, LocalExplanationDoc,
};
use shapca_core::consistency::{
    reports_to_csv, run_protocol, ConsistencyReport, ProtocolConfig,
};
use shapca_core::models::{
    accuracy, argmax_rows, fit_forest_matrix, fit_linear, hyperparam_search, macro_f1,
    CvMode, ForestModel, GridStage, LinearProbModel, ParamDistributions, Scoring, SearchSpec,
};
use shapca_core::preprocess::run_chain;
use shapca_core::render::{render_global, render_local, tracks_csv};
use shapca_core::shap::{
    kernel_shap, tree_shap, AttributionTensor, BackgroundSet, CoalitionBudget,
};
use shapca_core::sparse_pca::{self, ComponentNormalizer, ComponentValues, SparsePcaModel};
use shapca_core::spectra_io::{self, SpectraDataset};
use shapca_core::synth;

use crate::config::{stage_seed, ClassifierKind, ExplainerKind, RunConfig};

pub struct Ctx {
    pub config: RunConfig,
    pub force: bool,
}

type CmdResult = Result<(), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Refuses if any target exists and --force was not given.
fn ensure_writable(paths: &[PathBuf], force: bool) -> CmdResult {
    if force {
        return Ok(());
    }
    let existing: Vec<String> = paths
        .iter()
        .filter(|p| p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if existing.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "refusing to overwrite existing outputs (pass --force): {}",
            existing.join(", ")
        ))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(err)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    Forest(ForestModel),
    Linear(LinearProbModel),
}

impl ClassifierModel {
    fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>, String> {
        match self {
            ClassifierModel::Forest(m) => m.predict_proba_matrix(x).map_err(err),
            ClassifierModel::Linear(m) => m.predict_proba_matrix(x).map_err(err),
        }
    }
}

/// Everything explain commands need, serialized by fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub pca: SparsePcaModel,
    pub classifier: ClassifierModel,
    pub normalizer: ComponentNormalizer,
    pub class_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FitMetrics {
    accuracy: f64,
    macro_f1: f64,
    n_train: usize,
    n_test: usize,
    n_components: usize,
    sparsity_fraction: f64,
    pca_converged: bool,
    degenerate_components: Vec<usize>,
}

pub fn run_synth(ctx: &Ctx) -> CmdResult {
    let out = &ctx.config.output_dir;
    let dataset_path = out.join("dataset.csv");
    let latents_path = out.join("latents.json");
    ensure_writable(&[dataset_path.clone(), latents_path.clone()], ctx.force)?;

    let cfg = ctx
        .config
        .synth
        .to_config(stage_seed(ctx.config.seed, "synth"));
    let (ds, latents) = synth::generate(&cfg).map_err(err)?;
    write_atomic(&dataset_path, spectra_io::dataset_to_csv(&ds).as_bytes())?;
    write_atomic(&latents_path, latents.to_json().map_err(err)?.as_bytes())?;
    println!(
        "synth: wrote {} samples x {} wavenumbers to {}",
        ds.n_samples(),
        ds.n_features(),
        dataset_path.display()
    );
    Ok(())
}

fn load_and_split(ctx: &Ctx) -> Result<(SpectraDataset, SpectraDataset), String> {
    let ds = spectra_io::load_csv(ctx.config.dataset_path()).map_err(err)?;
    let (train, test) = spectra_io::split(&ds, &ctx.config.split_spec()).map_err(err)?;
    let pp = ctx.config.preprocess.to_config();
    let train = run_chain(&train, &pp).map_err(err)?;
    let test = run_chain(&test, &pp).map_err(err)?;
    Ok((train, test))
}

pub fn run_fit(ctx: &Ctx) -> CmdResult {
    let out = &ctx.config.output_dir;
    let model_path = out.join("model.json");
    let metrics_path = out.join("metrics.json");
    let train_cache = out.join("train.json");
    let test_cache = out.join("test.json");
    let search_path = out.join("search_report.csv");
    ensure_writable(
        &[
            model_path.clone(),
            metrics_path.clone(),
            train_cache.clone(),
            test_cache.clone(),
        ],
        ctx.force,
    )?;

    let (train, test) = load_and_split(ctx)?;

    let mut pca_cfg = ctx
        .config
        .sparse_pca
        .to_config(stage_seed(ctx.config.seed, "pca"));
    let mut forest_cfg = ctx
        .config
        .classifier
        .forest_config(stage_seed(ctx.config.seed, "forest"));

    if ctx.config.search.enabled {
        let s = &ctx.config.search;
        let spec = SearchSpec {
            n_samples: s.n_samples,
            distributions: ParamDistributions {
                n_components: s.n_components_range,
                alpha: s.alpha_range,
                n_trees: s.n_trees_range,
                max_depth: s.max_depth_range,
                min_leaf: s.min_leaf_range,
            },
            grid: GridStage {
                alpha_factors: s.alpha_factors.clone(),
                component_deltas: s.component_deltas.clone(),
                depth_deltas: s.depth_deltas.clone(),
            },
            cv_mode: if s.cv == "stratified_kfold" {
                CvMode::StratifiedKFold
            } else {
                CvMode::GroupKFold
            },
            cv_k: s.k,
            scoring: if s.scoring == "macro_f1" {
                Scoring::MacroF1
            } else {
                Scoring::Accuracy
            },
            seed: stage_seed(ctx.config.seed, "search"),
        };
        let report = hyperparam_search(&train, &spec).map_err(err)?;
        write_atomic(&search_path, report.to_csv().as_bytes())?;
        let best = report.best();
        pca_cfg.n_components = best.pca.n_components;
        pca_cfg.alpha = best.pca.alpha;
        forest_cfg.n_trees = best.forest.n_trees;
        forest_cfg.max_depth = best.forest.max_depth;
        forest_cfg.min_leaf = best.forest.min_leaf;
        println!(
            "fit: search winner k={} alpha={} trees={} depth={} (cv score {:.3})",
            best.pca.n_components,
            best.pca.alpha,
            best.forest.n_trees,
            best.forest.max_depth,
            best.mean_score
        );
    }

    pca_cfg.n_components = pca_cfg
        .n_components
        .min(train.n_samples().min(train.n_features()));
    let pca = sparse_pca::fit(&train.intensities, &pca_cfg).map_err(err)?;
    let cv_tr = sparse_pca::transform(&pca, &train.intensities).map_err(err)?;
    let cv_te = sparse_pca::transform(&pca, &test.intensities).map_err(err)?;
    let normalizer = ComponentNormalizer::fit(&cv_tr).map_err(err)?;

    let classifier = match ctx.config.classifier.kind {
        ClassifierKind::Forest => ClassifierModel::Forest(
            fit_forest_matrix(&cv_tr.values, &train.labels, &forest_cfg).map_err(err)?,
        ),
        ClassifierKind::Linear => ClassifierModel::Linear(
            fit_linear(&cv_tr, &train.labels, &ctx.config.classifier.linear_config())
                .map_err(err)?,
        ),
    };

    let probs = classifier.predict_proba(&cv_te.values)?;
    let yhat = argmax_rows(&probs);
    let metrics = FitMetrics {
        accuracy: accuracy(&test.labels, &yhat),
        macro_f1: macro_f1(&test.labels, &yhat, test.n_classes()),
        n_train: train.n_samples(),
        n_test: test.n_samples(),
        n_components: pca.n_components(),
        sparsity_fraction: pca.sparsity_fraction,
        pca_converged: pca.converged,
        degenerate_components: pca.degenerate_components.clone(),
    };

    let bundle = ModelBundle {
        pca,
        classifier,
        normalizer,
        class_names: train.class_names.clone(),
    };
    write_atomic(
        &model_path,
        serde_json::to_string(&bundle).map_err(err)?.as_bytes(),
    )?;
    write_atomic(
        &metrics_path,
        serde_json::to_string_pretty(&metrics)
            .map_err(err)?
            .as_bytes(),
    )?;
    write_atomic(&train_cache, train.to_json().map_err(err)?.as_bytes())?;
    write_atomic(&test_cache, test.to_json().map_err(err)?.as_bytes())?;
    println!(
        "fit: accuracy {:.3}, macro F1 {:.3} on {} held-out samples ({} components, sparsity {:.2})",
        metrics.accuracy,
        metrics.macro_f1,
        metrics.n_test,
        metrics.n_components,
        metrics.sparsity_fraction
    );
    Ok(())
}

struct Fitted {
    bundle: ModelBundle,
    train: SpectraDataset,
    test: SpectraDataset,
}

fn load_fitted(ctx: &Ctx) -> Result<Fitted, String> {
    let out = &ctx.config.output_dir;
    let bundle: ModelBundle = serde_json::from_str(
        &std::fs::read_to_string(out.join("model.json"))
            .map_err(|e| format!("missing model.json (run fit first): {e}"))?,
    )
    .map_err(err)?;
    let train = SpectraDataset::from_json(
        &std::fs::read_to_string(out.join("train.json")).map_err(err)?,
    )
    .map_err(err)?;
    let test = SpectraDataset::from_json(
        &std::fs::read_to_string(out.join("test.json")).map_err(err)?,
    )
    .map_err(err)?;
    Ok(Fitted {
        bundle,
        train,
        test,
    })
}

/// Attributions for the test cache rows under the configured explainer.
fn explain_attributions(
    ctx: &Ctx,
    fitted: &Fitted,
    cv_te: &ComponentValues,
    cv_tr: &ComponentValues,
) -> Result<AttributionTensor, String> {
    match (&fitted.bundle.classifier, ctx.config.explainer.kind) {
        (ClassifierModel::Forest(forest), ExplainerKind::Tree) => {
            tree_shap(forest, cv_te).map_err(err)
        }
        (ClassifierModel::Linear(_), ExplainerKind::Tree) => Err(
            "the tree explainer needs a forest classifier; set explainer.kind = \"kernel\""
                .into(),
        ),
        (classifier, ExplainerKind::Kernel) => {
            let seed = stage_seed(ctx.config.seed, "kernel");
            let background = BackgroundSet::select(
                cv_tr,
                ctx.config.explainer.background_selection(),
                seed,
            )
            .map_err(err)?;
            let budget = if ctx.config.explainer.exhaustive {
                CoalitionBudget::Exhaustive
            } else if ctx.config.explainer.n_coalitions > 0 {
                CoalitionBudget::Sampled(ctx.config.explainer.n_coalitions)
            } else {
                CoalitionBudget::Sampled(2 * cv_te.n_components() + 2048)
            };
            match classifier {
                ClassifierModel::Forest(m) => {
                    kernel_shap(m, &cv_te.values, &background, budget, seed).map_err(err)
                }
                ClassifierModel::Linear(m) => {
                    kernel_shap(m, &cv_te.values, &background, budget, seed).map_err(err)
                }
            }
        }
    }
}

fn predicted_mean_spectra(test: &SpectraDataset, yhat: &[usize]) -> Vec<Option<Vec<f64>>> {
    let p = test.n_features();
    (0..test.n_classes())
        .map(|class| {
            let members: Vec<usize> = (0..test.n_samples())
                .filter(|&i| yhat[i] == class)
                .collect();
            if members.is_empty() {
                return None;
            }
            let mut mean = vec![0.0; p];
            for &i in &members {
                for (j, slot) in mean.iter_mut().enumerate() {
                    *slot += test.intensities[[i, j]] / members.len() as f64;
                }
            }
            Some(mean)
        })
        .collect()
}

pub fn run_explain_global(ctx: &Ctx) -> CmdResult {
    let out = &ctx.config.output_dir;
    let fitted = load_fitted(ctx)?;
    let expl_dir = out.join("explanations");

    let cv_tr = sparse_pca::transform(&fitted.bundle.pca, &fitted.train.intensities).map_err(err)?;
    let cv_te = sparse_pca::transform(&fitted.bundle.pca, &fitted.test.intensities).map_err(err)?;
    let probs = fitted.bundle.classifier.predict_proba(&cv_te.values)?;
    let yhat = argmax_rows(&probs);
    let phi = explain_attributions(ctx, &fitted, &cv_te, &cv_tr)?;
    let cvn = fitted.bundle.normalizer.apply(&cv_te);
    let globals = global_explain(&phi, &yhat, &cvn, &fitted.bundle.pca.loadings).map_err(err)?;
    let mean_spectra = predicted_mean_spectra(&fitted.test, &yhat);

    let mut targets = vec![out.join("attributions.json"), out.join("attributions.csv")];
    for name in &fitted.bundle.class_names {
        targets.push(expl_dir.join(format!("global_{name}.json")));
    }
    ensure_writable(&targets, ctx.force)?;

    write_atomic(
        &out.join("attributions.json"),
        phi.to_json().map_err(err)?.as_bytes(),
    )?;
    write_atomic(&out.join("attributions.csv"), phi.to_csv().as_bytes())?;

    let axis = fitted.test.axis.values().to_vec();
    for (class, name) in fitted.bundle.class_names.iter().enumerate() {
        let (psi, pc_track, n_used, empty) = match &globals[class] {
            ClassGlobal::Explained(g) => {
                (g.psi.clone(), g.pc_track.clone(), g.n_samples_used, false)
            }
            ClassGlobal::EmptyClass => (vec![0.0; axis.len()], vec![0.0; axis.len()], 0, true),
        };
        let doc = GlobalExplanationDoc {
            class_name: name.clone(),
            axis: axis.clone(),
            psi,
            pc_track,
            n_samples_used: n_used,
            empty_class: empty,
            mean_spectrum: mean_spectra[class].clone().unwrap_or_default(),
        };
        write_atomic(
            &expl_dir.join(format!("global_{name}.json")),
            serde_json::to_string(&doc).map_err(err)?.as_bytes(),
        )?;
    }

    let spec = ctx.config.render.to_spec();
    let docs = render_global(
        &globals,
        &fitted.bundle.class_names,
        &axis,
        &mean_spectra,
        &spec,
    )
    .map_err(err)?;
    for (name, svg) in docs {
        write_atomic(&expl_dir.join(format!("{name}.svg")), svg.as_bytes())?;
    }
    println!(
        "explain-global: wrote per-class tracks and figures to {}",
        expl_dir.display()
    );
    Ok(())
}

pub fn run_explain_local(ctx: &Ctx) -> CmdResult {
    let out = &ctx.config.output_dir;
    let fitted = load_fitted(ctx)?;
    let expl_dir = out.join("explanations");

    let cv_tr = sparse_pca::transform(&fitted.bundle.pca, &fitted.train.intensities).map_err(err)?;
    let cv_te = sparse_pca::transform(&fitted.bundle.pca, &fitted.test.intensities).map_err(err)?;
    let probs = fitted.bundle.classifier.predict_proba(&cv_te.values)?;
    let yhat = argmax_rows(&probs);
    let phi = explain_attributions(ctx, &fitted, &cv_te, &cv_tr)?;
    let cvn = fitted.bundle.normalizer.apply(&cv_te);

    let indices = ctx.config.explain.sample_indices.clone();
    let targets: Vec<PathBuf> = indices
        .iter()
        .flat_map(|i| {
            vec![
                expl_dir.join(format!("local_{i}.json")),
                expl_dir.join(format!("local_{i}.svg")),
            ]
        })
        .collect();
    ensure_writable(&targets, ctx.force)?;

    let axis = fitted.test.axis.values().to_vec();
    let spec = ctx.config.render.to_spec();
    for &i in &indices {
        if i >= fitted.test.n_samples() {
            return Err(format!(
                "sample index {i} out of range ({} test samples)",
                fitted.test.n_samples()
            ));
        }
        let class = ctx.config.explain.class_override.unwrap_or(yhat[i]);
        let row: Vec<f64> = cvn.values.row(i).to_vec();
        let le = local_explain(&phi, i, class, &row, &fitted.bundle.pca.loadings).map_err(err)?;
        let spectrum: Vec<f64> = fitted.test.intensities.row(i).to_vec();
        let class_name = fitted.bundle.class_names[class].clone();
        let doc = LocalExplanationDoc {
            sample_id: fitted.test.sample_ids[i].clone(),
            sample_index: i,
            class_name: class_name.clone(),
            axis: axis.clone(),
            psi_pos: le.psi_pos.clone(),
            psi_neg: le.psi_neg.clone(),
            pc_track: le.pc_track.clone(),
            spectrum: spectrum.clone(),
        };
        write_atomic(
            &expl_dir.join(format!("local_{i}.json")),
            serde_json::to_string(&doc).map_err(err)?.as_bytes(),
        )?;
        let svg = render_local(&le, &axis, &spectrum, &class_name, &spec).map_err(err)?;
        write_atomic(&expl_dir.join(format!("local_{i}.svg")), svg.as_bytes())?;
    }
    println!(
        "explain-local: wrote {} sample explanation(s) to {}",
        indices.len(),
        expl_dir.display()
    );
    Ok(())
}

pub fn run_consistency(ctx: &Ctx) -> CmdResult {
    let out = &ctx.config.output_dir;
    let csv_path = out.join("consistency_report.csv");
    let json_path = out.join("consistency_report.json");
    ensure_writable(&[csv_path.clone(), json_path.clone()], ctx.force)?;

    let (train, holdout) = load_and_split(ctx)?;
    let seed = stage_seed(ctx.config.seed, "consistency");
    let pcfg = ProtocolConfig {
        pca: ctx.config.sparse_pca.to_config(seed),
        classifier: ctx.config.classifier.to_choice(seed),
        kernel_coalitions: if ctx.config.explainer.n_coalitions > 0 {
            Some(ctx.config.explainer.n_coalitions)
        } else {
            None
        },
    };
    let mut reports: Vec<ConsistencyReport> = Vec::new();
    for &method in &ctx.config.consistency.methods {
        let report = run_protocol(
            &train,
            &holdout,
            &pcfg,
            method,
            ctx.config.consistency.k,
            seed,
        )
        .map_err(err)?;
        println!(
            "consistency [{}]: global cosine means {:?}, local cosine {:?}",
            report.method,
            report
                .per_class_global
                .iter()
                .map(|c| c.cosine.mean)
                .collect::<Vec<_>>(),
            report.local.cosine.mean
        );
        reports.push(report);
    }
    write_atomic(
        &csv_path,
        reports_to_csv(&reports, &train.class_names).as_bytes(),
    )?;
    write_atomic(
        &json_path,
        serde_json::to_string_pretty(&reports)
            .map_err(err)?
            .as_bytes(),
    )?;
    println!("consistency: wrote {}", csv_path.display());
    Ok(())
}

pub fn run_render(ctx: &Ctx) -> CmdResult {
    let out = &ctx.config.output_dir;
    let expl_dir = out.join("explanations");
    if !expl_dir.exists() {
        return Err(format!(
            "no explanations directory at {} (run explain-global / explain-local first)",
            expl_dir.display()
        ));
    }
    let spec = ctx.config.render.to_spec();

    let mut global_docs: Vec<GlobalExplanationDoc> = Vec::new();
    let mut local_docs: Vec<LocalExplanationDoc> = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&expl_dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if !name.ends_with(".json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(err)?;
        if name.starts_with("global_") {
            global_docs.push(serde_json::from_str(&text).map_err(err)?);
        } else if name.starts_with("local_") {
            local_docs.push(serde_json::from_str(&text).map_err(err)?);
        }
    }
    if global_docs.is_empty() && local_docs.is_empty() {
        return Err("no explanation documents found to render".into());
    }

    if !global_docs.is_empty() {
        let axis = global_docs[0].axis.clone();
        let class_names: Vec<String> = global_docs.iter().map(|d| d.class_name.clone()).collect();
        let globals: Vec<ClassGlobal> = global_docs
            .iter()
            .map(|d| {
                if d.empty_class {
                    ClassGlobal::EmptyClass
                } else {
                    ClassGlobal::Explained(shapca_core::backproject::GlobalExplanation {
                        psi: d.psi.clone(),
                        pc_track: d.pc_track.clone(),
                        n_samples_used: d.n_samples_used,
                    })
                }
            })
            .collect();
        let spectra: Vec<Option<Vec<f64>>> = global_docs
            .iter()
            .map(|d| {
                if d.empty_class {
                    None
                } else {
                    Some(d.mean_spectrum.clone())
                }
            })
            .collect();
        let docs = render_global(&globals, &class_names, &axis, &spectra, &spec).map_err(err)?;
        for (name, svg) in docs {
            write_atomic(&expl_dir.join(format!("{name}.svg")), svg.as_bytes())?;
        }
        for d in &global_docs {
            write_atomic(
                &expl_dir.join(format!("tracks_{}.csv", d.class_name)),
                tracks_csv(&d.axis, &d.psi, &d.pc_track).as_bytes(),
            )?;
        }
    }
    for d in &local_docs {
        let le = shapca_core::backproject::LocalExplanation {
            psi_pos: d.psi_pos.clone(),
            psi_neg: d.psi_neg.clone(),
            pc_track: d.pc_track.clone(),
            predicted_class: 0,
            sample_index: d.sample_index,
        };
        let svg = render_local(&le, &d.axis, &d.spectrum, &d.class_name, &spec).map_err(err)?;
        write_atomic(
            &expl_dir.join(format!("local_{}.svg", d.sample_index)),
            svg.as_bytes(),
        )?;
    }
    println!(
        "render: refreshed {} global and {} local figure(s) in {}",
        global_docs.len(),
        local_docs.len(),
        expl_dir.display()
    );
    Ok(())
}
