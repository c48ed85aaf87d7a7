//! Dataset loading, validation, serialization and splitting.
//!
//! Datasets are CSV files with a fixed schema: the header row names the
//! three id columns and then lists the axis positions; every data row is
//! `sample_id,group_id,label` followed by P intensities. Lines starting
//! with `#` are ignored. The group column may be left empty on every row
//! for datasets that are split at the sample level.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapcaError};

/// Ordered spectral positions (wavenumbers or wavelengths) indexing the
/// P features of every spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralAxis {
    values: Vec<f64>,
    unit_label: String,
}

impl SpectralAxis {
    /// Validates strict monotonicity and a minimum of two points.
    pub fn new(values: Vec<f64>, unit_label: impl Into<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(ShapcaError::AxisTooShort(values.len()));
        }
        for (i, pair) in values.windows(2).enumerate() {
            if !(pair[1] > pair[0]) || !pair[0].is_finite() || !pair[1].is_finite() {
                return Err(ShapcaError::NonMonotoneAxis { position: i + 1 });
            }
        }
        Ok(Self {
            values,
            unit_label: unit_label.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit_label(&self) -> &str {
        &self.unit_label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// N spectra over P axis positions with class labels and optional group
/// (patient) identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraDataset {
    pub axis: SpectralAxis,
    pub intensities: Array2<f64>,
    /// Class index per sample, into `class_names`.
    pub labels: Vec<usize>,
    /// Group identifier per sample; `None` for sample-level datasets.
    pub groups: Option<Vec<String>>,
    pub class_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl SpectraDataset {
    pub fn new(
        axis: SpectralAxis,
        intensities: Array2<f64>,
        labels: Vec<usize>,
        groups: Option<Vec<String>>,
        class_names: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = intensities.dim();
        if p != axis.len() {
            return Err(ShapcaError::DimensionMismatch(format!(
                "intensities have {p} columns but the axis has {} points",
                axis.len()
            )));
        }
        if labels.len() != n {
            return Err(ShapcaError::LengthMismatch {
                labels: labels.len(),
                rows: n,
            });
        }
        if sample_ids.len() != n {
            return Err(ShapcaError::LengthMismatch {
                labels: sample_ids.len(),
                rows: n,
            });
        }
        if class_names.len() < 2 {
            return Err(ShapcaError::SingleClass(class_names.len()));
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(ShapcaError::LengthMismatch {
                    labels: g.len(),
                    rows: n,
                });
            }
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_names.len() {
                return Err(ShapcaError::IndexOutOfRange(format!(
                    "label {l} at row {i} exceeds class count {}",
                    class_names.len()
                )));
            }
        }
        for ((r, c), &v) in intensities.indexed_iter() {
            if !v.is_finite() {
                return Err(ShapcaError::NonNumericCell {
                    row: r,
                    column: c,
                    cell: format!("{v}"),
                });
            }
        }
        Ok(Self {
            axis,
            intensities,
            labels,
            groups,
            class_names,
            sample_ids,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.intensities.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.intensities.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Row subset keeping the full class space.
    pub fn select(&self, idx: &[usize]) -> SpectraDataset {
        let intensities = self.intensities.select(Axis(0), idx);
        SpectraDataset {
            axis: self.axis.clone(),
            intensities,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| idx.iter().map(|&i| g[i].clone()).collect()),
            class_names: self.class_names.clone(),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// JSON envelope used by the CLI cache.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| ShapcaError::NonNumericCell {
            row,
            column,
            cell: cell.to_string(),
        })?;
    if !v.is_finite() {
        return Err(ShapcaError::NonNumericCell {
            row,
            column,
            cell: cell.to_string(),
        });
    }
    Ok(v)
}

/// Parses the fixed CSV schema. Class names are the sorted distinct label
/// strings, so class indices do not depend on row order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SpectraDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, &path.display().to_string())
}

pub fn parse_csv(text: &str, path: &str) -> Result<SpectraDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());

    let (_, header) = lines.next().ok_or_else(|| ShapcaError::CsvFormat {
        path: path.to_string(),
        reason: "file has no header row".into(),
    })?;
    let head: Vec<&str> = header.split(',').collect();
    if head.len() < 5 {
        return Err(ShapcaError::CsvFormat {
            path: path.to_string(),
            reason: format!("header has {} columns, need at least 5", head.len()),
        });
    }
    if head[0].trim() != "sample_id" || head[1].trim() != "group_id" || head[2].trim() != "label" {
        return Err(ShapcaError::UnknownLabelColumn);
    }
    let mut axis_values = Vec::with_capacity(head.len() - 3);
    for (c, cell) in head[3..].iter().enumerate() {
        axis_values.push(parse_cell(cell, 0, c + 3)?);
    }
    let axis = SpectralAxis::new(axis_values, "")?;
    let p = axis.len();

    let mut sample_ids = Vec::new();
    let mut raw_groups: Vec<String> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (row, (_, line)) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != p + 3 {
            return Err(ShapcaError::RaggedRow {
                row: row + 1,
                found: cells.len().saturating_sub(3),
                expected: p,
            });
        }
        sample_ids.push(cells[0].trim().to_string());
        raw_groups.push(cells[1].trim().to_string());
        raw_labels.push(cells[2].trim().to_string());
        for (c, cell) in cells[3..].iter().enumerate() {
            values.push(parse_cell(cell, row + 1, c + 3)?);
        }
        n += 1;
    }

    let groups = if raw_groups.iter().all(|g| g.is_empty()) {
        None
    } else if let Some(row) = raw_groups.iter().position(|g| g.is_empty()) {
        return Err(ShapcaError::InconsistentGroups { row: row + 1 });
    } else {
        Some(raw_groups)
    };

    let mut class_names: Vec<String> = raw_labels.to_vec();
    class_names.sort();
    class_names.dedup();
    if class_names.len() < 2 {
        return Err(ShapcaError::SingleClass(class_names.len()));
    }
    let class_index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| class_index[l.as_str()])
        .collect();

    let intensities = Array2::from_shape_vec((n, p), values)
        .map_err(|e| ShapcaError::DimensionMismatch(e.to_string()))?;
    SpectraDataset::new(axis, intensities, labels, groups, class_names, sample_ids)
}

/// Writes the same schema `load_csv` reads. Numeric cells use the shortest
/// decimal form that parses back to the identical f64, so a save/load
/// round trip is bit-exact.
pub fn save_csv(ds: &SpectraDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_csv(ds))?;
    Ok(())
}

pub fn dataset_to_csv(ds: &SpectraDataset) -> String {
    let mut out = String::new();
    out.push_str("sample_id,group_id,label");
    for v in ds.axis.values() {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
    for i in 0..ds.n_samples() {
        let group = ds.groups.as_ref().map(|g| g[i].as_str()).unwrap_or("");
        let _ = write!(
            out,
            "{},{},{}",
            ds.sample_ids[i], group, ds.class_names[ds.labels[i]]
        );
        for v in ds.intensities.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    GroupLevel,
    SampleLevelStratified,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(ShapcaError::InvalidParameter(format!(
                "test_fraction must lie in (0,1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Distinct groups in first-appearance order with their member rows.
fn group_members(groups: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<String> = Vec::new();
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        if !members.contains_key(g) {
            order.push(g.clone());
        }
        members.entry(g.clone()).or_default().push(i);
    }
    order
        .into_iter()
        .map(|g| {
            let m = members[&g].clone();
            (g, m)
        })
        .collect()
}

/// Train/test partition. Group mode assigns shuffled whole groups to the
/// test side until it holds at least `test_fraction * N` samples;
/// stratified mode rounds the per-class test count and keeps at least one
/// sample of every class on each side.
pub fn split(ds: &SpectraDataset, spec: &SplitSpec) -> Result<(SpectraDataset, SpectraDataset)> {
    spec.validate()?;
    let n = ds.n_samples();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut test_idx: Vec<usize> = Vec::new();

    match spec.mode {
        SplitMode::GroupLevel => {
            let groups = ds.groups.as_ref().ok_or(ShapcaError::MissingGroups)?;
            let mut entries = group_members(groups);
            entries.shuffle(&mut rng);
            let target = spec.test_fraction * n as f64;
            for (_, members) in &entries {
                if (test_idx.len() as f64) >= target {
                    break;
                }
                // a group that would leave the train side empty stays in train
                if test_idx.len() + members.len() >= n {
                    continue;
                }
                test_idx.extend_from_slice(members);
            }
        }
        SplitMode::SampleLevelStratified => {
            for class in 0..ds.n_classes() {
                let mut members: Vec<usize> = (0..n).filter(|&i| ds.labels[i] == class).collect();
                if members.len() < 2 {
                    return Err(ShapcaError::ClassTooSmall {
                        class,
                        count: members.len(),
                    });
                }
                members.shuffle(&mut rng);
                let want = (spec.test_fraction * members.len() as f64).round() as usize;
                let take = want.clamp(1, members.len() - 1);
                test_idx.extend_from_slice(&members[..take]);
            }
        }
    }

    test_idx.sort_unstable();
    let in_test: Vec<bool> = {
        let mut mask = vec![false; n];
        for &i in &test_idx {
            mask[i] = true;
        }
        mask
    };
    let train_idx: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(ShapcaError::DegenerateSplit {
            fraction: spec.test_fraction,
        });
    }
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KFoldMode {
    GroupKFold,
    StratifiedKFold,
}

/// K disjoint test folds covering every sample. Group mode assigns whole
/// groups to folds, largest group first onto the currently smallest fold;
/// stratified mode deals each class round-robin after a seeded shuffle.
pub fn kfold_indices(
    ds: &SpectraDataset,
    k: usize,
    mode: KFoldMode,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(ShapcaError::InvalidParameter(format!(
            "k must be at least 2, got {k}"
        )));
    }
    let n = ds.n_samples();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];

    match mode {
        KFoldMode::GroupKFold => {
            let groups = ds.groups.as_ref().ok_or(ShapcaError::MissingGroups)?;
            let mut entries = group_members(groups);
            if entries.len() < k {
                return Err(ShapcaError::TooFewGroups {
                    k,
                    groups: entries.len(),
                });
            }
            entries.shuffle(&mut rng);
            entries.sort_by(|a, b| b.1.len().cmp(&a.1.len()));
            for (_, members) in entries {
                let smallest = (0..k).min_by_key(|&f| folds[f].len()).unwrap();
                folds[smallest].extend_from_slice(&members);
            }
        }
        KFoldMode::StratifiedKFold => {
            for class in 0..ds.n_classes() {
                let mut members: Vec<usize> = (0..n).filter(|&i| ds.labels[i] == class).collect();
                if members.len() < k {
                    return Err(ShapcaError::TooFewPerClass {
                        k,
                        count: members.len(),
                    });
                }
                members.shuffle(&mut rng);
                for (j, idx) in members.into_iter().enumerate() {
                    folds[j % k].push(idx);
                }
            }
        }
    }

    let mut out = Vec::with_capacity(k);
    for f in 0..k {
        let mut test = folds[f].clone();
        test.sort_unstable();
        let mut mask = vec![false; n];
        for &i in &test {
            mask[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
        out.push((train, test));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_csv() -> &'static str {
        "# toy file\n\
         sample_id,group_id,label,400,450.5,500,600\n\
         s0,g0,a,1,2,3,4\n\
         s1,g0,b,5,6,7,8\n\
         s2,g1,a,9,10,11,12\n"
    }

    #[test]
    fn load_csv_parses_axis_and_shape() {
        let ds = parse_csv(toy_csv(), "toy").unwrap();
        assert_eq!(ds.n_samples(), 3);
        assert_eq!(ds.n_features(), 4);
        assert_eq!(ds.axis.values(), &[400.0, 450.5, 500.0, 600.0]);
        assert_eq!(ds.class_names, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.groups.as_deref().unwrap()[2], "g1");
    }

    #[test]
    fn load_csv_rejects_non_monotone_axis() {
        let text = "sample_id,group_id,label,500,400,600\ns0,g,a,1,2,3\ns1,g,b,1,2,3\n";
        match parse_csv(text, "t") {
            Err(ShapcaError::NonMonotoneAxis { position }) => assert_eq!(position, 1),
            other => panic!("expected non-monotone axis error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_ragged_row() {
        let text = "sample_id,group_id,label,400,500,600\ns0,g,a,1,2,3\ns1,g,b,1,2\n";
        match parse_csv(text, "t") {
            Err(ShapcaError::RaggedRow { row, found, expected }) => {
                assert_eq!((row, found, expected), (2, 2, 3));
            }
            other => panic!("expected ragged row error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_non_numeric_cell() {
        let text = "sample_id,group_id,label,400,500,600\ns0,g,a,1,abc,3\ns1,g,b,1,2,3\n";
        match parse_csv(text, "t") {
            Err(ShapcaError::NonNumericCell { row, column, .. }) => {
                assert_eq!((row, column), (1, 4));
            }
            other => panic!("expected non-numeric cell error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_bad_header() {
        let text = "id,group_id,label,400,500,600\ns0,g,a,1,2,3\n";
        assert!(matches!(
            parse_csv(text, "t"),
            Err(ShapcaError::UnknownLabelColumn)
        ));
    }

    #[test]
    fn empty_group_column_means_no_groups() {
        let text = "sample_id,group_id,label,400,500\ns0,,a,1,2\ns1,,b,3,4\n";
        let ds = parse_csv(text, "t").unwrap();
        assert!(ds.groups.is_none());
    }

    #[test]
    fn mixed_group_column_is_an_error() {
        let text = "sample_id,group_id,label,400,500\ns0,g,a,1,2\ns1,,b,3,4\n";
        assert!(matches!(
            parse_csv(text, "t"),
            Err(ShapcaError::InconsistentGroups { row: 2 })
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let axis = SpectralAxis::new(vec![400.25, 500.0, 612.125], "cm-1").unwrap();
        let intensities = array![
            [0.1, 0.2, std::f64::consts::PI],
            [1.0 / 3.0, 2.0f64.sqrt(), 1e-17],
            [-4.5, 6.25, 0.0]
        ];
        let ds = SpectraDataset::new(
            axis,
            intensities,
            vec![0, 1, 0],
            Some(vec!["g0".into(), "g1".into(), "g0".into()]),
            vec!["a".into(), "b".into()],
            vec!["s0".into(), "s1".into(), "s2".into()],
        )
        .unwrap();
        let round = parse_csv(&dataset_to_csv(&ds), "mem").unwrap();
        assert_eq!(round.intensities, ds.intensities);
        assert_eq!(round.labels, ds.labels);
        assert_eq!(round.axis.values(), ds.axis.values());
    }

    #[test]
    fn json_envelope_round_trip() {
        let ds = parse_csv(toy_csv(), "toy").unwrap();
        let back = SpectraDataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    fn grouped_dataset(n_groups: usize, per_group: usize) -> SpectraDataset {
        let n = n_groups * per_group;
        let intensities = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
        let axis = SpectralAxis::new(vec![1.0, 2.0, 3.0], "").unwrap();
        SpectraDataset::new(
            axis,
            intensities,
            (0..n).map(|i| i % 2).collect(),
            Some((0..n).map(|i| format!("g{}", i / per_group)).collect()),
            vec!["a".into(), "b".into()],
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn group_split_keeps_groups_whole() {
        let ds = grouped_dataset(5, 2);
        let spec = SplitSpec {
            mode: SplitMode::GroupLevel,
            test_fraction: 0.2,
            seed: 9,
        };
        let (train, test) = split(&ds, &spec).unwrap();
        assert_eq!(test.n_samples(), 2);
        assert_eq!(train.n_samples(), 8);
        let tg: Vec<&String> = test.groups.as_ref().unwrap().iter().collect();
        assert!(tg.windows(2).all(|w| w[0] == w[1]));
        for g in train.groups.as_ref().unwrap() {
            assert!(!test.groups.as_ref().unwrap().contains(g));
        }
    }

    #[test]
    fn split_is_deterministic() {
        let ds = grouped_dataset(5, 2);
        let spec = SplitSpec {
            mode: SplitMode::GroupLevel,
            test_fraction: 0.4,
            seed: 1234,
        };
        let (tr1, te1) = split(&ds, &spec).unwrap();
        let (tr2, te2) = split(&ds, &spec).unwrap();
        assert_eq!(tr1.sample_ids, tr2.sample_ids);
        assert_eq!(te1.sample_ids, te2.sample_ids);
    }

    #[test]
    fn group_split_without_groups_fails() {
        let mut ds = grouped_dataset(5, 2);
        ds.groups = None;
        let spec = SplitSpec {
            mode: SplitMode::GroupLevel,
            test_fraction: 0.2,
            seed: 0,
        };
        assert!(matches!(split(&ds, &spec), Err(ShapcaError::MissingGroups)));
    }

    #[test]
    fn stratified_split_hits_exact_counts() {
        let n = 20;
        let intensities = Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f64);
        let axis = SpectralAxis::new(vec![1.0, 2.0], "").unwrap();
        let ds = SpectraDataset::new(
            axis,
            intensities,
            (0..n).map(|i| i % 2).collect(),
            None,
            vec!["a".into(), "b".into()],
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap();
        let spec = SplitSpec {
            mode: SplitMode::SampleLevelStratified,
            test_fraction: 0.2,
            seed: 3,
        };
        let (train, test) = split(&ds, &spec).unwrap();
        assert_eq!(test.n_samples(), 4);
        assert_eq!(test.labels.iter().filter(|&&l| l == 0).count(), 2);
        assert_eq!(test.labels.iter().filter(|&&l| l == 1).count(), 2);
        assert_eq!(train.n_samples() + test.n_samples(), n);
    }

    #[test]
    fn stratified_split_rejects_tiny_class() {
        let intensities = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64);
        let axis = SpectralAxis::new(vec![1.0, 2.0], "").unwrap();
        let ds = SpectraDataset::new(
            axis,
            intensities,
            vec![0, 0, 1],
            None,
            vec!["a".into(), "b".into()],
            vec!["s0".into(), "s1".into(), "s2".into()],
        )
        .unwrap();
        let spec = SplitSpec {
            mode: SplitMode::SampleLevelStratified,
            test_fraction: 0.3,
            seed: 0,
        };
        assert!(matches!(
            split(&ds, &spec),
            Err(ShapcaError::ClassTooSmall { class: 1, count: 1 })
        ));
    }

    #[test]
    fn group_kfold_each_fold_is_one_group() {
        let ds = grouped_dataset(3, 2);
        let folds = kfold_indices(&ds, 3, KFoldMode::GroupKFold, 7).unwrap();
        for (train, test) in &folds {
            assert_eq!(test.len(), 2);
            assert_eq!(train.len(), 4);
            let g = &ds.groups.as_ref().unwrap()[test[0]];
            assert_eq!(&ds.groups.as_ref().unwrap()[test[1]], g);
            for &i in train {
                assert_ne!(&ds.groups.as_ref().unwrap()[i], g);
            }
        }
    }

    #[test]
    fn kfold_test_folds_partition_everything() {
        let ds = grouped_dataset(6, 3);
        for mode in [KFoldMode::GroupKFold, KFoldMode::StratifiedKFold] {
            let folds = kfold_indices(&ds, 3, mode, 11).unwrap();
            let mut seen = vec![0usize; ds.n_samples()];
            for (_, test) in &folds {
                for &i in test {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "mode {mode:?}: {seen:?}");
        }
    }

    #[test]
    fn stratified_kfold_balances_classes() {
        let n = 10;
        let intensities = Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f64);
        let axis = SpectralAxis::new(vec![1.0, 2.0], "").unwrap();
        let ds = SpectraDataset::new(
            axis,
            intensities,
            (0..n).map(|i| i % 2).collect(),
            None,
            vec!["a".into(), "b".into()],
            (0..n).map(|i| format!("s{i}")).collect(),
        )
        .unwrap();
        let folds = kfold_indices(&ds, 5, KFoldMode::StratifiedKFold, 2).unwrap();
        for (_, test) in folds {
            assert_eq!(test.len(), 2);
            let c0 = test.iter().filter(|&&i| ds.labels[i] == 0).count();
            assert_eq!(c0, 1);
        }
    }

    #[test]
    fn group_kfold_rejects_too_few_groups() {
        let ds = grouped_dataset(2, 3);
        assert!(matches!(
            kfold_indices(&ds, 3, KFoldMode::GroupKFold, 0),
            Err(ShapcaError::TooFewGroups { k: 3, groups: 2 })
        ));
    }
}
