//! Dataset ingestion, synthetic generators, standardization, and partitioning.
//!
//! A `Dataset` stores its features densely, row-major, with column 0 fixed to
//! the constant bias of one. Labels are binary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Per-column standardization parameters, stored so the same shift/scale can
/// be replayed on test data.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Standardization {
    /// Per-column mean, including the bias column (always 0 there).
    pub mean: Vec<f64>,
    /// Per-column standard deviation (1 for the bias and constant columns).
    pub stddev: Vec<f64>,
    /// Columns left unchanged because they were constant.
    pub constant_columns: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Row-major N x D feature matrix; column 0 is identically 1.
    features: Vec<f64>,
    labels: Vec<u8>,
    n: usize,
    d: usize,
    pub feature_names: Option<Vec<String>>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    /// Build a dataset from raw covariate rows (without the bias column).
    pub fn from_rows(rows: &[Vec<f64>], labels: &[u8]) -> Result<Self> {
        assert_eq!(rows.len(), labels.len());
        let v = rows.first().map_or(0, |r| r.len());
        let mut features = Vec::with_capacity(rows.len() * (v + 1));
        for row in rows {
            if row.len() != v {
                return Err(Error::DimensionMismatch {
                    expected: v,
                    got: row.len(),
                });
            }
            features.push(1.0);
            features.extend_from_slice(row);
        }
        let ds = Dataset {
            features,
            labels: labels.to_vec(),
            n: rows.len(),
            d: v + 1,
            feature_names: None,
            standardization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let row = self.row(i);
            if row[0] != 1.0 {
                return Err(Error::DegenerateData("bias column is not 1"));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::DegenerateData("non-finite feature entry"));
            }
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::DegenerateData("label outside {0,1}"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Full feature dimension D, including the bias column.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Covariate dimension V = D - 1.
    pub fn covariate_dim(&self) -> usize {
        self.d - 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Same features with labels flipped: y* = 1 - y.
    pub fn flipped_labels(&self) -> Dataset {
        Dataset {
            labels: self.labels.iter().map(|y| 1 - y).collect(),
            ..self.clone()
        }
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }
}

fn parse_label(value: f64, line: usize) -> Result<u8> {
    if value == 0.0 || value == 1.0 {
        Ok(value as u8)
    } else if value == -1.0 {
        Ok(0)
    } else {
        Err(Error::LabelDomain { line, value })
    }
}

fn detect_delimiter(line: &str) -> char {
    if line.contains(',') {
        ','
    } else if line.contains('\t') {
        '\t'
    } else {
        ' '
    }
}

fn split_fields(line: &str, delim: char) -> Vec<&str> {
    if delim == ' ' {
        line.split_whitespace().collect()
    } else {
        line.split(delim).map(str::trim).collect()
    }
}

/// Parse a dense delimited table. The header is auto-detected by a non-numeric
/// first row; labels in {-1, +1} or {0, 1} are mapped to {0, 1}; a bias column
/// is prepended.
pub fn load_dense(path: &Path, label_column: usize, delimiter: Option<char>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dense(&text, label_column, delimiter)
}

pub fn parse_dense(text: &str, label_column: usize, delimiter: Option<char>) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut names: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut delim = delimiter;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let d = *delim.get_or_insert_with(|| detect_delimiter(line));
        let fields = split_fields(line, d);
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && names.is_none() => {
                // header row: record names, skipping the label column
                let mut hdr: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
                if label_column < hdr.len() {
                    hdr.remove(label_column);
                }
                names = Some(hdr);
                continue;
            }
            Err(e) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("ragged row: expected {w} fields, got {}", values.len()),
                })
            }
            _ => {}
        }
        if label_column >= values.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("label column {label_column} out of range"),
            });
        }
        labels.push(parse_label(values[label_column], line_no)?);
        let mut row = values;
        row.remove(label_column);
        rows.push(row);
    }
    let mut ds = Dataset::from_rows(&rows, &labels)?;
    ds.feature_names = names;
    Ok(ds)
}

/// Parse sparse "label idx:val ..." lines with 1-based, strictly increasing
/// indices, densified to N x (V + 1) with the bias column.
pub fn load_sparse(path: &Path, dim_hint: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_sparse(&text, dim_hint)
}

pub fn parse_sparse(text: &str, dim_hint: Option<usize>) -> Result<Dataset> {
    let mut entries: Vec<(u8, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label_str = fields.next().ok_or(Error::Parse {
            line: line_no,
            message: "missing label".to_string(),
        })?;
        let label_val: f64 = label_str.parse().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad label: {e}"),
        })?;
        let label = parse_label(label_val, line_no)?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut prev = 0usize;
        for field in fields {
            let (i_str, v_str) = field.split_once(':').ok_or(Error::Parse {
                line: line_no,
                message: format!("expected idx:val, got {field:?}"),
            })?;
            let i: usize = i_str.parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad index: {e}"),
            })?;
            let v: f64 = v_str.parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad value: {e}"),
            })?;
            if i == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "indices are 1-based".to_string(),
                });
            }
            if i <= prev {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-increasing index {i} after {prev}"),
                });
            }
            if let Some(hint) = dim_hint {
                if i > hint {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("index {i} exceeds dimension hint {hint}"),
                    });
                }
            }
            prev = i;
            max_index = max_index.max(i);
            row.push((i, v));
        }
        entries.push((label, row));
    }
    let v = dim_hint.unwrap_or(max_index);
    let mut rows = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for (label, sparse_row) in entries {
        let mut row = vec![0.0; v];
        for (i, val) in sparse_row {
            row[i - 1] = val;
        }
        rows.push(row);
        labels.push(label);
    }
    Dataset::from_rows(&rows, &labels)
}

/// Generate the two-spirals dataset: class 0 at (t cos t, t sin t) and class 1
/// at its point reflection, t uniform on [pi/2, pi/2 + 2 pi turns], radii
/// rescaled to unit maximum, plus isotropic Gaussian noise.
pub fn make_two_spirals(
    n_per_class: usize,
    noise_sd: f64,
    turns: f64,
    rng: &mut RngStream,
) -> Dataset {
    assert!(n_per_class >= 1 && noise_sd >= 0.0 && turns > 0.0);
    let t_min = std::f64::consts::FRAC_PI_2;
    let t_max = t_min + 2.0 * std::f64::consts::PI * turns;
    let mut rows = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    let gauss = |rng: &mut RngStream| {
        // Box-Muller; keeps the draw count per point fixed.
        let u1 = rng.uniform_open();
        let u2 = rng.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for _ in 0..n_per_class {
        let t = t_min + (t_max - t_min) * rng.uniform();
        let scale = 1.0 / t_max;
        let (x, y) = (scale * t * t.cos(), scale * t * t.sin());
        let (nx0, ny0) = (gauss(rng) * noise_sd, gauss(rng) * noise_sd);
        let (nx1, ny1) = (gauss(rng) * noise_sd, gauss(rng) * noise_sd);
        rows.push(vec![x + nx0, y + ny0]);
        labels.push(0);
        rows.push(vec![-x + nx1, -y + ny1]);
        labels.push(1);
    }
    Dataset::from_rows(&rows, &labels).expect("generator output is valid")
}

/// Shift/scale non-bias columns to mean 0, stddev 1. Constant columns are left
/// unchanged and flagged. Parameters are stored for test-set reuse.
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    assert!(data.len() >= 2, "standardize needs at least 2 rows");
    let d = data.dim();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    let mut stddev = vec![1.0; d];
    let mut constant = Vec::new();
    for c in 1..d {
        let m = (0..data.len()).map(|i| data.row(i)[c]).sum::<f64>() / n;
        let var = (0..data.len())
            .map(|i| {
                let dlt = data.row(i)[c] - m;
                dlt * dlt
            })
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        if sd < 1e-12 {
            constant.push(c);
        } else {
            mean[c] = m;
            stddev[c] = sd;
        }
    }
    let params = Standardization {
        mean,
        stddev,
        constant_columns: constant,
    };
    apply_standardization(data, &params)
}

/// Apply previously computed standardization parameters.
pub fn apply_standardization(data: &Dataset, params: &Standardization) -> Result<Dataset> {
    let d = data.dim();
    if params.mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: params.mean.len(),
            got: d,
        });
    }
    let mut out = data.clone();
    for i in 0..out.n {
        for c in 1..d {
            let idx = i * d + c;
            out.features[idx] = (out.features[idx] - params.mean[c]) / params.stddev[c];
        }
    }
    out.standardization = Some(params.clone());
    Ok(out)
}

/// Stride partition: train = rows i-1, i-1+s, ... (1-based i); test = complement.
pub fn partition(data: &Dataset, fold_index: usize, stride: usize) -> Result<(Dataset, Dataset)> {
    assert!(fold_index >= 1 && fold_index <= stride, "need 1 <= i <= s");
    let take = |pred: &dyn Fn(usize) -> bool| -> Dataset {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut n = 0;
        for i in 0..data.n {
            if pred(i) {
                features.extend_from_slice(data.row(i));
                labels.push(data.labels[i]);
                n += 1;
            }
        }
        Dataset {
            features,
            labels,
            n,
            d: data.d,
            feature_names: data.feature_names.clone(),
            standardization: data.standardization.clone(),
        }
    };
    let train = take(&|i| i % stride == fold_index - 1);
    let test = take(&|i| i % stride != fold_index - 1);
    if train.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptyPartition("test"));
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_basic() {
        let ds = parse_dense("0,1.5,2.0\n1,-0.5,0.25", 0, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.row(0), &[1.0, 1.5, 2.0]);
    }

    #[test]
    fn dense_pm_one_labels_and_header() {
        let ds = parse_dense("label,f1,f2\n-1,0.0,1.0\n+1,2.0,3.0", 0, None).unwrap();
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(
            ds.feature_names.as_deref(),
            Some(&["f1".to_string(), "f2".to_string()][..])
        );
    }

    #[test]
    fn dense_ragged_row_reports_line() {
        let err = parse_dense("0,1.0,2.0\n1,3.0", 0, None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dense_non_binary_label() {
        assert!(matches!(
            parse_dense("2,1.0", 0, None).unwrap_err(),
            Error::LabelDomain { .. }
        ));
    }

    #[test]
    fn sparse_basic() {
        let ds = parse_sparse("+1 3:0.5", Some(4)).unwrap();
        assert_eq!(ds.row(0), &[1.0, 0.0, 0.0, 0.5, 0.0]);
        assert_eq!(ds.label(0), 1);
    }

    #[test]
    fn sparse_empty_feature_line() {
        let ds = parse_sparse("0\n1 1:2.0", None).unwrap();
        assert_eq!(ds.row(0), &[1.0, 0.0]);
        assert_eq!(ds.row(1), &[1.0, 2.0]);
    }

    #[test]
    fn sparse_rejects_zero_and_nonincreasing_indices() {
        assert!(parse_sparse("1 0:1.0", None).is_err());
        assert!(parse_sparse("1 2:1.0 2:2.0", None).is_err());
        assert!(parse_sparse("1 5:1.0", Some(3)).is_err());
    }

    #[test]
    fn two_spirals_shape_and_symmetry() {
        let mut rng = RngStream::new(5);
        let ds = make_two_spirals(50, 0.0, 1.5, &mut rng);
        assert_eq!(ds.len(), 100);
        // matched-t pairs are exact negations when noiseless
        for i in (0..100).step_by(2) {
            assert_eq!(ds.row(i)[1], -ds.row(i + 1)[1]);
            assert_eq!(ds.row(i)[2], -ds.row(i + 1)[2]);
        }
    }

    #[test]
    fn two_spirals_noiseless_classes_are_disjoint() {
        let mut rng = RngStream::new(6);
        let ds = make_two_spirals(200, 0.0, 1.5, &mut rng);
        let mut min_dist = f64::INFINITY;
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if ds.label(i) == 0 && ds.label(j) == 1 {
                    let dx = ds.row(i)[1] - ds.row(j)[1];
                    let dy = ds.row(i)[2] - ds.row(j)[2];
                    min_dist = min_dist.min((dx * dx + dy * dy).sqrt());
                }
            }
        }
        assert!(min_dist > 0.0, "min inter-class distance {min_dist}");
    }

    #[test]
    fn standardize_idempotent_and_replayable() {
        let mut rng = RngStream::new(7);
        let ds = make_two_spirals(30, 0.1, 1.5, &mut rng);
        let std1 = standardize(&ds).unwrap();
        let std2 = standardize(&std1).unwrap();
        for i in 0..std1.len() {
            for c in 0..std1.dim() {
                assert!((std1.row(i)[c] - std2.row(i)[c]).abs() < 1e-12);
            }
        }
        // replaying the stored parameters reproduces the output
        let params = std1.standardization.clone().unwrap();
        let replay = apply_standardization(&ds, &params).unwrap();
        for i in 0..std1.len() {
            assert_eq!(std1.row(i), replay.row(i));
        }
    }

    #[test]
    fn standardize_leaves_constant_columns() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![3.0, i as f64]).collect();
        let ds = Dataset::from_rows(&rows, &[0, 1, 0, 1, 0]).unwrap();
        let std = standardize(&ds).unwrap();
        assert_eq!(std.standardization.as_ref().unwrap().constant_columns, vec![1]);
        for i in 0..5 {
            assert_eq!(std.row(i)[1], 3.0);
        }
    }

    #[test]
    fn partition_stride() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let ds = Dataset::from_rows(&rows, &labels).unwrap();
        let (train, test) = partition(&ds, 1, 10).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 9);
        // disjoint training sets across fold indices
        let mut seen = std::collections::HashSet::new();
        for i in 1..=5 {
            let (tr, _) = partition(&ds, i, 5).unwrap();
            for r in 0..tr.len() {
                assert!(seen.insert(tr.row(r)[1] as i64));
            }
        }
    }
}
