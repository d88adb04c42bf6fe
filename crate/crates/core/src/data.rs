//! CSV datasets, standardization, group-wise splits, and atomic file writes.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// How outcome columns are picked out of a CSV header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    /// No outcome columns; every non-group column is a covariate.
    None,
    Columns(Vec<String>),
    /// Every column whose name starts with the prefix (a region's features).
    Prefix(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Real,
    /// Every outcome is exactly 0 or 1.
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    /// `N × k`; `k = 0` when no outcome was requested.
    pub y: DMatrix<f64>,
    pub groups: Option<Vec<String>>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        groups: Option<Vec<String>>,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.nrows() != n {
            return Err(Error::input(format!("{} outcome rows for {n} covariate rows", y.nrows())));
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::input(format!("{} group labels for {n} rows", g.len())));
            }
        }
        if feature_names.len() != x.ncols() || target_names.len() != y.ncols() {
            return Err(Error::input("column names do not match matrix widths"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("dataset contains non-finite values"));
        }
        Ok(Self {
            x,
            y,
            groups,
            feature_names,
            target_names,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        if self.y.ncols() > 0 && self.y.iter().all(|&v| v == 0.0 || v == 1.0) {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Real
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows.iter()),
            y: self.y.select_rows(rows.iter()),
            groups: self
                .groups
                .as_ref()
                .map(|g| rows.iter().map(|&i| g[i].clone()).collect()),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
        }
    }

    /// First outcome column.
    pub fn y_vector(&self) -> Result<DVector<f64>> {
        if self.y.ncols() == 0 {
            return Err(Error::input("dataset has no outcome column"));
        }
        Ok(self.y.column(0).clone_owned())
    }
}

fn parse_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Parse(format!("{}: {e}", path.display())),
    }
}

/// Read a headed CSV. Data rows are numbered from 1 in error messages (the
/// header is not counted).
pub fn load_csv(path: &Path, targets: &TargetSpec, group_column: Option<&str>) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse(format!("{}: missing header row", path.display())));
    }
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let lookup = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::input(format!("column \"{name}\" not found in {}", path.display())))
    };
    let group_idx = group_column.map(lookup).transpose()?;
    let target_idx: Vec<usize> = match targets {
        TargetSpec::None => Vec::new(),
        TargetSpec::Columns(names) => names.iter().map(|n| lookup(n)).collect::<Result<_>>()?,
        TargetSpec::Prefix(prefix) => {
            let found: Vec<usize> = (0..header.len())
                .filter(|&i| header[i].starts_with(prefix.as_str()) && Some(i) != group_idx)
                .collect();
            if found.is_empty() {
                return Err(Error::input(format!("no column starts with \"{prefix}\"")));
            }
            found
        }
    };
    if let Some(g) = group_idx {
        if target_idx.contains(&g) {
            return Err(Error::input("the group column cannot also be a target"));
        }
    }
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|i| !target_idx.contains(i) && Some(*i) != group_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(Error::input("no covariate columns remain"));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut groups = group_idx.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| parse_err(path, e))?;
        if record.len() != header.len() {
            return Err(Error::Parse(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let cell = |c: usize| -> Result<f64> {
            let raw = record[c].trim();
            let v: f64 = raw.parse().map_err(|_| {
                Error::Parse(format!("row {row}, column \"{}\": cannot parse \"{raw}\" as a number", header[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::input(format!(
                    "row {row}, column \"{}\": non-finite value \"{raw}\"",
                    header[c]
                )));
            }
            Ok(v)
        };
        for &c in &feature_idx {
            xs.push(cell(c)?);
        }
        for &c in &target_idx {
            ys.push(cell(c)?);
        }
        if let (Some(g), Some(out)) = (group_idx, groups.as_mut()) {
            out.push(record[g].trim().to_string());
        }
    }
    let n = xs.len() / feature_idx.len();
    if n == 0 {
        return Err(Error::input(format!("{} has no data rows", path.display())));
    }
    Dataset::new(
        DMatrix::from_row_slice(n, feature_idx.len(), &xs),
        DMatrix::from_row_slice(n, target_idx.len(), &ys),
        groups,
        feature_idx.iter().map(|&i| header[i].clone()).collect(),
        target_idx.iter().map(|&i| header[i].clone()).collect(),
    )
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_exact(v: f64) -> String {
    format!("{v:?}")
}

/// Write `contents` to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// CSV text of a matrix with a header.
pub fn matrix_csv(header: &[String], m: &DMatrix<f64>) -> Result<String> {
    if header.len() != m.ncols() {
        return Err(Error::input("header width does not match matrix"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| format_exact(v))).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Write a dataset as CSV: group column (if any), covariates, then targets.
pub fn write_csv(path: &Path, ds: &Dataset, group_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Parse(e.to_string());
    let mut header: Vec<&str> = Vec::new();
    if ds.groups.is_some() {
        header.push(group_column);
    }
    header.extend(ds.feature_names.iter().map(String::as_str));
    header.extend(ds.target_names.iter().map(String::as_str));
    w.write_record(&header).map_err(fail)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(g) = &ds.groups {
            rec.push(g[i].clone());
        }
        rec.extend(ds.x.row(i).iter().map(|&v| format_exact(v)));
        rec.extend(ds.y.row(i).iter().map(|&v| format_exact(v)));
        w.write_record(&rec).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Per-column mean and population (divisor `N`) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizerState {
    pub means: DVector<f64>,
    pub stds: DVector<f64>,
}

impl StandardizerState {
    pub fn fit(x: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::input("cannot standardize an empty dataset"));
        }
        let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
        let stds = DVector::from_iterator(
            x.ncols(),
            x.column_iter()
                .zip(means.iter())
                .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt()),
        );
        let constant: Vec<&str> = stds
            .iter()
            .enumerate()
            .filter(|(j, s)| !(**s > 1e-12 * means[*j].abs().max(1.0)))
            .map(|(j, _)| names.get(j).map(String::as_str).unwrap_or("?"))
            .collect();
        if !constant.is_empty() {
            return Err(Error::input(format!("zero-variance columns: {}", constant.join(", "))));
        }
        Ok(Self { means, stds })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::input(format!(
                "{} columns but the standardizer has {}",
                x.ncols(),
                self.means.len()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }
}

/// Fit on `train` covariates and return the transformed dataset.
pub fn standardize(train: &Dataset) -> Result<(StandardizerState, Dataset)> {
    let state = StandardizerState::fit(&train.x, &train.feature_names)?;
    let out = apply(&state, train)?;
    Ok((state, out))
}

pub fn apply(state: &StandardizerState, ds: &Dataset) -> Result<Dataset> {
    Ok(Dataset {
        x: state.transform(&ds.x)?,
        ..ds.clone()
    })
}

/// Hold out whole groups: `round(test_fraction · G)` of them, at least one and
/// at most `G − 1`.
pub fn split_by_group(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::input("test fraction must lie in (0, 1)"));
    }
    let groups = ds
        .groups
        .as_ref()
        .ok_or_else(|| Error::input("dataset has no group column"))?;
    let mut distinct: Vec<&String> = groups.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let g = distinct.len();
    if g < 2 {
        return Err(Error::input("a group split needs at least two distinct groups"));
    }
    let n_test = ((test_fraction * g as f64).round() as usize).clamp(1, g - 1);
    distinct.shuffle(&mut rng::seeded(seed));
    let test_groups: BTreeSet<&String> = distinct.into_iter().take(n_test).collect();
    let (test_rows, train_rows): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| test_groups.contains(&groups[i]));
    Ok((ds.select_rows(&train_rows), ds.select_rows(&test_rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn shape_and_target() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "a,b,c,y\n1,2,3,0\n4,5,6,1\n7,8,9,0\n");
        let ds = load_csv(&p, &TargetSpec::Columns(vec!["y".into()]), None).unwrap();
        assert_eq!(ds.x.shape(), (3, 3));
        assert_eq!(ds.y.shape(), (3, 1));
        assert_eq!(ds.feature_names, ["a", "b", "c"]);
        assert_eq!(ds.outcome_kind(), OutcomeKind::Binary);
    }

    #[test]
    fn nan_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "amy_4hz,thal_5hz,y\n1,2,0\n3,NaN,1\n");
        let err = load_csv(&p, &TargetSpec::Columns(vec!["y".into()]), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("thal_5hz"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn text_cell_and_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "a,y\n1,0\nfoo,1\n");
        let err = load_csv(&p, &TargetSpec::Columns(vec!["y".into()]), None).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(err.to_string().contains("row 2"));
        let err = load_csv(&p, &TargetSpec::Columns(vec!["z".into()]), None).unwrap_err();
        assert!(err.to_string().contains("\"z\""));
        let err = load_csv(&dir.path().join("missing.csv"), &TargetSpec::None, None).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn prefix_targets_and_groups() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "mouse,acc_1,acc_2,bla_1\nm1,1,2,3\nm2,4,5,6\n");
        let ds = load_csv(&p, &TargetSpec::Prefix("acc_".into()), Some("mouse")).unwrap();
        assert_eq!(ds.target_names, ["acc_1", "acc_2"]);
        assert_eq!(ds.feature_names, ["bla_1"]);
        assert_eq!(ds.groups.as_deref().unwrap(), ["m1", "m2"]);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng::seeded(5);
        let x = rng::normal_matrix(&mut r, 7, 3) * 1e3;
        let y = rng::normal_matrix(&mut r, 7, 1) / 3.0;
        let ds = Dataset::new(
            x,
            y,
            Some((0..7).map(|i| format!("g{}", i % 3)).collect()),
            vec!["a".into(), "b".into(), "c".into()],
            vec!["t".into()],
        )
        .unwrap();
        let p = dir.path().join("out.csv");
        write_csv(&p, &ds, "grp").unwrap();
        let back = load_csv(&p, &TargetSpec::Columns(vec!["t".into()]), Some("grp")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn population_std() {
        let ds = Dataset::new(
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            DMatrix::zeros(3, 0),
            None,
            vec!["a".into()],
            vec![],
        )
        .unwrap();
        let (state, out) = standardize(&ds).unwrap();
        assert_relative_eq!(out.x[(0, 0)], -1.2247, epsilon = 5e-5);
        assert_eq!(out.x[(1, 0)], 0.0);
        assert_relative_eq!(out.x[(2, 0)], 1.2247, epsilon = 5e-5);
        assert_eq!(apply(&state, &ds).unwrap(), out);
        let shifted = Dataset {
            x: ds.x.add_scalar(state.stds[0]),
            ..ds.clone()
        };
        let moved = apply(&state, &shifted).unwrap();
        assert_relative_eq!(moved.x, out.x.add_scalar(1.0), epsilon = 1e-12);
    }

    #[test]
    fn constant_column_is_named() {
        let ds = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 2.0, 5.0]),
            DMatrix::zeros(2, 0),
            None,
            vec!["ok".into(), "flat".into()],
            vec![],
        )
        .unwrap();
        let err = standardize(&ds).unwrap_err();
        assert!(err.to_string().contains("flat"));
    }

    #[test]
    fn group_split() {
        let groups: Vec<String> = (0..20).map(|i| format!("m{}", i % 4)).collect();
        let ds = Dataset::new(
            DMatrix::from_fn(20, 2, |i, j| (i + j) as f64),
            DMatrix::zeros(20, 0),
            Some(groups),
            vec!["a".into(), "b".into()],
            vec![],
        )
        .unwrap();
        let (tr, te) = split_by_group(&ds, 0.25, 3).unwrap();
        let tr_g: BTreeSet<_> = tr.groups.as_ref().unwrap().iter().collect();
        let te_g: BTreeSet<_> = te.groups.as_ref().unwrap().iter().collect();
        assert_eq!(te_g.len(), 1);
        assert!(tr_g.is_disjoint(&te_g));
        assert_eq!(tr.len() + te.len(), 20);
        assert_eq!(split_by_group(&ds, 0.25, 3).unwrap(), (tr, te));

        let one = Dataset {
            groups: Some(vec!["m".into(); 20]),
            ..ds
        };
        assert!(split_by_group(&one, 0.5, 0).is_err());
    }
}
