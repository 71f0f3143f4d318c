//! Benchmark data ingestion: CSV loading, min-max normalization and
//! class-preserving sub-sampling.

use std::fs::File;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{LamaError, Result};
use crate::labels::Label;
use crate::rng;

/// Observations with ground truth, normalized to `[0, 1]` per dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    x: DMatrix<f64>,
    y: Vec<Label>,
    ids: Vec<usize>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from raw features. Every column is min-max scaled to
    /// `[0, 1]`; constant columns become 0.
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: Vec<Label>) -> Result<Self> {
        let ids = (0..y.len()).collect();
        Self::with_ids(name, x, y, ids, Vec::new())
    }

    pub fn with_ids(
        name: impl Into<String>,
        mut x: DMatrix<f64>,
        y: Vec<Label>,
        ids: Vec<usize>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let name = name.into();
        if x.nrows() != y.len() {
            return Err(LamaError::DimensionMismatch {
                left: x.nrows(),
                right: y.len(),
            });
        }
        if ids.len() != y.len() {
            return Err(LamaError::DimensionMismatch {
                left: ids.len(),
                right: y.len(),
            });
        }
        if y.len() < 4 {
            return Err(LamaError::TooFewObservations(y.len()));
        }
        let (inliers, outliers) = class_counts(&y);
        if inliers == 0 || outliers == 0 {
            return Err(LamaError::InsufficientClasses {
                inliers,
                outliers,
                required: 1,
            });
        }
        let feature_names = if feature_names.len() == x.ncols() {
            feature_names
        } else {
            (0..x.ncols()).map(|j| format!("x{j}")).collect()
        };
        for column in normalize_columns(&mut x) {
            warn!(
                "{name}: feature {:?} is constant, normalized to 0",
                feature_names[column]
            );
        }
        Ok(Dataset {
            name,
            x,
            y,
            ids,
            feature_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// N x M feature matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[Label] {
        &self.y
    }

    /// Stable identifiers (source row indices).
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        class_counts(&self.y)
    }

    pub fn outlier_share(&self) -> f64 {
        self.class_counts().1 as f64 / self.len() as f64
    }

    /// Uniform random subset of at most `max_n` observations holding at
    /// least two of each class. The subset is re-normalized.
    pub fn subsample(&self, max_n: usize, seed: u64) -> Result<Dataset> {
        if max_n < 4 {
            return Err(LamaError::InvalidParameter(format!(
                "subsample size must be at least 4, got {max_n}"
            )));
        }
        let (inliers, outliers) = self.class_counts();
        if inliers < 2 || outliers < 2 {
            return Err(LamaError::InsufficientClasses {
                inliers,
                outliers,
                required: 2,
            });
        }
        if self.len() <= max_n {
            return Ok(self.clone());
        }
        for attempt in 0u64.. {
            let mut rng = rng::stream(seed, rng::STREAM_SUBSAMPLE, attempt);
            let mut rows = index::sample(&mut rng, self.len(), max_n).into_vec();
            rows.sort_unstable();
            let picked: Vec<Label> = rows.iter().map(|&r| self.y[r]).collect();
            let (i, o) = class_counts(&picked);
            if i >= 2 && o >= 2 {
                return Ok(self.select_rows(&rows));
            }
        }
        unreachable!("sampling loop only exits by returning")
    }

    fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows.iter());
        let y = rows.iter().map(|&r| self.y[r]).collect();
        let ids = rows.iter().map(|&r| self.ids[r]).collect();
        Dataset::with_ids(self.name.clone(), x, y, ids, self.feature_names.clone())
            .expect("row subset keeps dataset invariants")
    }
}

fn class_counts(y: &[Label]) -> (usize, usize) {
    let inliers = y.iter().filter(|l| l.is_inlier()).count();
    (inliers, y.len() - inliers)
}

/// Min-max scales each column in place and returns the constant columns.
pub fn normalize_columns(x: &mut DMatrix<f64>) -> Vec<usize> {
    let mut constant = Vec::new();
    for (j, mut column) in x.column_iter_mut().enumerate() {
        let min = column.iter().copied().fold(f64::INFINITY, f64::min);
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        if range.is_nan() || range <= 0.0 {
            column.fill(0.0);
            constant.push(j);
            continue;
        }
        for v in column.iter_mut() {
            *v = ((*v - min) / range).clamp(0.0, 1.0);
        }
    }
    constant
}

/// Which CSV column carries the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    /// `None` selects the last column.
    pub label_column: Option<LabelColumn>,
    pub outlier_label: String,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: None,
            outlier_label: "yes".to_string(),
            has_header: true,
        }
    }
}

/// Loads a comma-delimited file. Rows whose label equals
/// `opts.outlier_label` become outliers, every other row an inlier.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| LamaError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Option<Vec<String>> = if opts.has_header {
        Some(reader.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| records.first().map(|r| r.len()))
        .unwrap_or(0);
    if width < 2 {
        return Err(LamaError::InvalidParameter(format!(
            "{} needs at least one feature column and one label column",
            path.display()
        )));
    }

    let label_idx = match &opts.label_column {
        None => width - 1,
        Some(LabelColumn::Index(i)) if *i < width => *i,
        Some(LabelColumn::Index(i)) => return Err(LamaError::MissingLabelColumn(i.to_string())),
        Some(LabelColumn::Name(name)) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| LamaError::MissingLabelColumn(name.clone()))?,
    };

    let n = records.len();
    let m = width - 1;
    let mut values = Vec::with_capacity(n * m);
    let mut y = Vec::with_capacity(n);
    for (row, record) in records.iter().enumerate() {
        if record.len() != width {
            return Err(LamaError::RaggedRow {
                row,
                found: record.len(),
                expected: width,
            });
        }
        for (column, field) in record.iter().enumerate() {
            if column == label_idx {
                y.push(if field == opts.outlier_label {
                    Label::Outlier
                } else {
                    Label::Inlier
                });
            } else {
                let v: f64 = field.parse().map_err(|_| LamaError::NonNumeric {
                    row,
                    column,
                    value: field.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(LamaError::NonNumeric {
                        row,
                        column,
                        value: field.to_string(),
                    });
                }
                values.push(v);
            }
        }
    }

    let (inliers, outliers) = class_counts(&y);
    if inliers == 0 || outliers == 0 {
        return Err(LamaError::InsufficientClasses {
            inliers,
            outliers,
            required: 1,
        });
    }

    let feature_names = match header {
        Some(h) => h
            .into_iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, name)| name)
            .collect(),
        None => Vec::new(),
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let x = DMatrix::from_row_slice(n, m, &values);
    Dataset::with_ids(name, x, y, (0..n).collect(), feature_names)
}

/// On-disk description of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub label_column: Option<LabelColumn>,
    pub outlier_label: String,
    #[serde(default = "default_header")]
    pub header: bool,
}

fn default_header() -> bool {
    true
}

impl DatasetManifest {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            label_column: self.label_column.clone(),
            outlier_label: self.outlier_label.clone(),
            has_header: self.header,
        }
    }

    /// Loads the referenced CSV; relative paths resolve against `base_dir`.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<Dataset> {
        let path = match base_dir {
            Some(dir) if self.path.is_relative() => dir.join(&self.path),
            _ => self.path.clone(),
        };
        let mut data = load_csv(&path, &self.csv_options())?;
        data.name = self.name.clone();
        Ok(data)
    }
}

/// Reads a manifest file holding either one dataset entry or a list of them.
pub fn read_manifests(path: impl AsRef<Path>) -> Result<Vec<DatasetManifest>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<DatasetManifest>),
        Wrapped { datasets: Vec<DatasetManifest> },
        One(DatasetManifest),
    }

    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| LamaError::io(path, e))?;
    let parsed: OneOrMany = serde_json::from_str(&text)?;
    let mut manifests = match parsed {
        OneOrMany::Many(v) | OneOrMany::Wrapped { datasets: v } => v,
        OneOrMany::One(m) => vec![m],
    };
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for m in &mut manifests {
        if m.path.is_relative() {
            m.path = base.join(&m.path);
        }
    }
    Ok(manifests)
}
