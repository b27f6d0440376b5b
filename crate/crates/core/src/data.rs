//! Tabular cohort loading, cleaning and synthesis.
//!
//! The cleaning pipeline is applied in this order:
//!
//! 1. [`apply_bounds`] masks implausible values as missing,
//! 2. [`filter_missing_rate`] drops samples with too many missing cells,
//! 3. [`impute_median`] fills the remaining gaps per feature,
//! 4. [`standardize`] z-scores every feature before clustering.
//!
//! Missing cells always hold `NaN` in the value matrix and `true` in the mask.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::seed;

const EHR_FEATURE_BOUNDS: &str = include_str!("../data/ehr_feature_bounds.json");

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric cell at data row {row}, column `{column}`")]
    NonNumericCell { row: usize, column: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("every sample was removed by the missing-rate filter")]
    AllSamplesRemoved,
    #[error("feature `{0}` has no observed values")]
    AllMissingFeature(String),
    #[error("class {class} needs {needed} samples but only {available} are available")]
    InsufficientClassSamples {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Name, unit and inclusive plausibility bound of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    pub bound_lo: f64,
    pub bound_hi: f64,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            bound_lo: lo,
            bound_hi: hi,
        }
    }

    /// A feature with no effective plausibility bound.
    pub fn unbounded(name: impl Into<String>) -> Self {
        Self::new(name, "", f64::MIN, f64::MAX)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.bound_lo && v <= self.bound_hi
    }
}

/// Check bound ordering and name uniqueness.
pub fn validate_schema(specs: &[FeatureSpec]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for s in specs {
        if !(s.bound_lo < s.bound_hi) {
            return Err(DataError::InvalidSchema(format!(
                "feature `{}` has bound_lo {} >= bound_hi {}",
                s.name, s.bound_lo, s.bound_hi
            )));
        }
        if !seen.insert(s.name.as_str()) {
            return Err(DataError::InvalidSchema(format!(
                "duplicate feature name `{}`",
                s.name
            )));
        }
    }
    Ok(())
}

pub fn parse_schema(json: &str) -> Result<Vec<FeatureSpec>, DataError> {
    let specs: Vec<FeatureSpec> = serde_json::from_str(json)?;
    validate_schema(&specs)?;
    Ok(specs)
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Vec<FeatureSpec>, DataError> {
    parse_schema(&std::fs::read_to_string(path)?)
}

/// The 33 clinical and laboratory features with their plausibility bounds.
pub fn ehr_feature_schema() -> Vec<FeatureSpec> {
    parse_schema(EHR_FEATURE_BOUNDS).expect("shipped schema is valid")
}

/// Feature matrix plus missing mask, schema and optional ground truth.
///
/// Ground-truth labels live beside the matrix and are never part of it, so
/// fitting code that only sees [`Dataset::x`] cannot use them.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    missing: Array2<bool>,
    feature_specs: Vec<FeatureSpec>,
    labels: Option<Vec<usize>>,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    /// Validates shapes, schema, finiteness of observed cells and labels.
    /// Values under the mask are normalised to `NaN`.
    pub fn new(
        mut x: Array2<f64>,
        missing: Array2<bool>,
        feature_specs: Vec<FeatureSpec>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, DataError> {
        if x.dim() != missing.dim() {
            return Err(DataError::InvalidDataset(format!(
                "value shape {:?} differs from mask shape {:?}",
                x.dim(),
                missing.dim()
            )));
        }
        if x.ncols() != feature_specs.len() {
            return Err(DataError::InvalidDataset(format!(
                "{} columns but {} feature specs",
                x.ncols(),
                feature_specs.len()
            )));
        }
        validate_schema(&feature_specs)?;
        for ((i, j), v) in x.indexed_iter_mut() {
            if missing[[i, j]] {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(DataError::InvalidDataset(format!(
                    "non-finite observed value at ({i}, {j})"
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != x.nrows() {
                return Err(DataError::InvalidDataset(format!(
                    "{} labels for {} samples",
                    l.len(),
                    x.nrows()
                )));
            }
            if l.iter().copied().max().unwrap_or(0) < 1 && !l.is_empty() {
                return Err(DataError::InvalidDataset(
                    "labels must span at least two classes".into(),
                ));
            }
        }
        Ok(Self {
            x,
            missing,
            feature_specs,
            labels,
            class_names: None,
        })
    }

    /// Fully observed dataset.
    pub fn from_matrix(
        x: Array2<f64>,
        feature_specs: Vec<FeatureSpec>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, DataError> {
        let missing = Array2::from_elem(x.dim(), false);
        Self::new(x, missing, feature_specs, labels)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = Some(names);
        self
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn missing(&self) -> &Array2<bool> {
        &self.missing
    }

    pub fn feature_specs(&self) -> &[FeatureSpec] {
        &self.feature_specs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Fraction of missing cells over the whole matrix.
    pub fn missing_rate(&self) -> f64 {
        if self.missing.is_empty() {
            0.0
        } else {
            self.missing_count() as f64 / self.missing.len() as f64
        }
    }

    /// New dataset holding the given rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            missing: self.missing.select(Axis(0), rows),
            feature_specs: self.feature_specs.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            class_names: self.class_names.clone(),
        }
    }

    /// Bitwise equality, treating `NaN` cells as equal when their bits match.
    pub fn bitwise_eq(&self, other: &Dataset) -> bool {
        self.x.dim() == other.x.dim()
            && self
                .x
                .iter()
                .zip(other.x.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.missing == other.missing
            && self.feature_specs == other.feature_specs
            && self.labels == other.labels
    }

    /// Write the dataset as CSV; missing cells use the first missing token.
    pub fn write_csv<W: std::io::Write>(
        &self,
        w: W,
        label_column: Option<&str>,
        options: &CsvOptions,
    ) -> Result<(), DataError> {
        let token = options.missing_tokens.first().map_or("", String::as_str);
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.feature_specs.iter().map(|s| s.name.as_str()).collect();
        let label_column = label_column.filter(|_| self.labels.is_some());
        if let Some(lc) = label_column {
            header.push(lc);
        }
        wtr.write_record(&header)?;
        for i in 0..self.n_samples() {
            let mut rec: Vec<String> = (0..self.n_features())
                .map(|j| {
                    if self.missing[[i, j]] {
                        token.to_string()
                    } else {
                        self.x[[i, j]].to_string()
                    }
                })
                .collect();
            if label_column.is_some() {
                rec.push(self.labels.as_ref().expect("checked")[i].to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// CSV parsing options.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Cell contents (after trimming) treated as missing.
    pub missing_tokens: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            missing_tokens: vec![String::new(), "NA".to_string()],
        }
    }
}

pub fn load_csv(
    path: impl AsRef<Path>,
    specs: &[FeatureSpec],
    label_column: Option<&str>,
    options: &CsvOptions,
) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, specs, label_column, options)
}

/// Parse a CSV whose header names every feature in `specs`. Column order in
/// the result follows `specs`; extra columns are ignored.
pub fn read_csv<R: Read>(
    reader: R,
    specs: &[FeatureSpec],
    label_column: Option<&str>,
    options: &CsvOptions,
) -> Result<Dataset, DataError> {
    validate_schema(specs)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.iter().all(String::is_empty) {
        return Err(DataError::EmptyFile);
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let cols: Vec<usize> = specs.iter().map(|s| find(&s.name)).collect::<Result<_, _>>()?;
    let label_col = label_column.map(find).transpose()?;

    let is_missing = |cell: &str| options.missing_tokens.iter().any(|t| t == cell);
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut labels = Vec::new();
    let mut n_rows = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (spec, &c) in specs.iter().zip(&cols) {
            let cell = rec.get(c).unwrap_or("").trim();
            if is_missing(cell) {
                values.push(f64::NAN);
                mask.push(true);
            } else {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| DataError::NonNumericCell {
                        row,
                        column: spec.name.clone(),
                    })?;
                values.push(v);
                mask.push(false);
            }
        }
        if let Some(lc) = label_col {
            let cell = rec.get(lc).unwrap_or("").trim();
            let l: usize = cell.parse().map_err(|_| DataError::NonNumericCell {
                row,
                column: headers[lc].clone(),
            })?;
            labels.push(l);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(DataError::EmptyFile);
    }
    let d = specs.len();
    let x = Array2::from_shape_vec((n_rows, d), values).expect("row-major fill");
    let missing = Array2::from_shape_vec((n_rows, d), mask).expect("row-major fill");
    Dataset::new(
        x,
        missing,
        specs.to_vec(),
        label_col.map(|_| labels),
    )
}

/// Mask every observed value outside its inclusive `[bound_lo, bound_hi]`.
pub fn apply_bounds(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for (j, spec) in ds.feature_specs.iter().enumerate() {
        for i in 0..ds.n_samples() {
            if !out.missing[[i, j]] && !spec.contains(out.x[[i, j]]) {
                out.missing[[i, j]] = true;
                out.x[[i, j]] = f64::NAN;
            }
        }
    }
    out
}

/// Drop samples whose fraction of missing cells exceeds `max_rate`.
pub fn filter_missing_rate(ds: &Dataset, max_rate: f64) -> Result<Dataset, DataError> {
    if !(0.0..=1.0).contains(&max_rate) {
        return Err(DataError::InvalidArgument(format!(
            "max_rate {max_rate} outside [0, 1]"
        )));
    }
    let d = ds.n_features() as f64;
    let keep: Vec<usize> = ds
        .missing
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, row)| row.iter().filter(|&&m| m).count() as f64 / d <= max_rate)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(DataError::AllSamplesRemoved);
    }
    Ok(ds.select_rows(&keep))
}

/// Median of a non-empty slice; even counts average the two middle values.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Replace each missing cell with its feature's median of observed values.
pub fn impute_median(ds: &Dataset) -> Result<Dataset, DataError> {
    let mut out = ds.clone();
    for (j, spec) in ds.feature_specs.iter().enumerate() {
        let mut observed: Vec<f64> = ds
            .x
            .column(j)
            .iter()
            .zip(ds.missing.column(j))
            .filter(|(_, &m)| !m)
            .map(|(&v, _)| v)
            .collect();
        let med = median(&mut observed).ok_or_else(|| DataError::AllMissingFeature(spec.name.clone()))?;
        for i in 0..ds.n_samples() {
            if out.missing[[i, j]] {
                out.x[[i, j]] = med;
                out.missing[[i, j]] = false;
            }
        }
    }
    Ok(out)
}

/// Per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScalerParams {
    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

/// Z-score every feature with an `n` denominator. Constant features become
/// all zeros with a stored std of 1.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, ScalerParams), DataError> {
    if ds.missing_count() > 0 {
        return Err(DataError::InvalidDataset(
            "standardize requires a fully imputed dataset".into(),
        ));
    }
    let n = ds.n_samples() as f64;
    let mut means = Vec::with_capacity(ds.n_features());
    let mut stds = Vec::with_capacity(ds.n_features());
    let mut constant = Vec::with_capacity(ds.n_features());
    for col in ds.x.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let is_constant = std <= 1e-12 * mean.abs().max(1.0);
        means.push(mean);
        stds.push(if is_constant { 1.0 } else { std });
        constant.push(is_constant);
    }
    let params = ScalerParams { means, stds };
    let mut out = ds.clone();
    out.x = params.transform(ds.x.view());
    for (j, _) in constant.iter().enumerate().filter(|(_, &c)| c) {
        out.x.column_mut(j).fill(0.0);
    }
    Ok((out, params))
}

/// Draw `n` labelled samples without replacement so that the minority class
/// gets `round(n * r / (1 + r))` samples. The minority class is the less
/// frequent of the two classes (class 1 on a tie). Selected rows keep their
/// original order.
pub fn stratified_subsample(
    ds: &Dataset,
    n: usize,
    class_ratio: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    let labels = ds
        .labels()
        .ok_or_else(|| DataError::InvalidDataset("stratified subsampling needs labels".into()))?;
    if !(class_ratio > 0.0 && class_ratio <= 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "class_ratio {class_ratio} outside (0, 1]"
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(DataError::InvalidDataset(
            "stratified subsampling supports two classes".into(),
        ));
    }
    let ones: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let zeros: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let (minority_class, minority, majority_class, majority) = if zeros.len() < ones.len() {
        (0, zeros, 1, ones)
    } else {
        (1, ones, 0, zeros)
    };
    let n_min = (n as f64 * class_ratio / (1.0 + class_ratio)).round() as usize;
    let n_maj = n - n_min;
    for (class, pool, needed) in [
        (minority_class, &minority, n_min),
        (majority_class, &majority, n_maj),
    ] {
        if pool.len() < needed {
            return Err(DataError::InsufficientClassSamples {
                class,
                needed,
                available: pool.len(),
            });
        }
    }
    let mut rng = seed::rng(seed);
    let mut rows: Vec<usize> = index::sample(&mut rng, minority.len(), n_min)
        .into_iter()
        .map(|i| minority[i])
        .chain(
            index::sample(&mut rng, majority.len(), n_maj)
                .into_iter()
                .map(|i| majority[i]),
        )
        .collect();
    rows.sort_unstable();
    Ok(ds.select_rows(&rows))
}

/// Within-class covariance structure of a synthetic cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterShape {
    Spherical,
    Diagonal,
    Correlated,
}

/// Parameters of a two-class Gaussian cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    /// Minority:majority size ratio, e.g. `1 / 1.9`.
    pub class_ratio: f64,
    /// Distance between class means in units of average within-class std.
    pub separation: f64,
    pub cluster_shape: ClusterShape,
    pub missing_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidArgument(m));
        if self.n_features < 2 {
            return bad(format!("n_features {} < 2", self.n_features));
        }
        if self.n_samples < 2 {
            return bad(format!("n_samples {} < 2", self.n_samples));
        }
        if !(self.class_ratio > 0.0 && self.class_ratio <= 1.0) {
            return bad(format!("class_ratio {} outside (0, 1]", self.class_ratio));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return bad(format!("separation {} must be >= 0", self.separation));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate {} outside [0, 1)", self.missing_rate));
        }
        Ok(())
    }
}

/// Two-class Gaussian mixture. Class 1 is the minority. Both classes share a
/// covariance whose average marginal std is 1; their means sit
/// `separation` apart along a random unit direction.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let (n, d) = (spec.n_samples, spec.n_features);
    let mut rng = seed::rng(spec.seed);

    let chol = match spec.cluster_shape {
        ClusterShape::Spherical => Array2::eye(d),
        ClusterShape::Diagonal => {
            let mut stds: Array1<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
            let mean_std = stds.mean().expect("d >= 2");
            stds /= mean_std;
            Array2::from_diag(&stds)
        }
        ClusterShape::Correlated => {
            let a = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
            let mut cov = a.dot(&a.t()) / d as f64 + Array2::<f64>::eye(d) * 0.5;
            let mean_std = cov.diag().mapv(f64::sqrt).mean().expect("d >= 2");
            cov /= mean_std * mean_std;
            linalg::cholesky(cov.view()).expect("covariance is positive definite")
        }
    };

    let mut direction: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.dot(&direction).sqrt();
    direction /= norm;
    let offset = &direction * (spec.separation / 2.0);

    let n_min = (n as f64 * spec.class_ratio / (1.0 + spec.class_ratio)).round() as usize;
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < n_min)).collect();
    labels.shuffle(&mut rng);

    let mut x = Array2::<f64>::zeros((n, d));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let eps: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sample = chol.dot(&eps);
        let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
        row.assign(&(sample + &offset * sign));
    }

    let mut missing = Array2::from_elem((n, d), false);
    if spec.missing_rate > 0.0 {
        for m in missing.iter_mut() {
            *m = rng.random::<f64>() < spec.missing_rate;
        }
    }
    let specs = (0..d).map(|j| FeatureSpec::unbounded(format!("x{j}"))).collect();
    Dataset::new(x, missing, specs, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn specs(names: &[&str]) -> Vec<FeatureSpec> {
        names
            .iter()
            .map(|n| FeatureSpec::new(*n, "u", 0.0, 100.0))
            .collect()
    }

    #[test]
    fn load_marks_exactly_the_empty_cell() {
        let csv = "a,b\n1,2\n3,\n5,6\n";
        let ds = read_csv(csv.as_bytes(), &specs(&["a", "b"]), None, &CsvOptions::default()).unwrap();
        assert_eq!(ds.n_samples(), 3);
        let expected = array![[false, false], [false, true], [false, false]];
        assert_eq!(ds.missing(), &expected);
        assert_eq!(ds.x()[[2, 1]], 6.0);
    }

    #[test]
    fn load_follows_spec_order_and_na_token() {
        let csv = "b,label,a\nNA,1,4\n2,0,5\n";
        let ds = read_csv(csv.as_bytes(), &specs(&["a", "b"]), Some("label"), &CsvOptions::default())
            .unwrap();
        assert_eq!(ds.x()[[0, 0]], 4.0);
        assert!(ds.missing()[[0, 1]]);
        assert_eq!(ds.labels(), Some(&[1, 0][..]));
    }

    #[test]
    fn load_missing_column() {
        let csv = "a\n1\n";
        let err = read_csv(csv.as_bytes(), &specs(&["a", "b"]), None, &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "b"));
    }

    #[test]
    fn load_non_numeric_cell() {
        let csv = "a,b\n1,2\n3,abc\n";
        let err = read_csv(csv.as_bytes(), &specs(&["a", "b"]), None, &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::NonNumericCell { row: 1, ref column } if column == "b"));
    }

    #[test]
    fn load_empty_file() {
        let err = read_csv("".as_bytes(), &specs(&["a"]), None, &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::EmptyFile));
        let err = read_csv("a\n".as_bytes(), &specs(&["a"]), None, &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::EmptyFile));
    }

    #[test]
    fn shipped_schema_has_33_features() {
        let s = ehr_feature_schema();
        assert_eq!(s.len(), 33);
        assert_eq!(s[0], FeatureSpec::new("Age", "Y", 18.0, 110.0));
        assert_eq!(s[32].name, "HDL-C");
    }

    #[test]
    fn schema_rejects_duplicates_and_bad_bounds() {
        let dup = vec![FeatureSpec::new("a", "", 0.0, 1.0), FeatureSpec::new("a", "", 0.0, 1.0)];
        assert!(validate_schema(&dup).is_err());
        assert!(validate_schema(&[FeatureSpec::new("a", "", 1.0, 1.0)]).is_err());
    }

    #[test]
    fn age_above_bound_becomes_missing() {
        let age = vec![FeatureSpec::new("Age", "Y", 18.0, 110.0)];
        let ds = Dataset::from_matrix(array![[115.0], [110.0], [18.0], [17.9]], age, None).unwrap();
        let b = apply_bounds(&ds);
        assert_eq!(b.missing().column(0).to_vec(), vec![true, false, false, true]);
        assert_eq!(b.x()[[1, 0]], 110.0);
        // input untouched
        assert_eq!(ds.missing_count(), 0);
    }

    #[test]
    fn in_bound_data_is_unchanged() {
        let ds = Dataset::from_matrix(array![[1.0, 2.0], [3.0, 4.0]], specs(&["a", "b"]), None).unwrap();
        assert!(apply_bounds(&ds).bitwise_eq(&ds));
    }

    #[test]
    fn two_of_34_missing_is_removed_at_five_percent() {
        let names: Vec<String> = (0..34).map(|i| format!("f{i}")).collect();
        let sp: Vec<FeatureSpec> = names.iter().map(|n| FeatureSpec::unbounded(n.clone())).collect();
        let x = Array2::<f64>::ones((2, 34));
        let mut missing = Array2::from_elem((2, 34), false);
        missing[[0, 3]] = true;
        missing[[0, 7]] = true;
        missing[[1, 5]] = true;
        let ds = Dataset::new(x, missing, sp, Some(vec![0, 1])).unwrap();
        let f = filter_missing_rate(&ds, 0.05).unwrap();
        assert_eq!(f.n_samples(), 1);
        assert_eq!(f.labels(), Some(&[1][..]));
    }

    #[test]
    fn filter_removing_everything_errors() {
        let x = Array2::<f64>::ones((2, 2));
        let missing = array![[true, false], [false, true]];
        let ds = Dataset::new(x, missing, specs(&["a", "b"]), None).unwrap();
        assert!(matches!(filter_missing_rate(&ds, 0.0), Err(DataError::AllSamplesRemoved)));
    }

    #[test]
    fn median_imputation() {
        let x = array![[1.0], [2.0], [0.0], [4.0]];
        let missing = array![[false], [false], [true], [false]];
        let ds = Dataset::new(x, missing, specs(&["a"]), None).unwrap();
        let out = impute_median(&ds).unwrap();
        assert_eq!(out.x().column(0).to_vec(), vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(out.missing_count(), 0);
    }

    #[test]
    fn median_of_even_count_averages_middle() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn all_missing_feature_errors() {
        let x = array![[1.0, 0.0], [2.0, 0.0]];
        let missing = array![[false, true], [false, true]];
        let ds = Dataset::new(x, missing, specs(&["a", "b"]), None).unwrap();
        assert!(matches!(impute_median(&ds), Err(DataError::AllMissingFeature(ref n)) if n == "b"));
    }

    #[test]
    fn standardize_two_values() {
        let ds = Dataset::from_matrix(array![[0.0, 5.0], [2.0, 5.0]], specs(&["a", "b"]), None).unwrap();
        let (z, p) = standardize(&ds).unwrap();
        assert_eq!(z.x(), &array![[-1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(p.means, vec![1.0, 5.0]);
        assert_eq!(p.stds, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_column_standardizes_to_zero() {
        let ds = Dataset::from_matrix(array![[0.1], [0.1], [0.1]], specs(&["a"]), None).unwrap();
        let (z, p) = standardize(&ds).unwrap();
        assert!(z.x().iter().all(|&v| v == 0.0));
        assert_eq!(p.stds, vec![1.0]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let ds = Dataset::from_matrix(
            array![[1.0, -3.0], [2.5, 0.0], [7.0, 9.5], [0.25, 4.0]],
            specs(&["a", "b"]),
            None,
        )
        .unwrap();
        let (z1, _) = standardize(&ds).unwrap();
        let (z2, _) = standardize(&z1).unwrap();
        for (a, b) in z1.x().iter().zip(z2.x().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn labelled(n0: usize, n1: usize) -> Dataset {
        let n = n0 + n1;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let labels = (0..n).map(|i| usize::from(i >= n0)).collect();
        Dataset::from_matrix(x, specs(&["a", "b"]), Some(labels)).unwrap()
    }

    #[test]
    fn subsample_reproduces_cohort_counts() {
        let ds = labelled(5000, 3000);
        let s = stratified_subsample(&ds, 7333, 2534.0 / 4799.0, 1).unwrap();
        let ones = s.labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 2534);
        assert_eq!(s.n_samples() - ones, 4799);
    }

    #[test]
    fn subsample_full_size_is_permutation() {
        let ds = labelled(20, 10);
        let s = stratified_subsample(&ds, 30, 0.5, 3).unwrap();
        assert!(s.bitwise_eq(&ds));
    }

    #[test]
    fn subsample_insufficient_minority() {
        let ds = labelled(500, 50);
        let err = stratified_subsample(&ds, 200, 1.0, 0).unwrap_err();
        assert!(matches!(
            err,
            DataError::InsufficientClassSamples { class: 1, needed: 100, available: 50 }
        ));
    }

    #[test]
    fn subsample_is_deterministic() {
        let ds = labelled(300, 200);
        let a = stratified_subsample(&ds, 100, 0.5, 9).unwrap();
        let b = stratified_subsample(&ds, 100, 0.5, 9).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    fn synth(shape: ClusterShape, sep: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: 300,
            n_features: 5,
            class_ratio: 1.0 / 1.9,
            separation: sep,
            cluster_shape: shape,
            missing_rate: 0.1,
            seed,
        }
    }

    #[test]
    fn synthetic_is_bitwise_reproducible() {
        for shape in [ClusterShape::Spherical, ClusterShape::Diagonal, ClusterShape::Correlated] {
            let a = generate_synthetic(&synth(shape, 3.0, 5)).unwrap();
            let b = generate_synthetic(&synth(shape, 3.0, 5)).unwrap();
            assert!(a.bitwise_eq(&b));
            let c = generate_synthetic(&synth(shape, 3.0, 6)).unwrap();
            assert!(!a.bitwise_eq(&c));
        }
    }

    #[test]
    fn synthetic_class_counts_and_missing_rate() {
        let ds = generate_synthetic(&synth(ClusterShape::Spherical, 2.0, 1)).unwrap();
        let ones = ds.labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, (300.0 / 2.9_f64).round() as usize);
        assert!((ds.missing_rate() - 0.1).abs() < 0.03);
    }

    #[test]
    fn synthetic_class_means_are_separated() {
        let mut spec = synth(ClusterShape::Correlated, 4.0, 2);
        spec.n_samples = 4000;
        spec.missing_rate = 0.0;
        let ds = generate_synthetic(&spec).unwrap();
        let labels = ds.labels().unwrap();
        let mean_of = |c: usize| {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            ds.x().select(Axis(0), &rows).mean_axis(Axis(0)).unwrap()
        };
        let diff = mean_of(1) - mean_of(0);
        let dist = diff.dot(&diff).sqrt();
        assert!((dist - 4.0).abs() < 0.3, "distance {dist}");
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        let mut s = synth(ClusterShape::Spherical, 1.0, 0);
        s.n_features = 1;
        assert!(generate_synthetic(&s).is_err());
        let mut s = synth(ClusterShape::Spherical, -1.0, 0);
        s.n_features = 3;
        assert!(generate_synthetic(&s).is_err());
    }
}
