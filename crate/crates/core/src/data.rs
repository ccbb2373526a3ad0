//! Datasets: synthetic generators, CSV ingestion, standardization and
//! PCA-based in-distribution / out-of-distribution splits.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Targets;
use crate::numerics::{pca_first_scores, Law, RandomStream};
use crate::Matrix;

pub const STD_FLOOR: f64 = 1e-8;

/// Affine map `x ↦ (x − mean) / std` for features and, for regression, targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Mean and population standard deviation (floored), accumulated relative to
/// the first value so constant columns come out exactly.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return (0.0, 1.0);
    };
    let n = values.clone().count() as f64;
    let shift = values.clone().map(|v| v - first).sum::<f64>() / n;
    let mean = first + shift;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl Standardizer {
    pub fn identity(features: usize) -> Self {
        Self {
            feature_mean: vec![0.0; features],
            feature_std: vec![1.0; features],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    /// Statistics of `train`. Class labels are left untouched.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::contract("cannot standardize on an empty dataset"));
        }
        let b = train.x.cols();
        let (mut feature_mean, mut feature_std) = (Vec::with_capacity(b), Vec::with_capacity(b));
        for j in 0..b {
            let (m, s) = mean_std((0..train.len()).map(|i| train.x[(i, j)]));
            feature_mean.push(m);
            feature_std.push(s);
        }
        let (target_mean, target_std) = match &train.y {
            Targets::Real(y) => mean_std(y.iter().copied()),
            Targets::Labels(_) => (0.0, 1.0),
        };
        Ok(Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        })
    }

    pub fn apply_features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_cols(x.cols())?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out
                .row_mut(i)
                .iter_mut()
                .zip(&self.feature_mean)
                .zip(&self.feature_std)
            {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse_features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_cols(x.cols())?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out
                .row_mut(i)
                .iter_mut()
                .zip(&self.feature_mean)
                .zip(&self.feature_std)
            {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    pub fn apply_targets(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|v| (v - self.target_mean) / self.target_std)
            .collect()
    }

    pub fn inverse_targets(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|v| v * self.target_std + self.target_mean)
            .collect()
    }

    /// Standardizes features and real targets of `ds`.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let y = match &ds.y {
            Targets::Real(v) => Targets::Real(self.apply_targets(v)),
            labels => labels.clone(),
        };
        Ok(Dataset {
            x: self.apply_features(&ds.x)?,
            y,
            feature_names: ds.feature_names.clone(),
            target_name: ds.target_name.clone(),
            scaling: self.clone(),
        })
    }

    fn check_cols(&self, cols: usize) -> Result<()> {
        if cols != self.feature_mean.len() {
            return Err(Error::contract(format!(
                "standardizer fitted on {} features, got {cols}",
                self.feature_mean.len()
            )));
        }
        Ok(())
    }
}

/// Features, targets and the standardization already applied to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Targets<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Map that produced the stored values from raw data; identity for raw data.
    pub scaling: Standardizer,
}

impl Dataset {
    pub fn new(x: Matrix, y: Targets<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} targets",
                x.rows(),
                y.len()
            )));
        }
        let b = x.cols();
        Ok(Self {
            feature_names: (0..b).map(|j| format!("x{j}")).collect(),
            target_name: "y".into(),
            scaling: Standardizer::identity(b),
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.y, Targets::Labels(_))
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select(idx),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            scaling: self.scaling.clone(),
        }
    }

    /// Reinterprets real targets as class labels; they must be non-negative integers.
    pub fn into_classification(self) -> Result<Dataset> {
        let Targets::Real(values) = &self.y else {
            return Ok(self);
        };
        let labels = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                    Ok(v as usize)
                } else {
                    Err(Error::contract(format!("target {v} at row {i} is not a class label")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            y: Targets::Labels(labels),
            ..self
        })
    }
}

fn check_counts(n_train: usize, n_val: usize) -> Result<()> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::contract("dataset sizes must be at least 1"));
    }
    Ok(())
}

fn generator_streams(seed: u64) -> RandomStream {
    RandomStream::new(seed, Law::StandardNormal)
}

/// `n` two-moons points with labels alternating `0, 1, 0, …`.
///
/// Class 0 lies on the upper unit half-circle, class 1 on the lower one
/// shifted by `(1, −0.5)`; angles are uniform on `[0, π]`.
pub fn two_moons_sample(n: usize, noise: f64, stream: &mut RandomStream) -> Dataset {
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = PI * stream.uniform();
        let label = i % 2;
        let (px, py) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(px + noise * stream.normal());
        data.push(py + noise * stream.normal());
        labels.push(label);
    }
    Dataset::new(
        Matrix::from_vec(n, 2, data).expect("two columns"),
        Targets::Labels(labels),
    )
    .expect("matching rows")
}

pub fn gen_two_moons(
    n_train: usize,
    n_val: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_counts(n_train, n_val)?;
    let root = generator_streams(seed);
    Ok((
        two_moons_sample(n_train, noise, &mut root.derive(0)),
        two_moons_sample(n_val, noise, &mut root.derive(1)),
    ))
}

pub const REGRESSION_CENTERS: [f64; 2] = [-0.5, 0.75];
pub const REGRESSION_INPUT_STD: f64 = 0.1;
pub const REGRESSION_NOISE_VAR: f64 = 0.02;

/// `f*(x) = 0.3 (x + sin 2πx + sin 4πx)`.
pub fn regression_target(x: f64) -> f64 {
    0.3 * (x + (2.0 * PI * x).sin() + (4.0 * PI * x).sin())
}

/// Inputs from an even mixture of `N(−0.5, 0.1²)` and `N(0.75, 0.1²)`,
/// targets `f*(x) + ε` with `ε ∼ N(0, 0.02)` (variance 0.02).
pub fn regression_1d_sample(n: usize, stream: &mut RandomStream) -> Dataset {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let noise_std = REGRESSION_NOISE_VAR.sqrt();
    for _ in 0..n {
        let center = REGRESSION_CENTERS[stream.index(2)];
        let x = center + REGRESSION_INPUT_STD * stream.normal();
        xs.push(x);
        ys.push(regression_target(x) + noise_std * stream.normal());
    }
    Dataset::new(Matrix::from_vec(n, 1, xs).expect("one column"), Targets::Real(ys))
        .expect("matching rows")
}

pub fn gen_1d_regression(n_train: usize, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    check_counts(n_train, n_val)?;
    let root = generator_streams(seed);
    Ok((
        regression_1d_sample(n_train, &mut root.derive(0)),
        regression_1d_sample(n_val, &mut root.derive(1)),
    ))
}

/// `n` evenly spaced points on the origin-centered circle of `radius`.
pub fn ring(n: usize, radius: f64) -> Matrix {
    let mut data = Vec::with_capacity(2 * n);
    for k in 0..n {
        let t = 2.0 * PI * k as f64 / n as f64;
        data.push(radius * t.cos());
        data.push(radius * t.sin());
    }
    Matrix::from_vec(n, 2, data).expect("two columns")
}

/// `n` evenly spaced values on `[lo, hi]` as a one-column matrix.
pub fn grid_1d(n: usize, lo: f64, hi: f64) -> Matrix {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    Matrix::from_vec(n, 1, (0..n).map(|i| lo + step * i as f64).collect()).expect("one column")
}

/// Reads a headed, comma-separated numeric file. All columns other than
/// `target` become features, in header order.
pub fn load_csv(path: &Path, target: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target_col = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::MissingColumn(target.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: String::new(),
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: header[j].clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: header[j].clone(),
                    message: "value is not finite".into(),
                });
            }
            if j == target_col {
                y.push(value);
            } else {
                data.push(value);
            }
        }
        rows += 1;
    }
    let b = feature_names.len();
    Ok(Dataset {
        x: Matrix::from_vec(rows, b, data)?,
        y: Targets::Real(y),
        scaling: Standardizer::identity(b),
        feature_names,
        target_name: target.to_string(),
    })
}

/// Writes `ds` as CSV with the target in the last column.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    writer.write_record(&header)?;
    for i in 0..ds.len() {
        let mut record: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        record.push(match &ds.y {
            Targets::Real(v) => v[i].to_string(),
            Targets::Labels(v) => v[i].to_string(),
        });
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}

/// Which rows of a PCA split are used for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Train on the central half of the first principal component.
    Extrapolation,
    /// Train on the two outer quarters.
    Interpolation,
    /// Train on a random half.
    Random,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Extrapolation => "extrapolation",
            SplitMode::Interpolation => "interpolation",
            SplitMode::Random => "random",
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extrapolation" => Ok(SplitMode::Extrapolation),
            "interpolation" => Ok(SplitMode::Interpolation),
            "random" => Ok(SplitMode::Random),
            other => Err(Error::contract(format!(
                "unknown split `{other}` (expected extrapolation, interpolation or random)"
            ))),
        }
    }
}

/// Marks the rows whose first-component score lies between the 25% and 75%
/// quantiles.
///
/// Rows are ranked by `(score, row index)`; rank `p` is internal when
/// `⌈0.25 (n−1)⌉ ≤ p ≤ ⌊0.75 (n−1)⌋`. For distinct scores this is the
/// inclusive interval between the linearly interpolated quantiles.
pub fn internal_mask(scores: &[f64]) -> Vec<bool> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let span = n.saturating_sub(1) as f64;
    let lo = (0.25 * span).ceil() as usize;
    let hi = (0.75 * span).floor() as usize;
    let mut mask = vec![false; n];
    for (rank, &row) in order.iter().enumerate() {
        mask[row] = rank >= lo && rank <= hi;
    }
    mask
}

/// Splits `ds` into a training domain and an out-of-distribution remainder.
pub fn pca_split(ds: &Dataset, mode: SplitMode, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n < 4 {
        return Err(Error::contract(format!("PCA split needs at least 4 rows, got {n}")));
    }
    let mut internal = internal_mask(&pca_first_scores(&ds.x)?);
    if mode == SplitMode::Random {
        let k = internal.iter().filter(|&&m| m).count();
        let mut idx: Vec<usize> = (0..n).collect();
        RandomStream::new(seed, Law::UniformSym).shuffle(&mut idx);
        internal = vec![false; n];
        for &i in &idx[..k] {
            internal[i] = true;
        }
    }
    let inside: Vec<usize> = (0..n).filter(|&i| internal[i]).collect();
    let outside: Vec<usize> = (0..n).filter(|&i| !internal[i]).collect();
    Ok(match mode {
        SplitMode::Extrapolation | SplitMode::Random => (ds.select(&inside), ds.select(&outside)),
        SplitMode::Interpolation => (ds.select(&outside), ds.select(&inside)),
    })
}

/// Random partition with `round(train_fraction · n)` rows (at least one on
/// each side) in the first part; both parts keep the original row order.
pub fn train_val_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::contract("need at least two rows to split"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let k = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    RandomStream::new(seed, Law::UniformSym).shuffle(&mut idx);
    let mut first = idx[..k].to_vec();
    let mut second = idx[k..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((ds.select(&first), ds.select(&second)))
}

/// Fits a standardizer on `train` and applies it to `train` and every other set.
pub fn standardize_fit_apply(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Standardizer)> {
    let st = Standardizer::fit(train)?;
    let train = st.apply(train)?;
    let others = others
        .iter()
        .map(|d| st.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, others, st))
}

/// Where the rows of an experiment come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    TwoMoons {
        n_train: usize,
        n_val: usize,
        noise: f64,
    },
    Regression1d {
        n_train: usize,
        n_val: usize,
    },
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        classification: bool,
    },
}

/// Everything needed to regenerate the train, validation, test and OOD sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub source: DataSource,
    /// PCA split of tabular data; synthetic sources ignore it.
    pub split: Option<SplitMode>,
    pub seed: u64,
    /// Share of the remaining in-distribution rows used for training.
    pub train_fraction: f64,
    /// Share of the in-distribution rows held out as the test set.
    pub test_fraction: f64,
    /// Human-readable description of the OOD set.
    pub ood: String,
}

pub const TWO_MOONS_TEST: usize = 500;
pub const RING_POINTS: usize = 500;
pub const RING_RADIUS: f64 = 3.0;
pub const REGRESSION_TEST: usize = 200;
pub const REGRESSION_OOD: (f64, f64) = (1.5, 2.0);
pub const REGRESSION_OOD_POINTS: usize = 100;

impl DatasetManifest {
    pub fn two_moons(seed: u64) -> Self {
        Self {
            name: "two-moons".into(),
            source: DataSource::TwoMoons {
                n_train: 200,
                n_val: 50,
                noise: 0.1,
            },
            split: None,
            seed,
            train_fraction: 0.8,
            test_fraction: 0.2,
            ood: format!("{RING_POINTS} points evenly spaced on the circle of radius {RING_RADIUS}"),
        }
    }

    pub fn regression_1d(seed: u64) -> Self {
        Self {
            name: "regression-1d".into(),
            source: DataSource::Regression1d {
                n_train: 100,
                n_val: 20,
            },
            split: None,
            seed,
            train_fraction: 0.8,
            test_fraction: 0.2,
            ood: format!(
                "{REGRESSION_OOD_POINTS} evenly spaced inputs on [{}, {}]",
                REGRESSION_OOD.0, REGRESSION_OOD.1
            ),
        }
    }

    pub fn csv(path: PathBuf, target: String, split: SplitMode, seed: u64) -> Self {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into());
        Self {
            name,
            source: DataSource::Csv {
                path,
                target,
                classification: false,
            },
            split: Some(split),
            seed,
            train_fraction: 0.8,
            test_fraction: 0.2,
            ood: format!("rows outside the {split} training domain"),
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.source, DataSource::Csv { .. })
    }

    pub fn split_name(&self) -> &'static str {
        self.split.map_or("synthetic", SplitMode::as_str)
    }

    /// Builds all partitions, standardized with statistics of the training rows.
    pub fn prepare(&self) -> Result<PreparedData> {
        let root = generator_streams(self.seed);
        let (train, val, test, ood) = match &self.source {
            DataSource::TwoMoons {
                n_train,
                n_val,
                noise,
            } => {
                let (train, val) = gen_two_moons(*n_train, *n_val, *noise, self.seed)?;
                let test = two_moons_sample(TWO_MOONS_TEST, *noise, &mut root.derive(2));
                (train, val, test, ring(RING_POINTS, RING_RADIUS))
            }
            DataSource::Regression1d { n_train, n_val } => {
                let (train, val) = gen_1d_regression(*n_train, *n_val, self.seed)?;
                let test = regression_1d_sample(REGRESSION_TEST, &mut root.derive(2));
                let ood = grid_1d(REGRESSION_OOD_POINTS, REGRESSION_OOD.0, REGRESSION_OOD.1);
                (train, val, test, ood)
            }
            DataSource::Csv {
                path,
                target,
                classification,
            } => {
                let mut all = load_csv(path, target)?;
                if *classification {
                    all = all.into_classification()?;
                }
                let mode = self.split.unwrap_or(SplitMode::Extrapolation);
                let (id, ood) = pca_split(&all, mode, self.seed)?;
                let (rest, test) = train_val_split(&id, 1.0 - self.test_fraction, self.seed ^ 1)?;
                let (train, val) = train_val_split(&rest, self.train_fraction, self.seed ^ 2)?;
                (train, val, test, ood.x)
            }
        };
        let (train, others, standardizer) = standardize_fit_apply(&train, &[&val, &test])?;
        let ood = standardizer.apply_features(&ood)?;
        let mut others = others.into_iter();
        Ok(PreparedData {
            train,
            val: others.next().unwrap(),
            test: others.next().unwrap(),
            ood,
            standardizer,
        })
    }
}

/// Standardized partitions of one experiment.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    /// In-distribution rows never used for fitting.
    pub test: Dataset,
    /// Out-of-distribution inputs.
    pub ood: Matrix,
    pub standardizer: Standardizer,
}
