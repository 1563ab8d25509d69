//! Datasets: the sine toy problem, CSV ingestion, splitting, standardization.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, TrainData};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::Shape {
                at: "dataset targets".into(),
                expected: x.rows(),
                got: y.rows(),
            });
        }
        Ok(Dataset {
            name: name.into(),
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
        }
    }

    fn concat(&self, other: &Dataset) -> Dataset {
        let rows = |a: &Matrix, b: &Matrix| {
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Matrix::from_vec(a.rows() + b.rows(), a.cols(), data).expect("same width")
        };
        Dataset {
            name: self.name.clone(),
            x: rows(&self.x, &other.x),
            y: rows(&self.y, &other.y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// `y = 2 sin x + noise`: 200 points on `[-30, -20]` with noise variance
/// 0.25 and 200 on `[20, 30]` with variance 1, split 2/3 train and 1/3
/// validation; the test set is 200 noiseless points evenly spaced on
/// `[-40, 40]`.
pub fn toy_sine_generate(seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(400);
    let mut ys = Vec::with_capacity(400);
    for (lo, hi, variance) in [(-30.0, -20.0, 0.25f64), (20.0, 30.0, 1.0)] {
        let noise = Normal::new(0.0, variance.sqrt()).expect("positive std");
        for _ in 0..200 {
            let x: f64 = rng.random_range(lo..=hi);
            xs.push(x);
            ys.push(2.0 * x.sin() + noise.sample(&mut rng));
        }
    }
    let pool = Dataset {
        name: "toy".into(),
        x: Matrix::column_vector(xs),
        y: Matrix::column_vector(ys),
    };
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut rng);
    let n_valid = pool.len() / 3;
    let (valid_idx, train_idx) = idx.split_at(n_valid);

    let grid: Vec<f64> = (0..200).map(|i| -40.0 + 80.0 * i as f64 / 199.0).collect();
    let test = Dataset {
        name: "toy".into(),
        y: Matrix::column_vector(grid.iter().map(|x| 2.0 * x.sin()).collect()),
        x: Matrix::column_vector(grid),
    };
    Splits {
        train: pool.subset(train_idx),
        valid: pool.subset(valid_idx),
        test,
    }
}

/// Reads a headed, comma-separated numeric file. Every column other than
/// `target` is a feature.
pub fn load_csv(path: &Path, target: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, 1, "header", e.to_string()))?
        .clone();
    let target_col =
        headers
            .iter()
            .position(|h| h == target)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: target.to_string(),
            })?;
    let d = headers.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, row, "record", e.to_string()))?;
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    csv_error(path, row, &headers[j], format!("not a number: `{cell}`"))
                })?;
            if j == target_col {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(
        name,
        Matrix::from_vec(ys.len(), d, xs)?,
        Matrix::column_vector(ys),
    )
}

fn csv_error(path: &Path, row: usize, column: &str, msg: String) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        msg,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.valid, self.test];
        if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "split fractions must be positive and sum to 1".into(),
            ));
        }
        Ok(())
    }

    /// Index partition: seeded shuffle, then `[valid | test | train]` with
    /// floor-sized validation and test parts.
    pub fn partition(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let n_valid = (n as f64 * self.valid + 1e-9).floor() as usize;
        let n_test = (n as f64 * self.test + 1e-9).floor() as usize;
        let n_train = n.saturating_sub(n_valid + n_test);
        if n_valid == 0 || n_test == 0 || n_train == 0 {
            return Err(Error::Empty(format!(
                "split of {n} rows leaves an empty part ({n_train}/{n_valid}/{n_test})"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let valid = idx[..n_valid].to_vec();
        let test = idx[n_valid..n_valid + n_test].to_vec();
        let train = idx[n_valid + n_test..].to_vec();
        Ok((train, valid, test))
    }
}

pub fn make_splits(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let (train, valid, test) = spec.partition(dataset.len())?;
    Ok(Splits {
        train: dataset.subset(&train),
        valid: dataset.subset(&valid),
        test: dataset.subset(&test),
    })
}

impl Splits {
    /// Training and validation rows together.
    pub fn train_valid(&self) -> Dataset {
        self.train.concat(&self.valid)
    }
}

/// Column statistics fitted on the training split. Constant feature columns
/// are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub x_keep: Vec<bool>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

const CONSTANT_STD: f64 = 1e-12;

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    (0..m.cols())
        .map(|c| {
            let col = m.column(c);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip()
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        let (xm, xs) = column_stats(&train.x);
        let (ym, ys) = column_stats(&train.y);
        if let Some(c) = ys.iter().position(|s| *s <= CONSTANT_STD) {
            return Err(Error::Config(format!(
                "target column {c} has zero variance"
            )));
        }
        let x_keep: Vec<bool> = xs.iter().map(|s| *s > CONSTANT_STD).collect();
        if !x_keep.iter().any(|k| *k) {
            return Err(Error::Config("every feature column is constant".into()));
        }
        let keep = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter()
                .zip(&x_keep)
                .filter(|(_, k)| **k)
                .map(|(v, _)| v)
                .collect()
        };
        Ok(Standardizer {
            x_mean: keep(xm),
            x_std: keep(xs),
            x_keep: x_keep.clone(),
            y_mean: ym,
            y_std: ys,
        })
    }

    /// Number of retained feature columns.
    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn apply_x(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.x_keep.len() {
            return Err(Error::Shape {
                at: "feature columns".into(),
                expected: self.x_keep.len(),
                got: x.cols(),
            });
        }
        Ok(scale(
            &x.select_cols(&self.x_keep),
            &self.x_mean,
            &self.x_std,
        ))
    }

    pub fn apply_y(&self, y: &Matrix) -> Result<Matrix> {
        if y.cols() != self.y_mean.len() {
            return Err(Error::Shape {
                at: "target columns".into(),
                expected: self.y_mean.len(),
                got: y.cols(),
            });
        }
        Ok(scale(y, &self.y_mean, &self.y_std))
    }

    /// Inverse of `apply_x` on the retained columns.
    pub fn invert_x(&self, x: &Matrix) -> Matrix {
        unscale(x, &self.x_mean, &self.x_std)
    }

    pub fn invert_y(&self, y: &Matrix) -> Matrix {
        unscale(y, &self.y_mean, &self.y_std)
    }

    /// Maps standardized predictive means and variances to original units.
    pub fn destandardize_prediction(&self, mu: &Matrix, var: &Matrix) -> (Matrix, Matrix) {
        let mu = unscale(mu, &self.y_mean, &self.y_std);
        let mut out_var = var.clone();
        let cols = var.cols();
        for (k, v) in out_var.data_mut().iter_mut().enumerate() {
            let s = self.y_std[k % cols];
            *v *= s * s;
        }
        (mu, out_var)
    }

    pub fn train_data(&self, splits: &Splits) -> Result<TrainData> {
        Ok(TrainData {
            x_train: self.apply_x(&splits.train.x)?,
            y_train: self.apply_y(&splits.train.y)?,
            x_valid: self.apply_x(&splits.valid.x)?,
            y_valid: self.apply_y(&splits.valid.y)?,
        })
    }
}

fn scale(m: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = m.clone();
    let cols = m.cols();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        let c = k % cols;
        *v = (*v - mean[c]) / std[c];
    }
    out
}

fn unscale(m: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = m.clone();
    let cols = m.cols();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        let c = k % cols;
        *v = *v * std[c] + mean[c];
    }
    out
}
