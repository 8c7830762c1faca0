//! Shared immutable data types: datasets, splits, the quantile grid and the
//! run configuration consumed by every other module.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable tabular frame: n feature rows plus one numeric response column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    response: Vec<f64>,
    column_names: Vec<String>,
    response_name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        response: Vec<f64>,
        column_names: Vec<String>,
        response_name: String,
    ) -> Result<Self> {
        if features.is_empty() || response.is_empty() {
            return Err(Error::EmptyFile);
        }
        if features.len() != response.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} feature rows vs {} responses",
                features.len(),
                response.len()
            )));
        }
        let d = features[0].len();
        if d == 0 || column_names.len() != d {
            return Err(Error::SchemaMismatch(format!(
                "{} column names for {} feature columns",
                column_names.len(),
                d
            )));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue { row: i, col: column_names[j].clone() });
                }
            }
        }
        for (i, v) in response.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row: i, col: response_name.clone() });
            }
        }
        Ok(Dataset { features, response, column_names, response_name })
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn d(&self) -> usize {
        self.features[0].len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Materialize the rows named by `idx` as (features, targets).
    pub fn select(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = idx.iter().map(|&i| self.features[i].clone()).collect();
        let ys = idx.iter().map(|&i| self.response[i]).collect();
        (xs, ys)
    }
}

/// Parse an RFC-4180 CSV (header required, '.' decimal separator) into a
/// [`Dataset`], extracting `response_column` and keeping row order.
pub fn load_csv(path: &Path, response_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let response_pos = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingColumn(response_column.to_string()))?;
    let column_names: Vec<String> =
        headers.iter().enumerate().filter(|(j, _)| *j != response_pos).map(|(_, h)| h.clone()).collect();

    let mut features = Vec::new();
    let mut response = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::NonNumericCell { row: i, col: headers[j].clone() })?;
            if !v.is_finite() {
                return Err(Error::NonNumericCell { row: i, col: headers[j].clone() });
            }
            if j == response_pos {
                response.push(v);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::EmptyFile);
    }
    Dataset::new(features, response, column_names, response_column.to_string())
}

/// Disjoint index sets over a [`Dataset`]: proper training set, two
/// calibration halves, and a held-out test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_idx: Vec<usize>,
    pub cal1_idx: Vec<usize>,
    pub cal2_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl DataSplit {
    /// Union of both calibration halves, in split order.
    pub fn cal_idx(&self) -> Vec<usize> {
        self.cal1_idx.iter().chain(self.cal2_idx.iter()).copied().collect()
    }
}

/// 42.5/42.5/15 train/calibration/test split with the calibration pool
/// halved; seeded permutation, deterministic for a fixed seed.
pub fn split_dataset(ds: &Dataset, cfg: &RunConfig) -> Result<DataSplit> {
    let n = ds.n();
    if n < 8 {
        return Err(Error::TooFewRows { needed: 8, got: n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    perm.shuffle(&mut rng);

    let n_train = (0.425 * n as f64).round() as usize;
    let n_test = (0.15 * n as f64).round() as usize;
    let n_cal = n - n_train - n_test;
    let n_cal1 = n_cal - n_cal / 2; // cal1 gets the extra index when odd

    let train_idx = perm[..n_train].to_vec();
    let cal1_idx = perm[n_train..n_train + n_cal1].to_vec();
    let cal2_idx = perm[n_train + n_cal1..n_train + n_cal].to_vec();
    let test_idx = perm[n_train + n_cal..].to_vec();
    Ok(DataSplit { train_idx, cal1_idx, cal2_idx, test_idx })
}

/// Closed interval in response units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Interval { lo, hi }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Quantile levels [1/K, 2/K, ..., (K-1)/K].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileGrid {
    k: usize,
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("grid size K must be >= 2, got {k}")));
        }
        let levels = (1..k).map(|i| i as f64 / k as f64).collect();
        Ok(QuantileGrid { k, levels })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The K-1 interior levels, strictly increasing in (0, 1).
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModel {
    Gbt,
    Knn,
}

/// Run configuration shared by the fitting pipeline, calibrators and CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub groups: usize,
    pub grid_size: usize,
    pub pac_confidence: f64,
    pub seed: u64,
    pub n_min: usize,
    pub base_model: BaseModel,
    pub density_floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.1,
            groups: 10,
            grid_size: 20,
            pac_confidence: 0.9,
            seed: 0,
            n_min: 30,
            base_model: BaseModel::Gbt,
            density_floor: 1e-6,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.groups < 1 {
            return Err(Error::InvalidConfig("groups must be >= 1".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig("grid size must be >= 2".into()));
        }
        if !(self.pac_confidence > 0.0 && self.pac_confidence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pac_confidence must be in (0,1), got {}",
                self.pac_confidence
            )));
        }
        if self.density_floor <= 0.0 {
            return Err(Error::InvalidConfig("density_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Per-column affine transform parameters fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalerParams {
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub response_mean: f64,
    pub response_scale: f64,
}

impl ScalerParams {
    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.feature_means.len() {
            return Err(Error::DimensionMismatch { expected: self.feature_means.len(), got: row.len() });
        }
        Ok(row
            .iter()
            .zip(self.feature_means.iter().zip(&self.feature_scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn transform_response(&self, y: f64) -> f64 {
        (y - self.response_mean) / self.response_scale
    }

    pub fn inverse_response(&self, z: f64) -> f64 {
        z * self.response_scale + self.response_mean
    }
}

fn mean_and_sample_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standardize every feature column and the response to zero mean and unit
/// sample standard deviation, statistics taken from `train_idx` only.
/// Constant columns keep scale 1 so the transform is always invertible.
pub fn standardize(ds: &Dataset, train_idx: &[usize]) -> Result<(Dataset, ScalerParams)> {
    if train_idx.len() < 2 {
        return Err(Error::TooFewRows { needed: 2, got: train_idx.len() });
    }
    let d = ds.d();
    let mut feature_means = Vec::with_capacity(d);
    let mut feature_scales = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = train_idx.iter().map(|&i| ds.row(i)[j]).collect();
        let (m, sd) = mean_and_sample_sd(&col);
        feature_means.push(m);
        feature_scales.push(if sd > 0.0 { sd } else { 1.0 });
    }
    let resp: Vec<f64> = train_idx.iter().map(|&i| ds.response()[i]).collect();
    let (rm, rsd) = mean_and_sample_sd(&resp);
    let params = ScalerParams {
        feature_means,
        feature_scales,
        response_mean: rm,
        response_scale: if rsd > 0.0 { rsd } else { 1.0 },
    };

    let features: Vec<Vec<f64>> =
        ds.features().iter().map(|row| params.transform_row(row)).collect::<Result<_>>()?;
    let response: Vec<f64> = ds.response().iter().map(|&y| params.transform_response(y)).collect();
    let std_ds = Dataset::new(
        features,
        response,
        ds.column_names().to_vec(),
        ds.response_name().to_string(),
    )?;
    Ok((std_ds, params))
}
