//! Synthetic federated polynomial regression, train/test splitting and
//! delimited-text import/export.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{poly_features, Mat};

pub const POLY_DEGREE: usize = 3;
pub const FEATURE_DIM: usize = POLY_DEGREE + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub client_id: usize,
    pub x_train: Mat,
    pub y_train: Vec<f64>,
    pub x_test: Mat,
    pub y_test: Vec<f64>,
    /// Ground-truth polynomial coefficients, lowest order first.
    pub gt_coeffs: Option<Vec<f64>>,
}

impl DataShard {
    pub fn dim(&self) -> usize {
        self.x_train.cols()
    }

    /// Noiseless targets at the test inputs, when the ground truth is known.
    pub fn clean_test_targets(&self) -> Option<Vec<f64>> {
        let gt = self.gt_coeffs.as_ref()?;
        self.x_test.matvec(gt).ok()
    }

    fn validate(&self) -> Result<()> {
        if self.x_train.rows() != self.y_train.len() || self.x_test.rows() != self.y_test.len() {
            return Err(Error::DimensionMismatch {
                context: "DataShard",
                expected: self.x_train.rows(),
                got: self.y_train.len(),
            });
        }
        if self.x_test.rows() > 0 && self.x_test.cols() != self.x_train.cols() {
            return Err(Error::DimensionMismatch {
                context: "DataShard",
                expected: self.x_train.cols(),
                got: self.x_test.cols(),
            });
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.x_train.is_finite()
            || !self.x_test.is_finite()
            || !finite(&self.y_train)
            || !finite(&self.y_test)
        {
            return Err(Error::NonFiniteInput("DataShard"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettingSpec {
    /// 1, 2 or 3: the number of client-specific (highest-order) coefficients.
    pub setting: u8,
    pub clients: usize,
    pub samples_per_client: usize,
    pub noise_std: f64,
    pub train_ratio: f64,
    pub seed: u64,
}

impl SettingSpec {
    pub fn new(setting: u8, clients: usize, seed: u64) -> Self {
        SettingSpec {
            setting,
            clients,
            samples_per_client: 200,
            noise_std: 0.1,
            train_ratio: 0.9,
            seed,
        }
    }

    pub fn personal_coeffs(&self) -> usize {
        self.setting as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.setting) {
            return Err(Error::InvalidSetting(format!("setting must be 1, 2 or 3, got {}", self.setting)));
        }
        if self.clients < 2 {
            return Err(Error::InvalidSetting(format!(
                "at least 2 clients required, got {}",
                self.clients
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidSetting(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::InvalidSetting(format!(
                "train ratio must lie in (0, 1), got {}",
                self.train_ratio
            )));
        }
        if self.samples_per_client < 2 {
            return Err(Error::InvalidSetting("need at least 2 samples per client".into()));
        }
        Ok(())
    }
}

fn design(xs: &[f64]) -> Result<Mat> {
    let rows = xs
        .iter()
        .map(|&x| poly_features(x, POLY_DEGREE))
        .collect::<Result<Vec<_>>>()?;
    Mat::from_rows(&rows)
}

/// One shard per client. Low-order coefficients are shared, the top
/// `setting` coefficients are drawn per client; all coefficients and
/// abscissae are uniform on [−1, 1].
pub fn generate_setting(spec: &SettingSpec) -> Result<Vec<DataShard>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared_len = FEATURE_DIM - spec.personal_coeffs();
    let shared: Vec<f64> = (0..shared_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidSetting(e.to_string()))?;

    (0..spec.clients)
        .map(|client_id| {
            let mut coeffs = shared.clone();
            coeffs.extend((shared_len..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)));
            let xs: Vec<f64> = (0..spec.samples_per_client)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            let x = design(&xs)?;
            let clean = x.matvec(&coeffs)?;
            let y: Vec<f64> = clean.iter().map(|f| f + noise.sample(&mut rng)).collect();
            let split_seed = rng.random();
            let ((x_train, y_train), (x_test, y_test)) = split(&x, &y, spec.train_ratio, split_seed)?;
            Ok(DataShard {
                client_id,
                x_train,
                y_train,
                x_test,
                y_test,
                gt_coeffs: Some(coeffs),
            })
        })
        .collect()
}

pub type Split = ((Mat, Vec<f64>), (Mat, Vec<f64>));

/// Random disjoint train/test partition with `round(ratio·n)` training rows.
pub fn split(x: &Mat, y: &[f64], ratio: f64, seed: u64) -> Result<Split> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "split",
            expected: x.rows(),
            got: y.len(),
        });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidSetting(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::EmptyData("split"));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let idx = split_indices(n, n_train, seed);
    let (train, test) = idx.split_at(n_train);
    let pick = |rows: &[usize]| (x.select_rows(rows), rows.iter().map(|&i| y[i]).collect());
    Ok((pick(train), pick(test)))
}

/// Permutation of `0..n` whose first `n_train` entries form the training set.
pub fn split_indices(n: usize, n_train: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx[..n_train.min(n)].sort_unstable();
    idx[n_train.min(n)..].sort_unstable();
    idx
}

/// Result of reading a delimited file: all parsed rows go to the training
/// side of the shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub shard: DataShard,
    /// Rows dropped because a selected field did not parse as a finite real.
    pub skipped: usize,
}

pub fn ingest_delimited(
    path: &Path,
    target_column: &str,
    feature_columns: &[&str],
) -> Result<Ingested> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let target = position(target_column)?;
    let features = feature_columns
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut skipped = 0;
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| {
            record
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        let target_value = parse(target);
        let feature_values: Option<Vec<f64>> = features.iter().map(|&i| parse(i)).collect();
        match (target_value, feature_values) {
            (Some(t), Some(f)) => {
                y.push(t);
                rows.push(f);
            }
            _ => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyData("ingest_delimited"));
    }
    let x_train = Mat::from_rows(&rows)?;
    let shard = DataShard {
        client_id: 0,
        x_test: Mat::zeros(0, x_train.cols()),
        x_train,
        y_train: y,
        y_test: Vec::new(),
        gt_coeffs: None,
    };
    shard.validate()?;
    Ok(Ingested { shard, skipped })
}

/// Column names used by [`export_delimited`].
pub fn feature_names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("x{j}")).collect()
}

/// Writes `x0,…,x{k−1},y` with shortest round-trip float formatting.
pub fn export_delimited(x: &Mat, y: &[f64], path: &Path) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "export_delimited",
            expected: x.rows(),
            got: y.len(),
        });
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = feature_names(x.cols());
    header.push("y".into());
    writer.write_record(&header)?;
    for (i, target) in y.iter().enumerate() {
        let mut row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(target.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes every shard as `client_{id}_train.csv` / `client_{id}_test.csv`,
/// plus `coefficients.csv` when ground truth is known.
pub fn export_shards(shards: &[DataShard], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in shards {
        export_delimited(&s.x_train, &s.y_train, &dir.join(format!("client_{}_train.csv", s.client_id)))?;
        export_delimited(&s.x_test, &s.y_test, &dir.join(format!("client_{}_test.csv", s.client_id)))?;
    }
    if shards.iter().all(|s| s.gt_coeffs.is_some()) && !shards.is_empty() {
        let mut writer = csv::Writer::from_path(dir.join("coefficients.csv"))?;
        let k = shards[0].gt_coeffs.as_ref().map_or(0, Vec::len);
        let mut header = vec!["client".to_string()];
        header.extend((0..k).map(|d| format!("a{d}")));
        writer.write_record(&header)?;
        for s in shards {
            let mut row = vec![s.client_id.to_string()];
            row.extend(s.gt_coeffs.iter().flatten().map(|v| v.to_string()));
            writer.write_record(&row)?;
        }
        writer.flush()?;
    }
    Ok(())
}
