//! Per-client evaluation and the metrics CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::DataShard;
use crate::error::{Error, Result};
use crate::linalg::rmse;

/// Train/test RMSE of one model per client. Test RMSE is measured against
/// the noiseless targets when the shard carries ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub train_rmse: Vec<f64>,
    pub test_rmse: Vec<f64>,
    /// Sum over clients of the training mean squared error.
    pub loss_sum: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl Evaluation {
    pub fn mean_train(&self) -> f64 {
        mean(&self.train_rmse)
    }

    pub fn mean_test(&self) -> f64 {
        mean(&self.test_rmse)
    }

    pub fn is_finite(&self) -> bool {
        self.loss_sum.is_finite() && self.test_rmse.iter().all(|v| v.is_finite())
    }

    pub fn diverged(clients: usize) -> Self {
        Evaluation {
            train_rmse: vec![f64::NAN; clients],
            test_rmse: vec![f64::NAN; clients],
            loss_sum: f64::NAN,
        }
    }
}

pub fn evaluate(shards: &[DataShard], models: &[Vec<f64>]) -> Result<Evaluation> {
    if shards.len() != models.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluate",
            expected: shards.len(),
            got: models.len(),
        });
    }
    if shards.is_empty() {
        return Err(Error::EmptyData("evaluate"));
    }
    let mut train_rmse = Vec::with_capacity(shards.len());
    let mut test_rmse = Vec::with_capacity(shards.len());
    for (s, v) in shards.iter().zip(models) {
        train_rmse.push(rmse(&s.x_train, v, &s.y_train)?);
        test_rmse.push(if s.y_test.is_empty() {
            f64::NAN
        } else {
            match s.clean_test_targets() {
                Some(clean) => rmse(&s.x_test, v, &clean)?,
                None => rmse(&s.x_test, v, &s.y_test)?,
            }
        });
    }
    let loss_sum = train_rmse.iter().map(|r| r * r).sum();
    Ok(Evaluation {
        train_rmse,
        test_rmse,
        loss_sum,
    })
}

/// Evaluation after a completed round; round 0 is the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub epochs: usize,
    pub eval: Evaluation,
    pub lagrangian: Option<f64>,
    pub diverged: bool,
}

pub type MetricsSeries = Vec<RoundMetrics>;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    (m, var.sqrt())
}

/// One line of the metrics CSV. `client = None` marks the aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub trial: usize,
    pub round: usize,
    pub epoch: usize,
    #[serde(with = "client_column")]
    pub client: Option<usize>,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub loss_sum: f64,
    pub lagrangian_final_cell: Option<f64>,
    pub wall_ms: u64,
    pub diverged: bool,
}

mod client_column {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(i) => s.serialize_str(&i.to_string()),
            None => s.serialize_str("all"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            return Ok(None);
        }
        s.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

impl MetricsRecord {
    pub fn aggregate(method: &str, trial: usize, m: &RoundMetrics, wall_ms: u64) -> Self {
        MetricsRecord {
            method: method.to_string(),
            trial,
            round: m.round,
            epoch: m.epochs,
            client: None,
            train_rmse: m.eval.mean_train(),
            test_rmse: m.eval.mean_test(),
            loss_sum: m.eval.loss_sum,
            lagrangian_final_cell: m.lagrangian,
            wall_ms,
            diverged: m.diverged || !m.eval.is_finite(),
        }
    }

    pub fn per_client(method: &str, trial: usize, m: &RoundMetrics) -> Vec<Self> {
        (0..m.eval.test_rmse.len())
            .map(|i| MetricsRecord {
                method: method.to_string(),
                trial,
                round: m.round,
                epoch: m.epochs,
                client: Some(i),
                train_rmse: m.eval.train_rmse[i],
                test_rmse: m.eval.test_rmse[i],
                loss_sum: m.eval.train_rmse[i] * m.eval.train_rmse[i],
                lagrangian_final_cell: None,
                wall_ms: 0,
                diverged: m.diverged || !m.eval.test_rmse[i].is_finite(),
            })
            .collect()
    }
}

pub fn write_csv<W: std::io::Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record([
        "method",
        "trial",
        "round",
        "epoch",
        "client",
        "train_rmse",
        "test_rmse",
        "loss_sum",
        "lagrangian_final_cell",
        "wall_ms",
        "diverged",
    ])?;
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(records, std::io::BufWriter::new(file))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for r in reader.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(client: Option<usize>, test: f64, lag: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            method: "fedavg".into(),
            trial: 1,
            round: 3,
            epoch: 6,
            client,
            train_rmse: 0.125,
            test_rmse: test,
            loss_sum: 1.0 / 3.0,
            lagrangian_final_cell: lag,
            wall_ms: 0,
            diverged: !test.is_finite(),
        }
    }

    #[test]
    fn empty_records_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn round_trip_preserves_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![
            record(None, 0.1 + 0.2, Some(-1.5e-7)),
            record(Some(4), 2.0f64.sqrt(), None),
            record(Some(5), f64::INFINITY, None),
        ];
        emit_csv(&records, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn diverged_rows_keep_marker() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&[record(None, f64::NAN, None)], &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert!(back[0].test_rmse.is_nan() && back[0].diverged);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
