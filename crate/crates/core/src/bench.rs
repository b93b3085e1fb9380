//! Repeated training runs for comparing estimators on equal footing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::estimators::EstimatorKind;
use crate::train::{load_splits, train_on, EpochRecord, SampleSchedule, TrainConfig};
use crate::{Error, Result};

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, count: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub estimator: EstimatorKind,
    pub samples: SampleSchedule,
    /// Seconds per epoch spent training (sampling + estimation + update).
    pub train_seconds: Stat,
    pub estimation_seconds: Stat,
    /// Seconds per epoch including evaluation.
    pub epoch_seconds: Stat,
    /// Cumulative training seconds until the monitored metric first reached
    /// the threshold, over the repeats that reached it.
    pub time_to_threshold: Option<Stat>,
    pub final_metric: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub threshold: Option<f64>,
    pub rows: Vec<BenchRow>,
}

fn train_seconds(r: &EpochRecord) -> f64 {
    r.time.sampling + r.time.estimation + r.time.update
}

fn monitored(r: &EpochRecord) -> f64 {
    r.valid_metric.unwrap_or(r.train_metric)
}

/// Runs every config `repeats` times with seeds `seed, seed + 1, ...`.
///
/// All configs must share the data source and base seed; the data is loaded
/// once, so every estimator sees identical queries. The monitored metric is
/// the validation metric, or the training metric when there is no
/// validation split.
pub fn benchmark(configs: &[TrainConfig], repeats: usize, threshold: Option<f64>) -> Result<BenchReport> {
    let first = configs.first().ok_or_else(|| Error::InvalidArgument("no benchmark configs".into()))?;
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if configs.iter().any(|c| c.data != first.data || c.seed != first.seed) {
        return Err(Error::InvalidArgument("benchmark configs must share data and seed".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let splits = load_splits(first)?;

    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let mut train_times = Vec::new();
        let mut estimation_times = Vec::new();
        let mut epoch_times = Vec::new();
        let mut reach_times = Vec::new();
        let mut finals = Vec::new();
        for r in 0..repeats {
            let run = TrainConfig { seed: first.seed + r as u64, out: None, ..config.clone() };
            let outcome = train_on(&splits, &run)?;
            let mut elapsed = 0.0;
            let mut reached = None;
            for rec in &outcome.records {
                train_times.push(train_seconds(rec));
                estimation_times.push(rec.time.estimation);
                epoch_times.push(rec.time.total);
                elapsed += train_seconds(rec);
                if reached.is_none() && threshold.is_some_and(|t| monitored(rec) >= t) {
                    reached = Some(elapsed);
                }
            }
            reach_times.extend(reached);
            finals.push(outcome.records.last().map(monitored).unwrap_or(f64::NAN));
        }
        rows.push(BenchRow {
            estimator: config.estimator,
            samples: config.samples,
            train_seconds: Stat::of(&train_times).expect("at least one epoch"),
            estimation_seconds: Stat::of(&estimation_times).expect("at least one epoch"),
            epoch_seconds: Stat::of(&epoch_times).expect("at least one epoch"),
            time_to_threshold: Stat::of(&reach_times),
            final_metric: Stat::of(&finals).expect("at least one repeat"),
        });
    }
    Ok(BenchReport { repeats, threshold, rows })
}

impl BenchReport {
    /// Fixed-width text table, one row per config.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<14} {:>8} {:>20} {:>20} {:>20} {:>18}",
            "estimator", "N", "train s/epoch", "estim. s/epoch", "time to threshold", "final metric"
        )
        .unwrap();
        let fmt = |s: &Stat| format!("{:.4} ± {:.4}", s.mean, s.std);
        for row in &self.rows {
            let n = match row.samples {
                SampleSchedule::Fixed(n) => n.to_string(),
                SampleSchedule::Dynamic => "dynamic".into(),
            };
            let reach = row
                .time_to_threshold
                .map(|s| format!("{} ({}/{})", fmt(&s), s.count, self.repeats))
                .unwrap_or_else(|| "-".into());
            writeln!(
                out,
                "{:<14} {:>8} {:>20} {:>20} {:>20} {:>18}",
                row.estimator.name(),
                n,
                fmt(&row.train_seconds),
                fmt(&row.estimation_seconds),
                reach,
                fmt(&row.final_metric)
            )
            .unwrap();
        }
        out
    }
}
