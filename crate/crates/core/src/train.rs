//! Epoch loop: per query, score the items, sample rankings, build the
//! (pseudo-)relevances, estimate `λ`, backpropagate and take one SGD step.
//!
//! Runs are reproducible for a fixed seed: every random draw comes from a
//! stream keyed by `(purpose, epoch, query)`, so results do not depend on
//! how many queries were processed before.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{parse_svmlight, synth_dataset, Dataset, QueryGroup, Split, Splits};
use crate::estimators::{EstimatorKind, EstimatorWorkspace};
use crate::fairness::{disparity_gradient, disparity_metric, exposure_from_samples, fairness_pseudo_relevances};
use crate::metrics::{ideal_metric, sample_reward, MetricKind, RankWeights};
use crate::model::{backward, score, Architecture, ModelParams, ParamGradient};
use crate::sampler::{sample_rankings, PlScores};
use crate::{stream_rng, Error, Result};

const DOMAIN_SHUFFLE: u64 = 1;
const DOMAIN_TRAIN_SAMPLES: u64 = 2;
const DOMAIN_EXPOSURE: u64 = 3;
const DOMAIN_EVAL: u64 = 4;

/// Shape of a generated dataset, written `queries=Q,items=I,features=F,levels=L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub queries: usize,
    pub items: usize,
    pub features: usize,
    pub levels: u8,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { queries: 100, items: 20, features: 10, levels: 5 }
    }
}

impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value in synth spec, got {part:?}")))?;
            let bad = || Error::InvalidArgument(format!("invalid value for {key}: {value:?}"));
            match key {
                "queries" => spec.queries = value.parse().map_err(|_| bad())?,
                "items" => spec.items = value.parse().map_err(|_| bad())?,
                "features" => spec.features = value.parse().map_err(|_| bad())?,
                "levels" => spec.levels = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::InvalidArgument(format!("unknown synth spec key {key:?}"))),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// A LETOR directory with `train.txt`, `vali.txt` and `test.txt`, or a
    /// single SVMLight file that is split 80/10/10 by query.
    Path(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSchedule {
    Fixed(usize),
    Dynamic,
}

impl SampleSchedule {
    pub fn samples_at(self, epoch: usize) -> usize {
        match self {
            Self::Fixed(n) => n,
            Self::Dynamic => dynamic_n(epoch),
        }
    }
}

/// `N = round(10 + 90 · epoch / 40)`, never below 10.
pub fn dynamic_n(epoch: usize) -> usize {
    ((10.0 + 90.0 * epoch as f64 / 40.0).round() as usize).max(10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: DataSource,
    pub estimator: EstimatorKind,
    pub metric: MetricKind,
    pub cutoff: usize,
    pub samples: SampleSchedule,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight of the relevance reward in the objective `α·R - β·F`.
    pub alpha: f64,
    /// Weight of the disparity error in the objective `α·R - β·F`.
    pub beta: f64,
    pub eval_samples: usize,
    /// Rankings used to estimate exposure before each fairness update.
    pub exposure_samples: usize,
    /// Reuse the gradient samples for exposure instead of drawing fresh ones.
    pub share_exposure_samples: bool,
    /// Hidden layer widths; empty for a linear model.
    pub hidden: Vec<usize>,
    pub normalize: bool,
    /// Queries per macro-batch. With more than one, per-query gradients are
    /// computed concurrently and their sum is applied as one update.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthSpec::default()),
            estimator: EstimatorKind::PlRank2,
            metric: MetricKind::Dcg,
            cutoff: 5,
            samples: SampleSchedule::Dynamic,
            epochs: 40,
            learning_rate: 0.01,
            seed: 0,
            alpha: 1.0,
            beta: 0.0,
            eval_samples: 100,
            exposure_samples: 1000,
            share_exposure_samples: false,
            hidden: vec![32, 32],
            normalize: true,
            threads: 1,
            out: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.cutoff == 0 {
            return bad("cutoff must be at least 1");
        }
        if self.samples == SampleSchedule::Fixed(0) {
            return bad("sample count must be at least 1");
        }
        if self.eval_samples == 0 || self.exposure_samples == 0 {
            return bad("evaluation and exposure sample counts must be at least 1");
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return bad("objective blend coefficients must be finite");
        }
        if self.metric == MetricKind::Custom {
            return bad("custom rank weights are not available from a training config");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    pub fn rank_weights(&self) -> Result<RankWeights> {
        RankWeights::new(self.metric, self.cutoff)
    }

    fn fairness(&self) -> bool {
        self.beta != 0.0
    }
}

/// Wall-clock seconds per phase of one epoch.
///
/// `sampling` covers forward scoring, ranking sampling and exposure
/// estimation; `update` covers backpropagation and the SGD step. In
/// multi-threaded mode phase times are summed across threads, so they can
/// exceed `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub sampling: f64,
    pub estimation: f64,
    pub update: f64,
    pub evaluation: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub n_samples: usize,
    pub time: PhaseTimes,
    pub train_metric: f64,
    pub valid_metric: Option<f64>,
    pub train_disparity: Option<f64>,
    pub valid_disparity: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,n_samples,time_sampling,time_estimation,time_update,time_evaluation,time_total,train_metric,valid_metric,train_disparity,valid_disparity";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let t = &self.time;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.n_samples,
            t.sampling,
            t.estimation,
            t.update,
            t.evaluation,
            t.total,
            self.train_metric,
            opt(self.valid_metric),
            opt(self.train_disparity),
            opt(self.valid_disparity)
        )
    }

    /// The record with all timing fields zeroed, for comparing runs.
    pub fn without_times(&self) -> Self {
        Self { time: PhaseTimes::default(), ..self.clone() }
    }
}

/// Metric of a model on one split, averaged over queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metric: f64,
    /// Same average for the relevance-sorted ranking of every query.
    pub ideal: f64,
    pub disparity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub epochs: usize,
    pub num_params: usize,
    pub train: Evaluation,
    pub validation: Option<Evaluation>,
    pub test: Option<Evaluation>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub summary: TrainSummary,
    pub model: ModelParams,
}

fn read_split(path: &Path, split: Split) -> Result<Dataset> {
    parse_svmlight(BufReader::new(File::open(path)?), split)
}

/// Loads (and optionally normalizes) the splits a config refers to.
pub fn load_splits(config: &TrainConfig) -> Result<Splits> {
    let splits = match &config.data {
        DataSource::Synth(s) => {
            Splits::by_query(&synth_dataset(s.queries, s.items, s.features, s.levels, config.seed)?)?
        }
        DataSource::Path(p) if p.is_dir() => {
            let valid = ["vali.txt", "valid.txt", "validation.txt"]
                .iter()
                .map(|f| p.join(f))
                .find(|f| f.exists())
                .ok_or_else(|| Error::InvalidArgument(format!("no validation file in {}", p.display())))?;
            Splits {
                train: read_split(&p.join("train.txt"), Split::Train)?,
                validation: read_split(&valid, Split::Validation)?,
                test: read_split(&p.join("test.txt"), Split::Test)?,
            }
        }
        DataSource::Path(p) => Splits::by_query(&read_split(p, Split::Train)?)?,
    };
    // Sparse files only reveal the largest feature id they contain.
    let dim =
        [&splits.train, &splits.validation, &splits.test].map(Dataset::feature_dim).into_iter().max().unwrap_or(0);
    let splits = Splits {
        train: splits.train.pad_features(dim)?,
        validation: splits.validation.pad_features(dim)?,
        test: splits.test.pad_features(dim)?,
    };
    if config.normalize {
        splits.normalized()
    } else {
        Ok(splits)
    }
}

/// Evaluates `params` on every query of `dataset` with `n_eval` sampled
/// rankings per query. The sampling streams depend only on the seed and the
/// query position, so successive evaluations use common random numbers.
pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    weights: &RankWeights,
    n_eval: usize,
    seed: u64,
    with_disparity: bool,
) -> Result<Option<Evaluation>> {
    if dataset.is_empty() {
        return Ok(None);
    }
    let split_key = match dataset.split() {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    };
    let mut metric = 0.0;
    let mut ideal = 0.0;
    let mut disparity = 0.0;
    let mut pairs = 0usize;
    for (q, group) in dataset.groups().iter().enumerate() {
        let (m, _) = score(params, group)?;
        let scores = PlScores::new(m)?;
        let mut rng = stream_rng(seed, (DOMAIN_EVAL << 8) | split_key, q as u64);
        let samples = sample_rankings(&scores, weights.cutoff(), n_eval, &mut rng)?;
        let mut total = 0.0;
        for s in &samples {
            total += sample_reward(s, group.relevances(), weights)?;
        }
        metric += total / samples.len() as f64;
        ideal += ideal_metric(group.relevances(), weights);
        if with_disparity && group.len() > 1 {
            let exposure = exposure_from_samples(&samples, weights, group.len())?;
            disparity += disparity_metric(&exposure.exposure, group.relevances())?.value;
            pairs += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(Some(Evaluation {
        metric: metric / n,
        ideal: ideal / n,
        disparity: (with_disparity && pairs > 0).then(|| disparity / pairs as f64),
    }))
}

#[derive(Default)]
struct StepTimes {
    sampling: Duration,
    estimation: Duration,
    update: Duration,
}

impl StepTimes {
    fn add(&mut self, other: &StepTimes) {
        self.sampling += other.sampling;
        self.estimation += other.estimation;
        self.update += other.update;
    }
}

/// Gradient of the blended objective for one query.
fn query_gradient(
    params: &ModelParams,
    group: &QueryGroup,
    query_index: usize,
    epoch: usize,
    n_samples: usize,
    weights: &RankWeights,
    config: &TrainConfig,
) -> Result<(ParamGradient, StepTimes)> {
    let mut times = StepTimes::default();
    let started = Instant::now();
    let (m, trace) = score(params, group)?;
    let scores = PlScores::new(m)?;
    let stream = ((epoch as u64) << 32) | query_index as u64;
    let mut rng = stream_rng(config.seed, DOMAIN_TRAIN_SAMPLES, stream);
    let samples = sample_rankings(&scores, weights.cutoff(), n_samples, &mut rng)?;

    let relevances = if config.fairness() {
        let exposure = if config.share_exposure_samples {
            exposure_from_samples(&samples, weights, group.len())?
        } else {
            let mut rng = stream_rng(config.seed, DOMAIN_EXPOSURE, stream);
            let fresh = sample_rankings(&scores, weights.cutoff(), config.exposure_samples, &mut rng)?;
            exposure_from_samples(&fresh, weights, group.len())?
        };
        let g = disparity_gradient(&exposure.exposure, group.relevances())?;
        fairness_pseudo_relevances(&g, group.relevances(), config.alpha, config.beta)?
    } else if config.alpha == 1.0 {
        group.relevances().to_vec()
    } else {
        group.relevances().iter().map(|r| config.alpha * r).collect()
    };
    times.sampling = started.elapsed();

    let started = Instant::now();
    let lambda = EstimatorWorkspace::new(&scores).estimate(config.estimator, &relevances, weights, &samples)?;
    times.estimation = started.elapsed();

    let started = Instant::now();
    if let Some(d) = lambda.lambda.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteGradient(format!(
            "epoch {epoch}, query {:?}: λ of item {d} is {}",
            group.query_id(),
            lambda.lambda[d]
        )));
    }
    let grad = backward(params, &trace, &lambda.lambda)?;
    times.update = started.elapsed();
    Ok((grad, times))
}

fn apply_update(params: &mut ModelParams, grad: &ParamGradient, lr: f64, epoch: usize) -> Result<()> {
    params.sgd_step(grad, lr).map_err(|e| match e {
        Error::NonFiniteGradient(msg) => Error::NonFiniteGradient(format!("epoch {epoch}: {msg}")),
        other => other,
    })
}

fn run_epoch(
    params: &mut ModelParams,
    train: &Dataset,
    order: &[usize],
    epoch: usize,
    n_samples: usize,
    weights: &RankWeights,
    config: &TrainConfig,
) -> Result<StepTimes> {
    let mut times = StepTimes::default();
    if config.threads <= 1 {
        for &q in order {
            let (grad, t) = query_gradient(params, &train.groups()[q], q, epoch, n_samples, weights, config)?;
            times.add(&t);
            let started = Instant::now();
            apply_update(params, &grad, config.learning_rate, epoch)?;
            times.update += started.elapsed();
        }
        return Ok(times);
    }
    for batch in order.chunks(config.threads) {
        let snapshot = &*params;
        let results: Vec<Result<(ParamGradient, StepTimes)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&q| {
                    scope.spawn(move || {
                        query_gradient(snapshot, &train.groups()[q], q, epoch, n_samples, weights, config)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
        });
        let mut total = ParamGradient::zeros(params.num_params());
        for r in results {
            let (grad, t) = r?;
            total.add_assign(&grad);
            times.add(&t);
        }
        let started = Instant::now();
        apply_update(params, &total, config.learning_rate, epoch)?;
        times.update += started.elapsed();
    }
    Ok(times)
}

struct RunLog {
    jsonl: File,
    csv: File,
}

impl RunLog {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let jsonl = File::create(dir.join("epochs.jsonl"))?;
        let mut csv = File::create(dir.join("epochs.csv"))?;
        writeln!(csv, "{}", EpochRecord::CSV_HEADER)?;
        Ok(Self { jsonl, csv })
    }

    fn record(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.jsonl, "{}", serde_json::to_string(r)?)?;
        writeln!(self.csv, "{}", r.csv_row())?;
        Ok(())
    }
}

/// Loads the configured data and trains.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = load_splits(config)?;
    train_on(&splits, config)
}

/// Trains on already-loaded splits. When `config.out` is set, epoch records
/// are appended to `epochs.jsonl` / `epochs.csv` as they complete and the
/// final `summary.json` and `model.json` are written at the end. If an epoch
/// fails, the last good model is saved to `model.json` before returning.
pub fn train_on(splits: &Splits, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if splits.train.is_empty() {
        return Err(Error::InvalidArgument("training split has no queries".into()));
    }
    let run_started = Instant::now();
    let weights = config.rank_weights()?;
    let arch = Architecture::mlp(splits.train.feature_dim(), config.hidden.clone());
    let mut params = ModelParams::init(arch, config.seed)?;
    let mut log = config.out.as_deref().map(RunLog::create).transpose()?;
    let fair = config.fairness();

    let mut records = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    for epoch in 0..config.epochs {
        let epoch_started = Instant::now();
        let n_samples = config.samples.samples_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, DOMAIN_SHUFFLE, epoch as u64));

        let times = match run_epoch(&mut params, &splits.train, &order, epoch, n_samples, &weights, config) {
            Ok(t) => t,
            Err(e) => {
                if let Some(dir) = &config.out {
                    params.save(&dir.join("model.json"))?;
                }
                return Err(e);
            }
        };

        let eval_started = Instant::now();
        let train_eval = evaluate(&params, &splits.train, &weights, config.eval_samples, config.seed, fair)?
            .expect("training split is non-empty");
        let valid_eval = evaluate(&params, &splits.validation, &weights, config.eval_samples, config.seed, fair)?;
        let evaluation = eval_started.elapsed();

        let record = EpochRecord {
            epoch,
            n_samples,
            time: PhaseTimes {
                sampling: times.sampling.as_secs_f64(),
                estimation: times.estimation.as_secs_f64(),
                update: times.update.as_secs_f64(),
                evaluation: evaluation.as_secs_f64(),
                total: epoch_started.elapsed().as_secs_f64(),
            },
            train_metric: train_eval.metric,
            valid_metric: valid_eval.map(|e| e.metric),
            train_disparity: train_eval.disparity,
            valid_disparity: valid_eval.and_then(|e| e.disparity),
        };
        if let Some(log) = log.as_mut() {
            log.record(&record)?;
        }
        records.push(record);
    }

    let train_eval = evaluate(&params, &splits.train, &weights, config.eval_samples, config.seed, fair)?
        .expect("training split is non-empty");
    let summary = TrainSummary {
        config: config.clone(),
        epochs: config.epochs,
        num_params: params.num_params(),
        train: train_eval,
        validation: evaluate(&params, &splits.validation, &weights, config.eval_samples, config.seed, fair)?,
        test: evaluate(&params, &splits.test, &weights, config.eval_samples, config.seed, fair)?,
        total_seconds: run_started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &config.out {
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        params.save(&dir.join("model.json"))?;
    }
    Ok(TrainOutcome { records, summary, model: params })
}

/// Renders records as the CSV written next to the JSONL log.
pub fn records_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(EpochRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}
