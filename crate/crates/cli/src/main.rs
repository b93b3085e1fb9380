use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use plrank::bench::benchmark;
use plrank::estimators::EstimatorKind;
use plrank::metrics::MetricKind;
use plrank::train::{train, DataSource, SampleSchedule, SynthSpec, TrainConfig};

#[derive(Parser)]
#[command(name = "plrank", version, about = "Train and benchmark Plackett-Luce ranking models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, printing a JSON record per epoch and a final summary.
    Train(TrainArgs),
    /// Train several estimators / sample counts repeatedly and compare them.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    BasicPg,
    PlacementPg,
    #[value(name = "pl-rank-1")]
    PlRank1,
    #[value(name = "pl-rank-2")]
    PlRank2,
}

impl From<Estimator> for EstimatorKind {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::BasicPg => EstimatorKind::BasicPg,
            Estimator::PlacementPg => EstimatorKind::PlacementPg,
            Estimator::PlRank1 => EstimatorKind::PlRank1,
            Estimator::PlRank2 => EstimatorKind::PlRank2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Dcg,
    Prec,
    Arp,
}

#[derive(Args)]
struct CommonArgs {
    /// LETOR directory (train.txt, vali.txt, test.txt) or a single SVMLight file.
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Synthetic data, e.g. "queries=100,items=20,features=10,levels=5".
    #[arg(long)]
    synth: Option<String>,
    #[arg(long, value_enum, default_value = "dcg")]
    metric: Metric,
    #[arg(long, default_value_t = 5)]
    cutoff: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta: f64,
    #[arg(long, default_value_t = 100)]
    eval_samples: usize,
    /// Rankings sampled to estimate exposure before each fairness update.
    #[arg(long, default_value_t = 1000)]
    exposure_samples: usize,
    /// Estimate exposure from the gradient samples instead of fresh ones.
    #[arg(long)]
    share_exposure_samples: bool,
    /// Hidden layer widths, comma separated; "linear" for none.
    #[arg(long, default_value = "32,32")]
    hidden: String,
    /// Skip min-max feature scaling.
    #[arg(long)]
    no_normalize: bool,
    /// Queries per concurrently computed macro-batch (1 = pure SGD).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value = "pl-rank-2")]
    estimator: Estimator,
    /// Fixed number of sampled rankings per gradient estimate.
    #[arg(long, conflicts_with = "dynamic_n")]
    samples: Option<usize>,
    /// Grow N from 10 to 100 over the first 40 epochs (the default).
    #[arg(long)]
    dynamic_n: bool,
    /// Directory for epochs.jsonl, epochs.csv, summary.json and model.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "basic-pg,placement-pg,pl-rank-1,pl-rank-2")]
    estimators: Vec<Estimator>,
    /// Sample counts to compare; "dynamic" selects the growing schedule.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    samples: Vec<String>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Metric value used for time-to-threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the report as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    if s.eq_ignore_ascii_case("linear") || s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|w| w.trim().parse::<usize>().with_context(|| format!("invalid hidden width {w:?}"))).collect()
}

fn base_config(c: &CommonArgs) -> Result<TrainConfig> {
    let data = match (&c.data, &c.synth) {
        (Some(p), _) => DataSource::Path(p.clone()),
        (None, Some(s)) => DataSource::Synth(s.parse::<SynthSpec>()?),
        (None, None) => DataSource::Synth(SynthSpec::default()),
    };
    Ok(TrainConfig {
        data,
        metric: match c.metric {
            Metric::Dcg => MetricKind::Dcg,
            Metric::Prec => MetricKind::Prec,
            Metric::Arp => MetricKind::Arp,
        },
        cutoff: c.cutoff,
        epochs: c.epochs,
        learning_rate: c.lr,
        seed: c.seed,
        alpha: c.alpha,
        beta: c.beta,
        eval_samples: c.eval_samples,
        exposure_samples: c.exposure_samples,
        share_exposure_samples: c.share_exposure_samples,
        hidden: parse_hidden(&c.hidden)?,
        normalize: !c.no_normalize,
        threads: c.threads,
        ..TrainConfig::default()
    })
}

fn run_train(args: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        estimator: args.estimator.into(),
        samples: match args.samples {
            Some(n) => SampleSchedule::Fixed(n),
            None => SampleSchedule::Dynamic,
        },
        out: args.out,
        ..base_config(&args.common)?
    };
    let outcome = train(&config)?;
    for record in &outcome.records {
        println!("{}", serde_json::to_string(record)?);
    }
    println!("{}", serde_json::to_string(&outcome.summary)?);
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let base = base_config(&args.common)?;
    let mut configs = Vec::new();
    for estimator in &args.estimators {
        for n in &args.samples {
            let samples = if n == "dynamic" {
                SampleSchedule::Dynamic
            } else {
                SampleSchedule::Fixed(n.parse().with_context(|| format!("invalid sample count {n:?}"))?)
            };
            configs.push(TrainConfig { estimator: (*estimator).into(), samples, ..base.clone() });
        }
    }
    if configs.is_empty() {
        bail!("nothing to benchmark");
    }
    let report = benchmark(&configs, args.repeats, args.threshold)?;
    print!("{}", report.to_table());
    if let Some(path) = args.out {
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Bench(args) => run_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
