use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use maxwent::checkpoint::Method;
use maxwent::data::{DataSource, DatasetManifest, SplitMode};
use maxwent::trainer::{Acceptance, BatchSampling, TrainConfig};
use maxwent::{Law, NetworkSpec};

#[derive(Parser, Debug)]
#[command(name = "maxwent", version, about = "Maximum weight entropy networks: training, evaluation and OOD benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a deterministic network (or a deep ensemble with --members > 1).
    Pretrain(PretrainArgs),
    /// Fit a stochastic model around pretrained weights.
    Train(TrainArgs),
    /// Score a checkpoint on in-distribution test rows and OOD inputs.
    Eval(EvalArgs),
    /// Run every method on the PCA splits of a tabular dataset.
    Benchmark(BenchmarkArgs),
    /// Check the closed-form oracles, entropy formula and gradients.
    Verify(VerifyArgs),
    /// Mean uncertainty of a checkpoint across test-time clip levels.
    ClipSweep(ClipSweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    TwoMoons,
    #[value(name = "regression-1d")]
    Regression1d,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Extrapolation,
    Interpolation,
    Random,
}

impl From<SplitArg> for SplitMode {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Extrapolation => SplitMode::Extrapolation,
            SplitArg::Interpolation => SplitMode::Interpolation,
            SplitArg::Random => SplitMode::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Vanilla,
    DeepEnsemble,
    Bnn,
    Maxwent,
    MaxwentSvd,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Vanilla => Method::Vanilla,
            MethodArg::DeepEnsemble => Method::DeepEnsemble,
            MethodArg::Bnn => Method::Bnn,
            MethodArg::Maxwent => Method::Maxwent,
            MethodArg::MaxwentSvd => Method::MaxwentSvd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StochasticMethod {
    Maxwent,
    MaxwentSvd,
    Bnn,
}

impl From<StochasticMethod> for Method {
    fn from(m: StochasticMethod) -> Self {
        match m {
            StochasticMethod::Maxwent => Method::Maxwent,
            StochasticMethod::MaxwentSvd => Method::MaxwentSvd,
            StochasticMethod::Bnn => Method::Bnn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LawArg {
    /// Uniform on [-√3, √3].
    Uniform,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AcceptanceArg {
    /// Keep the last scales whose validation loss stayed under the threshold.
    Threshold,
    /// Keep the scales of the final iteration.
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    ShuffledEpochs,
    WithReplacement,
}

/// Where the data comes from.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value_t = DatasetKind::TwoMoons)]
    pub dataset: DatasetKind,
    /// CSV file with a header row (required for --dataset csv).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Target column of the CSV.
    #[arg(long, default_value = "target")]
    pub target: String,
    /// Treat CSV targets as class labels.
    #[arg(long)]
    pub classification: bool,
    /// PCA split separating in-distribution from OOD rows.
    #[arg(long, value_enum, default_value_t = SplitArg::Extrapolation)]
    pub split: SplitArg,
    /// Share of the in-distribution rows (after the test holdout) used for training.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Share of the in-distribution rows held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

impl DataArgs {
    pub fn manifest(&self, seed: u64) -> Result<DatasetManifest> {
        let mut m = match self.dataset {
            DatasetKind::TwoMoons => DatasetManifest::two_moons(seed),
            DatasetKind::Regression1d => DatasetManifest::regression_1d(seed),
            DatasetKind::Csv => {
                let Some(path) = &self.csv else {
                    bail!("--dataset csv requires --csv <PATH>");
                };
                csv_manifest(path, &self.target, self.classification, self.split.into(), seed)
            }
        };
        set_fractions(&mut m, self.train_fraction, self.test_fraction)?;
        Ok(m)
    }
}

pub fn csv_manifest(
    path: &std::path::Path,
    target: &str,
    classification: bool,
    split: SplitMode,
    seed: u64,
) -> DatasetManifest {
    let mut m = DatasetManifest::csv(path.to_path_buf(), target.to_string(), split, seed);
    if let DataSource::Csv { classification: c, .. } = &mut m.source {
        *c = classification;
    }
    m
}

pub fn set_fractions(m: &mut DatasetManifest, train: f64, test: f64) -> Result<()> {
    if !(train > 0.0 && train < 1.0) || !(test > 0.0 && test < 1.0) {
        bail!("--train-fraction and --test-fraction must lie strictly between 0 and 1");
    }
    m.train_fraction = train;
    m.test_fraction = test;
    Ok(())
}

/// Overrides of the training defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainOpts {
    /// Entropy weight [default: 10]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size [default: 32 synthetic, 128 tabular]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Pretraining iterations [default: 10000]
    #[arg(long)]
    pub pretrain_iters: Option<usize>,
    /// Stochastic fitting iterations [default: 20000 synthetic, 50000 tabular]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Latent draws per gradient step [default: 1]
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Initial raw scale u [default: -5 scaling, -10 SVD]
    #[arg(long, allow_hyphen_values = true)]
    pub u_init: Option<f64>,
    /// Latent law [default: uniform]
    #[arg(long, value_enum)]
    pub law: Option<LawArg>,
    /// Which scales to keep [default: threshold]
    #[arg(long, value_enum)]
    pub acceptance: Option<AcceptanceArg>,
    /// Mini-batch sampling [default: shuffled-epochs]
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingArg>,
    /// Iterations between validation checks [default: 100]
    #[arg(long)]
    pub val_check_every: Option<usize>,
    /// Prior standard deviation of the BNN [default: 1]
    #[arg(long)]
    pub prior_std: Option<f64>,
    /// Hidden layer widths [default: 100,100,100]
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

impl TrainOpts {
    pub fn apply(&self, base: TrainConfig) -> TrainConfig {
        let mut c = base;
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.pretrain_iters {
            c.pretrain_iters = v;
        }
        if let Some(v) = self.iters {
            c.maxwent_iters = v;
        }
        if let Some(v) = self.mc_samples {
            c.mc_samples = v;
        }
        if let Some(v) = self.u_init {
            c.u_init = Some(v);
        }
        if let Some(v) = self.law {
            c.law = match v {
                LawArg::Uniform => Law::UniformSym,
                LawArg::Normal => Law::StandardNormal,
            };
        }
        if let Some(v) = self.acceptance {
            c.acceptance = match v {
                AcceptanceArg::Threshold => Acceptance::Threshold,
                AcceptanceArg::Final => Acceptance::Final,
            };
        }
        if let Some(v) = self.sampling {
            c.sampling = match v {
                SamplingArg::ShuffledEpochs => BatchSampling::ShuffledEpochs,
                SamplingArg::WithReplacement => BatchSampling::WithReplacement,
            };
        }
        if let Some(v) = self.val_check_every {
            c.val_check_every = v;
        }
        if let Some(v) = self.prior_std {
            c.bnn_prior_std = v;
        }
        c
    }

    /// Defaults for `manifest` with the overrides and `seed` applied.
    pub fn config(&self, manifest: &DatasetManifest, seed: u64) -> TrainConfig {
        let base = if manifest.is_tabular() {
            TrainConfig::tabular()
        } else {
            TrainConfig::synthetic()
        };
        self.apply(base).with_seed(seed)
    }

    pub fn apply_spec(&self, mut spec: NetworkSpec) -> NetworkSpec {
        if let Some(h) = &self.hidden {
            spec.hidden = h.clone();
        }
        spec
    }
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Seed for data generation, splits and training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of networks; more than one makes a deep ensemble with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub members: usize,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV of the first network.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = StochasticMethod::MaxwentSvd)]
    pub method: StochasticMethod,
    /// Pretrained checkpoint; every member gets its own distribution.
    /// Without it a network is pretrained first from the data flags.
    #[arg(long = "in", conflicts_with_all = ["dataset", "csv"])]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Seed for data and training [default: 0, or the checkpoint's seed with --in]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV of the first member.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-sample uncertainty CSV.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Weight draws per member.
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test-time clip level of the scaled noise; `inf` disables clipping.
    #[arg(long)]
    pub clip: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Tabular dataset with a header row.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, default_value = "target")]
    pub target: String,
    #[arg(long)]
    pub classification: bool,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "extrapolation,interpolation")]
    pub splits: Vec<SplitArg>,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "vanilla,deep-ensemble,bnn,maxwent,maxwent-svd"
    )]
    pub methods: Vec<MethodArg>,
    /// Deep ensemble size.
    #[arg(long, default_value_t = 5)]
    pub members: usize,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Directory for the reports and the summary table.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Write the check results as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Relative error injected into λ on the closed-form side of the descent checks.
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub lambda_mismatch: f64,
}

#[derive(Args, Debug)]
pub struct ClipSweepArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clip levels [default: inf,10,5,2,1,0.5,0.2,0.1,0]
    #[arg(long, value_delimiter = ',')]
    pub clips: Option<Vec<f64>>,
}
