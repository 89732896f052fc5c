//! Experiment orchestration: configuration files, the sequential λ search,
//! τ₁ selection, replicated runs and the input-dimension sweep.
//!
//! Configuration is a flat `key = value` text file. Keys follow the names of
//! the common hyperparameter table (`generator_architecture = 4x90`,
//! `learning_rate = 2e-4`, `critical_step = 5`, ...); see [`CONFIG_KEYS`].

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{
    derive_seed, gaussian_matrix, load_csv, stream_rng, train_test, CsvOptions, Dataset,
    Provenance, SyntheticModel, EVAL_NOISE_STREAM,
};
use crate::error::{Error, Result};
use crate::metrics::{KernelMix, MetricsReport, MmdReference};
use crate::nets::{
    init_discriminator, init_generator, DiscriminatorModel, GeneratorModel, InitSpec,
    DEFAULT_WEIGHT_STD,
};
use crate::numcore::DenseMatrix;
use crate::penalties::{truncate_rows, PenaltyConfig};
use crate::trainer::{train, TrainConfig, TrainedModel, TruncationPolicy};

/// Which estimator a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Learned `B` with the three penalties, schedule and truncation.
    Penalized,
    /// `B` frozen at the identity, no penalties, no truncation.
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Penalized => "penalized",
            Method::Baseline => "baseline",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "penalized" | "ggan" | "g-gan" => Ok(Method::Penalized),
            "baseline" => Ok(Method::Baseline),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

/// Where training and evaluation samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synthetic(SyntheticModel),
    Csv {
        path: PathBuf,
        header: bool,
        min_max: bool,
    },
}

/// Depth × width of a dense network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.depth, self.width)
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("architecture must look like 4x90, got '{s}'"));
        let (d, w) = s.split_once(['x', 'X', '×']).ok_or_else(bad)?;
        let depth = d.trim().parse().map_err(|_| bad())?;
        let width = w.trim().parse().map_err(|_| bad())?;
        if depth == 0 || width == 0 {
            return Err(bad());
        }
        Ok(Self { depth, width })
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub method: Method,
    pub n_train: usize,
    /// Held-out samples; also the number of generated samples scored against them.
    pub n_eval: usize,
    pub input_dim: usize,
    pub generator: Architecture,
    pub discriminator: Architecture,
    pub init_std: f64,
    /// Generator output clamp; `None` uses max |X| of the training data.
    pub output_bound: Option<f64>,
    pub train: TrainConfig,
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    pub lambda3_grid: Vec<f64>,
    pub replications: usize,
    /// Relative MMD² increase tolerated when selecting τ₁.
    pub tau1_tolerance: f64,
    /// Sup-norm tolerance for counting a hidden layer as collapsed to the identity.
    pub depth_eps: f64,
    pub kernel_bandwidths: Vec<f64>,
    pub out_dir: PathBuf,
}

fn range_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic(SyntheticModel::M1),
            method: Method::Penalized,
            n_train: 5000,
            n_eval: 1000,
            input_dim: 50,
            generator: Architecture { depth: 4, width: 90 },
            discriminator: Architecture { depth: 4, width: 64 },
            init_std: DEFAULT_WEIGHT_STD,
            output_bound: None,
            train: TrainConfig {
                updates: 5000,
                penalty: PenaltyConfig {
                    lambda1: 0.003,
                    lambda2: 0.02,
                    lambda3: 1e-6,
                    ..PenaltyConfig::default()
                },
                ..TrainConfig::default()
            },
            lambda1_grid: range_grid(0.002, 0.004, 0.0005),
            lambda2_grid: range_grid(0.01, 0.03, 0.005),
            lambda3_grid: vec![1e-8, 1e-7, 1e-6, 1e-5, 1e-4],
            replications: 3,
            tau1_tolerance: 0.1,
            depth_eps: 0.01,
            kernel_bandwidths: vec![1.0, 5.0, 10.0],
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Recognized configuration keys, in the order [`ExperimentConfig::to_text`] writes them.
pub const CONFIG_KEYS: [&str; 35] = [
    "dataset",
    "csv_header",
    "csv_min_max",
    "method",
    "seed",
    "training_samples",
    "evaluation_samples",
    "initial_input_dimension",
    "generator_architecture",
    "discriminator_architecture",
    "initial_weight_std",
    "output_bound",
    "regularization",
    "learning_rate",
    "critical_step",
    "training_batch_size",
    "weight_of_gradient_penalty",
    "number_of_updates",
    "expansion_factor",
    "shrinkage_factor",
    "interval_step",
    "lambda1",
    "lambda2",
    "lambda3",
    "tau1",
    "tau2",
    "truncation",
    "log_interval",
    "lambda1_grid",
    "lambda2_grid",
    "lambda3_grid",
    "replications",
    "tau1_tolerance",
    "depth_tolerance",
    "kernel_bandwidths",
];

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| parse_num(key, s.trim()))
        .collect()
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// Sets one key; values use the same syntax as the config file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "dataset" => {
                self.dataset = match value.parse::<SyntheticModel>() {
                    Ok(m) => DatasetSpec::Synthetic(m),
                    Err(_) => {
                        let path = value.strip_prefix("csv:").unwrap_or(value);
                        let (header, min_max) = match &self.dataset {
                            DatasetSpec::Csv { header, min_max, .. } => (*header, *min_max),
                            DatasetSpec::Synthetic(_) => (false, false),
                        };
                        DatasetSpec::Csv {
                            path: PathBuf::from(path),
                            header,
                            min_max,
                        }
                    }
                }
            }
            "csv_header" | "csv_min_max" => {
                let flag = parse_bool(key, value)?;
                match &mut self.dataset {
                    DatasetSpec::Csv { header, min_max, .. } => {
                        if key == "csv_header" {
                            *header = flag;
                        } else {
                            *min_max = flag;
                        }
                    }
                    DatasetSpec::Synthetic(_) if !flag => {}
                    DatasetSpec::Synthetic(_) => {
                        return Err(Error::Config(format!("{key} needs a CSV dataset set first")))
                    }
                }
            }
            "method" => self.method = value.parse()?,
            "seed" => t.seed = parse_num(key, value)?,
            "training_samples" => self.n_train = parse_num(key, value)?,
            "evaluation_samples" => self.n_eval = parse_num(key, value)?,
            "initial_input_dimension" => self.input_dim = parse_num(key, value)?,
            "generator_architecture" => self.generator = value.parse()?,
            "discriminator_architecture" => self.discriminator = value.parse()?,
            "initial_weight_std" => self.init_std = parse_num(key, value)?,
            "output_bound" => {
                self.output_bound = match value {
                    "data" | "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "regularization" => t.mode = value.parse()?,
            "learning_rate" => t.adam.learning_rate = parse_num(key, value)?,
            "critical_step" => t.critic_steps = parse_num(key, value)?,
            "training_batch_size" => t.batch_size = parse_num(key, value)?,
            "weight_of_gradient_penalty" => t.gp_weight = parse_num(key, value)?,
            "number_of_updates" => t.updates = parse_num(key, value)?,
            "expansion_factor" => t.delta1 = parse_num(key, value)?,
            "shrinkage_factor" => t.delta2 = parse_num(key, value)?,
            "interval_step" => t.interval = parse_num(key, value)?,
            "lambda1" => t.penalty.lambda1 = parse_num(key, value)?,
            "lambda2" => t.penalty.lambda2 = parse_num(key, value)?,
            "lambda3" => t.penalty.lambda3 = parse_num(key, value)?,
            "tau1" => t.penalty.tau1 = parse_num(key, value)?,
            "tau2" => t.penalty.tau2 = parse_num(key, value)?,
            "truncation" => {
                t.truncation = match value {
                    "never" => TruncationPolicy::Never,
                    "second-half" => TruncationPolicy::SecondHalf,
                    _ => {
                        return Err(Error::Config(format!(
                            "truncation: expected never or second-half, got '{value}'"
                        )))
                    }
                }
            }
            "log_interval" => t.log_interval = parse_num(key, value)?,
            "lambda1_grid" => self.lambda1_grid = parse_list(key, value)?,
            "lambda2_grid" => self.lambda2_grid = parse_list(key, value)?,
            "lambda3_grid" => self.lambda3_grid = parse_list(key, value)?,
            "replications" => self.replications = parse_num(key, value)?,
            "tau1_tolerance" => self.tau1_tolerance = parse_num(key, value)?,
            "depth_tolerance" => self.depth_eps = parse_num(key, value)?,
            "kernel_bandwidths" => self.kernel_bandwidths = parse_list(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a config document on top of the defaults.
    ///
    /// Blank lines and `#` comments are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies a config document on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    /// Writes every key, so the output re-parses to an identical config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSpec::Synthetic(m) => {
                put("dataset", m.to_string());
                put("csv_header", "false".into());
                put("csv_min_max", "false".into());
            }
            DatasetSpec::Csv {
                path,
                header,
                min_max,
            } => {
                put("dataset", format!("csv:{}", path.display()));
                put("csv_header", header.to_string());
                put("csv_min_max", min_max.to_string());
            }
        }
        put("method", self.method.name().into());
        put("seed", t.seed.to_string());
        put("training_samples", self.n_train.to_string());
        put("evaluation_samples", self.n_eval.to_string());
        put("initial_input_dimension", self.input_dim.to_string());
        put("generator_architecture", self.generator.to_string());
        put("discriminator_architecture", self.discriminator.to_string());
        put("initial_weight_std", format!("{:?}", self.init_std));
        put(
            "output_bound",
            self.output_bound.map_or("data".into(), |b| format!("{b:?}")),
        );
        put("regularization", t.mode.to_string());
        put("learning_rate", format!("{:?}", t.adam.learning_rate));
        put("critical_step", t.critic_steps.to_string());
        put("training_batch_size", t.batch_size.to_string());
        put("weight_of_gradient_penalty", format!("{:?}", t.gp_weight));
        put("number_of_updates", t.updates.to_string());
        put("expansion_factor", format!("{:?}", t.delta1));
        put("shrinkage_factor", format!("{:?}", t.delta2));
        put("interval_step", t.interval.to_string());
        put("lambda1", format!("{:?}", t.penalty.lambda1));
        put("lambda2", format!("{:?}", t.penalty.lambda2));
        put("lambda3", format!("{:?}", t.penalty.lambda3));
        put("tau1", format!("{:?}", t.penalty.tau1));
        put("tau2", format!("{:?}", t.penalty.tau2));
        put(
            "truncation",
            match t.truncation {
                TruncationPolicy::Never => "never",
                TruncationPolicy::SecondHalf => "second-half",
            }
            .into(),
        );
        put("log_interval", t.log_interval.to_string());
        put("lambda1_grid", fmt_list(&self.lambda1_grid));
        put("lambda2_grid", fmt_list(&self.lambda2_grid));
        put("lambda3_grid", fmt_list(&self.lambda3_grid));
        put("replications", self.replications.to_string());
        put("tau1_tolerance", format!("{:?}", self.tau1_tolerance));
        put("depth_tolerance", format!("{:?}", self.depth_eps));
        put("kernel_bandwidths", fmt_list(&self.kernel_bandwidths));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n_train == 0 || self.n_eval == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "sample counts and input dimension must be positive".into(),
            ));
        }
        if self.lambda1_grid.is_empty() || self.lambda2_grid.is_empty() || self.lambda3_grid.is_empty() {
            return Err(Error::Config("λ search grids must be nonempty".into()));
        }
        if !(self.tau1_tolerance >= 0.0) {
            return Err(Error::Config("tau1_tolerance must be nonnegative".into()));
        }
        KernelMix::new(self.kernel_bandwidths.clone())?;
        self.train.validate()
    }

    pub fn kernel(&self) -> Result<KernelMix> {
        KernelMix::new(self.kernel_bandwidths.clone())
    }

    /// Training config for `method`: the baseline freezes `B`, drops the penalties and never truncates.
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seed;
        if method == Method::Baseline {
            t.train_input_map = false;
            t.truncation = TruncationPolicy::Never;
            t.penalty.lambda1 = 0.0;
            t.penalty.lambda2 = 0.0;
            t.penalty.lambda3 = 0.0;
        }
        t
    }
}

/// Training split and held-out split of the configured dataset.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(m) => train_test(*m, cfg.n_train, cfg.n_eval, cfg.seed()),
        DatasetSpec::Csv {
            path,
            header,
            min_max,
        } => {
            let all = load_csv(
                path,
                CsvOptions {
                    has_header: *header,
                    min_max: *min_max,
                },
            )?;
            split_dataset(&all, cfg.n_eval, cfg.seed())
        }
    }
}

/// Shuffles rows with `seed` and holds out `n_eval` of them.
pub fn split_dataset(all: &Dataset, n_eval: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_eval >= all.len() {
        return Err(Error::Config(format!(
            "{} held-out rows requested from {} samples",
            n_eval,
            all.len()
        )));
    }
    let mut rng = stream_rng(seed, EVAL_NOISE_STREAM);
    let perm = rand::seq::index::sample(&mut rng, all.len(), all.len()).into_vec();
    let (eval_idx, train_idx) = perm.split_at(n_eval);
    let tag = Provenance::Generated(format!("split of {}", all.provenance));
    Ok((
        Dataset::new(all.samples.select_rows(train_idx), tag.clone())?,
        Dataset::new(all.samples.select_rows(eval_idx), tag)?,
    ))
}

/// Freshly initialized generator and critic for one run.
///
/// The baseline generator starts from `B = I`.
pub fn build_models(
    cfg: &ExperimentConfig,
    input_dim: usize,
    generator: Architecture,
    out_dim: usize,
    output_bound: f64,
    method: Method,
    seed: u64,
) -> Result<(GeneratorModel, DiscriminatorModel)> {
    let spec = InitSpec {
        weight_std: cfg.init_std,
        bias_value: 0.0,
        seed: derive_seed(seed, 1),
    };
    let mut g = init_generator(input_dim, generator.width, generator.depth, out_dim, &spec)?
        .with_output_bound(output_bound);
    if method == Method::Baseline {
        g.input_map = DenseMatrix::identity(input_dim);
    }
    let dm = init_discriminator(
        out_dim,
        cfg.discriminator.width,
        cfg.discriminator.depth,
        cfg.train.mode,
        &spec.with_seed(derive_seed(seed, 2)),
    )?;
    Ok((g, dm))
}

/// Held-out reference plus a fixed evaluation noise batch.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub reference: MmdReference,
    seed: u64,
    n: usize,
}

impl Evaluator {
    pub fn new(eval: &Dataset, kernel: KernelMix, seed: u64) -> Result<Self> {
        Ok(Self {
            n: eval.len(),
            reference: MmdReference::new(eval.samples.clone(), kernel)?,
            seed,
        })
    }

    /// The evaluation noise for input dimension `d`.
    pub fn noise(&self, d: usize) -> DenseMatrix {
        gaussian_matrix(&mut stream_rng(self.seed, EVAL_NOISE_STREAM), self.n, d)
    }

    pub fn mmd(&self, g: &GeneratorModel) -> Result<f64> {
        let x = g.forward_batch(&self.noise(g.input_dim()))?;
        self.reference.mmd_squared(&x)
    }
}

/// Largest row-norm threshold whose truncation raises MMD² by at most
/// `tolerance` (relative) over the untruncated generator.
///
/// Candidates are the distinct nonzero row norms of `B`, tried in ascending
/// order; the scan stops at the first candidate that fails. Returns 0 if none pass.
pub fn select_tau1(g: &GeneratorModel, evaluator: &Evaluator, tolerance: f64) -> Result<f64> {
    let base = evaluator.mmd(g)?;
    let limit = base + tolerance * base.abs();
    let candidates: BTreeSet<u64> = g
        .input_map
        .row_norms()
        .into_iter()
        .filter(|&n| n > 0.0)
        .map(f64::to_bits)
        .collect();
    let mut chosen = 0.0;
    let mut trial = g.clone();
    for bits in candidates {
        let tau = f64::from_bits(bits);
        trial.input_map = truncate_rows(&g.input_map, tau);
        if evaluator.mmd(&trial)? <= limit {
            chosen = tau;
        } else {
            break;
        }
    }
    Ok(chosen)
}

/// Trains one model with the given penalty weights.
pub fn train_single(
    cfg: &ExperimentConfig,
    train_data: &Dataset,
    method: Method,
    penalty: PenaltyConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let bound = cfg.output_bound.unwrap_or_else(|| train_data.max_abs());
    let (g, dm) = build_models(
        cfg,
        cfg.input_dim,
        cfg.generator,
        train_data.dim(),
        bound,
        method,
        seed,
    )?;
    let mut tc = cfg.train_config(method, seed);
    if method == Method::Penalized {
        tc.penalty = penalty;
    }
    train(&train_data.samples, &tc, g, dm)
}

/// One finished replication.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub tau1: f64,
    pub report: MetricsReport,
    pub model: TrainedModel,
}

/// Trains, selects τ₁ (penalized runs only), truncates `B` and scores one replication.
pub fn run_single(
    cfg: &ExperimentConfig,
    train_data: &Dataset,
    evaluator: &Evaluator,
    method: Method,
    replicate: usize,
) -> Result<RunOutcome> {
    let seed = derive_seed(cfg.seed(), 100 + replicate as u64);
    let mut model = train_single(cfg, train_data, method, cfg.train.penalty, seed)?;
    let tau1 = if method == Method::Penalized {
        let tau = select_tau1(&model.generator, evaluator, cfg.tau1_tolerance)?;
        model.generator.input_map = truncate_rows(&model.generator.input_map, tau);
        tau
    } else {
        0.0
    };
    let mmd = evaluator.mmd(&model.generator)?;
    Ok(RunOutcome {
        replicate,
        seed,
        tau1,
        report: MetricsReport::new(mmd, &model.generator, cfg.depth_eps),
        model,
    })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample SD across replications, in result-table units.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub mmd_x1e4: (f64, f64),
    pub dim: (f64, f64),
    pub prop0_pct: (f64, f64),
}

pub const AGGREGATE_HEADER: [&str; 7] = [
    "method",
    "mmd_x1e4_mean",
    "mmd_x1e4_sd",
    "dim_mean",
    "dim_sd",
    "prop0_mean",
    "prop0_sd",
];

pub const RUN_HEADER: [&str; 8] = [
    "method",
    "replicate",
    "seed",
    "mmd_x1e4",
    "dim",
    "prop0_pct",
    "eff_depth",
    "tau1",
];

impl Aggregate {
    pub fn of(method: &str, reports: &[MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| mean_sd(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            method: method.to_string(),
            mmd_x1e4: col(|r| r.mmd_scaled),
            dim: col(|r| r.dim as f64),
            prop0_pct: col(|r| r.prop0 * 100.0),
        }
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            format!("{:?}", self.mmd_x1e4.0),
            format!("{:?}", self.mmd_x1e4.1),
            format!("{:?}", self.dim.0),
            format!("{:?}", self.dim.1),
            format!("{:?}", self.prop0_pct.0),
            format!("{:?}", self.prop0_pct.1),
        ]
    }
}

/// Per-replication outcomes, failures and their aggregate.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub method: Method,
    pub runs: Vec<RunOutcome>,
    /// `(replicate, error message)` for aborted replications.
    pub failures: Vec<(usize, String)>,
    pub aggregate: Aggregate,
}

impl ExperimentReport {
    pub fn run_rows(&self) -> Vec<Vec<String>> {
        self.runs
            .iter()
            .map(|r| {
                let [mmd, dim, prop0, depth] = r.report.csv_fields();
                vec![
                    self.method.name().to_string(),
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    mmd,
                    dim,
                    prop0,
                    depth,
                    format!("{:?}", r.tau1),
                ]
            })
            .collect()
    }
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `f(0..n)` on up to `available_parallelism` threads; results keep index order.
fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = std::thread::available_parallelism().map_or(1, |p| p.get()).min(n);
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut out);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                results.lock().expect("result lock")[i] = Some(v);
            });
        }
    });
    out.into_iter().map(|v| v.expect("every index computed")).collect()
}

/// `R` seeded replications of `method` on prepared data.
pub fn run_replications(
    cfg: &ExperimentConfig,
    train_data: &Dataset,
    evaluator: &Evaluator,
    method: Method,
) -> ExperimentReport {
    let results = parallel_map(cfg.replications, |r| {
        run_single(cfg, train_data, evaluator, method, r)
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => runs.push(o),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.report.clone()).collect();
    ExperimentReport {
        method,
        aggregate: Aggregate::of(method.name(), &reports),
        runs,
        failures,
    }
}

/// Replicated runs of the configured method; writes `runs.csv` and
/// `results.csv` to `cfg.out_dir` when `write` is set.
pub fn run_experiment(cfg: &ExperimentConfig, write: bool) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (train_data, eval_data) = load_data(cfg)?;
    let evaluator = Evaluator::new(&eval_data, cfg.kernel()?, cfg.seed())?;
    let report = run_replications(cfg, &train_data, &evaluator, cfg.method);
    if report.runs.is_empty() {
        return Err(Error::Contract(format!(
            "all {} replications failed: {:?}",
            cfg.replications, report.failures
        )));
    }
    if write {
        std::fs::create_dir_all(&cfg.out_dir)?;
        write_rows(&cfg.out_dir.join("runs.csv"), &RUN_HEADER, &report.run_rows())?;
        write_rows(
            &cfg.out_dir.join("results.csv"),
            &AGGREGATE_HEADER,
            &[report.aggregate.csv_row()],
        )?;
    }
    Ok(report)
}

/// One scored grid point of the λ search.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaTrial {
    pub stage: usize,
    pub penalty: PenaltyConfig,
    pub mmd2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSearch {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub trials: Vec<LambdaTrial>,
}

/// Sequential grid search: λ₁ with λ₂ = λ₃ = 0, then λ₂ with λ₁ fixed and
/// λ₃ = 0, then λ₃. Each grid point is one training run scored by held-out
/// MMD²; ties go to the larger λ.
pub fn sequential_lambda_search(
    cfg: &ExperimentConfig,
    train_data: &Dataset,
    evaluator: &Evaluator,
) -> Result<LambdaSearch> {
    cfg.validate()?;
    let seed = derive_seed(cfg.seed(), 7);
    let mut chosen = [0.0f64; 3];
    let mut trials = Vec::new();
    for stage in 0..3 {
        let mut grid = match stage {
            0 => cfg.lambda1_grid.clone(),
            1 => cfg.lambda2_grid.clone(),
            _ => cfg.lambda3_grid.clone(),
        };
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let penalties: Vec<PenaltyConfig> = grid
            .iter()
            .map(|&v| {
                let mut l = chosen;
                l[stage] = v;
                PenaltyConfig {
                    lambda1: l[0],
                    lambda2: l[1],
                    lambda3: l[2],
                    ..cfg.train.penalty
                }
            })
            .collect();
        let scored = parallel_map(penalties.len(), |i| -> Result<f64> {
            let model = train_single(cfg, train_data, Method::Penalized, penalties[i], seed)?;
            evaluator.mmd(&model.generator)
        });
        let mut best: Option<(f64, f64)> = None;
        for ((value, penalty), mmd2) in grid.iter().zip(&penalties).zip(scored) {
            let mmd2 = mmd2?;
            trials.push(LambdaTrial {
                stage,
                penalty: *penalty,
                mmd2,
            });
            // ascending grid: `<=` keeps the larger λ on ties
            if best.is_none_or(|(b, _)| mmd2 <= b) {
                best = Some((mmd2, *value));
            }
        }
        chosen[stage] = best.expect("nonempty grid").1;
    }
    Ok(LambdaSearch {
        lambda1: chosen[0],
        lambda2: chosen[1],
        lambda3: chosen[2],
        trials,
    })
}

/// Generator shapes for the input-dimension sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    /// `(d, depth, width)` triples.
    pub configs: Vec<(usize, usize, usize)>,
    pub replications: usize,
}

impl SweepSpec {
    pub fn parse_configs(text: &str) -> Result<Vec<(usize, usize, usize)>> {
        text.split(',')
            .map(|item| {
                let item = item.trim();
                let bad = || Error::Config(format!("sweep config must look like 10-4x90, got '{item}'"));
                let (d, arch) = item.split_once('-').ok_or_else(bad)?;
                let a: Architecture = arch.parse().map_err(|_| bad())?;
                Ok((d.trim().parse().map_err(|_| bad())?, a.depth, a.width))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub depth: usize,
    pub width: usize,
    pub mmd_mean: f64,
    pub mmd_sd: f64,
    /// MMD² of each replication.
    pub runs: Vec<f64>,
}

pub const SWEEP_HEADER: [&str; 5] = ["d", "l", "w", "mmd_mean", "mmd_sd"];

/// Unpenalized baselines (`B = I_d` frozen) for each `(d, l, w)`, `R` times each.
pub fn run_dim_sweep(
    cfg: &ExperimentConfig,
    spec: &SweepSpec,
    train_data: &Dataset,
    evaluator: &Evaluator,
) -> Result<Vec<SweepRow>> {
    if spec.configs.is_empty() || spec.replications == 0 {
        return Err(Error::Config("sweep needs at least one config and one replication".into()));
    }
    let bound = cfg.output_bound.unwrap_or_else(|| train_data.max_abs());
    let jobs: Vec<(usize, usize)> = (0..spec.configs.len())
        .flat_map(|c| (0..spec.replications).map(move |r| (c, r)))
        .collect();
    let results = parallel_map(jobs.len(), |j| -> Result<f64> {
        let (c, r) = jobs[j];
        let (d, depth, width) = spec.configs[c];
        let seed = derive_seed(cfg.seed(), 100 + r as u64);
        let (g, dm) = build_models(
            cfg,
            d,
            Architecture { depth, width },
            train_data.dim(),
            bound,
            Method::Baseline,
            seed,
        )?;
        let tc = cfg.train_config(Method::Baseline, seed);
        let model = train(&train_data.samples, &tc, g, dm)?;
        evaluator.mmd(&model.generator)
    });
    let mut per_config: Vec<Vec<f64>> = vec![Vec::new(); spec.configs.len()];
    for ((c, _), res) in jobs.iter().zip(results) {
        per_config[*c].push(res?);
    }
    Ok(spec
        .configs
        .iter()
        .zip(per_config)
        .map(|(&(d, depth, width), runs)| {
            let (m, s) = mean_sd(&runs);
            SweepRow {
                d,
                depth,
                width,
                mmd_mean: m,
                mmd_sd: s,
                runs,
            }
        })
        .collect())
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let data: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.d.to_string(),
                r.depth.to_string(),
                r.width.to_string(),
                format!("{:?}", r.mmd_mean),
                format!("{:?}", r.mmd_sd),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &SWEEP_HEADER, &data)
}

type Series = (&'static str, &'static str, fn(&SweepRow) -> f64);

/// Line chart of mean MMD² and mean ± SD against configuration index.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let hi = rows
        .iter()
        .map(|r| r.mmd_mean + r.mmd_sd)
        .fold(f64::MIN_POSITIVE, f64::max);
    let n = rows.len().max(2) as f64 - 1.0;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v / hi).clamp(0.0, 1.0);
    let line = |f: &dyn Fn(&SweepRow) -> f64| {
        rows.iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", x(i), y(f(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#, h - pad);
    let series: [Series; 3] = [
        ("mean", "stroke=\"steelblue\" stroke-width=\"2\"", |r| r.mmd_mean),
        ("mean+sd", "stroke=\"darkorange\" stroke-dasharray=\"4 3\"", |r| r.mmd_mean + r.mmd_sd),
        ("mean-sd", "stroke=\"darkorange\" stroke-dasharray=\"4 3\"", |r| (r.mmd_mean - r.mmd_sd).max(0.0)),
    ];
    for (name, style, f) in series {
        let _ = writeln!(
            s,
            r#"<polyline class="{name}" fill="none" {style} points="{}"/>"#,
            line(&f)
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="12" text-anchor="middle">{}-{}x{}</text>"#,
            x(i),
            h - pad + 20.0,
            r.d,
            r.depth,
            r.width
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-size="12">MMD² (max {:.3e})</text>"#,
        pad - 15.0,
        hi
    );
    s.push_str("</svg>\n");
    s
}
