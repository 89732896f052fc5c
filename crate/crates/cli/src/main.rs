use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ggan_core::data::{gaussian_matrix, stream_rng, write_csv, EVAL_NOISE_STREAM};
use ggan_core::harness::{
    load_data, run_dim_sweep, run_experiment, run_single, sequential_lambda_search, sweep_svg,
    write_sweep_csv, Evaluator, ExperimentConfig, SweepSpec, AGGREGATE_HEADER, CONFIG_KEYS, RUN_HEADER,
};
use ggan_core::metrics::{MetricsReport, REPORT_COLUMNS};
use ggan_core::nets::Checkpoint;
use ggan_core::trainer::write_training_log;

#[derive(Parser)]
#[command(name = "ggan", version, about = "Generalized GANs with learned input dimension and architecture penalties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one config key, e.g. `--set number_of_updates=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, select τ₁, and save checkpoint, log and metrics.
    Train(Common),
    /// Replicated runs with per-run and aggregate CSV output.
    Experiment(Common),
    /// Unpenalized baselines across input dimensions and generator shapes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated `d-LxW` generator shapes.
        #[arg(long, default_value = "1-2x30,10-4x90,50-6x150")]
        configs: String,
    },
    /// Sequential grid search for the initial penalty weights.
    Tune(Common),
    /// Recompute metrics of a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sample from a saved generator to CSV.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples.
        #[arg(short = 'n', long, default_value_t = 2000)]
        count: usize,
    },
}

const CONFIG_META: &str = "config.";

fn build_config(common: &Common, base: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut cfg = base.unwrap_or_default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text)?;
    }
    for o in &common.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("--set expects KEY=VALUE, got '{o}'");
        };
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn metrics_row(r: &MetricsReport) -> Vec<String> {
    r.csv_fields().to_vec()
}

fn print_report(r: &MetricsReport) {
    println!(
        "MMD² = {:.6e} (×1e4: {:.4}), Dim = {}, Prop.0 = {:.2}%, effective depth = {}",
        r.mmd2,
        r.mmd_scaled,
        r.dim,
        r.prop0 * 100.0,
        r.effective_depth
    );
}

fn config_from_meta(meta: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for key in CONFIG_KEYS {
        if let Some(v) = meta.get(&format!("{CONFIG_META}{key}")) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let (train_data, eval_data) = load_data(cfg)?;
    let evaluator = Evaluator::new(&eval_data, cfg.kernel()?, cfg.seed())?;
    let run = run_single(cfg, &train_data, &evaluator, cfg.method, 0)?;

    let mut meta = BTreeMap::new();
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            meta.insert(format!("{CONFIG_META}{k}"), v.to_string());
        }
    }
    meta.insert("tau1".into(), format!("{:?}", run.tau1));
    for (k, v) in REPORT_COLUMNS.iter().zip(run.report.csv_fields()) {
        meta.insert(format!("metrics.{k}"), v);
    }
    let ckpt = Checkpoint {
        seed: run.seed,
        generator: run.model.generator.clone(),
        discriminator: run.model.discriminator.clone(),
        meta,
    };
    ckpt.save(cfg.out_dir.join("model.ckpt"))?;
    write_training_log(cfg.out_dir.join("training_log.csv"), &run.model.history)?;
    write_table(&cfg.out_dir.join("metrics.csv"), &REPORT_COLUMNS, &[metrics_row(&run.report)])?;
    std::fs::write(cfg.out_dir.join("config.cfg"), cfg.to_text())?;
    print_report(&run.report);
    println!("τ₁ = {:?}; outputs in {}", run.tau1, cfg.out_dir.display());
    Ok(())
}

fn cmd_experiment(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg, true)?;
    for (r, e) in &report.failures {
        eprintln!("warning: replication {r} failed: {e}");
    }
    let a = &report.aggregate;
    println!("{}", AGGREGATE_HEADER.join(","));
    println!("{}", a.csv_row().join(","));
    println!(
        "{} of {} runs completed; per-run rows ({}) in {}",
        report.runs.len(),
        cfg.replications,
        RUN_HEADER.join(","),
        cfg.out_dir.join("runs.csv").display()
    );
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, configs: &str) -> Result<()> {
    let spec = SweepSpec {
        configs: SweepSpec::parse_configs(configs)?,
        replications: cfg.replications,
    };
    let (train_data, eval_data) = load_data(cfg)?;
    let evaluator = Evaluator::new(&eval_data, cfg.kernel()?, cfg.seed())?;
    let rows = run_dim_sweep(cfg, &spec, &train_data, &evaluator)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_sweep_csv(cfg.out_dir.join("sweep.csv"), &rows)?;
    std::fs::write(cfg.out_dir.join("sweep.svg"), sweep_svg(&rows))?;
    for r in &rows {
        println!("{}-{}x{}: MMD² {:.6e} ± {:.2e}", r.d, r.depth, r.width, r.mmd_mean, r.mmd_sd);
    }
    Ok(())
}

fn cmd_tune(cfg: &ExperimentConfig) -> Result<()> {
    let (train_data, eval_data) = load_data(cfg)?;
    let evaluator = Evaluator::new(&eval_data, cfg.kernel()?, cfg.seed())?;
    let search = sequential_lambda_search(cfg, &train_data, &evaluator)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let rows: Vec<Vec<String>> = search
        .trials
        .iter()
        .map(|t| {
            vec![
                (t.stage + 1).to_string(),
                format!("{:?}", t.penalty.lambda1),
                format!("{:?}", t.penalty.lambda2),
                format!("{:?}", t.penalty.lambda3),
                format!("{:?}", t.mmd2),
            ]
        })
        .collect();
    write_table(
        &cfg.out_dir.join("tune.csv"),
        &["stage", "lambda1", "lambda2", "lambda3", "mmd2"],
        &rows,
    )?;
    println!("lambda1 = {:?}", search.lambda1);
    println!("lambda2 = {:?}", search.lambda2);
    println!("lambda3 = {:?}", search.lambda3);
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = build_config(common, Some(config_from_meta(&ckpt.meta)?))?;
    let (_, eval_data) = load_data(&cfg)?;
    let evaluator = Evaluator::new(&eval_data, cfg.kernel()?, cfg.seed())?;
    let report = MetricsReport::new(evaluator.mmd(&ckpt.generator)?, &ckpt.generator, cfg.depth_eps);
    print_report(&report);
    if common.out.is_some() {
        std::fs::create_dir_all(&cfg.out_dir)?;
        write_table(&cfg.out_dir.join("metrics.csv"), &REPORT_COLUMNS, &[metrics_row(&report)])?;
    }
    Ok(())
}

fn cmd_gen(common: &Common, checkpoint: &Path, count: usize) -> Result<()> {
    if count == 0 {
        bail!("-n must be at least 1");
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let seed = common.seed.unwrap_or(ckpt.seed);
    let noise = gaussian_matrix(
        &mut stream_rng(seed, EVAL_NOISE_STREAM),
        count,
        ckpt.generator.input_dim(),
    );
    let samples = ckpt.generator.forward_batch(&noise)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    let path = out.join("samples.csv");
    write_csv(&path, &samples, false)?;
    println!("wrote {} × {} samples to {}", samples.rows(), samples.cols(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Train(c) | Command::Experiment(c) | Command::Tune(c) => c,
        Command::Sweep { common, .. } | Command::Eval { common, .. } | Command::Gen { common, .. } => common,
    };
    let needs_config = !matches!(cli.command, Command::Eval { .. } | Command::Gen { .. });
    if needs_config {
        let cfg = build_config(common, None)?;
        if common.print_config {
            print!("{}", cfg.to_text());
            return Ok(());
        }
        return match &cli.command {
            Command::Train(_) => cmd_train(&cfg),
            Command::Experiment(_) => cmd_experiment(&cfg),
            Command::Tune(_) => cmd_tune(&cfg),
            Command::Sweep { configs, .. } => cmd_sweep(&cfg, configs),
            _ => unreachable!(),
        };
    }
    match &cli.command {
        Command::Eval { checkpoint, .. } => {
            if common.print_config {
                let ckpt = Checkpoint::load(checkpoint)?;
                print!("{}", build_config(common, Some(config_from_meta(&ckpt.meta)?))?.to_text());
                return Ok(());
            }
            cmd_eval(common, checkpoint)
        }
        Command::Gen { checkpoint, count, .. } => cmd_gen(common, checkpoint, *count),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
