use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use repulsive_attention::attention::{Checkpoint, SentenceClassifier};
use repulsive_attention::data::Splits;
use repulsive_attention::harness::{
    gen_synthetic, head_sweep, run_experiment, run_single, single_aspect_oracle_accuracy, sample_toy,
    sweep_csv, write_atomic, ExperimentConfig, ToyTarget, Variant,
};
use repulsive_attention::metrics;
use repulsive_attention::sampler::Rule;
use repulsive_attention::{Error, Result};

#[derive(Parser)]
#[command(name = "rma", version, about = "Repulsive multi-head attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Head update rule: plain, svgd, spos or sgld.
    #[arg(long)]
    rule: Option<Rule>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into a directory.
    GenData(Common),
    /// Train one model and write its history, checkpoint and metrics.
    Train(Common),
    /// Error-vs-M table for plain and SVGD training.
    SweepHeads(Common),
    /// Accuracy drop from masking each head.
    MaskAnalysis {
        #[command(flatten)]
        common: Common,
        /// Evaluate this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// ECE, OE, reliability bins and the predictive-entropy CDF.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a sampler on a 1-D analytic target.
    SampleToy {
        #[command(flatten)]
        common: Common,
        /// gaussian-1d or mixture-1d.
        #[arg(long)]
        target: Option<ToyTarget>,
    },
    /// Train every variant over all seeds and write the comparison report.
    Report(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        config.output = out.clone();
    }
    Ok(config)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(name), text.as_bytes())
}

fn single_variant(config: &ExperimentConfig, common: &Common) -> Variant {
    let rule = common.rule.unwrap_or(config.train.sampler.rule);
    Variant::new(rule.name(), rule, config.train.regularizer)
}

fn trained_or_loaded(
    config: &ExperimentConfig,
    common: &Common,
    checkpoint: Option<&Path>,
    splits: &Splits,
) -> Result<SentenceClassifier> {
    match checkpoint {
        Some(p) => Checkpoint::load(p)?.to_model(),
        None => {
            let seed = common.seed.unwrap_or(config.base_seed);
            let variant = single_variant(config, common);
            let dir = config.output.join("model");
            Ok(run_single(config, &variant, seed, splits, &dir)?.1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let config = load(&common)?;
            let mut task = config.synthetic;
            if let Some(seed) = common.seed {
                task.seed = seed;
            }
            let splits = gen_synthetic(&task)?;
            splits.save(&config.output)?;
            let oracle: Vec<f64> = (0..task.aspects).map(|a| single_aspect_oracle_accuracy(&task, a)).collect();
            let info = serde_json::json!({ "task": task, "single_aspect_oracle_accuracy": oracle });
            write(&config.output, "task.json", &serde_json::to_string_pretty(&info)?)?;
            println!(
                "wrote {} / {} / {} examples to {}",
                splits.train.len(),
                splits.validation.len(),
                splits.test.len(),
                config.output.display()
            );
        }
        Command::Train(common) => {
            let config = load(&common)?;
            config.validate()?;
            let splits = config.splits()?;
            let seed = common.seed.unwrap_or(config.base_seed);
            let variant = single_variant(&config, &common);
            let (result, _, _) = run_single(&config, &variant, seed, &splits, &config.output)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::SweepHeads(common) => {
            let mut config = load(&common)?;
            if let Some(seed) = common.seed {
                config.base_seed = seed;
            }
            let counts = config.head_counts.clone();
            let rows = head_sweep(&config, &counts)?;
            print!("{}", sweep_csv(&rows));
        }
        Command::MaskAnalysis { common, checkpoint } => {
            let config = load(&common)?;
            let splits = config.splits()?;
            let model = trained_or_loaded(&config, &common, checkpoint.as_deref(), &splits)?;
            let records = metrics::redundancy_report(&model, &splits.test.examples)?;
            let csv = metrics::redundancy_csv(&records);
            write(&config.output, "redundancy.csv", &csv)?;
            print!("{csv}");
        }
        Command::Calibrate { common, checkpoint } => {
            let config = load(&common)?;
            let splits = config.splits()?;
            let model = trained_or_loaded(&config, &common, checkpoint.as_deref(), &splits)?;
            let test = &splits.test.examples;
            let probs = metrics::predict_all(&model, test)?;
            let labels: Vec<usize> = test.iter().map(|e| e.label).collect();
            let (conf, correct) = metrics::confidences(&probs, &labels)?;
            let bins_cfg = config.metrics.calibration_bins;
            let bins = metrics::calibration_bins(&conf, &correct, &bins_cfg)?;
            write(&config.output, "calibration.csv", &metrics::calibration_csv(&bins))?;
            let curve = metrics::entropy_cdf(&probs)?;
            write(&config.output, "entropy_cdf.csv", &metrics::entropy_cdf_csv(&curve))?;
            println!(
                "ece {:.6}\noe {:.6}",
                metrics::ece(&conf, &correct, &bins_cfg)?,
                metrics::oe(&conf, &correct, &bins_cfg)?
            );
        }
        Command::SampleToy { common, target } => {
            let config = load(&common)?;
            let mut toy = config.toy;
            if let Some(t) = target {
                toy.target = t;
            }
            if let Some(rule) = common.rule {
                toy.sampler.rule = rule;
            }
            if let Some(seed) = common.seed {
                toy.seed = seed;
            }
            let report = sample_toy(&toy)?;
            write(&config.output, "toy_trace.csv", &report.trace_csv())?;
            write(&config.output, "toy_particles.csv", &report.particles_csv())?;
            let summary = serde_json::json!({
                "target": report.target,
                "rule": report.rule,
                "mean": report.mean,
                "variance": report.variance,
                "left": report.left,
                "right": report.right,
            });
            let text = serde_json::to_string_pretty(&summary)?;
            write(&config.output, "toy_summary.json", &text)?;
            println!("{text}");
        }
        Command::Report(common) => {
            let mut config = load(&common)?;
            if let Some(seed) = common.seed {
                config.base_seed = seed;
            }
            if let Some(rule) = common.rule {
                config.variants.retain(|v| v.rule == rule);
            }
            let summary = run_experiment(&config)?;
            let table = summary.render();
            write(&config.output, "report.txt", &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
