use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fuselang_cosal::write_dataset;
use fuselang_harness::compare::{compare_estimators, CompareOptions};
use fuselang_harness::config::RunConfig;
use fuselang_harness::data::{check_compatible, load_splits};
use fuselang_harness::eval::{evaluate, EvalOptions};
use fuselang_harness::inspect::{inspect_attention, write_overlay};
use fuselang_harness::train::{load_checkpoint, train};

#[derive(Parser)]
#[command(name = "fuselang", version, about = "Language-conditioned image editing with recurrent attentive fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a CoSaL dataset (train/ and test/) under --out.
    CosalGen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes checkpoint/ and train_report.json under --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Use this dataset directory instead of the configured one.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print the metric report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluate on the training split instead of the test split.
        #[arg(long)]
        train_split: bool,
        /// Use halting masses as weights instead of sampled noise.
        #[arg(long)]
        expectation: bool,
    },
    /// Report the highest-weight sentence per step and region.
    InspectAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Test-split position of the example to render.
        #[arg(long, default_value_t = 0)]
        example: usize,
        /// Number of test scenes for the direct-description statistic.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Compare REINFORCE and Gumbel-Softmax gradients against exhaustive enumeration.
    CompareEstimators {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::segmentation(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.data.cosal.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().context("an output directory is required (--out or `out` in the config)")?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FUSELANG_THREADS") {
        let n: usize = v.parse().with_context(|| format!("FUSELANG_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn checkpoint_config(common: &Common, checkpoint: &std::path::Path, data: &Option<PathBuf>) -> Result<Option<RunConfig>> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::load(&checkpoint.join("config.toml"))?,
    };
    if let Some(d) = data {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    Ok(Some(cfg))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_threads()?;
    match Cli::parse().command {
        Command::CosalGen { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&cfg)?;
            let (tr, te) = write_dataset(&cfg.data.cosal, &out)?;
            println!("{}\n{}", tr.display(), te.display());
        }
        Command::Train { common, data } => {
            let mut cfg = load_config(&common)?;
            if data.is_some() {
                cfg.data.dir = data;
            }
            let out = out_dir(&cfg)?;
            fs::write(out.join("config.toml"), cfg.to_toml())?;
            let splits = load_splits(&cfg.data)?;
            check_compatible(&cfg, &splits)?;
            let (_, report) = train(&cfg, &splits.train, &splits.test, Some(&out))?;
            println!("{}", report.final_test.to_json());
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            train_split,
            expectation,
        } => {
            let (model, cfg, step) = load_checkpoint(&checkpoint, checkpoint_config(&common, &checkpoint, &data)?)?;
            let splits = load_splits(&cfg.data)?;
            check_compatible(&cfg, &splits)?;
            let mut opts = EvalOptions::for_run(&cfg, step);
            if let Some(s) = common.seed {
                opts.seed = s;
            }
            opts.expectation |= expectation;
            let set = if train_split { &splits.train } else { &splits.test };
            let json = evaluate(&cfg, &model, set, &opts)?.to_json();
            if let Some(o) = &cfg.out {
                fs::create_dir_all(o)?;
                fs::write(o.join("metrics.json"), &json)?;
            }
            println!("{json}");
        }
        Command::InspectAttention {
            common,
            checkpoint,
            data,
            example,
            count,
        } => {
            let (model, cfg, step) = load_checkpoint(&checkpoint, checkpoint_config(&common, &checkpoint, &data)?)?;
            let splits = load_splits(&cfg.data)?;
            check_compatible(&cfg, &splits)?;
            let Some(sample) = splits.test.get(example) else {
                bail!("example {example} outside the {} test scenes", splits.test.len());
            };
            let mut opts = EvalOptions::for_run(&cfg, step);
            if let Some(s) = common.seed {
                opts.seed = s;
            }
            let report = inspect_attention(&cfg, &model, sample, &opts)?;
            let mut fractions = Vec::new();
            for s in splits.test.iter().take(count) {
                if let Some(f) = inspect_attention(&cfg, &model, s, &opts)?.first_step_direct_fraction() {
                    fractions.push(f);
                }
            }
            let direct_share = (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64);
            match direct_share {
                Some(d) if d >= 0.5 => log::info!("first-step peaks on direct descriptions: {d:.3}"),
                Some(d) => log::warn!("first-step peaks on direct descriptions: {d:.3} (below 0.5)"),
                None => log::warn!("model has no attention to inspect"),
            }
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "report": report,
                "first_step_direct_share": direct_share,
                "scenes": fractions.len(),
            }))?;
            if let Some(o) = &cfg.out {
                fs::create_dir_all(o)?;
                fs::write(o.join("attention.json"), &json)?;
                write_overlay(&o.join("attention.png"), sample, &report)?;
            }
            println!("{json}");
        }
        Command::CompareEstimators { common, samples, lambda } => {
            let opts = CompareOptions {
                seed: common.seed.unwrap_or(0),
                samples,
                lambda,
                ..Default::default()
            };
            let report = compare_estimators(&opts)?;
            if let Some(o) = &common.out {
                fs::create_dir_all(o)?;
                fs::write(o.join("estimators.json"), serde_json::to_string_pretty(&report)?)?;
            }
            print!("{}", report.table());
        }
    }
    Ok(())
}
