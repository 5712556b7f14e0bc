//! `cfsc`: train and analyze skeleton-action models.
//!
//! Exit codes: 0 success, 2 bad configuration or input files, 3 runtime or
//! numeric failure.

use cfsc_core::analysis::{joint_response, run_ablate, AblateGrid, AxisValues, ResponseSource};
use cfsc_core::config::{Modality, ModelConfig, RunConfig, TopologySpec};
use cfsc_core::data::synth::{synth_dataset, SynthConfig};
use cfsc_core::data::{load_clip, Dataset, Split};
use cfsc_core::error::Error;
use cfsc_core::exec::ExecMode;
use cfsc_core::gradcheck::grad_check;
use cfsc_core::model::checkpoint;
use cfsc_core::model::Model;
use cfsc_core::train::{evaluate, train};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cfsc",
    about = "Skeleton-based fine-grained action recognition: training, ablation and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Input modality (joint or bone).
    #[arg(long)]
    modality: Option<String>,
    /// Feature weight, applied inside the cascade and at final fusion.
    #[arg(long)]
    lambda: Option<f64>,
    /// Cascade temporal kernel size.
    #[arg(long)]
    kt: Option<usize>,
    /// Tapped blocks, e.g. "4,7,10".
    #[arg(long)]
    taps: Option<String>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset manifest and write report + checkpoint.
    Train {
        /// Run config JSON ({"model": .., "optim": ..}); defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset manifest path.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Run grid points / evaluation sequentially.
        #[arg(long)]
        sequential: bool,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest path.
        #[arg(long)]
        data: PathBuf,
        /// Split to evaluate (train or val).
        #[arg(long, default_value = "val")]
        split: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional run config to cross-check against the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Verify analytic gradients against central differences.
    Gradcheck {
        /// Model size: "tiny" is the reduced full model.
        #[arg(long, default_value = "tiny")]
        size: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Optional output directory for gradcheck.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (clips + manifest.json).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        train_per_class: usize,
        #[arg(long, default_value_t = 3)]
        val_per_class: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 150)]
        target_t: usize,
        #[arg(long)]
        sequential: bool,
    },
    /// Sweep lambda, the cascade kernel, or tap sets over seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sweep axis: lambda, kernel, or taps.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; tap sets use "+" within a set,
        /// e.g. "1+10,4+7+10". Defaults to the standard sweep per axis.
        #[arg(long)]
        values: Option<String>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1")]
        seeds: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        sequential: bool,
    },
    /// Per-joint feature-response profile of one clip.
    Respond {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clip file to analyze.
        #[arg(long)]
        clip: PathBuf,
        /// Feature source: baseline (last block) or cfsc (auxiliary feature).
        #[arg(long, default_value = "baseline")]
        source: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_input() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn mode(sequential: bool) -> ExecMode {
    if sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

fn parse_taps(s: &str) -> Result<Vec<usize>, Error> {
    s.split([',', '+'])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("taps: bad block index {p:?}")))
        })
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Error> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("seeds: bad seed {p:?}")))
        })
        .collect()
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<RunConfig, Error> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json_file(p)?,
        None => {
            let modality = match overrides.modality.as_deref() {
                Some(m) => m.parse()?,
                None => Modality::Joint,
            };
            RunConfig::defaults(modality)
        }
    };
    if let Some(m) = overrides.modality.as_deref() {
        cfg.model.modality = m.parse()?;
    }
    if let Some(seed) = overrides.seed {
        cfg.optim.seed = seed;
    }
    if let Some(lambda) = overrides.lambda {
        cfg.model.lambda_internal = lambda;
        cfg.model.lambda_fusion = lambda;
    }
    if let Some(kt) = overrides.kt {
        cfg.model.kt = kt;
    }
    if let Some(taps) = overrides.taps.as_deref() {
        cfg.model.taps = parse_taps(taps)?;
    }
    if let Some(epochs) = overrides.epochs {
        cfg.optim.epochs = epochs;
    }
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            overrides,
            sequential,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let dataset = Dataset::load(&data)?;
            ensure_out(&out)?;
            let outcome = train(&cfg, &dataset, mode(sequential))?;
            std::fs::write(out.join("report.json"), outcome.report.to_json())?;
            std::fs::write(out.join("report.csv"), outcome.report.to_csv())?;
            checkpoint::save(&outcome.best, &out.join("model.ckpt"))?;
            println!(
                "trained {} epochs: best val top-1 {:.4} (epoch {}), final {:.4}",
                outcome.report.epochs.len(),
                outcome.report.best_val_top1,
                outcome.report.best_epoch,
                outcome.report.final_val_top1
            );
            println!("artifacts: report.json report.csv model.ckpt in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint: ckpt_path,
            data,
            split,
            out,
            config,
            sequential,
        } => {
            let model = checkpoint::load(&ckpt_path)?;
            if let Some(cfg_path) = config {
                let cfg = RunConfig::from_json_file(&cfg_path)?;
                let expect = checkpoint::model_config_hash(&cfg.model);
                let got = checkpoint::model_config_hash(&model.config);
                if expect != got {
                    return Err(Error::Config(format!(
                        "config: hash {expect} does not match checkpoint model hash {got}"
                    )));
                }
            }
            let dataset = Dataset::load(&data)?;
            let split: Split = split.parse()?;
            ensure_out(&out)?;
            let report = evaluate(&model, &dataset, split, mode(sequential))?;
            std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
            std::fs::write(
                out.join("confusion.csv"),
                report.confusion_csv(&dataset.manifest.classes),
            )?;
            println!(
                "top-1 {:.4} ({}/{} correct)",
                report.top1, report.correct, report.total
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { size, seed, out } => {
            if size != "tiny" {
                return Err(Error::Config(format!(
                    "size: only \"tiny\" is defined, got {size:?}"
                )));
            }
            let report = gradcheck_tiny(seed)?;
            println!(
                "gradcheck(tiny): max relative error {:.3e} over {} entries (worst: {})",
                report.max_rel_err,
                report.entries_checked,
                report
                    .worst
                    .as_ref()
                    .map(|(name, idx)| format!("{name}[{idx}]"))
                    .unwrap_or_else(|| "-".into())
            );
            if let Some(dir) = out {
                ensure_out(&dir)?;
                let json = serde_json::json!({
                    "max_rel_err": report.max_rel_err,
                    "entries_checked": report.entries_checked,
                    "seed": seed,
                    "pass": report.passes(1e-4),
                });
                std::fs::write(dir.join("gradcheck.json"), serde_json::to_string_pretty(&json)?)?;
            }
            if report.passes(1e-4) {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(Error::Numeric(format!(
                    "gradient check failed: max relative error {:.3e} >= 1e-4",
                    report.max_rel_err
                )))
            }
        }
        Command::Synth {
            seed,
            out,
            classes,
            train_per_class,
            val_per_class,
            noise,
            target_t,
            sequential,
        } => {
            let cfg = SynthConfig {
                seed,
                classes,
                train_per_class,
                val_per_class,
                noise,
                target_t,
                ..SynthConfig::default()
            };
            let dataset = synth_dataset(&cfg, mode(sequential))?;
            let manifest_path = dataset.write(&out)?;
            println!(
                "wrote {} clips and {}",
                dataset.clips.len(),
                manifest_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate {
            config,
            data,
            out,
            axis,
            values,
            seeds,
            overrides,
            sequential,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let dataset = Dataset::load(&data)?;
            let grid = AblateGrid {
                values: parse_axis(&axis, values.as_deref())?,
                seeds: parse_seeds(&seeds)?,
            };
            ensure_out(&out)?;
            let report = run_ablate(&cfg, &grid, &dataset, mode(sequential))?;
            std::fs::write(out.join("report.json"), report.to_json())?;
            std::fs::write(out.join("report.csv"), report.to_csv())?;
            println!("axis {} over {} seeds:", report.axis, grid.seeds.len());
            for s in &report.summaries {
                println!(
                    "  {:>12}: mean val top-1 {:.4} (sigma {:.4}, {} runs, {} failures)",
                    s.value, s.mean_val_top1, s.std_val_top1, s.runs, s.failures
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Respond {
            checkpoint: ckpt_path,
            clip,
            source,
            out,
        } => {
            let model = checkpoint::load(&ckpt_path)?;
            let clip = load_clip(&clip)?;
            let graph = model.config.topology.build()?;
            let source: ResponseSource = source.parse()?;
            let profile = joint_response(&model, &clip.values, &graph, source)?;
            ensure_out(&out)?;
            let hash = checkpoint::model_config_hash(&model.config);
            std::fs::write(out.join("response.csv"), profile.to_csv(&hash, model.seed))?;
            std::fs::write(out.join("response.json"), profile.to_json())?;
            if profile.uniform_fallback {
                eprintln!("warning: all-zero feature map; profile fell back to uniform");
            }
            for (name, value) in &profile.named {
                println!("{name}: {value:.4}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// The reduced full model used by the gradient suite: chain(5) graph,
/// 4 blocks (4,4,8,8 channels, stride 2 at block 3), taps {2,4}.
fn tiny_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::defaults(Modality::Joint);
    cfg.topology = TopologySpec::Named("chain(5)".into());
    cfg.channels = vec![4, 4, 8, 8];
    cfg.strides = vec![1, 1, 2, 1];
    cfg.kt_block = 5;
    cfg.taps = vec![2, 4];
    cfg.kt = 3;
    cfg.lambda_internal = 0.3;
    cfg.lambda_fusion = 0.3;
    cfg.num_classes = 3;
    cfg.target_t = 16;
    cfg
}

fn gradcheck_tiny(seed: u64) -> Result<cfsc_core::gradcheck::GradCheckReport, Error> {
    let cfg = tiny_model_config();
    let model = Model::new(cfg.clone(), seed)?;
    let t = cfg.effective_t();
    let n = 5;
    let mut rng = cfsc_core::rng::stream(seed, "gradcheck-input");
    let clip = cfsc_core::Tensor::new(
        vec![3, t, n],
        (0..3 * t * n).map(|_| cfsc_core::rng::normal(&mut rng)).collect(),
    )?;
    let mut rng2 = cfsc_core::rng::stream(seed, "gradcheck-input-2");
    let clip2 = cfsc_core::Tensor::new(
        vec![3, t, n],
        (0..3 * t * n).map(|_| cfsc_core::rng::normal(&mut rng2)).collect(),
    )?;
    let labels = vec![1usize, 2];
    let mut params = model.params.clone();
    grad_check(&mut params, 1e-5, |g, p| {
        let bound = model.bind_store(g, p);
        let xa = g.constant(clip.clone());
        let a = model.forward(g, xa, &bound)?;
        let xb = g.constant(clip2.clone());
        let b = model.forward(g, xb, &bound)?;
        let logits = g.stack_rows(&[a.logits, b.logits])?;
        let (loss, _) = g.softmax_cross_entropy(logits, &labels)?;
        Ok(loss)
    })
    .map_err(Error::from)
}

fn parse_axis(axis: &str, values: Option<&str>) -> Result<AxisValues, Error> {
    match axis {
        "lambda" => match values {
            None => Ok(AxisValues::default_lambda()),
            Some(v) => {
                let parsed: Result<Vec<f64>, Error> = v
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("values: bad lambda {p:?}")))
                    })
                    .collect();
                Ok(AxisValues::Lambda(parsed?))
            }
        },
        "kernel" => match values {
            None => Ok(AxisValues::default_kernel()),
            Some(v) => {
                let parsed: Result<Vec<usize>, Error> = v
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("values: bad kernel {p:?}")))
                    })
                    .collect();
                Ok(AxisValues::Kernel(parsed?))
            }
        },
        "taps" => match values {
            None => Ok(AxisValues::default_taps()),
            Some(v) => {
                let sets: Result<Vec<Vec<usize>>, Error> = v
                    .split(',')
                    .map(|set| {
                        set.split('+')
                            .map(|p| {
                                p.trim().parse::<usize>().map_err(|_| {
                                    Error::Config(format!("values: bad tap {p:?} in {set:?}"))
                                })
                            })
                            .collect()
                    })
                    .collect();
                Ok(AxisValues::Taps(sets?))
            }
        },
        other => Err(Error::Config(format!(
            "axis: expected lambda, kernel or taps, got {other:?}"
        ))),
    }
}
