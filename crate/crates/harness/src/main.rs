use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gres_core::rela::{NoTargetMode, PredictConfig};
use gres_core::GresError;
use gres_harness::eval::evaluate_checkpoint;
use gres_harness::train::{train, TrainOutcome};
use gres_harness::{gradcheck, Config, HarnessError, Preset, Result};
use gres_synth::{build_dataset, DatasetConfig, Mix, SceneConfig, Split};

#[derive(Parser)]
#[command(
    name = "gres",
    version,
    about = "Generalized referring expression segmentation at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/val corpus.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        val: usize,
        #[arg(long, default_value_t = 48)]
        canvas: usize,
        #[arg(long, default_value = "single=0.4,multi=0.3,notarget=0.3")]
        mix: Mix,
    },
    /// Train a model and write the best checkpoint by validation gIoU.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        mode: Option<NoTargetMode>,
        /// Write aggregate metrics as `key=value` lines.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write per-sample rows as TSV.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Train and evaluate an ablated variant.
    Ablate {
        #[arg(long, value_enum)]
        preset: Preset,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Finite-difference check of every model parameter.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `generate` (or `data_dir` in the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (or `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from the state saved in the output directory.
    #[arg(long)]
    resume: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<(Config, PathBuf, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(e) = self.epochs {
            cfg.set("epochs", &e.to_string())?;
        }
        let data = self.data.clone().or(cfg.data_dir.clone());
        let out = self.out.clone().or(cfg.out_dir.clone());
        let (Some(data), Some(out)) = (data, out) else {
            return Err(HarnessError::Config(
                "both --data and --out are required".into(),
            ));
        };
        cfg.validate()?;
        Ok((cfg, data, out))
    }
}

fn write_report(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GresError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| GresError::io(path, e).into())
}

fn run_training(cfg: &Config, data: &Path, out: &Path, resume: bool) -> Result<TrainOutcome> {
    let outcome = train(cfg, data, out, resume, |line| println!("{line}"))?;
    match (outcome.best_epoch, outcome.best_val_giou) {
        (Some(e), Some(g)) => println!(
            "best epoch {e} (val gIoU {g:.4}); checkpoint {}",
            outcome.checkpoint.display()
        ),
        _ => println!(
            "no epochs run; checkpoint {} holds the initialization",
            outcome.checkpoint.display()
        ),
    }
    Ok(outcome)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            out,
            seed,
            train,
            val,
            canvas,
            mix,
        } => {
            let cfg = DatasetConfig {
                scene: SceneConfig::canvas(canvas),
                train,
                val,
                mix,
            };
            let summary = build_dataset(&out, &cfg, seed)?;
            println!(
                "wrote {} train / {} val samples to {}",
                summary.train,
                summary.val,
                out.display()
            );
            for (kind, t, v) in summary.kinds {
                println!("  {kind:<20} {t:>5} {v:>5}");
            }
        }
        Command::Train(args) => {
            let (cfg, data, out) = args.resolve()?;
            run_training(&cfg, &data, &out, args.resume)?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            mode,
            report,
            samples,
        } => {
            let predict_cfg = PredictConfig {
                mode: mode.unwrap_or_default(),
                ..PredictConfig::default()
            };
            let r = evaluate_checkpoint(&checkpoint, &data, split, &predict_cfg)?;
            print!("{}", r.to_table());
            if let Some(path) = report {
                write_report(&path, &r.to_key_values())?;
            }
            if let Some(path) = samples {
                write_report(&path, &r.rows_tsv())?;
            }
        }
        Command::Ablate { preset, train } => {
            let (mut cfg, data, out) = train.resolve()?;
            preset.apply(&mut cfg)?;
            println!("ablation {preset}");
            let outcome = run_training(&cfg, &data, &out, train.resume)?;
            if let Some(r) = outcome.val_report {
                print!("{}", r.to_table());
                write_report(&out.join("report.txt"), &r.to_key_values())?;
            }
        }
        Command::Gradcheck { seed } => {
            let run = gradcheck::run(seed, gradcheck::gradcheck_config())?;
            let r = &run.report;
            println!("checked {} scalars in {:.1?}", r.checked, run.elapsed);
            println!(
                "max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
                r.max_rel_error, r.worst_param, r.worst_index, r.analytic, r.numeric
            );
            if !r.zero_grad_params.is_empty() {
                println!(
                    "parameters with zero gradient: {}",
                    r.zero_grad_params.join(", ")
                );
            }
            if !run.passed() {
                return Err(HarnessError::Numerical(format!(
                    "max relative error {:.3e} exceeds {:.0e}",
                    r.max_rel_error,
                    gradcheck::TOLERANCE
                )));
            }
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
