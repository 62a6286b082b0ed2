use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use proxydml::data::SynthConfig;
use proxydml_cli::commands::{self, EvalArgs, GenData, Side, VerifyArgs};
use proxydml_cli::config::RunConfigFile;
use proxydml_cli::{exit, exit_code};

#[derive(Parser)]
#[command(name = "proxydml", version, about = "Proxy-based metric learning experiments")]
struct Cli {
    /// Root for output directories that are not given explicitly.
    #[arg(long, env = "PROXYDML_OUT", default_value = "runs", global = true)]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config JSON; defaults apply to anything it omits.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its zero-shot class split.
    GenData {
        #[arg(long, default_value_t = 16)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 10.0)]
        center_scale: f64,
        #[arg(long, default_value_t = 0.5)]
        stddev: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        /// Seed for the class split; defaults to `--seed`.
        #[arg(long)]
        split_seed: Option<u64>,
        /// Put the lowest class ids on the training side.
        #[arg(long)]
        ordered_split: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train a model, streaming metrics and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Retrieval and clustering scores of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV; defaults to the data recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Side::Test)]
        side: Side,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        kmeans_max_iters: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Audit the proxy bounds on embedded data. Exits 4 on any violation.
    VerifyBounds {
        /// One or more checkpoints; several give a slack time series.
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Side::Train)]
        side: Side,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        margin: Option<f64>,
        /// Sample this many triplets for the total-loss bound.
        #[arg(long)]
        total_loss_samples: Option<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train once per proxy-per-class ratio and tabulate final scores.
    SweepProxyRatio {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
        ratios: Vec<f64>,
        /// Run the ratios concurrently.
        #[arg(long)]
        parallel: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Steps to reach a recall@1 threshold across metrics files.
    Compare {
        #[arg(required = true, num_args = 2..)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let root = cli.out_root;
    match cli.command {
        Command::GenData {
            classes,
            per_class,
            dim,
            center_scale,
            stddev,
            seed,
            train_fraction,
            split_seed,
            ordered_split,
            out,
        } => {
            let synth = SynthConfig {
                num_classes: classes,
                points_per_class: per_class,
                ambient_dim: dim,
                class_center_scale: center_scale,
                intra_class_stddev: stddev,
                seed,
            };
            commands::gen_data(&GenData {
                synth,
                train_fraction,
                split_seed: split_seed.unwrap_or(seed),
                ordered_split,
                out: out.unwrap_or_else(|| root.join(format!("data-seed{seed}"))),
            })?;
        }
        Command::Train { cfg, out } => {
            let run = RunConfigFile::load(cfg.config.as_deref(), &cfg.overrides)?;
            let out = out.unwrap_or_else(|| default_run_dir(&root, &run));
            let summary = commands::run_training(&run, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            side,
            ks,
            seed,
            kmeans_max_iters,
            out,
        } => {
            let report = commands::eval(&EvalArgs {
                checkpoint: &checkpoint,
                data: data.as_deref(),
                split: split.as_deref(),
                side,
                ks: &ks,
                seed,
                kmeans_max_iters,
            })?;
            commands::write_eval(out.as_deref(), &report)?;
        }
        Command::VerifyBounds {
            checkpoint,
            data,
            split,
            side,
            samples,
            seed,
            margin,
            total_loss_samples,
            out,
        } => {
            let report = commands::verify_bounds(&VerifyArgs {
                checkpoints: &checkpoint,
                data: data.as_deref(),
                split: split.as_deref(),
                side,
                samples,
                seed,
                margin,
                total_loss_samples,
            })?;
            commands::write_verify(out.as_deref(), &report)?;
            if report.total_violations > 0 {
                eprintln!("{} bound violation(s)", report.total_violations);
                return Ok(exit::BOUND_VIOLATION);
            }
        }
        Command::SweepProxyRatio {
            cfg,
            ratios,
            parallel,
            out,
        } => {
            let run = RunConfigFile::load(cfg.config.as_deref(), &cfg.overrides)?;
            let out = out.unwrap_or_else(|| root.join(format!("sweep-seed{}", run.train.seed)));
            let rows = commands::sweep_proxy_ratio(&run, &ratios, parallel, &out)?;
            print!("{}", std::fs::read_to_string(out.join(commands::SWEEP_FILE))?);
            if rows.iter().all(|r| r.status != "ok") {
                anyhow::bail!("every sweep run failed");
            }
        }
        Command::Compare {
            metrics,
            threshold,
            out,
        } => {
            let (curves, report) = commands::compare(&metrics, threshold)?;
            commands::print_compare(&curves, threshold);
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            }
        }
    }
    Ok(exit::OK)
}

fn default_run_dir(root: &std::path::Path, run: &RunConfigFile) -> PathBuf {
    let loss = serde_json::to_value(run.train.loss_kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "run".into());
    root.join(format!("{loss}-seed{}", run.train.seed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
