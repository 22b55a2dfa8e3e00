use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use eagrs::cli::{self, Overrides, RunDir};
use eagrs::fcdata::SyntheticConfig;
use eagrs::roiselect::AblationCase;

#[derive(Parser)]
#[command(name = "eagrs", version, about = "Relevance-guided ROI selection for functional-connectivity classification")]
struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Root for relative run directories.
    #[arg(long, global = true, env = "EAGRS_RUN_ROOT")]
    run_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Config to start from instead of the run's stored config.json.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// ROI masking ratio for pretraining.
    #[arg(long)]
    q: Option<f64>,
    /// Weight of the input reconstruction term for levels above the first.
    #[arg(long)]
    alpha: Option<f64>,
    /// Gate temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// One of I, II, III, IV, V, VI, full.
    #[arg(long)]
    ablation: Option<AblationCase>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            seed: self.seed,
            q: self.q,
            alpha: self.alpha,
            tau: self.tau,
            folds: self.folds,
            ablation: self.ablation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as a dataset manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON synthetic-cohort settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Step 1: masked SAE pretraining.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Sweep masking ratios `a:b:step` instead of training one model.
        #[arg(long)]
        sweep_q: Option<String>,
    },
    /// Step 2: relevance tensors and representative vectors.
    Relevance {
        #[command(flatten)]
        common: Common,
    },
    /// Step 3: cross-validated ROI selection and classification.
    Train {
        #[command(flatten)]
        common: Common,
        /// Baseline run directory or predictions CSV for McNemar's test.
        #[arg(long)]
        mcnemar_vs: Option<PathBuf>,
    },
    /// Selection ratios and ASD subtype clustering.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
}

fn run_dir(root: Option<&Path>, common: &Common) -> RunDir {
    RunDir::resolve(root, &common.run)
}

fn dispatch(cli: &Cli) -> Result<String> {
    let root = cli.run_root.as_deref();
    let out = match &cli.command {
        Command::Synth { out, config, seed } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text)
                        .map_err(|e| eagrs::Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = *seed;
            }
            cli::cmd_synth(out, &cfg)?
        }
        Command::Pretrain { common, sweep_q } => {
            let qs = sweep_q.as_deref().map(cli::parse_sweep).transpose()?;
            cli::cmd_pretrain(&run_dir(root, common), &common.overrides(), qs.as_deref())?
        }
        Command::Relevance { common } => cli::cmd_relevance(&run_dir(root, common), &common.overrides())?,
        Command::Train { common, mcnemar_vs } => {
            let baseline = mcnemar_vs.as_ref().map(|p| RunDir::resolve(root, p).root().to_path_buf());
            cli::cmd_train(&run_dir(root, common), &common.overrides(), baseline.as_deref())?
        }
        Command::Analyze { common } => cli::cmd_analyze(&run_dir(root, common), &common.overrides())?,
    };
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        builder = builder.num_threads(n.max(1));
    }
    let result = match builder.build() {
        Ok(pool) => pool.install(|| dispatch(&cli)),
        Err(e) => Err(anyhow::Error::new(e).context("building worker pool")),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<eagrs::Error>().map_or(1, cli::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
