use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use freqrobust::imgfreq::{FilterKind, FilterSpec};
use freqrobust_cli::commands;
use freqrobust_cli::{ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "freqrobust",
    version,
    about = "Frequency-filtering robustness experiments"
)]
struct Cli {
    /// Rayon worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override both the training and the augmentation seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a single image file and save the 8-bit result.
    Filter {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        kind: FilterKind,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        width: usize,
    },
    /// Write the clean and filtered CIFAR-10 test sets.
    GenTestsets(Common),
    /// Write stochastically filtered copies of the training subset.
    Augment(Common),
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train on originals plus stochastically filtered copies.
        #[arg(long)]
        stochastic: bool,
    },
    /// Evaluate trained runs on every test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Only this run (`baseline` or `stochastic`).
        #[arg(long)]
        run: Option<String>,
    },
    /// Render accuracy tables and the baseline comparison.
    Report(Common),
}

fn load_config(common: &Common, needs_data: bool) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.augment.seed = seed;
    }
    cfg.validate(needs_data)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Filter {
            input,
            output,
            kind,
            sigma,
            width,
        } => {
            let spec =
                FilterSpec::new(kind, sigma, width).map_err(|e| ConfigError(e.to_string()))?;
            commands::cmd_filter(&input, &output, &spec)?;
        }
        Command::GenTestsets(common) => {
            let cfg = load_config(&common, true)?;
            let manifest = commands::cmd_gen_testsets(&cfg)?;
            eprintln!(
                "wrote {} test sets to {}",
                manifest.entries.len(),
                cfg.testsets_dir().display()
            );
        }
        Command::Augment(common) => {
            let cfg = load_config(&common, true)?;
            let prov = commands::cmd_augment(&cfg)?;
            eprintln!(
                "wrote {} filtered copies to {}",
                prov.len(),
                cfg.augment_dir().display()
            );
        }
        Command::Train { common, stochastic } => {
            let mut cfg = load_config(&common, true)?;
            cfg.train.stochastic_augment |= stochastic;
            let out = commands::cmd_train(&cfg, |m| {
                eprintln!(
                    "epoch {:>3}  lr {:.5}  loss {:.4}  val {:.4}  {:.1}s",
                    m.epoch, m.lr, m.train_loss, m.val_acc, m.wall_seconds
                )
            })?;
            eprintln!(
                "saved {} after {} epochs",
                cfg.run_dir().display(),
                out.metrics.len()
            );
        }
        Command::Eval { common, run } => {
            let cfg = load_config(&common, false)?;
            if let Some(r) = &run {
                if !commands::RUN_NAMES.contains(&r.as_str()) {
                    return Err(ConfigError(format!("unknown run `{r}`")).into());
                }
            }
            for (name, grid) in commands::cmd_eval(&cfg, run.as_deref())? {
                eprintln!(
                    "{name}: clean accuracy {:.4}, mean filtered {:.4}",
                    grid.clean(),
                    grid.mean(None).unwrap_or(f64::NAN)
                );
            }
        }
        Command::Report(common) => {
            let cfg = load_config(&common, false)?;
            for path in commands::cmd_report(&cfg)? {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
