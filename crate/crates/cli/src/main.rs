use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use singerlab::contrastive::Regime;
use singerlab::encoder::Preset;
use singerlab::pipeline::{self, ExperimentConfig};
use singerlab::Error;

/// Singer-identification lab: synthetic catalog, contrastive pre-training,
/// frozen-encoder probes and cloned-voice analysis.
#[derive(Debug, Parser)]
#[command(name = "singerlab", version)]
struct Cli {
    /// Experiment config (TOML). Without one, defaults are used and relative
    /// paths resolve against --workdir.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base directory for relative paths when no config file is given.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Worker threads for rendering, feature extraction and embedding.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overrides the directory all results are written to.
    #[arg(long, global = true)]
    results_dir: Option<PathBuf>,

    /// Log more (repeat for trace output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic catalog (stems + manifest).
    Catalog {
        /// Catalog master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Filter the catalog and write the contrastive and identification splits.
    Splits {
        /// Split seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Contrastive pre-training of one or more regimes.
    Pretrain {
        #[command(flatten)]
        regimes: RegimeArgs,
        /// Encoder and schedule preset (desk or paper).
        #[arg(long)]
        preset: Option<Preset>,
        /// Pre-training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Epoch cap (the plateau rule may stop earlier).
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Initial learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Positive pairs per batch.
        #[arg(long)]
        batch_pairs: Option<usize>,
    },
    /// Train probe heads on frozen encoders.
    Probe {
        #[command(flatten)]
        regimes: RegimeArgs,
        #[command(flatten)]
        runs: RunArgs,
    },
    /// Score trained probes and write run results.
    Eval {
        #[command(flatten)]
        regimes: RegimeArgs,
        #[command(flatten)]
        runs: RunArgs,
    },
    /// Embedding similarity profile and accuracy breakdowns.
    Analyze {
        #[command(flatten)]
        regimes: RegimeArgs,
        /// Cosine reference profile of each encoder.
        #[arg(long)]
        fig5: bool,
        /// Genre and training-track-count breakdowns of identification runs.
        #[arg(long)]
        breakdown: bool,
        /// Minimum test tracks for a genre to be reported.
        #[arg(long)]
        min_genre_tracks: Option<usize>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Args)]
struct RegimeArgs {
    /// Regime(s) to process; defaults to the config's list.
    #[arg(long = "regime", value_name = "REGIME")]
    regime: Vec<Regime>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run seeds (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Class counts for identification runs (comma separated).
    #[arg(long, value_delimiter = ',')]
    n_classes: Vec<usize>,
    /// Class counts for cloned-voice runs (comma separated).
    #[arg(long, value_delimiter = ',')]
    cloned_n_classes: Vec<usize>,
}

fn load_config(cli: &Cli) -> singerlab::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut c = ExperimentConfig::default();
            c.rebase(&cli.workdir);
            c
        }
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(d) = &cli.results_dir {
        cfg.paths.results_dir = d.clone();
    }
    match &cli.command {
        Command::Catalog { seed: Some(s) } => cfg.seed = *s,
        Command::Splits { seed: Some(s) } => cfg.splits.seed = *s,
        Command::Pretrain {
            preset,
            seed,
            max_epochs,
            lr,
            batch_pairs,
            ..
        } => {
            if let Some(p) = preset {
                cfg.preset = *p;
            }
            cfg.pretrain.seed = seed.or(cfg.pretrain.seed);
            cfg.pretrain.max_epochs = max_epochs.or(cfg.pretrain.max_epochs);
            cfg.pretrain.lr = lr.or(cfg.pretrain.lr);
            cfg.pretrain.batch_pairs = batch_pairs.or(cfg.pretrain.batch_pairs);
        }
        Command::Probe { runs, .. } | Command::Eval { runs, .. } => {
            if !runs.seeds.is_empty() {
                cfg.eval.seeds = runs.seeds.clone();
            }
            if !runs.n_classes.is_empty() {
                cfg.eval.n_classes = runs.n_classes.clone();
            }
            if !runs.cloned_n_classes.is_empty() {
                cfg.eval.cloned_n_classes = runs.cloned_n_classes.clone();
            }
        }
        Command::Analyze {
            min_genre_tracks: Some(m),
            ..
        } => cfg.eval.min_genre_test_tracks = *m,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn regimes(cfg: &ExperimentConfig, args: &RegimeArgs) -> Vec<Regime> {
    if args.regime.is_empty() {
        cfg.eval.regimes.clone()
    } else {
        args.regime.clone()
    }
}

fn run(cli: &Cli) -> singerlab::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Catalog { .. } => {
            pipeline::cmd_catalog(&cfg)?;
        }
        Command::Splits { .. } => {
            pipeline::cmd_splits(&cfg)?;
        }
        Command::Pretrain { regimes: r, .. } => {
            for regime in regimes(&cfg, r) {
                let out = pipeline::cmd_pretrain(&cfg, regime)?;
                log::info!("{regime}: stopped after {} epochs ({:?})", out.history.len(), out.stop);
            }
        }
        Command::Probe { regimes: r, .. } => {
            for regime in regimes(&cfg, r) {
                pipeline::cmd_probe(&cfg, regime)?;
            }
        }
        Command::Eval { regimes: r, .. } => {
            for regime in regimes(&cfg, r) {
                pipeline::cmd_eval(&cfg, regime)?;
            }
        }
        Command::Analyze {
            regimes: r,
            fig5,
            breakdown,
            ..
        } => {
            if !fig5 && !breakdown {
                return Err(Error::Config("analyze needs --fig5 and/or --breakdown".into()));
            }
            for regime in regimes(&cfg, r) {
                if *fig5 {
                    let report = pipeline::cmd_analyze_fig5(&cfg, regime)?;
                    log::info!("{regime}: cosine profile {:?}", report.mean);
                }
                if *breakdown {
                    pipeline::cmd_analyze_breakdown(&cfg, regime)?;
                }
            }
        }
        Command::ShowConfig => {
            let text = toml::to_string_pretty(&cfg).map_err(|e| Error::Config(e.to_string()))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Infeasible(_) => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 4,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Config(_) => "config",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Infeasible(_) => "infeasible",
        Error::MissingArtifact { .. } => "missing_artifact",
        Error::Diverged { .. } => "diverged",
        Error::FrozenViolation => "frozen_violation",
        Error::Io { .. } => "io",
        _ => "runtime",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            log::error!("{err}");
            let record = serde_json::json!({
                "error": error_kind(&err),
                "message": err.to_string(),
                "exit_code": code,
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
