use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

/// Bad input from the command line or the configuration file (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "proxvae", version, about = "Proximity-subgraph VAE recommender pipeline")]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Binarize, filter and split a raw interaction file.
    Prepare {
        /// Raw interaction file [config: input]
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output directory [config: data_dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build proximity matrices, subgraphs, neighbours and strata from the training split.
    BuildGraph {
        /// Prepared dataset directory [config: data_dir]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory [config: graph_dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write best.ckpt, last.ckpt and train_log.csv.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Output directory [config: train_dir]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint (or from `last.ckpt` in this directory).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score held-out interactions and write metrics.csv and summary.json.
    Evaluate {
        /// Checkpoint to score [default: <train_dir>/best.ckpt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Output directory [config: eval_dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top items for one user, excluding their train and validation items.
    Recommend {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// User id as it appears in the raw file.
        #[arg(long)]
        user: String,
        /// List length [config: k_cut]
        #[arg(long)]
        k: Option<usize>,
        /// Blend weight of the first-order scores [config: alpha]
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Print a configuration file holding every default.
    Defaults,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Defaults = cli.command {
        print!("{}", config::defaults_file());
        return Ok(());
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if cfg.settings.threads > 0 {
        // a second initialization only happens in tests; ignore it
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.settings.threads)
            .build_global();
    }
    let s = &cfg.settings;
    let or = |p: Option<PathBuf>, d: &PathBuf| p.unwrap_or_else(|| d.clone());
    match cli.command {
        Command::Prepare { input, out } => {
            let input = input
                .or_else(|| s.input.clone())
                .ok_or_else(|| UsageError("no input file: pass --input or set `input`".into()))?;
            commands::prepare(&cfg, &input, &or(out, &s.data_dir))
        }
        Command::BuildGraph { data, out } => commands::build_graph(&cfg, &or(data, &s.data_dir), &or(out, &s.graph_dir)),
        Command::Train { data, graph, out, resume } => commands::train(
            &cfg,
            &or(data, &s.data_dir),
            &or(graph, &s.graph_dir),
            &or(out, &s.train_dir),
            resume.as_deref(),
        ),
        Command::Evaluate { checkpoint, data, graph, out } => commands::evaluate(
            &cfg,
            &checkpoint.unwrap_or_else(|| s.train_dir.join("best.ckpt")),
            &or(data, &s.data_dir),
            &or(graph, &s.graph_dir),
            &or(out, &s.eval_dir),
        ),
        Command::Recommend {
            checkpoint,
            data,
            graph,
            user,
            k,
            alpha,
        } => commands::recommend(
            &checkpoint.unwrap_or_else(|| s.train_dir.join("best.ckpt")),
            &or(data, &s.data_dir),
            &or(graph, &s.graph_dir),
            &user,
            k.unwrap_or(s.k_cut),
            alpha.unwrap_or(s.alpha),
        ),
        Command::Defaults => unreachable!(),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|c| {
        c.is::<UsageError>() || c.downcast_ref::<proxvae::Error>().is_some_and(proxvae::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let command = Cli::command().after_long_help(config::help_table());
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
