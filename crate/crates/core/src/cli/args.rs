use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::{
    cmd_collect, cmd_eval, cmd_export_latents, cmd_plan, cmd_run_all, cmd_train, LatentSource, RunConfig,
};
use crate::envs::{Cell, EnvConfig, GoalSplit};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "eqplan", version, about = "Learn action-equivariant latents, plan in the abstract MDP, act in the environment")]
pub struct Cli {
    /// TOML run configuration (defaults are used for anything it leaves out).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory; overrides the config file and EQPLAN_DATA_DIR.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the random exploration policy and store the transitions.
    Collect {
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit encoder, action and reward networks on the dataset.
    Train {
        /// Negatives per anchor (0 disables the hinge term).
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long)]
        no_reward_loss: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the abstract MDP and solve it with value iteration.
    Plan {
        #[arg(long, conflicts_with = "tau_grid")]
        tau: Option<f64>,
        /// Pick the temperature by grid search on train goals.
        #[arg(long)]
        tau_grid: bool,
        #[arg(long)]
        goal_split: Option<GoalSplit>,
        /// Fixed delivery cell `row,col` (object-collection room only).
        #[arg(long)]
        delivery: Option<String>,
    },
    /// Run the lifted greedy policy and write the summary CSV.
    Eval {
        #[arg(long)]
        goal_split: Option<GoalSplit>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        delivery: Option<String>,
    },
    /// Export 2-D PCA projections of latents with successors and values.
    ExportLatents {
        #[arg(long, value_enum, default_value_t = LatentSource::Prototypes)]
        source: LatentSource,
    },
    /// collect, train, plan, eval (train and test goals) and export in one go.
    RunAll,
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn parse_cell(text: &str) -> Result<Cell> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [r, c] => match (r.parse(), c.parse()) {
            (Ok(r), Ok(c)) => Ok([r, c]),
            _ => Err(Error::usage(format!("bad cell {text:?}, expected row,col"))),
        },
        _ => Err(Error::usage(format!("bad cell {text:?}, expected row,col"))),
    }
}

fn set_delivery(config: &mut RunConfig, delivery: &Option<String>) -> Result<()> {
    if let Some(text) = delivery {
        let cell = parse_cell(text)?;
        match &mut config.env {
            EnvConfig::Gridworld(g) => g.delivery = Some(cell),
            _ => return Err(Error::usage("--delivery only applies to the gridworld environment")),
        }
    }
    Ok(())
}

/// Resolves the configuration and applies the command's flags to it.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) if !path.is_file() => {
            return Err(Error::config(format!("config file {} does not exist", path.display())))
        }
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .with_env_overrides();
    if let Some(dir) = &cli.data_dir {
        config.data_dir = dir.clone();
    }
    match &cli.command {
        Command::Collect { trajectories, seed } => {
            if let Some(k) = trajectories {
                config.collect.trajectories = *k;
            }
            if let Some(s) = seed {
                config.collect.seed = *s;
            }
        }
        Command::Train { negatives, no_reward_loss, epochs, seed } => {
            if let Some(j) = negatives {
                config.train.negatives = *j;
            }
            if *no_reward_loss {
                config.train.use_reward_loss = false;
            }
            if let Some(e) = epochs {
                config.train.epochs = *e;
            }
            if let Some(s) = seed {
                config.train.seed = *s;
            }
        }
        Command::Plan { tau, tau_grid, goal_split, delivery } => {
            if let Some(t) = tau {
                config.abstract_mdp.tau = *t;
                config.abstract_mdp.grid_search = false;
            }
            if *tau_grid {
                config.abstract_mdp.grid_search = true;
            }
            if let Some(s) = goal_split {
                config.eval.goal_split = *s;
            }
            set_delivery(&mut config, delivery)?;
        }
        Command::Eval { goal_split, episodes, seed, delivery } => {
            if let Some(s) = goal_split {
                config.eval.goal_split = *s;
            }
            if let Some(n) = episodes {
                config.eval.episodes = *n;
            }
            if let Some(s) = seed {
                config.eval.seed = *s;
            }
            set_delivery(&mut config, delivery)?;
        }
        Command::ExportLatents { .. } | Command::RunAll | Command::DefaultConfig => {}
    }
    config.validate()?;
    Ok(config)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let config = resolve(cli)?;
    match &cli.command {
        Command::Collect { .. } => cmd_collect(&config).map(drop),
        Command::Train { .. } => cmd_train(&config).map(drop),
        Command::Plan { .. } => cmd_plan(&config).map(drop),
        Command::Eval { .. } => cmd_eval(&config).map(drop),
        Command::ExportLatents { source } => cmd_export_latents(&config, *source).map(drop),
        Command::RunAll => cmd_run_all(&config).map(drop),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 success, 1 invalid input or configuration, 2 runtime failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
