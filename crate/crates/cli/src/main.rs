mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use manifold_core::config::preset_names;
use manifold_core::mining::Strategy;
use manifold_core::{Error, ErrorKind, ExperimentConfig, Result, TripletSensor};

use commands::{absolute, execute, Action, Invocation};
use run::RunManifest;

/// Shared-manifold triplet autoencoders for multi-sensor fusion and translation.
#[derive(Parser)]
#[command(name = "manifold", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named built-in configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Dataset file in MMDS1 format; overrides the configuration.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory; must not exist yet.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Mining strategy: hard, semi_hard or random.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Similarity-enhancement weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Triplet margin.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sensor carrying the triplet term: A, B or alt.
    #[arg(long = "triplet-sensor")]
    triplet_sensor: Option<TripletSensor>,
}

#[derive(Args, Clone)]
struct From {
    /// Reuse the models of an earlier train run instead of training.
    #[arg(long)]
    from: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset.
    Generate(Common),
    /// Train the shared manifold for the configured sensor pair.
    Train(Common),
    /// Map the extra sensor onto a frozen encoder of the manifold.
    MapSensor {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        from: From,
    },
    /// Classify fused embeddings.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        from: From,
        /// Evaluate every train-sensor/test-sensor pair.
        #[arg(long)]
        unified: bool,
        /// Report accuracy over the configured range of k.
        #[arg(long = "knn-sweep")]
        knn_sweep: bool,
    },
    /// Predict the missing sensor's codes and decode them.
    Translate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        from: From,
    },
    /// Silhouette grid over the similarity term, mining strategy and triplet sensor.
    Ablate(Common),
    /// Repeat a run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List built-in configurations, or print one.
    Presets { name: Option<String> },
}

fn resolve(common: &Common, action: Action, from: Option<PathBuf>) -> Result<(Invocation, PathBuf)> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::from_toml(&commands::read_config(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Error::Config("pass --config or --preset".into())),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = common.strategy {
        cfg.mining.strategy = s;
    }
    if let Some(g) = common.gamma {
        cfg.loss.se_weight_gamma = g;
    }
    if let Some(a) = common.alpha {
        cfg.loss.margin_alpha = a;
    }
    if let Some(t) = common.triplet_sensor {
        cfg.training.triplet_sensor = t;
    }
    cfg.validate()?;
    let inv = Invocation {
        action,
        config: cfg.to_toml(),
        dataset: common.dataset.as_deref().map(absolute),
        from: from.as_deref().map(absolute),
    };
    Ok((inv, common.out.clone()))
}

fn run(cli: Cli) -> Result<()> {
    let (inv, out) = match cli.command {
        Command::Generate(c) => resolve(&c, Action::Generate, None)?,
        Command::Train(c) => resolve(&c, Action::Train, None)?,
        Command::MapSensor { common, from } => resolve(&common, Action::MapSensor, from.from)?,
        Command::Classify {
            common,
            from,
            unified,
            knn_sweep,
        } => resolve(&common, Action::Classify { unified, knn_sweep }, from.from)?,
        Command::Translate { common, from } => resolve(&common, Action::Translate, from.from)?,
        Command::Ablate(c) => resolve(&c, Action::Ablate, None)?,
        Command::Rerun { manifest, out } => (RunManifest::load(&manifest)?.invocation, out),
        Command::Presets { name: None } => {
            preset_names().iter().for_each(|n| println!("{n}"));
            return Ok(());
        }
        Command::Presets { name: Some(n) } => {
            print!("{}", ExperimentConfig::preset(&n)?.to_toml());
            return Ok(());
        }
    };
    let dir = execute(&inv, &out)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            })
        }
    }
}
