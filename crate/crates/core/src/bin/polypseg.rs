use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polypseg::config::CliConfig;
use polypseg::pipeline::{run_pipeline, run_stage, Stage};

#[derive(Parser)]
#[command(name = "polypseg", version, about = "Synthetic polyp detection, mask generation and segmentation")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root, overriding the config.
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write procedural images and masks, build and split the manifest.
    Generate,
    /// Run the detector and write box files and annotated images.
    Detect,
    /// Turn stored detections into prompt masks under SAM-Results/.
    Masks,
    /// Train every configured architecture.
    Train,
    /// Score checkpoints on the validation split.
    Evaluate,
    /// Render inference grids and metric charts.
    Visualize,
    /// All of the above in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> polypseg::Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(root) = &cli.root {
        cfg.root = root.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Pipeline => run_pipeline(&cfg).map(|_| ()),
        Command::Generate => run_stage(Stage::Generate, &cfg).map(|_| ()),
        Command::Detect => run_stage(Stage::Detect, &cfg).map(|_| ()),
        Command::Masks => run_stage(Stage::Masks, &cfg).map(|_| ()),
        Command::Train => run_stage(Stage::Train, &cfg).map(|_| ()),
        Command::Evaluate => run_stage(Stage::Evaluate, &cfg).map(|_| ()),
        Command::Visualize => run_stage(Stage::Visualize, &cfg).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
