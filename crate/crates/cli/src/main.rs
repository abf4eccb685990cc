use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splatdyn_cli::{run, CliError, Command, SceneConfig};

#[derive(Parser)]
#[command(name = "splatdyn", version, about = "Physics-driven Gaussian splat dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Scene configuration (JSON). Defaults describe the bundled cube scene.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Refine splats against the input view and multi-view depth.
    Optimize,
    /// Simulate and render frames.
    Simulate,
    /// Composite rendered frames over the background.
    Blend,
    /// Propagate keyframe features to every frame.
    Propagate,
    /// Z-score normalize a score table.
    Eval,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation(vec!["--threads must be positive".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(vec![format!("--threads: {e}")]))?;
    }
    let mut config = match &cli.config {
        Some(p) => SceneConfig::load(p)?,
        None => SceneConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.output = o.clone();
    }
    let command = match cli.command {
        Sub::Optimize => Command::Optimize,
        Sub::Simulate => Command::Simulate,
        Sub::Blend => Command::Blend,
        Sub::Propagate => Command::Propagate,
        Sub::Eval => Command::Eval,
    };
    let manifest = run(command, &config)?;
    println!("{} outputs written to {}", manifest.outputs.len(), config.output.display());
    Ok(())
}
