use clap::Parser;
use gsqg_cli::config::{parse_unvalidated, KEY_HELP};
use gsqg_cli::{run, Command, RunConfig, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Generalized SQG geodesics, Jacobi fields, conjugate points and Morse bounds.
#[derive(Parser, Debug)]
#[command(name = "gsqg", version, after_help = KEY_HELP)]
struct Cli {
    /// simulate | jacobi | conjugate-scan | sphere-example | morse-bound | verify
    /// (defaults to the `command` key of the configuration)
    command: Option<Command>,

    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "gsqg-out")]
    out: PathBuf,

    /// Single-threaded execution for bit-identical artifacts.
    #[arg(long)]
    deterministic: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = match &cli.config {
        Some(path) => parse_unvalidated(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.apply_override(s)?;
    }
    if let Some(c) = cli.command {
        cfg.command = c;
    }
    cfg.deterministic |= cli.deterministic;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli).and_then(|cfg| run(&cfg, &cli.out));
    match result {
        Ok(outcome) => {
            for line in outcome.summary {
                println!("{line}");
            }
            println!("artifacts written to {}", cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gsqg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
