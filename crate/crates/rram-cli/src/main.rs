//! Experiment runner for rank-adaptive low-rank matrix completion.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on runtime
//! failures. Errors are printed to stderr as single-line JSON.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{build, RawConfig, RunConfig};

#[derive(Parser)]
#[command(
    name = "rram",
    about = "Riemannian rank-adaptive low-rank matrix completion",
    after_help = "Config files are flat `key = value` text with dotted sections \
                  (problem.*, solver.*, adapt.*, output.*, budget.*, movielens.*). \
                  Any key can be overridden with --set key=value. Unknown keys are errors."
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set problem.m=2000 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic problem and write it to the output directory.
    Generate(ConfigArgs),
    /// Run a fixed-rank or adaptive solve and export traces.
    Solve(ConfigArgs),
    /// Run the ratings experiment: parse, split, adaptive solve, test RMSE.
    Movielens {
        #[command(flatten)]
        config: ConfigArgs,
        /// Override problem.path.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Parse and validate a configuration, printing its canonical form.
    ValidateConfig(ConfigArgs),
}

fn load(args: &ConfigArgs, extra: &[String]) -> Result<RunConfig, config::ConfigError> {
    let mut raw = RawConfig::from_file(&args.config)?;
    raw.apply_overrides(&args.sets)?;
    raw.apply_overrides(extra)?;
    build(&raw)
}

fn fail(kind: &str, msg: &str, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": msg }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Generate(args) => match load(args, &[]) {
            Err(e) => return fail("config", &e.0, 2),
            Ok(cfg) => runner::cmd_generate(&cfg),
        },
        Cmd::Solve(args) => match load(args, &[]) {
            Err(e) => return fail("config", &e.0, 2),
            Ok(cfg) => runner::cmd_solve(&cfg),
        },
        Cmd::Movielens { config, data } => {
            let extra: Vec<String> = data
                .iter()
                .map(|p| format!("problem.path={}", p.display()))
                .collect();
            match load(config, &extra) {
                Err(e) => return fail("config", &e.0, 2),
                Ok(cfg) => runner::cmd_movielens(&cfg),
            }
        }
        Cmd::ValidateConfig(args) => match load(args, &[]) {
            Err(e) => return fail("config", &e.0, 2),
            Ok(cfg) => {
                print!("{}", cfg.echo);
                return ExitCode::SUCCESS;
            }
        },
    };
    match result {
        Ok(summary) => {
            println!("{:#}", summary);
            ExitCode::SUCCESS
        }
        Err(e) => fail("runtime", &e.0, 3),
    }
}
