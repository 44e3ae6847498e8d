//! The `raresir` command surface: scenario generation, campaigns, sweeps,
//! heat maps, extremes and iid oracles. Every output file is paired with a
//! `<output>.manifest` recording the parameters and input digests.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches};

use crate::args::{Cli, Command, ScenarioCommand};
use crate::error::{CliError, CliResult};

/// Lets a repeated option override its earlier value, recursively.
fn override_self(cmd: clap::Command) -> clap::Command {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    names
        .into_iter()
        .fold(cmd.args_override_self(true), |c, n| c.mut_subcommand(n, override_self))
}

pub fn command() -> clap::Command {
    override_self(Cli::command())
}

fn dispatch(cli: &Cli, matches: &clap::ArgMatches) -> CliResult<()> {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Scenario(sc) => {
            let (_, leaf) = sub.subcommand().expect("subcommand is required");
            match sc {
                ScenarioCommand::Gen(a) => commands::scenario_gen(a, leaf),
                ScenarioCommand::Info(a) => commands::scenario_info(a, leaf),
            }
        }
        Command::Simulate(a) => commands::simulate(a, sub),
        Command::Sweep(a) => commands::sweep(a, sub),
        Command::Heatmap(a) => commands::heatmap(a, sub),
        Command::Extremes(a) => commands::extremes(a, sub),
        Command::Oracle(a) => commands::oracle(a, sub),
    }
    .map_err(|e| {
        log::debug!("{name} failed: {e:?}");
        e
    })
}

fn run_inner(args: Vec<OsString>) -> CliResult<()> {
    let mut cmd = command();
    cmd.build();
    let args = config::expand_args(&cmd, args)?;
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
                    if e.exit_code() == 0 =>
                {
                    Ok(())
                }
                _ => Err(CliError::Usage(String::new())),
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?
            .install(|| dispatch(&cli, &matches)),
        None => dispatch(&cli, &matches),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match run_inner(args.into_iter().map(Into::into).collect()) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("raresir: error: {msg}");
            }
            e.exit_code()
        }
    }
}
