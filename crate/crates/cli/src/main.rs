//! `gpcr` command-line entry point.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numeric failure,
//! 4 I/O error. Failures print one line `error[CODE]: message` to stderr.

mod args;
mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches};

use args::{Cli, Cmd};
use commands::RunContext;

fn fail(code: &str, exit: u8, msg: &str) -> ExitCode {
    eprintln!("error[{code}]: {}", msg.lines().next().unwrap_or("").trim_start_matches("error: "));
    ExitCode::from(exit)
}

fn echo(subcommand: &str, m: &ArgMatches) -> BTreeMap<String, String> {
    let cmd = Cli::command();
    let args: Vec<String> = cmd
        .find_subcommand(subcommand)
        .map(|s| s.get_arguments().map(|a| a.get_id().to_string()).collect())
        .unwrap_or_default();
    m.ids()
        .filter(|id| args.iter().any(|a| a == id.as_str()))
        .filter_map(|id| {
            let raw = m.try_get_raw(id.as_str()).ok()??;
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((id.as_str().replace('_', "-"), vals.join(",")))
        })
        .collect()
}

fn main() -> ExitCode {
    let argv: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => return fail(e.code(), e.exit_code() as u8, &e.to_string()),
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("E_INPUT", 2, &e.to_string());
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return fail("E_INPUT", 2, &e.to_string()),
    };
    let (subcommand, sub) = matches.subcommand().expect("subcommand is required");
    let ctx = RunContext {
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        subcommand: subcommand.to_string(),
        config: echo(subcommand, sub),
        started: output::now_unix(),
    };
    let result = match &cli.cmd {
        Cmd::Fit(a) => commands::fit(a, &ctx),
        Cmd::Predict(a) => commands::predict(a, &ctx, false),
        Cmd::Impute(a) => commands::predict(a, &ctx, true),
        Cmd::SynthBench(a) => commands::synth_bench(a, &ctx),
        Cmd::SvaeCompare(a) => commands::svae_compare(a, &ctx),
        Cmd::CheckGrads(a) => match commands::check_grads(a) {
            Ok(true) => Ok(()),
            Ok(false) => Err(gpcr::Error::numeric("gradient check exceeded tolerance")),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), e.exit_code() as u8, &e.to_string()),
    }
}
