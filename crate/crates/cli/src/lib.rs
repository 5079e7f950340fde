//! The `confscale` command-line tool: caching response pools, building
//! calibration data, evaluating strategies, fitting budget thresholds and
//! reporting calibration metrics.

pub mod args;
pub mod commands;
pub mod common;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use config::RunConfig;
use error::CliError;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let command = cli.apply(&mut cfg);
    match command {
        Command::Cache(_) => {
            let s = commands::cache::run_cache(&cfg)?;
            eprintln!(
                "cached {} responses for {} queries ({} new)",
                s.responses, s.queries, s.new_responses
            );
        }
        Command::GenData(_) => {
            let s = commands::gen_data::run_gen_data(&cfg)?;
            eprintln!(
                "wrote {} tuples from {} queries ({} partial pools)",
                s.tuples, s.queries, s.partial_pools
            );
        }
        Command::Eval(_) => {
            let rows = commands::eval::run_eval(&cfg)?;
            eprintln!("wrote {} rows", rows.len());
        }
        Command::Calibrate(_) => {
            let f = commands::calibrate::run_calibrate(&cfg)?;
            eprintln!("wrote {} thresholds", f.thresholds.len());
        }
        Command::Report(_) => {
            for s in commands::report::run_report(&cfg)? {
                eprintln!("{}: n={} ece={:.4} accuracy={:.4}", s.granularity, s.count, s.ece, s.accuracy);
            }
        }
    }
    Ok(())
}

/// Runs the tool and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
