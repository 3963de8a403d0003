mod attention_bound;
mod compare;
mod oracle_check;
mod prune_lora;
mod prune_matrix;
mod train;

use std::path::{Path, PathBuf};

use crate::args::{Cli, Command};
use crate::config::Resolver;
use crate::error::{CliError, Result};
use crate::report::Report;

pub use attention_bound::{bound_trials, BoundConfig};
pub use compare::compare_report;

/// What a command produced. A command with a `failure` still writes its
/// report before exiting nonzero.
#[derive(Debug)]
pub struct Output {
    pub report: Report,
    /// Lines printed to stdout after the report path.
    pub summary: Vec<String>,
    pub failure: Option<CliError>,
}

impl Output {
    fn ok(report: Report, summary: Vec<String>) -> Self {
        Self { report, summary, failure: None }
    }
}

/// Resolves the config file and output directory, then runs the command.
pub fn execute(cli: &Cli) -> Result<(PathBuf, Output)> {
    let mut r = Resolver::from_file(cli.config.as_deref())?;
    let out_dir = r.quiet::<PathBuf>("out_dir", cli.out_dir.clone())?.unwrap_or_else(|| PathBuf::from("."));
    let output = match &cli.command {
        Command::PruneMatrix(a) => prune_matrix::run(a, r, &out_dir)?,
        Command::PruneLora(a) => prune_lora::run(a, r, &out_dir)?,
        Command::Train(a) => train::run(a, r)?,
        Command::Compare(a) => compare::run(a, r)?,
        Command::AttentionBound(a) => attention_bound::run(a, r)?,
        Command::OracleCheck(a) => oracle_check::run(a, r)?,
    };
    Ok((out_dir, output))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome = execute(cli).and_then(|(out_dir, output)| {
        let path = output.report.write(&out_dir)?;
        Ok((path, output))
    });
    match outcome {
        Ok((path, output)) => {
            println!("report: {}", path.display());
            for line in &output.summary {
                println!("{line}");
            }
            match output.failure {
                Some(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
                None => 0,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_matrix(path: &Path) -> Result<obsprune::Matrix> {
    obsprune::matcore::read_matrix_file(path).map_err(|e| match e {
        obsprune::PruneError::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}
