mod commands;
mod output;
mod scenario;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{ComposeArgs, CurveArgs, DpCompareArgs, TableArgs, VerifyArgs};

/// Statistical-privacy accounting for queries answered on random disjoint
/// samples of a database.
#[derive(Debug, Parser)]
#[command(name = "statpriv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Privacy curve of a property query on a random sample.
    Curve(CurveArgs),
    /// Recompute the n = 32768 comparison table.
    Table1(TableArgs),
    /// Recompute the n = 1024 comparison table.
    Table2(TableArgs),
    /// Composition bound for the query plan of a scenario file.
    Compose(ComposeArgs),
    /// Check the bounds against exact enumeration on small instances.
    Verify(VerifyArgs),
    /// SP against DP for chosen block counts and ε values.
    DpCompare(DpCompareArgs),
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    CheckFailed,
}

const EXIT_CHECK: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_CAPACITY: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Curve(args) => commands::curve(args),
        Command::Table1(args) => commands::table(statpriv::tables::table1(), args),
        Command::Table2(args) => commands::table(statpriv::tables::table2(), args),
        Command::Compose(args) => commands::compose(args),
        Command::Verify(args) => commands::verify(args),
        Command::DpCompare(args) => commands::dp_compare(args),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(EXIT_CHECK),
        Err(e) if e.chain().any(is_broken_pipe) => ExitCode::SUCCESS,
        Err(e) => {
            let capacity = e
                .chain()
                .any(|cause| cause.downcast_ref::<statpriv::Error>().is_some_and(statpriv::Error::is_capacity));
            output::diagnostic("error", &format!("{e:#}"));
            ExitCode::from(if capacity { EXIT_CAPACITY } else { EXIT_VALIDATION })
        }
    }
}

/// A closed downstream pipe (`statpriv table1 | head`) is not an error.
fn is_broken_pipe(cause: &(dyn std::error::Error + 'static)) -> bool {
    cause
        .downcast_ref::<std::io::Error>()
        .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}
