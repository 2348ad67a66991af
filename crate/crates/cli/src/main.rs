mod args;
mod commands;
mod selftest;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;
use flowroute_core::{Error, ErrorKind};
use serde_json::json;

use args::Cli;

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Usage => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Input => 1,
    }
}

fn error_json(err: &Error) -> serde_json::Value {
    let kind = match err.kind() {
        ErrorKind::Usage => "usage",
        ErrorKind::Io => "io",
        ErrorKind::Numerical => "numerical",
        ErrorKind::Input => "input",
    };
    match err {
        Error::Io { path, .. } | Error::Parse { path, .. } => {
            json!({ "error": kind, "path": path, "message": err.to_string() })
        }
        _ => json!({ "error": kind, "message": err.to_string() }),
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("FLOWROUTE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Usage(format!("FLOWROUTE_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!(
                "{}",
                json!({ "error": "usage", "message": e.to_string().trim_end() })
            );
            return ExitCode::from(2);
        }
    };
    let result = thread_count(cli.threads).and_then(|threads| {
        if let Some(n) = threads.filter(|&n| n > 0) {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Usage(e.to_string()))?;
        }
        commands::run(&cli.command)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
