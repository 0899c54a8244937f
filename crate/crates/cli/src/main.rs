mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use semidyad::{Error, ErrorClass};

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = match e.class() {
                ErrorClass::Usage => "usage",
                ErrorClass::Data => "data",
                ErrorClass::Numerical => "numerical",
            };
            let body = serde_json::json!({
                "error": e.kind(),
                "class": class,
                "message": e.to_string(),
            });
            eprintln!("{body}");
            ExitCode::from(exit_code(&e))
        }
    }
}
