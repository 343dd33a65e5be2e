use std::process::ExitCode;

use clap::Parser;
use srlab::cli::{run, validate, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    let check = args.check;
    let config = match args.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if check {
        let problems = validate(&config);
        for p in &problems {
            println!("{p}");
        }
        return if problems.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE };
    }
    match run(&config) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
