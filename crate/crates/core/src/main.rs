use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let args = kgflock::cli::Args::parse();
    ExitCode::from(kgflock::cli::main(args))
}
