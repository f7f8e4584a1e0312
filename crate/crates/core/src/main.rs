use std::process::ExitCode;

use clap::Parser;
use dipflow::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
