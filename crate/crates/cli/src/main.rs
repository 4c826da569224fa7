use clap::Parser;
use dcnn_cli::{run, Cli};

fn main() -> std::process::ExitCode {
    run(Cli::parse())
}
