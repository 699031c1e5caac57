use clap::Parser;
use semisupcon::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
