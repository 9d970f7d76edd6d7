use clap::Parser;
use diffkernel::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
