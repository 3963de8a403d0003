use clap::Parser;
use obsprune_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    std::process::exit(obsprune_cli::run(&cli));
}
