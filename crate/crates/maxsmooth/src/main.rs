use clap::Parser;

fn main() {
    let cli = maxsmooth::cli::Cli::parse();
    std::process::exit(maxsmooth::cli::run_cli(cli));
}
