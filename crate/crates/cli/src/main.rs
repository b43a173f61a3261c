use clap::Parser;

fn main() {
    std::process::exit(mjbd_cli::run(mjbd_cli::Cli::parse()));
}
