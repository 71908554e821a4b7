use clap::Parser;

fn main() {
    let cli = nasmc::cli::Cli::parse();
    std::process::exit(nasmc::cli::run(cli));
}
