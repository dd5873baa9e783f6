use clap::Parser;

fn main() {
    let cli = dphase::cli::Cli::parse();
    std::process::exit(dphase::cli::main_with(cli));
}
