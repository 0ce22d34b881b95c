use clap::Parser;

fn main() {
    let cli = rd2d::cli::Cli::parse();
    std::process::exit(rd2d::cli::run(&cli));
}
