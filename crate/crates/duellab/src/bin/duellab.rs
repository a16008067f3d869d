use clap::Parser;

fn main() {
    let cli = duellab::cli::Cli::parse();
    std::process::exit(i32::from(duellab::cli::execute(cli)));
}
