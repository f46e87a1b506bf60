use clap::Parser;

use factmark_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = factmark_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(factmark_cli::exit_code(&err));
    }
}
