//! `avatar` binary: parses the command line and dispatches to the library.

use clap::Parser;

fn main() {
    let cli = avatar_core::cli::Cli::parse();
    match avatar_core::cli::run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(1);
        }
    }
}
