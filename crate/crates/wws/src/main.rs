use clap::Parser;

use wws::cli::{self, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output goes to stdout with code 0.
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(cli::EXIT_USAGE);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Err(e) = cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
