use clap::Parser;
use pathsim_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli) {
        eprintln!("error: {:#}", f.error);
        std::process::exit(f.code);
    }
}
