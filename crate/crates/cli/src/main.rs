use clap::Parser;
use tasktransfer_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let environment = std::env::vars().collect();
    match run(cli, &environment) {
        Ok(outcome) => {
            for line in outcome.lines {
                println!("{line}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
