use clap::Parser;

use openrel_cli::args::Cli;
use openrel_cli::commands::run;

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            for p in &manifest.outputs {
                eprintln!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
