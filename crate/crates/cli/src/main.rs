//! Command-line front end: conformal reachsets, pixel robustness and their
//! audits, with a manifest per run for bit-identical replay.

mod commands;
mod error;
mod manifest;

use clap::Parser;

use commands::Command;
use error::EXIT_USAGE;
use manifest::RunContext;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(name = "conformal-reach", version, about)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "CONFORMAL_REACH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            std::process::exit(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            std::process::exit(EXIT_USAGE);
        }
    }
    let ctx = RunContext { threads: cli.threads };
    if let Err(e) = cli.command.run(&ctx) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
