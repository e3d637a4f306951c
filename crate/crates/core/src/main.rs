use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use decoy_qkd::cli::{self, Command, Options};

/// Key-rate lower bounds for decoy-state BB84.
#[derive(Debug, Parser)]
#[command(name = "decoy-qkd", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Write the machine-readable record (JSON, or CSV for sweep) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks automatically.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Replaces the configured seeds (montecarlo only).
    #[arg(long)]
    seed_override: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let options = Options {
        out: args.out,
        threads: args.threads,
        seed_override: args.seed_override,
    };
    match cli::run(args.command, &args.config, &options) {
        Ok(stdout) => {
            print!("{stdout}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
