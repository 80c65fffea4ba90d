use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use relaxdiff::cli::{execute, load, Mode};

/// Relaxed cross-diffusion simulator.
#[derive(Parser, Debug)]
#[command(name = "relaxdiff", version)]
struct Args {
    /// simulate, converge, cross-validate or invariants
    #[arg(value_parser = parse_mode)]
    mode: Mode,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode `{s}` (simulate, converge, cross-validate, invariants)"))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match load(&args.config, Some(args.mode), args.output_dir.as_deref(), args.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cfg) {
        Ok(out) => {
            println!("{}", out.summary);
            if out.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("FAILED");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!(": {s}"));
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
