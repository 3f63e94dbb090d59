use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rotkit_cli::{execute, Command, Overrides};

/// Rigid-rotor scenario runner.
///
/// Exit status: 0 on success, 1 for configuration errors, 2 for numerical
/// failures (truncation watchdog, positivity loss, step-size refusal).
/// The worker pool size can be set with ROTKIT_THREADS.
#[derive(Parser, Debug)]
#[command(name = "rotkit", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// Scenario configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Random seed; overrides `seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Basis cutoff; overrides `basis.j_max`.
    #[arg(long, value_name = "J")]
    jmax: Option<u32>,

    /// Do not list the written files.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        jmax: cli.jmax,
    };
    match execute(cli.command, &cli.config, &overrides) {
        Ok(files) => {
            if !cli.quiet {
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rotkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
