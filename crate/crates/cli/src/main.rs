use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stemlight_cli::{emit_plotdata, parse_scenario, run, CliError, RunOptions};

/// Optimal stem shapes and light-competition equilibria.
///
/// Exit status: 0 on success, 1 on usage or configuration errors, 2 when a solver fails to converge.
#[derive(Parser)]
#[command(name = "stemlight", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write CSV/JSON artifacts plus manifest.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory (defaults to the scenario's `output` entry).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the solver grid size.
        #[arg(long)]
        grid: Option<usize>,
        /// Override the solver tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Override the oracle seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Print long-format `series,x,y` rows for a finished run.
    Plotdata {
        /// Run directory holding manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Write to this file instead of standard output.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run { scenario, out, grid, tol, seed, quiet } => {
            let mut sc = parse_scenario(&scenario)?;
            sc.apply_overrides(grid, tol, seed)?;
            let out = out
                .or_else(|| sc.output.clone())
                .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `output`".into()))?;
            let report = run(&sc, &out, &RunOptions { quiet, grid, tol })?;
            if !report.converged && !quiet {
                eprintln!("stemlight: relaxation stopped before reaching its tolerance (see summary.json)");
            }
            Ok(true)
        }
        Command::Plotdata { out, file } => {
            let text = emit_plotdata(&out)?;
            match file {
                Some(path) => std::fs::write(&path, text).map_err(|source| CliError::Write { path, source })?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout
                        .write_all(text.as_bytes())
                        .map_err(|source| CliError::Write { path: PathBuf::from("<stdout>"), source })?;
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stemlight: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
