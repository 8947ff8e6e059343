use std::process::ExitCode;

use clap::Parser;
use dsml_cli::{run, Cli, Outcome};

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("DSML_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("DSML_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    // clap's own usage-error status (2) would collide with the cap outcome.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { Outcome::Error.code() } else { 0 };
            return ExitCode::from(code as u8);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(Outcome::Error.code() as u8);
    }
    let outcome = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        Outcome::Error
    });
    ExitCode::from(outcome.code() as u8)
}
