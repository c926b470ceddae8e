use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use keyface_cli::cli::{run, Cli, ERROR_EXIT};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match run(cli, &mut out) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            ERROR_EXIT
        }
    };
    let _ = out.flush();
    ExitCode::from(code)
}
