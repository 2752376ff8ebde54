use std::process::ExitCode;

use feature_lens::cli::{self, CliError, EXIT_FAILURE};

fn main() -> ExitCode {
    match cli::run(std::env::args_os(), &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Args(e)) if !e.use_stderr() => {
            let _ = e.print();
            ExitCode::SUCCESS
        }
        Err(CliError::Args(e)) => {
            let _ = e.print();
            ExitCode::from(EXIT_FAILURE as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE as u8)
        }
    }
}
