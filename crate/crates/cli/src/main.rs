use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use nicsim_cli::{execute_command, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute_command(&cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nicsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
