use std::io::Write;
use std::process::ExitCode;

use amisr::{configure_threads, execute, Cli};
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| execute(&cli.command));
    match result {
        Ok(out) => {
            let (stdout_text, stderr_text) = if cli.pretty {
                (out.human, None)
            } else {
                (out.json + "\n", Some(out.human))
            };
            if let Some(h) = stderr_text {
                eprint!("{h}");
            }
            let _ = std::io::stdout().write_all(stdout_text.as_bytes());
            match out.failure {
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
