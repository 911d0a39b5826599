use std::io::Write;
use std::process::ExitCode;

use mfnet_cli::{configure_threads, execute, EXIT_USAGE};
use mfnet_core::gradsuite::Registry;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = configure_threads(std::env::var("MFNET_THREADS").ok().as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let out = execute(std::env::args_os(), &Registry::standard());
    // A closed stdout pipe is not worth a panic.
    let _ = std::io::stdout().write_all(out.stdout.as_bytes());
    let _ = std::io::stderr().write_all(out.stderr.as_bytes());
    ExitCode::from(out.code as u8)
}
