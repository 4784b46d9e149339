use std::io::IsTerminal;
use std::process::ExitCode;

use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let verbosity = args.iter().filter(|a| *a == "-v" || *a == "--verbose").count()
        + args.iter().filter(|a| a.starts_with("-vv")).map(|a| a.len() - 1).sum::<usize>();
    let serving = args.iter().any(|a| a == "serve");
    let default = match (verbosity, serving) {
        (0, false) => "warn",
        (0, true) | (1, _) => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    let code = stops_core::cli::run_from(args, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code as u8)
}
