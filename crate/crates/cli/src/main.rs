use std::process::ExitCode;

use clap::Parser;
use surrogate_cli::cli::{run, Cli};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<surrogate_core::Error>()
                .map_or("runtime", surrogate_core::Error::kind);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: kind={kind} message={message:?}");
            ExitCode::FAILURE
        }
    }
}
