use std::process::ExitCode;

use clap::Parser;

use readmit_service::cli::{error_class, run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}] {msg}", error_class(&e));
            ExitCode::FAILURE
        }
    }
}
