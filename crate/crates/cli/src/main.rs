use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use spinlab_cli::commands::{allowed_keys, resolve_workers, WORKERS_ENV};
use spinlab_cli::config::{parse_config, Layered};
use spinlab_cli::{run, Cli, CliError};

fn setup(cli: &Cli) -> Result<(Layered, usize), CliError> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            Layered::new(parse_config(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?)
        }
        None => Layered::default(),
    };
    cfg.check_keys(&allowed_keys(&cli.command)).map_err(CliError::Validation)?;
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = resolve_workers(cli.workers, env.as_deref(), &cfg)?;
    Ok((cfg, workers))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = setup(&cli).and_then(|(cfg, workers)| {
        let out = match &cli.out {
            Some(p) => Some(p.clone()),
            None => cfg.get::<std::path::PathBuf>("out", None).map_err(CliError::Validation)?,
        };
        Ok((run(&cli, &cfg, workers)?, out))
    });
    match result {
        Ok((output, path)) => {
            let written = match path {
                Some(p) => std::fs::write(&p, &output.text).map_err(|e| format!("{}: {e}", p.display())),
                None => std::io::stdout().write_all(output.text.as_bytes()).map_err(|e| e.to_string()),
            };
            if let Err(e) = written {
                eprintln!("spinlab: {e}");
                return ExitCode::from(1);
            }
            ExitCode::from(output.exit as u8)
        }
        Err(e) => {
            eprintln!("spinlab: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
