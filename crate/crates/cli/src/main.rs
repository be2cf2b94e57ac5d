//! `seatwatch` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "seatwatch", version, about = "Library seat-occupancy detection")]
struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equalize the brightness of an image.
    Preprocess(commands::PreprocessArgs),
    /// Render a synthetic scene to a PNG with its description embedded.
    Render(commands::RenderArgs),
    /// Run the seat pipeline on one frame.
    Detect(commands::DetectArgs),
    /// Score a backend against a generated dataset.
    Evaluate(commands::EvaluateArgs),
    /// Generate a synthetic dataset directory.
    GenDataset(commands::GenDatasetArgs),
    /// Run the HTTP service.
    Serve(commands::ServeArgs),
}

/// Failure reported as a single JSON line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: "usage".into(), message: message.into(), exit: 2 }
    }

    pub fn io(context: impl std::fmt::Display, err: std::io::Error) -> Self {
        CliError { code: "io".into(), message: format!("{context}: {err}"), exit: 1 }
    }
}

impl From<seatwatch_core::Error> for CliError {
    fn from(e: seatwatch_core::Error) -> Self {
        let exit = matches!(e, seatwatch_core::Error::Argument(_) | seatwatch_core::Error::Config(_)) as u8 + 1;
        CliError { code: e.code().into(), message: e.to_string(), exit }
    }
}

fn report(err: &CliError) {
    let line = serde_json::json!({ "error": err.code, "message": err.message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            report(&CliError::usage(first));
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = (|| {
        let file = cli.config.as_deref().map(config::load_file).transpose()?;
        let file = file.as_ref();
        match cli.command {
            Command::Preprocess(a) => commands::preprocess(config::merge(a, file, "preprocess")?),
            Command::Render(a) => commands::render(config::merge(a, file, "render")?),
            Command::Detect(a) => commands::detect(config::merge(a, file, "detect")?),
            Command::Evaluate(a) => commands::evaluate(config::merge(a, file, "evaluate")?),
            Command::GenDataset(a) => commands::gen_dataset(config::merge(a, file, "gen_dataset")?),
            Command::Serve(a) => commands::serve(config::merge(a, file, "serve")?),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit.max(1))
        }
    }
}
