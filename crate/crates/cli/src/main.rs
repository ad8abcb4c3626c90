mod commands;
mod config;
mod output;
mod plot;

use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::NumericalFailure;
use crate::config::{resolve, Cli};
use crate::output::{Manifest, OutputDir};

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let resolved = match (cli.from_manifest, cli.command) {
        (Some(_), Some(_)) => anyhow::bail!("--from-manifest cannot be combined with a subcommand"),
        (Some(path), None) => Manifest::read(&path)?.config,
        (None, Some(cmd)) => resolve(cmd)?,
        (None, None) => anyhow::bail!("a subcommand or --from-manifest is required"),
    };
    let mut out = OutputDir::create(&cli.out)?;
    let outcome = commands::execute(&resolved, &mut out);
    let manifest = out.finish(resolved)?;
    log::info!("wrote {}", manifest.display());
    outcome
}

fn is_numerical(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.downcast_ref::<NumericalFailure>().is_some()
            || cause.downcast_ref::<freeconv::Error>().is_some_and(|e| e.is_numerical())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let numerical = is_numerical(&err);
            let kind = if numerical { "numerical" } else { "validation" };
            eprintln!("freeconv: error[{kind}]: {}", format!("{err:#}").replace('\n', " "));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
