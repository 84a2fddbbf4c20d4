mod experiments;
mod output;
mod spec;

use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use crate::output::Table;
use crate::spec::{ExperimentSpec, Mode, Overrides};

/// Runs benchmark experiments with the enes optimizer and writes CSV.
#[derive(Debug, Parser)]
#[command(name = "enes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; all cores when absent
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Suppress progress lines
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-generation convergence of unimodal runs, with a summary per function
    Converge(Overrides),
    /// Success rates on multimodal functions over population sizes and initial distances
    Sweep(Overrides),
    /// Distribution parameters of a single run, generation by generation
    Trace(Overrides),
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let (mode, flags) = match &cli.command {
        Command::Converge(f) => (Mode::Converge, f),
        Command::Sweep(f) => (Mode::Sweep, f),
        Command::Trace(f) => (Mode::Trace, f),
    };
    let spec = ExperimentSpec::resolve(mode, flags)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build()?;

    // Progress would interleave with the CSV on stdout.
    let show = !cli.quiet && spec.output.is_some();
    let progress = move |line: String| {
        if show {
            println!("{line}");
        }
    };
    let table: Table = pool.install(|| match mode {
        Mode::Converge => Ok(experiments::converge(&spec, &progress)),
        Mode::Sweep => Ok(experiments::sweep(&spec, &progress)),
        Mode::Trace => experiments::trace(&spec, &progress),
    })?;
    table.write(spec.output.as_deref()).with_context(|| match &spec.output {
        Some(path) => format!("writing {}", path.display()),
        None => "writing to standard output".into(),
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|cause| cause.is::<std::io::Error>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
