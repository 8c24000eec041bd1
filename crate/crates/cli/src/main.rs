use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qkdlab_cli::scenario::{Format, ScenarioFile};
use qkdlab_cli::{cmd_certify, cmd_compose, cmd_simulate, cmd_sweep, parse_values, CliError, Outcome, SweepParam};

/// Composable-security laboratory for BB84 key distribution.
#[derive(Debug, Parser)]
#[command(name = "qkdlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output file; defaults to the scenario's output.path, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format; defaults to the scenario's output.format.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the run and summarize key and error statistics.
    Simulate(Common),
    /// Simulate and certify every bound; exits 1 if a bound row fails.
    Certify(Common),
    /// Certify once per value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// eve.p, eve.probe_angle or protocol.qber_threshold.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Evaluate the scenario's composition budget.
    Compose(Common),
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Certify(c) | Command::Compose(c) => c,
        Command::Sweep { common, .. } => common,
    };
    let sc = ScenarioFile::load(&common.scenario)?;
    let format = common.format.unwrap_or(sc.output.format);
    let out = common.out.clone().or_else(|| sc.output.path.clone());

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = common.threads {
        if k == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;

    let outcome = pool.install(|| match &cli.command {
        Command::Simulate(_) => cmd_simulate(&sc, format),
        Command::Certify(_) => cmd_certify(&sc, format),
        Command::Compose(_) => cmd_compose(&sc, format),
        Command::Sweep { param, values, .. } => {
            let param: SweepParam = param.parse()?;
            cmd_sweep(&sc, param, &parse_values(values)?, format)
        }
    })?;

    match out {
        Some(path) => fs::write(&path, &outcome.output).map_err(|source| CliError::Io { path, source })?,
        None => print!("{}", outcome.output),
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) if o.all_pass => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("qkdlab: {e}");
            ExitCode::from(2)
        }
    }
}
