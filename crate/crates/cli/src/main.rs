use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use doa_cli::config::KEYS;
use doa_cli::{run, Command, Format, Invocation};

#[derive(Parser)]
#[command(
    name = "doa",
    version,
    about = "Gridless DOA estimation: simulate snapshots, estimate DOAs, run Monte Carlo sweeps",
    long_about = "Gridless DOA estimation: simulate snapshots, estimate DOAs, run Monte Carlo sweeps.\n\
                  Angles are in degrees, powers are linear. Exit status: 0 success, 1 runtime \
                  failure, 2 configuration error.",
    after_long_help = config_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write seeded snapshots and ground truth to a text container.
    Simulate(Common),
    /// Run the configured methods on one data set.
    Estimate(Common),
    /// Monte Carlo sweep over the configured scenario grid.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. `--set snr_db=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Snapshot container to estimate from instead of synthesizing.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file (simulate, estimate) or directory (bench).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Zero timings and omit timestamps so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn config_help() -> String {
    let mut s = String::from("Config keys (repeatable keys marked *):\n");
    for (key, many, doc) in KEYS {
        s.push_str(&format!("  {key}{} {doc}\n", if *many { "*" } else { " " }));
    }
    s
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Estimate(c) => (Command::Estimate, c),
        Cmd::Bench(c) => (Command::Bench, c),
    };
    let inv = Invocation {
        command,
        config: c.config,
        sets: c.sets,
        input: c.input,
        output: c.output,
        format: c.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }),
        deterministic: c.deterministic,
    };
    match run(
        &inv,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    ) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("doa {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
