use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use redunquant::cli::{exit, parse_config, run_command, Command, RunOptions};
use redunquant::redundancy::{AvgNormalization, Method};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    Verify,
    Synth,
    Redundancy,
    SweepEps,
    SweepTime,
    Simulate,
    FpGrid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    #[value(name = "closed_form")]
    ClosedForm,
    #[value(name = "monte_carlo")]
    MonteCarlo,
    Grid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormalizationArg {
    /// 1/(2N) in front of the summed relative entropies.
    Paper,
    /// 1/N.
    Mean,
}

/// Systemic redundancy of reliable multi-channel linear systems.
#[derive(Debug, Parser)]
#[command(name = "redunquant", version)]
struct Args {
    command: CommandArg,
    /// JSON problem configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    method: Option<MethodArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use exp(-tr(A) t) as the transport Jacobian (does not conserve mass).
    #[arg(long)]
    paper_literal_jacobian: bool,
    #[arg(long)]
    avg_normalization: Option<NormalizationArg>,
    /// Record wall-clock time in the report.
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG_INVALID } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let command = match args.command {
        CommandArg::Verify => Command::Verify,
        CommandArg::Synth => Command::Synth,
        CommandArg::Redundancy => Command::Redundancy,
        CommandArg::SweepEps => Command::SweepEps,
        CommandArg::SweepTime => Command::SweepTime,
        CommandArg::Simulate => Command::Simulate,
        CommandArg::FpGrid => Command::FpGrid,
    };
    let opts = RunOptions {
        method: args.method.map(|m| match m {
            MethodArg::ClosedForm => Method::ClosedForm,
            MethodArg::MonteCarlo => Method::MonteCarlo,
            MethodArg::Grid => Method::Grid,
        }),
        seed: args.seed,
        paper_literal_jacobian: args.paper_literal_jacobian,
        avg_normalization: args.avg_normalization.map(|n| match n {
            NormalizationArg::Paper => AvgNormalization::HalfN,
            NormalizationArg::Mean => AvgNormalization::Mean,
        }),
        timing: args.timing,
    };
    let result = parse_config(&args.config).and_then(|spec| run_command(command, &spec, &args.out, &opts));
    match result {
        Ok(outcome) => {
            if let Some(msg) = &outcome.diagnostic {
                eprintln!("redunquant: {msg}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("redunquant: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
