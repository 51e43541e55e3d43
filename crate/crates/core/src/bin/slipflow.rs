use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use slipflow::config::parse_config;
use slipflow::lame::LinearMode;
use slipflow::runner::{error_json, run_command, Command};

#[derive(Parser)]
#[command(name = "slipflow", version, about = "Steady compressible slip-flow solver")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Picard solve from the zero start.
    Solve(Args),
    /// Manufactured-solution convergence study of the linear step.
    Verify(Args),
    /// Diagnostics of the solution dumped in the output directory.
    Diagnose(Args),
    /// Characteristic transport solver against the upwind march.
    TransportTest(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `solver.mode`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Split,
    Monolithic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Diagnose(a) => (Command::Diagnose, a),
        Cmd::TransportTest(a) => (Command::TransportTest, a),
    };
    let result = parse_config(&args.config).and_then(|mut cfg| {
        if let Some(out) = args.out {
            cfg.output.directory = out;
        }
        if let Some(mode) = args.mode {
            cfg.solver.mode = match mode {
                ModeArg::Split => LinearMode::Split,
                ModeArg::Monolithic => LinearMode::Monolithic,
            };
        }
        run_command(cmd, &cfg)
    });
    match result {
        Ok(outcome) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", outcome.summary);
            for path in &outcome.artifacts {
                let _ = writeln!(out, "wrote {}", path.display());
            }
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
