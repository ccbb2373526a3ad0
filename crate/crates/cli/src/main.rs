mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("MAXWENT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("MAXWENT_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Verify(a) => commands::verify(a),
        Command::ClipSweep(a) => commands::clip_sweep(a),
    }
}

/// 3 when any cause in the chain is a numerical failure, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<maxwent::Error>().is_some_and(maxwent::Error::is_numerical)
            || e.downcast_ref::<commands::NumericalFailure>().is_some()
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
