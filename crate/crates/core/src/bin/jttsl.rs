use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jttsl::cli::{exit_code, run, RunFlags};

#[derive(Parser)]
#[command(name = "jttsl", version, about = "Monte Carlo runs of consensus tracking with drift calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the output bundle.
    Run(RunFlags),
}

fn main() -> ExitCode {
    let Command::Run(flags) = Cli::parse().command;
    match run(&flags) {
        Ok(report) => {
            for s in &report.summary.rmse {
                println!("{:<18} steady-state RMSE {:10.3} m", s.variant, s.tail_mean(0.25));
            }
            if let Some(d) = &report.summary.drift {
                let last = d.median_max_error_m.last().copied().unwrap_or(f64::NAN);
                println!("median max drift error {:.3} m -> {:.3} m", d.initial_median_max_error_m, last);
            }
            println!("wrote {}", report.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
