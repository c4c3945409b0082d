//! `satlora`: command-line driver for the satlora-core simulations.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or configuration, 2 for
//! failures while running.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod common;
mod latency;
mod masks;
mod simulate;
mod sweep;
mod trajectory;

use common::Report;

#[derive(Parser)]
#[command(name = "satlora", version, about = "LoRa CubeSat downlink simulation and analysis")]
struct Cli {
    /// Print the run summary as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one pass: an IQ capture, error trace and detection per packet slot.
    SimulatePass(simulate::Args),
    /// Detection rate and SNR of the narrowband and wideband correlators versus Doppler.
    DetectSweep(sweep::Args),
    /// Recover pass parameters from a Doppler curve.
    EstimateTrajectory(trajectory::Args),
    /// Contact coverage and latency of ground-station catalogs.
    Latency(latency::Args),
    /// Sample bit-flip masks from error traces or an offset model.
    ExportMasks(masks::Args),
}

fn run(command: Command) -> anyhow::Result<Report> {
    match command {
        Command::SimulatePass(a) => simulate::run(a),
        Command::DetectSweep(a) => sweep::run(a),
        Command::EstimateTrajectory(a) => trajectory::run(a),
        Command::Latency(a) => latency::run(a),
        Command::ExportMasks(a) => masks::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(report) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report.summary).expect("summary serializes"));
            } else {
                print!("{}", report.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(common::exit_code(&e))
        }
    }
}
