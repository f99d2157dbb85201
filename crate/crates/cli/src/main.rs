use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reachsep::synthesis::Method;
use reachsep_cli::pipeline::Overrides;
use reachsep_cli::{plots, run_scenario, CliError, RunRequest, EXIT_INPUT_ERROR};

#[derive(Parser)]
#[command(version, about = "Control-set synthesis for separating two aircraft's reachable tubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write tubes, solutions and diagnostics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Initial scalarization factor.
        #[arg(long)]
        k: Option<f64>,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// Number of tube directions in the plot plane.
        #[arg(long)]
        directions: Option<usize>,
        #[arg(long)]
        quad_steps: Option<usize>,
        /// Time grid step, s.
        #[arg(long)]
        grid_step: Option<f64>,
        /// Also write SVG figures.
        #[arg(long)]
        plots: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampled trajectories per aircraft for the sampling check.
        #[arg(long, default_value_t = 0)]
        verify_mc: usize,
    },
    /// Write SVG figures from the results of an earlier run.
    Plots { out: PathBuf },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: reachsep::Error| e.to_string())
}

fn input_error(e: &CliError) -> bool {
    matches!(e, CliError::Schema(_) | CliError::Io { .. } | CliError::Missing(_))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            k,
            method,
            directions,
            quad_steps,
            grid_step,
            plots,
            seed,
            verify_mc,
        } => {
            let req = RunRequest {
                overrides: Overrides {
                    k,
                    method,
                    directions,
                    quad_steps,
                    grid_step,
                },
                plots,
                seed,
                verify_mc,
            };
            match run_scenario(&scenario, &out, &req) {
                Ok(report) => {
                    let g = &report.geometry;
                    println!(
                        "tau = {} s, l* = ({:.4}, {:.4}, {:.4}), verdict: {} ({})",
                        g.tau, g.l_star[0], g.l_star[1], g.l_star[2],
                        report.verdict.as_str(),
                        report.reason
                    );
                    ExitCode::from(report.verdict.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(if input_error(&e) { EXIT_INPUT_ERROR as u8 } else { 1 })
                }
            }
        }
        Command::Plots { out } => match plots::emit_plots(&out) {
            Ok(res) => {
                for w in res.warnings {
                    eprintln!("warning: {w}");
                }
                for f in res.files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INPUT_ERROR as u8)
            }
        },
    }
}
