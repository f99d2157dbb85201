pub mod error;
pub mod output;
pub mod pipeline;
pub mod plots;
pub mod scenario;

use std::path::Path;

pub use error::CliError;
use pipeline::{Overrides, RunReport};
use scenario::{Scenario, Which};

/// Exit code for unreadable or malformed input.
pub const EXIT_INPUT_ERROR: i32 = 3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRequest {
    pub overrides: Overrides,
    pub plots: bool,
    pub seed: u64,
    pub verify_mc: usize,
}

/// Loads a scenario, runs it and writes every result file into `out`.
pub fn run_scenario(path: &Path, out: &Path, req: &RunRequest) -> Result<RunReport, CliError> {
    let mut scenario = Scenario::load(path)?;
    req.overrides.apply(&mut scenario)?;
    let report = pipeline::run(&scenario, req.verify_mc, req.seed)?;
    let ua = scenario.aircraft(Which::A)?.spec.control().clone();
    let ub = scenario.aircraft(Which::B)?.spec.control().clone();
    output::write_artifacts(out, &report, &ua, &ub)?;
    if req.plots {
        for w in plots::emit_plots(out)?.warnings {
            eprintln!("warning: {w}");
        }
    }
    Ok(report)
}
