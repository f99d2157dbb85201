//! The end-to-end run: encounter estimate, initial tubes, control-set
//! synthesis, final tubes, grid verification and optional sampling check.

use nalgebra::DVector;
use reachsep::ellipsoid::HalfspaceSet;
use reachsep::montecarlo::{pairwise_clearance, sample_trajectories, worst_halfspace_violation};
use reachsep::reachability::{planar_directions, reach_tube, ReachTube};
use reachsep::synthesis::{
    estimate_encounter, scalarization_loop, verify_separation, Aircraft, Attempt, EncounterGeometry, GridCheck,
    InfeasibilityReport, LoopOptions, LoopOutcome, Method, Solved,
};

use crate::error::CliError;
use crate::scenario::{Scenario, Which};

/// Grid checks pass when `separation − d` is at least this.
pub const VERIFY_TOLERANCE: f64 = 1e-6;
/// Sampled states may exceed a reported halfspace by at most this.
pub const MC_HALFSPACE_TOLERANCE: f64 = 1e-6;
/// Samples of the two aircraft must stay at least `d` minus this apart.
pub const MC_DISTANCE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<f64>,
    pub method: Option<Method>,
    pub directions: Option<usize>,
    pub quad_steps: Option<usize>,
    pub grid_step: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<(), CliError> {
        if let Some(k) = self.k {
            s.scalarization.k0 = k;
        }
        if let Some(m) = self.method {
            s.scalarization.method = m.into();
        }
        if let Some(d) = self.directions {
            s.directions = d;
        }
        if let Some(q) = self.quad_steps {
            s.quad_steps = q;
        }
        if let Some(g) = self.grid_step {
            s.grid_step_s = g;
        }
        s.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Synthesis succeeded and every check passed.
    Safe,
    /// Results were produced but a separation or sampling check failed.
    Unsafe,
    /// Part I has no feasible point.
    Infeasible,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Safe => 0,
            Verdict::Infeasible => 1,
            Verdict::Unsafe => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Safe => "safe",
            Verdict::Unsafe => "unsafe",
            Verdict::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Synthesis {
    Solved(Box<Solved>),
    Failed(InfeasibilityReport),
}

impl Synthesis {
    pub fn attempts(&self) -> &[Attempt] {
        match self {
            Synthesis::Solved(s) => &s.attempts,
            Synthesis::Failed(r) => &r.attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub trajectories: usize,
    pub seed: u64,
    /// Worst halfspace violation of A's and B's samples against their tubes.
    pub worst_violation: [f64; 2],
    /// Certified lower bound on the closest A-B sample pair, with its time.
    pub min_distance: f64,
    pub min_distance_time: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: Scenario,
    pub geometry: EncounterGeometry,
    pub grid: Vec<f64>,
    pub directions: Vec<DVector<f64>>,
    pub initial_tubes: [ReachTube; 2],
    pub initial_checks: Vec<GridCheck>,
    pub synthesis: Synthesis,
    /// Tubes of the aircraft with the control sets finally in force.
    pub final_tubes: [ReachTube; 2],
    pub final_checks: Vec<GridCheck>,
    pub monte_carlo: Option<MonteCarloReport>,
    pub verdict: Verdict,
    pub reason: String,
}

impl RunReport {
    pub fn min_margin(checks: &[GridCheck]) -> Option<&GridCheck> {
        checks.iter().min_by(|a, b| a.margin.total_cmp(&b.margin))
    }
}

fn tube(ac: &Aircraft, grid: &[f64], dirs: &[DVector<f64>]) -> Result<ReachTube, CliError> {
    if dirs.is_empty() {
        return Ok(ReachTube {
            times: grid.to_vec(),
            directions: Vec::new(),
            support_values: nalgebra::DMatrix::zeros(grid.len(), 0),
            touching_points: None,
        });
    }
    Ok(reach_tube(&ac.spec, grid, dirs, false, Some(&ac.map))?)
}

/// Runs the whole pipeline. `verify_mc` is the number of sampled
/// trajectories per aircraft (0 disables sampling).
pub fn run(scenario: &Scenario, verify_mc: usize, seed: u64) -> Result<RunReport, CliError> {
    let a = scenario.aircraft(Which::A)?;
    let b = scenario.aircraft(Which::B)?;
    let d = scenario.required_separation_m;
    let grid = scenario.grid();
    let geometry = estimate_encounter(&a.nominal_positions(&grid)?, &b.nominal_positions(&grid)?, d)?;
    let axes = (scenario.plot_axes[0], scenario.plot_axes[1]);
    let directions = planar_directions(3, axes, scenario.directions);

    let initial_tubes = [tube(&a, &grid, &directions)?, tube(&b, &grid, &directions)?];
    let initial_checks = verify_separation(&a, &b, &grid, d)?;

    let sc = &scenario.scalarization;
    let opts = LoopOptions {
        method: sc.method.into(),
        k0: sc.k0,
        shrink: sc.shrink,
        max_iterations: sc.max_iterations,
        part1_margin: scenario.part1_margin_m,
        part2_margin: 0.0,
        max_cut_rounds: grid.len() + 1,
        verify_times: grid.clone(),
    };
    let synthesis = match scalarization_loop(&a, &b, &geometry, &opts)? {
        LoopOutcome::Solved(s) => Synthesis::Solved(s),
        LoopOutcome::Infeasible(r) => Synthesis::Failed(r),
    };

    // Control sets in force: the solution, or B's last Part I set with A
    // unchanged when Part II never succeeded.
    let (a_fin, b_fin) = match &synthesis {
        Synthesis::Solved(s) => (
            a.with_control(s.sol_a.control_set())?,
            b.with_control(s.sol_b.control_set())?,
        ),
        Synthesis::Failed(r) => {
            let last_b = r.attempts.iter().rev().find_map(|at| at.part1.as_ref());
            match (r.structural, last_b) {
                (false, Some(sol)) => (a.clone(), b.with_control(sol.control_set())?),
                _ => (a.clone(), b.clone()),
            }
        }
    };
    let final_tubes = [tube(&a_fin, &grid, &directions)?, tube(&b_fin, &grid, &directions)?];
    let final_checks = match &synthesis {
        Synthesis::Solved(s) => s.checks.clone(),
        Synthesis::Failed(_) => verify_separation(&a_fin, &b_fin, &grid, d)?,
    };

    let monte_carlo = if verify_mc > 0 {
        Some(monte_carlo(&a_fin, &b_fin, &grid, &final_tubes, &final_checks, d, verify_mc, seed)?)
    } else {
        None
    };

    let worst = RunReport::min_margin(&final_checks).map(|c| (c.margin, c.time));
    let (verdict, reason) = match &synthesis {
        Synthesis::Failed(r) if r.structural => (Verdict::Infeasible, r.reason.clone()),
        _ => match worst {
            Some((m, t)) if m < -VERIFY_TOLERANCE => (
                Verdict::Unsafe,
                format!("separation requirement violated by {:.6} m at t = {t} s", -m),
            ),
            _ => match (&synthesis, &monte_carlo) {
                (_, Some(mc)) if !mc.passed => (Verdict::Unsafe, "sampled trajectories violate the reported tubes or the separation".to_string()),
                (Synthesis::Failed(r), _) => (Verdict::Unsafe, r.reason.clone()),
                _ => (Verdict::Safe, "separation verified on every grid time".to_string()),
            },
        },
    };

    Ok(RunReport {
        scenario: scenario.clone(),
        geometry,
        grid,
        directions,
        initial_tubes,
        initial_checks,
        synthesis,
        final_tubes,
        final_checks,
        monte_carlo,
        verdict,
        reason,
    })
}

fn halfspaces(tube: &ReachTube) -> Result<Vec<HalfspaceSet>, CliError> {
    (0..tube.times.len())
        .map(|i| {
            HalfspaceSet::new(
                tube.directions
                    .iter()
                    .enumerate()
                    .map(|(j, l)| (l.clone(), tube.support_values[(i, j)])),
            )
            .map_err(CliError::from)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn monte_carlo(
    a: &Aircraft,
    b: &Aircraft,
    grid: &[f64],
    tubes: &[ReachTube; 2],
    checks: &[GridCheck],
    d: f64,
    count: usize,
    seed: u64,
) -> Result<MonteCarloReport, CliError> {
    let sa = sample_trajectories(&a.spec, grid, count, seed)?.mapped(&a.map);
    let sb = sample_trajectories(&b.spec, grid, count, seed.wrapping_add(1))?.mapped(&b.map);
    let mut worst = [f64::NEG_INFINITY; 2];
    for (k, (s, t)) in [(&sa, &tubes[0]), (&sb, &tubes[1])].into_iter().enumerate() {
        if !t.directions.is_empty() {
            worst[k] = worst_halfspace_violation(s, &halfspaces(t)?)?;
        }
    }
    let hints: Vec<DVector<f64>> = checks.iter().map(|c| c.separation.direction.clone()).collect();
    let clearance = pairwise_clearance(&sa, &sb, &hints, d - MC_DISTANCE_TOLERANCE)?;
    let (min_distance, min_distance_time) = clearance
        .iter()
        .zip(grid)
        .fold((f64::INFINITY, f64::NAN), |acc, (c, t)| if *c < acc.0 { (*c, *t) } else { acc });
    let passed = worst.iter().all(|w| *w <= MC_HALFSPACE_TOLERANCE) && min_distance >= d - MC_DISTANCE_TOLERANCE;
    Ok(MonteCarloReport {
        trajectories: count,
        seed,
        worst_violation: worst,
        min_distance,
        min_distance_time,
        passed,
    })
}
