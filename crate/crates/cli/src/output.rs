//! Result files. Numbers use Rust's shortest round-trip formatting, which
//! is locale independent and deterministic.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use reachsep::ellipsoid::Ellipsoid;
use reachsep::reachability::ReachTube;
use reachsep::synthesis::{Attempt, GridCheck, SynthesisSolution};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::pipeline::{RunReport, Synthesis};

pub const TUBES_INITIAL: &str = "tubes_initial.csv";
pub const TUBES_FINAL: &str = "tubes.csv";
pub const SEPARATION_INITIAL: &str = "separation_initial.csv";
pub const SEPARATION_FINAL: &str = "separation.csv";
pub const SOLUTION: &str = "solution.json";
pub const ENCOUNTER: &str = "encounter.json";
pub const DIAGNOSTICS: &str = "diagnostics.json";

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect::<Vec<f64>>())
        .collect::<Vec<_>>())
}

fn ellipsoid_json(e: &Ellipsoid) -> Value {
    json!({ "center": vec_json(e.center()), "shape": mat_json(e.shape()) })
}

pub fn tubes_csv(tubes: &[(&str, &ReachTube)]) -> String {
    let mut out = String::from("aircraft,t_s,dir_index,dir_x,dir_y,dir_z,support_value\n");
    for (name, tube) in tubes {
        for (i, t) in tube.times.iter().enumerate() {
            for (j, l) in tube.directions.iter().enumerate() {
                writeln!(
                    out,
                    "{name},{t},{j},{},{},{},{}",
                    l[0], l[1], l[2], tube.support_values[(i, j)]
                )
                .expect("write to string");
            }
        }
    }
    out
}

pub fn separation_csv(checks: &[GridCheck]) -> String {
    let mut out = String::from("t_s,separation_m,margin_m,dir_x,dir_y,dir_z\n");
    for c in checks {
        let l = &c.separation.direction;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.time, c.separation.distance, c.margin, l[0], l[1], l[2]
        )
        .expect("write to string");
    }
    out
}

fn solution_json(s: &SynthesisSolution, original: &Ellipsoid) -> Value {
    json!({
        "method": s.method.to_string(),
        "q": vec_json(&s.q),
        "Q": mat_json(&s.q_factor),
        "control_shape": mat_json(&(&s.q_factor * &s.q_factor)),
        "r": s.r,
        "lambda": s.lambda,
        "k": s.k,
        "objective": s.objective,
        "kkt_residual": s.kkt_residual,
        "status": format!("{:?}", s.status),
        "margin_m": s.margin,
        "distance_bound_m": s.distance_bound,
        "distance_achieved_m": s.distance_achieved,
        "witness_min_eigenvalue": s.witness_min_eig(original),
    })
}

fn attempt_json(a: &Attempt) -> Value {
    json!({
        "k": a.k,
        "part1_solved": a.part1.is_some(),
        "part1_objective": a.part1.as_ref().map(|s| s.objective),
        "part2_best_slack_m": a.part2_best_slack,
        "cut_rounds": a.cut_rounds,
        "failure": a.failure,
    })
}

pub fn solution_document(report: &RunReport, original_a: &Ellipsoid, original_b: &Ellipsoid) -> Value {
    let attempts: Vec<Value> = report.synthesis.attempts().iter().map(attempt_json).collect();
    let originals = json!({ "A": ellipsoid_json(original_a), "B": ellipsoid_json(original_b) });
    match &report.synthesis {
        Synthesis::Solved(s) => json!({
            "solved": true,
            "k_used": s.k_used,
            "original_control_sets": originals,
            "aircraft_b": solution_json(&s.sol_b, original_b),
            "aircraft_a": solution_json(&s.sol_a, original_a),
            "safe_set_b_at_tau": ellipsoid_json(&s.safe_b),
            "cuts": s.cuts.iter().map(|c| json!({ "t_s": c.time, "direction": vec_json(&c.direction) })).collect::<Vec<_>>(),
            "attempts": attempts,
        }),
        Synthesis::Failed(r) => json!({
            "solved": false,
            "structural_infeasibility": r.structural,
            "reason": r.reason,
            "original_control_sets": originals,
            "aircraft_b": r.attempts.iter().rev().find_map(|a| a.part1.as_ref()).map(|s| solution_json(s, original_b)),
            "attempts": attempts,
        }),
    }
}

pub fn encounter_document(report: &RunReport) -> Value {
    let g = &report.geometry;
    json!({
        "tau_s": g.tau,
        "l_star": vec_json(&g.l_star),
        "center_distance_m": g.center_distance,
        "required_separation_m": g.required_separation,
        "a_position_at_tau_m": vec_json(&g.c_a_tau),
    })
}

fn checks_summary(checks: &[GridCheck]) -> Value {
    match RunReport::min_margin(checks) {
        Some(c) => json!({ "min_margin_m": c.margin, "at_t_s": c.time, "min_separation_m": c.separation.distance }),
        None => Value::Null,
    }
}

pub fn diagnostics_document(report: &RunReport) -> Value {
    let mc = report.monte_carlo.as_ref().map(|m| {
        json!({
            "trajectories_per_aircraft": m.trajectories,
            "seed": m.seed,
            "worst_halfspace_violation_a": m.worst_violation[0],
            "worst_halfspace_violation_b": m.worst_violation[1],
            "min_sample_distance_m": m.min_distance,
            "min_sample_distance_t_s": m.min_distance_time,
            "passed": m.passed,
        })
    });
    let s = &report.scenario;
    json!({
        "scenario": s.name,
        "verdict": report.verdict.as_str(),
        "exit_code": report.verdict.exit_code(),
        "reason": report.reason,
        "required_separation_m": s.required_separation_m,
        "grid_step_s": s.grid_step_s,
        "horizon_s": s.horizon_s,
        "directions": s.directions,
        "quad_steps": s.quad_steps,
        "method": format!("{:?}", s.scalarization.method).to_lowercase(),
        "k0": s.scalarization.k0,
        "plot_axes": s.plot_axes,
        "control_plot_axes": s.control_plot_axes,
        "initial_separation": checks_summary(&report.initial_checks),
        "final_separation": checks_summary(&report.final_checks),
        "monte_carlo": mc,
    })
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| CliError::io(&path, e))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// Writes every result file into `dir` (created if needed).
pub fn write_artifacts(dir: &Path, report: &RunReport, original_a: &Ellipsoid, original_b: &Ellipsoid) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let [ia, ib] = &report.initial_tubes;
    let [fa, fb] = &report.final_tubes;
    write(dir, TUBES_INITIAL, &tubes_csv(&[("A", ia), ("B", ib)]))?;
    write(dir, TUBES_FINAL, &tubes_csv(&[("A", fa), ("B", fb)]))?;
    write(dir, SEPARATION_INITIAL, &separation_csv(&report.initial_checks))?;
    write(dir, SEPARATION_FINAL, &separation_csv(&report.final_checks))?;
    write(dir, SOLUTION, &pretty(&solution_document(report, original_a, original_b)))?;
    write(dir, ENCOUNTER, &pretty(&encounter_document(report)))?;
    write(dir, DIAGNOSTICS, &pretty(&diagnostics_document(report)))?;
    Ok(())
}
