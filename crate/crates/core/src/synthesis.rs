//! Control-set synthesis for a two-aircraft encounter.
//!
//! Aircraft B's control set is shrunk first (Part I) to push its reachable
//! set away from A's nominal position at the closest-approach time τ, while
//! keeping as much control authority as possible. Aircraft A then gets the
//! largest control set whose reachable tube stays clear of B's safe set,
//! i.e. B's reachable set grown by the required separation (Part II). If
//! Part II is infeasible the scalarization weight `k` of Part I is reduced.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::convex::{
    self, AffineMatrix, AffineScalar, BarrierProblem, Layout, SolveResult, Status, Var,
};
use crate::dynamics::NominalTrajectory;
use crate::ellipsoid::{contains, containment_block, minkowski_sum_external, Ellipsoid};
use crate::error::{invalid, Error, Result};
use crate::linalg::{is_positive_definite, max_eigenvalue, min_eigenvalue, psd_sqrt, quad_form, Matrix, Vector};
use crate::reachability::{separation_of, PositionMap, ReachSnapshot, ReachSpec, Separation};

/// One aircraft: its reachability data and the map from state to world
/// position.
#[derive(Debug, Clone)]
pub struct Aircraft {
    pub spec: ReachSpec,
    pub map: PositionMap,
}

impl Aircraft {
    pub fn new(spec: ReachSpec, map: PositionMap) -> Result<Self> {
        if map.matrix().ncols() != spec.state_dim() {
            return Err(invalid("position map does not match the state dimension"));
        }
        Ok(Self { spec, map })
    }

    pub fn world_snapshot(&self, t: f64) -> Result<ReachSnapshot> {
        self.map.snapshot(&self.spec, t)
    }

    pub fn with_control(&self, control: Ellipsoid) -> Result<Self> {
        Ok(Self {
            spec: self.spec.with_control(control)?,
            map: self.map.clone(),
        })
    }

    /// World positions of the reachable-set centers on `times`.
    pub fn nominal_positions(&self, times: &[f64]) -> Result<NominalTrajectory> {
        let tr = self.spec.center_trajectory(times)?;
        let pos = tr.states().iter().map(|x| self.map.apply(x)).collect();
        NominalTrajectory::new(times, pos)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncounterGeometry {
    /// Closest-approach time, s.
    pub tau: f64,
    /// World direction from B's nominal position to A's at τ.
    pub l_star: Vector,
    /// m
    pub required_separation: f64,
    /// A's nominal world position at τ.
    pub c_a_tau: Vector,
    /// Distance between the nominal positions at τ, m.
    pub center_distance: f64,
}

/// Closest approach of two nominal world-position trajectories, scanned on
/// A's time grid; ties go to the earliest time.
pub fn estimate_encounter(
    nom_a: &NominalTrajectory,
    nom_b: &NominalTrajectory,
    required_separation: f64,
) -> Result<EncounterGeometry> {
    if !(required_separation >= 0.0 && required_separation.is_finite()) {
        return Err(invalid("required separation must be nonnegative"));
    }
    if nom_a.dim() != nom_b.dim() {
        return Err(invalid("trajectories live in different spaces"));
    }
    let slack = 1e-9;
    let times: Vec<f64> = nom_a
        .times()
        .into_iter()
        .filter(|t| *t >= nom_b.start() - slack && *t <= nom_b.end() + slack)
        .collect();
    if times.is_empty() {
        return Err(invalid("trajectories do not overlap in time"));
    }
    let mut best: Option<(f64, f64, Vector, Vector)> = None;
    for t in times {
        let pa = nom_a.state_at(t)?;
        let pb = nom_b.state_at(t)?;
        let dist = (&pa - &pb).norm();
        let better = match &best {
            Some((_, bd, _, _)) => dist < bd - 1e-12 * bd.max(1.0),
            None => true,
        };
        if better {
            best = Some((t, dist, pa, pb));
        }
    }
    let (tau, dist, pa, pb) = best.expect("nonempty grid");
    if dist <= 1e-9 * (1.0 + pa.norm()) {
        return Err(Error::DegenerateGeometry(format!(
            "nominal positions coincide at t = {tau}; give the avoidance direction explicitly"
        )));
    }
    Ok(EncounterGeometry {
        tau,
        l_star: (&pa - &pb) / dist,
        required_separation,
        c_a_tau: pa,
        center_distance: dist,
    })
}

/// Terms of an aircraft's support function along one world direction `l`
/// at one time, split by how they depend on the control set `E(q, QᵀQ)`:
/// `ρ(l) = a0 + offset + x0_term + disturbance + ⟨b, q⟩ + ∫⟨m(s), Q² m(s)⟩^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartIConstants {
    /// `⟨l, P Φ c_X0⟩`
    pub a0: f64,
    pub b: Vector,
    pub x0_term: f64,
    /// Control spread of the aircraft's current control set.
    pub gamma_u: f64,
    /// `∫‖B'Φ'P'l‖ ds`
    pub gamma_i: f64,
    /// Steady-state and world-offset contribution `⟨l, P x*(t) + p₀⟩`.
    pub offset: f64,
    /// Center and spread terms of the disturbance set, if any.
    pub disturbance: f64,
    nodes: Vec<(f64, Vector)>,
}

impl PartIConstants {
    pub fn along(aircraft: &Aircraft, t: f64, l: &Vector) -> Result<Self> {
        let snap = aircraft.world_snapshot(t)?;
        if l.len() != snap.dim() {
            return Err(invalid("direction does not match the world dimension"));
        }
        let terms = snap.terms(l);
        let mut off = aircraft.map.offset().clone();
        if let Some(tr) = aircraft.spec.center_offset() {
            off += aircraft.map.matrix() * tr.state_at(t)?;
        }
        let offset = l.dot(&off);
        Ok(Self {
            a0: terms.initial_center - offset,
            b: snap.control_gain(l),
            x0_term: terms.initial_spread,
            gamma_u: terms.control_spread,
            gamma_i: snap.input_spread(l),
            offset,
            disturbance: terms.disturbance_center + terms.disturbance_spread,
            nodes: snap.control_nodes(l),
        })
    }

    /// Part of the support value that no control set changes.
    pub fn fixed(&self) -> f64 {
        self.a0 + self.offset + self.x0_term + self.disturbance
    }

    /// `∫⟨m(s), M m(s)⟩^{1/2} ds` for a control shape `M`.
    pub fn spread(&self, shape: &Matrix) -> f64 {
        self.nodes.iter().map(|(w, m)| w * quad_form(shape, m).sqrt()).sum()
    }

    /// Support value for the control set `E(q, shape)`.
    pub fn support(&self, q: &Vector, shape: &Matrix) -> f64 {
        self.fixed() + self.b.dot(q) + self.spread(shape)
    }
}

/// Constants of B's support along `l*` at `τ`.
pub fn part1_constants(b: &Aircraft, geom: &EncounterGeometry) -> Result<PartIConstants> {
    PartIConstants::along(b, geom.tau, &geom.l_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Shrunk set `r · U`.
    Scaled,
    /// Free symmetric factor `Q` with the control spread bounded by `‖Q‖₂ γ_I`.
    Norm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Scaled => "scaled",
            Method::Norm => "norm",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(Method::Scaled),
            "norm" => Ok(Method::Norm),
            other => Err(invalid(format!("unknown method {other:?} (expected scaled or norm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSolution {
    pub method: Method,
    pub q: Vector,
    /// Symmetric PSD factor; the control set is `E(q, Q²)`.
    pub q_factor: Matrix,
    pub r: Option<f64>,
    pub lambda: f64,
    pub k: f64,
    pub objective: f64,
    /// Value of the optimizer's distance expression (norm-bounded spread
    /// for the norm method).
    pub distance_bound: f64,
    /// The same distance with the exact control spread.
    pub distance_achieved: f64,
    pub margin: f64,
    pub kkt_residual: f64,
    pub status: Status,
    /// Solver variables, laid out as in [`part1_problem`] / [`part2_problem`].
    pub raw: Vector,
}

impl SynthesisSolution {
    pub fn control_set(&self) -> Ellipsoid {
        Ellipsoid::new(self.q.clone(), &self.q_factor * &self.q_factor)
            .expect("square of a symmetric factor is PSD")
    }

    /// Minimum eigenvalue of the containment block at the returned witness.
    pub fn witness_min_eig(&self, original: &Ellipsoid) -> f64 {
        min_eigenvalue(&containment_block(
            original.center(),
            original.shape(),
            &self.q,
            &self.q_factor,
            self.lambda,
        ))
    }
}

enum Factor {
    Free(Var),
    Scaled(Var, Matrix),
}

/// The block `[[1−λ, 0, (q−c)'], [0, λI, Q], [q−c, Q, M]] ⪰ 0`.
fn containment_lmi(layout: &Layout, u: &Ellipsoid, q: Var, lambda: Var, factor: &Factor) -> AffineMatrix {
    let m = u.dim();
    let c = u.center();
    let lam = layout.at(lambda);
    let mut f = AffineMatrix::zeros(1 + 2 * m);
    f.add_const(0, 0, 1.0).add_var(0, 0, lam, -1.0);
    for i in 0..m {
        f.add_var(0, 1 + m + i, layout.elem(q, i), 1.0);
        f.add_const(0, 1 + m + i, -c[i]);
        f.add_var(1 + i, 1 + i, lam, 1.0);
        for j in 0..m {
            match factor {
                Factor::Free(qm) => {
                    f.add_var(1 + i, 1 + m + j, layout.entry(*qm, i, j), 1.0);
                }
                Factor::Scaled(r, s) => {
                    f.add_var(1 + i, 1 + m + j, layout.at(*r), s[(i, j)]);
                }
            }
        }
    }
    f.add_const_block(1 + m, 1 + m, u.shape());
    f
}

struct NormVars {
    q: Var,
    qm: Var,
    lambda: Var,
    s: Var,
}

/// Variables `(q, Q, λ, s)` with containment, `sI − Q ⪰ 0`, and
/// `weight · log det Q` in the objective.
fn norm_problem(u: &Ellipsoid, weight: f64) -> (BarrierProblem, NormVars) {
    let m = u.dim();
    let mut layout = Layout::new();
    let v = NormVars {
        q: layout.vector("q", m),
        qm: layout.symmetric("Q", m),
        lambda: layout.scalar("lambda"),
        s: layout.scalar("s"),
    };
    let mut p = BarrierProblem::new(layout.clone());
    p.add_psd("containment", containment_lmi(&layout, u, v.q, v.lambda, &Factor::Free(v.qm)));
    let mut epi = AffineMatrix::zeros(m);
    let mut qmat = AffineMatrix::zeros(m);
    for i in 0..m {
        epi.add_var(i, i, layout.at(v.s), 1.0);
        for j in i..m {
            epi.add_var(i, j, layout.entry(v.qm, i, j), -1.0);
            qmat.add_var(i, j, layout.entry(v.qm, i, j), 1.0);
        }
    }
    p.add_psd("norm epigraph", epi);
    if weight > 0.0 {
        p.add_logdet(weight, qmat);
    } else {
        p.add_psd("Q positive semidefinite", qmat);
    }
    (p, v)
}

/// `const − ⟨b, q⟩ − coef · var ≥ 0`.
fn distance_row(layout: &Layout, q: Var, b: &Vector, var: usize, coef: f64, constant: f64) -> AffineScalar {
    let mut g = AffineScalar::new(constant);
    for i in 0..b.len() {
        g.add(layout.elem(q, i), -b[i]);
    }
    g.add(var, -coef);
    g
}

/// Center that pushes `⟨b, q⟩` down just enough to make
/// `slack0 + ⟨b, c − q⟩ − eps · spread` positive while staying inside
/// `U` with room for `E(q, eps² M)`.
fn pushed_center(u: &Ellipsoid, b: &Vector, slack0: f64, spread: f64, eps: f64) -> Vector {
    let c = u.center();
    let mb = u.shape() * b;
    let nb = b.dot(&mb).max(0.0).sqrt();
    let need = eps * spread - slack0;
    if need < 0.0 || nb == 0.0 {
        return c.clone();
    }
    let room = 1.0 - eps;
    let beta_needed = need / nb;
    let beta = if beta_needed < room {
        0.5 * (beta_needed + room)
    } else {
        room * (1.0 - 1e-6)
    };
    c - mb * (beta / nb)
}

fn witness_lambda(u: &Ellipsoid, q: &Vector, shape: &Matrix) -> f64 {
    match Ellipsoid::new(q.clone(), shape.clone()).and_then(|inner| contains(u, &inner)) {
        Ok(c) if c.ok => c.lambda.clamp(1e-6, 1.0 - 1e-6),
        _ => 0.5,
    }
}

/// Largest value of `slack0 − ⟨b, q⟩` over centers in `u` (zero spread).
/// Negative means no control set inside `u` can satisfy the distance row.
fn best_distance_slack(u: &Ellipsoid, b: &Vector, constant: f64) -> f64 {
    constant - b.dot(u.center()) + quad_form(u.shape(), b).sqrt()
}

fn require_reachable(name: &str, u: &Ellipsoid, b: &Vector, constant: f64) -> Result<()> {
    let best = best_distance_slack(u, b, constant);
    if best <= 0.0 {
        return Err(Error::Infeasible {
            constraint: name.to_string(),
            margin: best,
        });
    }
    Ok(())
}

fn check_control_set(u: &Ellipsoid) -> Result<()> {
    if !is_positive_definite(u.shape()) {
        return Err(invalid("original control set must have a positive definite shape"));
    }
    Ok(())
}

fn run_solver(p: &BarrierProblem, guess: &Vector) -> Result<SolveResult> {
    let start = convex::feasibility_restore(p, guess)?;
    convex::solve(p, &start)
}

/// Part I with the shrunk set `E(q, r² M_U)`.
pub fn solve_scaled(
    consts: &PartIConstants,
    geom: &EncounterGeometry,
    u: &Ellipsoid,
    k: f64,
    margin: f64,
) -> Result<SynthesisSolution> {
    check_control_set(u)?;
    if !(k >= 0.0 && k.is_finite()) {
        return Err(invalid("scalarization factor must be nonnegative"));
    }
    let base = geom.l_star.dot(&geom.c_a_tau) - consts.fixed();
    require_reachable("distance", u, &consts.b, base - margin)?;
    let sqrt_m = psd_sqrt(u.shape());
    let (p, ScaledVars { q, r, lambda }) = scaled_problem(consts, base, u, k, margin);
    let layout = p.layout.clone();

    let eps = 1e-3;
    let slack0 = base - margin - consts.b.dot(u.center());
    let q0 = pushed_center(u, &consts.b, slack0, consts.gamma_u, eps);
    let mut x0 = Vector::zeros(layout.len());
    layout.set_vector(&mut x0, q, &q0);
    layout.set_scalar(&mut x0, r, eps);
    layout.set_scalar(&mut x0, lambda, witness_lambda(u, &q0, &(u.shape() * (eps * eps))));

    let res = run_solver(&p, &x0)?;
    let qv = layout.vector_value(&res.x, q);
    let rv = layout.scalar_value(&res.x, r);
    let distance = base - consts.b.dot(&qv) - rv * consts.gamma_u;
    Ok(SynthesisSolution {
        method: Method::Scaled,
        q: qv,
        q_factor: &sqrt_m * rv,
        r: Some(rv),
        lambda: layout.scalar_value(&res.x, lambda),
        k,
        objective: res.objective + base,
        distance_bound: distance,
        distance_achieved: distance,
        margin,
        kkt_residual: res.kkt_residual,
        status: res.status,
        raw: res.x,
    })
}

struct ScaledVars {
    q: Var,
    r: Var,
    lambda: Var,
}

fn scaled_problem(consts: &PartIConstants, base: f64, u: &Ellipsoid, k: f64, margin: f64) -> (BarrierProblem, ScaledVars) {
    let m = u.dim();
    let sqrt_m = psd_sqrt(u.shape());
    let mut layout = Layout::new();
    let q = layout.vector("q", m);
    let r = layout.scalar("r");
    let lambda = layout.scalar("lambda");
    let mut p = BarrierProblem::new(layout.clone());
    for i in 0..m {
        p.linear[layout.elem(q, i)] = -consts.b[i];
    }
    p.linear[layout.at(r)] = -consts.gamma_u;
    if k > 0.0 {
        let mut h = AffineMatrix::zeros(1);
        h.add_var(0, 0, layout.at(r), 1.0);
        p.add_logdet(k * m as f64, h);
    }
    p.add_psd(
        "containment",
        containment_lmi(&layout, u, q, lambda, &Factor::Scaled(r, sqrt_m)),
    );
    p.add_scalar(
        "distance",
        distance_row(&layout, q, &consts.b, layout.at(r), consts.gamma_u, base - margin),
    );
    let mut pos = AffineScalar::new(0.0);
    pos.add(layout.at(r), 1.0);
    p.add_scalar("r nonnegative", pos);
    (p, ScaledVars { q, r, lambda })
}

fn norm_part1_problem(consts: &PartIConstants, base: f64, u: &Ellipsoid, k: f64, margin: f64) -> (BarrierProblem, NormVars) {
    let (mut p, v) = norm_problem(u, k);
    let layout = p.layout.clone();
    for i in 0..u.dim() {
        p.linear[layout.elem(v.q, i)] = -consts.b[i];
    }
    p.linear[layout.at(v.s)] = -consts.gamma_i;
    p.add_scalar(
        "distance",
        distance_row(&layout, v.q, &consts.b, layout.at(v.s), consts.gamma_i, base - margin),
    );
    (p, v)
}

/// The barrier problem Part I solves; its variables are laid out as in
/// [`SynthesisSolution::raw`] and its objective omits the constant
/// `⟨l*, c_A(τ)⟩ − fixed`.
pub fn part1_problem(
    method: Method,
    consts: &PartIConstants,
    geom: &EncounterGeometry,
    u: &Ellipsoid,
    k: f64,
    margin: f64,
) -> BarrierProblem {
    let base = geom.l_star.dot(&geom.c_a_tau) - consts.fixed();
    match method {
        Method::Scaled => scaled_problem(consts, base, u, k, margin).0,
        Method::Norm => norm_part1_problem(consts, base, u, k, margin).0,
    }
}

/// Part I with a free symmetric factor and the norm bound on the spread.
pub fn solve_matrix_norm(
    consts: &PartIConstants,
    geom: &EncounterGeometry,
    u: &Ellipsoid,
    k: f64,
    margin: f64,
) -> Result<SynthesisSolution> {
    check_control_set(u)?;
    if !(k >= 0.0 && k.is_finite()) {
        return Err(invalid("scalarization factor must be nonnegative"));
    }
    let base = geom.l_star.dot(&geom.c_a_tau) - consts.fixed();
    require_reachable("distance", u, &consts.b, base - margin)?;
    let (p, v) = norm_part1_problem(consts, base, u, k, margin);
    let layout = p.layout.clone();

    let x0 = norm_guess(&layout, &v, u, &consts.b, base - margin - consts.b.dot(u.center()), consts.gamma_i);
    let res = run_solver(&p, &x0)?;
    let sol = norm_solution(&layout, &v, &res, Method::Norm, k, margin);
    let bound = base - consts.b.dot(&sol.q) - layout.scalar_value(&res.x, v.s) * consts.gamma_i;
    let achieved = base - consts.b.dot(&sol.q) - consts.spread(&(&sol.q_factor * &sol.q_factor));
    Ok(SynthesisSolution {
        objective: res.objective + base,
        distance_bound: bound,
        distance_achieved: achieved,
        ..sol
    })
}

fn norm_guess(layout: &Layout, v: &NormVars, u: &Ellipsoid, b: &Vector, slack0: f64, gamma_i: f64) -> Vector {
    let sqrt_m = psd_sqrt(u.shape());
    let norm_s = max_eigenvalue(&sqrt_m);
    let eps = 1e-3;
    let q0 = pushed_center(u, b, slack0, 2.0 * norm_s * gamma_i, eps);
    let mut x0 = Vector::zeros(layout.len());
    layout.set_vector(&mut x0, v.q, &q0);
    layout.set_symmetric(&mut x0, v.qm, &(&sqrt_m * eps));
    layout.set_scalar(&mut x0, v.s, 2.0 * eps * norm_s);
    layout.set_scalar(&mut x0, v.lambda, witness_lambda(u, &q0, &(u.shape() * (eps * eps))));
    x0
}

fn norm_solution(layout: &Layout, v: &NormVars, res: &SolveResult, method: Method, k: f64, margin: f64) -> SynthesisSolution {
    SynthesisSolution {
        method,
        q: layout.vector_value(&res.x, v.q),
        q_factor: layout.symmetric_value(&res.x, v.qm),
        r: None,
        lambda: layout.scalar_value(&res.x, v.lambda),
        k,
        objective: res.objective,
        distance_bound: f64::NAN,
        distance_achieved: f64::NAN,
        margin,
        kkt_residual: res.kkt_residual,
        status: res.status,
        raw: res.x.clone(),
    }
}

pub fn solve_part1(
    method: Method,
    consts: &PartIConstants,
    geom: &EncounterGeometry,
    u: &Ellipsoid,
    k: f64,
    margin: f64,
) -> Result<SynthesisSolution> {
    match method {
        Method::Scaled => solve_scaled(consts, geom, u, k, margin),
        Method::Norm => solve_matrix_norm(consts, geom, u, k, margin),
    }
}

/// B's reachable set at `t` in world coordinates as one external ellipsoid
/// tight along `l`, grown by a ball of radius `d` (also tight along `l`).
pub fn safe_set(b_shrunk: &Aircraft, t: f64, d: f64, l: &Vector) -> Result<Ellipsoid> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(invalid("separation radius must be nonnegative"));
    }
    let reach = b_shrunk.world_snapshot(t)?.external_ellipsoid(l)?;
    let ball = Ellipsoid::ball(Vector::zeros(reach.dim()), d);
    minkowski_sum_external(&reach, &ball, l)
}

/// Requirement that A's set at `time` stays on the positive side of
/// `direction` beyond `other_support`:
/// `−ρ_A(−direction) ≥ other_support + margin`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationCut {
    pub time: f64,
    /// World direction from B towards A.
    pub direction: Vector,
    /// A's constants along `−direction`.
    pub own: PartIConstants,
    /// Support of B's safe set along `direction`.
    pub other_support: f64,
}

impl SeparationCut {
    pub fn new(a: &Aircraft, time: f64, direction: Vector, other_support: f64) -> Result<Self> {
        let own = PartIConstants::along(a, time, &-&direction)?;
        Ok(Self {
            time,
            direction,
            own,
            other_support,
        })
    }

    /// Constraint value for the control set `E(q, shape)`, margin excluded.
    pub fn value(&self, q: &Vector, shape: &Matrix) -> f64 {
        -self.own.support(q, shape) - self.other_support
    }

    /// Best value any control set inside `u` can reach (zero spread,
    /// center at the favourable boundary point).
    pub fn best_value(&self, u: &Ellipsoid) -> f64 {
        best_distance_slack(u, &self.own.b, -self.own.fixed() - self.other_support)
    }
}

/// Part II: maximize `log det Q` over A's control sets inside `u` subject
/// to every cut (norm-bounded spread).
pub fn solve_part2_cuts(
    u: &Ellipsoid,
    cuts: &[SeparationCut],
    margin: f64,
    warm: Option<&Vector>,
) -> Result<(SynthesisSolution, Vector)> {
    check_control_set(u)?;
    let first = cuts.first().ok_or_else(|| invalid("Part II needs at least one cut"))?;
    for cut in cuts {
        let constant = -cut.own.fixed() - cut.other_support - margin;
        require_reachable(&format!("separation at t = {}", cut.time), u, &cut.own.b, constant)?;
    }
    let (p, v) = part2_problem_vars(u, cuts, margin);
    let layout = p.layout.clone();
    let guess = match warm {
        Some(x) if x.len() == layout.len() => x.clone(),
        _ => {
            let slack0 = -first.own.fixed() - first.other_support - margin - first.own.b.dot(u.center());
            norm_guess(&layout, &v, u, &first.own.b, slack0, first.own.gamma_i)
        }
    };
    let res = run_solver(&p, &guess)?;
    let sol = norm_solution(&layout, &v, &res, Method::Norm, 1.0, margin);
    let s = layout.scalar_value(&res.x, v.s);
    let shape = &sol.q_factor * &sol.q_factor;
    let bound = -first.own.fixed() - first.own.b.dot(&sol.q) - s * first.own.gamma_i - first.other_support;
    let achieved = first.value(&sol.q, &shape);
    Ok((
        SynthesisSolution {
            distance_bound: bound,
            distance_achieved: achieved,
            ..sol
        },
        res.x,
    ))
}

fn part2_problem_vars(u: &Ellipsoid, cuts: &[SeparationCut], margin: f64) -> (BarrierProblem, NormVars) {
    let (mut p, v) = norm_problem(u, 1.0);
    let layout = p.layout.clone();
    for (i, cut) in cuts.iter().enumerate() {
        let name = if i == 0 {
            "separation at closest approach".to_string()
        } else {
            format!("separation at t = {}", cut.time)
        };
        let constant = -cut.own.fixed() - cut.other_support - margin;
        p.add_scalar(
            &name,
            distance_row(&layout, v.q, &cut.own.b, layout.at(v.s), cut.own.gamma_i, constant),
        );
    }
    (p, v)
}

/// The barrier problem Part II solves for a set of cuts.
pub fn part2_problem(u: &Ellipsoid, cuts: &[SeparationCut], margin: f64) -> BarrierProblem {
    part2_problem_vars(u, cuts, margin).0
}

/// Part II against the safe set at the closest approach only.
pub fn solve_part2(
    a: &Aircraft,
    safe_b: &Ellipsoid,
    geom: &EncounterGeometry,
    margin: f64,
) -> Result<SynthesisSolution> {
    let cut = SeparationCut::new(a, geom.tau, geom.l_star.clone(), safe_b.support_value(&geom.l_star))?;
    solve_part2_cuts(a.spec.control(), &[cut], margin, None).map(|(s, _)| s)
}

/// Separation of A's set from B's set at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCheck {
    pub time: f64,
    pub separation: Separation,
    /// `separation − d`; nonnegative means A clears B's safe set.
    pub margin: f64,
}

pub fn verify_separation(a: &Aircraft, b: &Aircraft, times: &[f64], d: f64) -> Result<Vec<GridCheck>> {
    times
        .par_iter()
        .map(|&t| {
            let sep = separation_of(&a.world_snapshot(t)?, &b.world_snapshot(t)?)?;
            Ok(GridCheck {
                time: t,
                margin: sep.distance - d,
                separation: sep,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOptions {
    pub method: Method,
    pub k0: f64,
    pub shrink: f64,
    pub max_iterations: usize,
    /// Part I distance margin; `None` means half the required separation.
    pub part1_margin: Option<f64>,
    pub part2_margin: f64,
    /// Times at which A's tube must clear B's safe tube.
    pub verify_times: Vec<f64>,
    pub max_cut_rounds: usize,
}

impl LoopOptions {
    pub fn new(verify_times: Vec<f64>) -> Self {
        Self {
            method: Method::Norm,
            k0: 1.0,
            shrink: 0.5,
            max_iterations: 20,
            part1_margin: None,
            part2_margin: 0.0,
            max_cut_rounds: verify_times.len() + 1,
            verify_times,
        }
    }
}

/// What happened at one value of `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub k: f64,
    pub part1: Option<SynthesisSolution>,
    /// Largest value the closest-approach Part II constraint can take over
    /// all of A's admissible control sets.
    pub part2_best_slack: f64,
    pub cut_rounds: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub sol_b: SynthesisSolution,
    pub sol_a: SynthesisSolution,
    pub k_used: f64,
    pub safe_b: Ellipsoid,
    pub cuts: Vec<SeparationCut>,
    pub checks: Vec<GridCheck>,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityReport {
    /// Part I itself has no feasible point, whatever `k`.
    pub structural: bool,
    pub reason: String,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone)]
pub enum LoopOutcome {
    Solved(Box<Solved>),
    Infeasible(InfeasibilityReport),
}

fn describe(e: &Error) -> String {
    e.to_string()
}

/// Part I at `k`, then Part II with grid cuts; on Part II failure `k` is
/// multiplied by `shrink` and both parts are repeated.
pub fn scalarization_loop(
    a: &Aircraft,
    b: &Aircraft,
    geom: &EncounterGeometry,
    opts: &LoopOptions,
) -> Result<LoopOutcome> {
    if !(opts.k0 > 0.0) || !(opts.shrink > 0.0 && opts.shrink < 1.0) {
        return Err(invalid("need k0 > 0 and shrink in (0, 1)"));
    }
    let d = geom.required_separation;
    let margin1 = opts.part1_margin.unwrap_or(0.5 * d);
    let consts_b = part1_constants(b, geom)?;
    let mut attempts = Vec::new();
    let mut k = opts.k0;
    for _ in 0..opts.max_iterations {
        let mut attempt = Attempt {
            k,
            part1: None,
            part2_best_slack: f64::NAN,
            cut_rounds: 0,
            failure: None,
        };
        let sol_b = match solve_part1(opts.method, &consts_b, geom, b.spec.control(), k, margin1) {
            Ok(s) => s,
            Err(e @ Error::Infeasible { .. }) => {
                attempt.failure = Some(describe(&e));
                attempts.push(attempt);
                return Ok(LoopOutcome::Infeasible(InfeasibilityReport {
                    structural: true,
                    reason: format!("Part I has no feasible control set for aircraft B: {e}"),
                    attempts,
                }));
            }
            Err(e) => return Err(e),
        };
        attempt.part1 = Some(sol_b.clone());
        let b_shrunk = b.with_control(sol_b.control_set())?;
        let safe_b = safe_set(&b_shrunk, geom.tau, d, &geom.l_star)?;
        let tau_cut = SeparationCut::new(a, geom.tau, geom.l_star.clone(), safe_b.support_value(&geom.l_star))?;
        attempt.part2_best_slack = tau_cut.best_value(a.spec.control()) - opts.part2_margin;

        match part2_with_cuts(a, &b_shrunk, tau_cut, d, opts)? {
            Part2::Done { sol_a, cuts, checks, rounds } => {
                attempt.cut_rounds = rounds;
                attempts.push(attempt);
                return Ok(LoopOutcome::Solved(Box::new(Solved {
                    sol_b,
                    sol_a,
                    k_used: k,
                    safe_b,
                    cuts,
                    checks,
                    attempts,
                })));
            }
            Part2::Failed { reason, rounds } => {
                attempt.cut_rounds = rounds;
                attempt.failure = Some(reason);
                attempts.push(attempt);
            }
        }
        k *= opts.shrink;
    }
    Ok(LoopOutcome::Infeasible(InfeasibilityReport {
        structural: false,
        reason: format!(
            "no scalarization factor down to {} gave a feasible control set for aircraft A",
            k / opts.shrink
        ),
        attempts,
    }))
}

// Short-lived and never stored, so the variant size gap does not matter.
#[allow(clippy::large_enum_variant)]
enum Part2 {
    Done {
        sol_a: SynthesisSolution,
        cuts: Vec<SeparationCut>,
        checks: Vec<GridCheck>,
        rounds: usize,
    },
    Failed {
        reason: String,
        rounds: usize,
    },
}

fn part2_with_cuts(
    a: &Aircraft,
    b_shrunk: &Aircraft,
    tau_cut: SeparationCut,
    d: f64,
    opts: &LoopOptions,
) -> Result<Part2> {
    let tol = 1e-9 * d.max(1.0);
    let mut cuts = vec![tau_cut];
    let mut warm: Option<Vector> = None;
    for round in 1..=opts.max_cut_rounds.max(1) {
        let (sol_a, x) = match solve_part2_cuts(a.spec.control(), &cuts, opts.part2_margin, warm.as_ref()) {
            Ok(r) => r,
            Err(e @ (Error::Infeasible { .. } | Error::InfeasibleStart { .. })) => {
                return Ok(Part2::Failed {
                    reason: format!("Part II infeasible: {e}"),
                    rounds: round,
                })
            }
            Err(e) => return Err(e),
        };
        let a_shrunk = a.with_control(sol_a.control_set())?;
        let checks = verify_separation(&a_shrunk, b_shrunk, &opts.verify_times, d)?;
        let violated: Vec<&GridCheck> = checks.iter().filter(|c| c.margin < -tol).collect();
        if violated.is_empty() {
            return Ok(Part2::Done {
                sol_a,
                cuts,
                checks,
                rounds: round,
            });
        }
        for c in violated {
            let l = c.separation.direction.clone();
            let other = safe_set(b_shrunk, c.time, d, &l)?.support_value(&l);
            cuts.push(SeparationCut::new(a, c.time, l, other)?);
        }
        warm = Some(x);
    }
    Ok(Part2::Failed {
        reason: format!(
            "separation still violated after {} rounds of grid cuts",
            opts.max_cut_rounds
        ),
        rounds: opts.max_cut_rounds,
    })
}
