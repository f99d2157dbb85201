//! Support functions of reachable sets of `ẋ = A x + B u + v`, extremal
//! trajectories, tubes, and position-space separation queries.

use rayon::prelude::*;

use crate::dynamics::{expm, LtiSystem, NominalTrajectory};
use crate::ellipsoid::{minkowski_sum_external, Ellipsoid, HalfspaceSet};
use crate::error::{invalid, Error, Result};
use crate::linalg::{column_space, quad_form, simpson_weights, symmetrize, unit, Matrix, Vector};

pub const DEFAULT_QUAD_STEPS: usize = 200;
pub const MIN_QUAD_STEPS: usize = 16;

const TIME_SLACK: f64 = 1e-9;

/// Everything needed to evaluate the reachable set of one aircraft.
#[derive(Debug, Clone)]
pub struct ReachSpec {
    system: LtiSystem,
    x0: Ellipsoid,
    control: Ellipsoid,
    disturbance: Option<Ellipsoid>,
    horizon: f64,
    quad_steps: usize,
    center_offset: Option<NominalTrajectory>,
}

impl ReachSpec {
    pub fn new(system: LtiSystem, x0: Ellipsoid, control: Ellipsoid, horizon: f64) -> Result<Self> {
        if x0.dim() != system.state_dim() {
            return Err(invalid(format!(
                "initial set has dimension {}, system has {} states",
                x0.dim(),
                system.state_dim()
            )));
        }
        if control.dim() != system.input_dim() {
            return Err(invalid(format!(
                "control set has dimension {}, system has {} inputs",
                control.dim(),
                system.input_dim()
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        Ok(Self {
            system,
            x0,
            control,
            disturbance: None,
            horizon,
            quad_steps: DEFAULT_QUAD_STEPS,
            center_offset: None,
        })
    }

    pub fn with_disturbance(mut self, v: Ellipsoid) -> Result<Self> {
        if v.dim() != self.system.state_dim() {
            return Err(invalid("disturbance set must live in state space"));
        }
        self.disturbance = Some(v);
        Ok(self)
    }

    pub fn with_quad_steps(mut self, steps: usize) -> Result<Self> {
        if steps < MIN_QUAD_STEPS || !steps.is_multiple_of(2) {
            return Err(invalid(format!(
                "quad_steps must be even and at least {MIN_QUAD_STEPS}, got {steps}"
            )));
        }
        self.quad_steps = steps;
        Ok(self)
    }

    /// Adds a steady-state trajectory `x*(t)` to every reachable-set center.
    pub fn with_center_offset(mut self, traj: NominalTrajectory) -> Result<Self> {
        if traj.dim() != self.system.state_dim() {
            return Err(invalid("center offset has wrong state dimension"));
        }
        if traj.start() > TIME_SLACK || traj.end() < self.horizon - TIME_SLACK {
            return Err(invalid("center offset must cover [0, horizon]"));
        }
        self.center_offset = Some(traj);
        Ok(self)
    }

    /// Same spec with a different control set.
    pub fn with_control(&self, control: Ellipsoid) -> Result<Self> {
        if control.dim() != self.system.input_dim() {
            return Err(invalid("replacement control set has wrong dimension"));
        }
        Ok(Self {
            control,
            ..self.clone()
        })
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let mut out = Self::new(self.system.clone(), self.x0.clone(), self.control.clone(), horizon)?;
        out.disturbance = self.disturbance.clone();
        out.quad_steps = self.quad_steps;
        if let Some(tr) = &self.center_offset {
            out = out.with_center_offset(tr.clone())?;
        }
        Ok(out)
    }

    pub fn system(&self) -> &LtiSystem {
        &self.system
    }

    pub fn x0(&self) -> &Ellipsoid {
        &self.x0
    }

    pub fn control(&self) -> &Ellipsoid {
        &self.control
    }

    pub fn disturbance(&self) -> Option<&Ellipsoid> {
        self.disturbance.as_ref()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn quad_steps(&self) -> usize {
        self.quad_steps
    }

    pub fn center_offset(&self) -> Option<&NominalTrajectory> {
        self.center_offset.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -TIME_SLACK && t <= self.horizon + TIME_SLACK) {
            return Err(invalid(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    fn offset_at(&self, t: f64) -> Result<Option<Vector>> {
        self.center_offset
            .as_ref()
            .map(|tr| tr.state_at(t))
            .transpose()
    }

    /// Precomputes every `l`-independent quantity of the reachable set at `t`.
    pub fn snapshot(&self, t: f64) -> Result<ReachSnapshot> {
        self.check_time(t)?;
        let t = t.clamp(0.0, self.horizon);
        let n = self.state_dim();
        let panels = self.quad_steps;
        let weights = simpson_weights(panels, t);

        // Φ(t, s_i) = E^{panels − i} with E = e^{A t / panels}.
        let step = expm(self.system.a(), t / panels as f64)?;
        let mut phis = vec![Matrix::identity(n, n); panels + 1];
        for j in 1..=panels {
            phis[panels - j] = &step * &phis[panels - j + 1];
        }
        let phi_t = &phis[0];

        let mut free_center = phi_t * self.x0.center();
        if let Some(off) = self.offset_at(t)? {
            free_center += off;
        }
        let x0_shape = symmetrize(&(phi_t * self.x0.shape() * phi_t.transpose()));

        let input_maps: Vec<Matrix> = phis.iter().map(|p| p * self.system.b()).collect();
        let mut input_integral = Matrix::zeros(n, self.system.input_dim());
        for (w, g) in weights.iter().zip(&input_maps) {
            input_integral += g * *w;
        }

        let (dist_center, dist_maps) = match &self.disturbance {
            Some(v) => {
                let mut c = Vector::zeros(n);
                for (w, p) in weights.iter().zip(&phis) {
                    c += p * v.center() * *w;
                }
                (c, phis)
            }
            None => (Vector::zeros(n), Vec::new()),
        };

        Ok(ReachSnapshot {
            t,
            free_center,
            dist_center,
            x0_shape,
            input_integral,
            weights,
            input_maps,
            dist_maps,
            control: self.control.clone(),
            disturbance: self.disturbance.clone(),
        })
    }

    /// Reachable-set centers on a uniform grid, i.e. the nominal trajectory
    /// under the center control.
    pub fn center_trajectory(&self, times: &[f64]) -> Result<NominalTrajectory> {
        let states = times
            .par_iter()
            .map(|t| self.snapshot(*t).map(|s| s.center()))
            .collect::<Result<Vec<_>>>()?;
        NominalTrajectory::new(times, states)
    }

    /// Maximizing control `c_U + M_U B'Φ(t,s)'l / ⟨…⟩^{1/2}` at time `s ∈ [0, t]`.
    pub fn extremal_control(&self, t: f64, l: &Vector, s: f64) -> Result<Vector> {
        let phi = expm(self.system.a(), t - s)?;
        let m = self.system.b().transpose() * phi.transpose() * l;
        Ok(extremal(&self.control, &m))
    }

    /// Trajectory endpoint of the extremal control from the extremal initial
    /// state, recomputed by fine-step integration rather than quadrature.
    pub fn simulate_extremal(&self, t: f64, l: &Vector, steps: usize) -> Result<Vector> {
        self.check_time(t)?;
        let pt = reach_point(self, t, l)?;
        let (a, b) = (self.system.a(), self.system.b());
        let h = t / steps as f64;
        let rhs = |s: f64, x: &Vector| -> Result<Vector> {
            Ok(a * x + b * self.extremal_control(t, l, s)?)
        };
        let mut x = pt.x0.clone();
        for i in 0..steps {
            let s = i as f64 * h;
            let k1 = rhs(s, &x)?;
            let k2 = rhs(s + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
            let k3 = rhs(s + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
            let k4 = rhs(s + h, &(&x + &k3 * h))?;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        if let Some(off) = self.offset_at(t)? {
            x += off;
        }
        Ok(x)
    }
}

fn extremal(e: &Ellipsoid, l: &Vector) -> Vector {
    let ml = e.shape() * l;
    let form = l.dot(&ml);
    if form > 0.0 {
        e.center() + ml / form.sqrt()
    } else {
        e.center().clone()
    }
}

/// Reachable set at one time, with the Simpson nodes of the control and
/// disturbance integrals already multiplied through `Φ(t, s)`.
#[derive(Debug, Clone)]
pub struct ReachSnapshot {
    t: f64,
    free_center: Vector,
    dist_center: Vector,
    x0_shape: Matrix,
    input_integral: Matrix,
    weights: Vec<f64>,
    input_maps: Vec<Matrix>,
    dist_maps: Vec<Matrix>,
    control: Ellipsoid,
    disturbance: Option<Ellipsoid>,
}

/// The individual terms of the support function along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportTerms {
    /// `⟨l, Φ c_X0 + x*(t)⟩`
    pub initial_center: f64,
    /// `⟨l, ∫ΦB c_U⟩`
    pub control_center: f64,
    /// `⟨l, Φ M_X0 Φ' l⟩^{1/2}`
    pub initial_spread: f64,
    /// `∫⟨l, ΦB M_U B'Φ' l⟩^{1/2}`
    pub control_spread: f64,
    pub disturbance_center: f64,
    pub disturbance_spread: f64,
}

impl SupportTerms {
    pub fn total(&self) -> f64 {
        self.initial_center
            + self.control_center
            + self.initial_spread
            + self.control_spread
            + self.disturbance_center
            + self.disturbance_spread
    }
}

impl ReachSnapshot {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.free_center.len()
    }

    pub fn control(&self) -> &Ellipsoid {
        &self.control
    }

    /// Center of the reachable set.
    pub fn center(&self) -> Vector {
        &self.free_center + &self.input_integral * self.control.center() + &self.dist_center
    }

    /// `Φ c_X0 + x*(t)`, the part of the center no input influences.
    pub fn uncontrolled_center(&self) -> &Vector {
        &self.free_center
    }

    /// `Φ M_X0 Φ'`.
    pub fn initial_shape(&self) -> &Matrix {
        &self.x0_shape
    }

    /// `∫ Φ(t,s) B ds`, so that `⟨l, ∫ΦB q⟩ = ⟨gain(l), q⟩`.
    pub fn input_integral(&self) -> &Matrix {
        &self.input_integral
    }

    pub fn control_gain(&self, l: &Vector) -> Vector {
        self.input_integral.transpose() * l
    }

    pub fn initial_spread(&self, l: &Vector) -> f64 {
        quad_form(&self.x0_shape, l).sqrt()
    }

    /// `∫⟨l, ΦB M B'Φ' l⟩^{1/2} ds` for an arbitrary control shape `M`.
    pub fn control_spread(&self, l: &Vector, shape: &Matrix) -> f64 {
        self.weights
            .iter()
            .zip(&self.input_maps)
            .map(|(w, g)| w * quad_form(shape, &(g.transpose() * l)).sqrt())
            .sum()
    }

    /// Quadrature weights with the input-space vectors `B'Φ(t,s_i)' l`.
    pub fn control_nodes(&self, l: &Vector) -> Vec<(f64, Vector)> {
        self.weights
            .iter()
            .zip(&self.input_maps)
            .map(|(w, g)| (*w, g.transpose() * l))
            .collect()
    }

    /// `∫ ‖B'Φ' l‖ ds`, the control-independent factor of the norm bound.
    pub fn input_spread(&self, l: &Vector) -> f64 {
        self.weights
            .iter()
            .zip(&self.input_maps)
            .map(|(w, g)| w * (g.transpose() * l).norm())
            .sum()
    }

    fn disturbance_spread(&self, l: &Vector) -> f64 {
        match &self.disturbance {
            Some(v) => self
                .weights
                .iter()
                .zip(&self.dist_maps)
                .map(|(w, p)| w * quad_form(v.shape(), &(p.transpose() * l)).sqrt())
                .sum(),
            None => 0.0,
        }
    }

    pub fn terms(&self, l: &Vector) -> SupportTerms {
        SupportTerms {
            initial_center: l.dot(&self.free_center),
            control_center: self.control_gain(l).dot(self.control.center()),
            initial_spread: self.initial_spread(l),
            control_spread: self.control_spread(l, self.control.shape()),
            disturbance_center: l.dot(&self.dist_center),
            disturbance_spread: self.disturbance_spread(l),
        }
    }

    pub fn support(&self, l: &Vector) -> f64 {
        self.terms(l).total()
    }

    /// Support value with the control set replaced by `u`.
    pub fn support_with_control(&self, l: &Vector, u: &Ellipsoid) -> f64 {
        l.dot(&self.free_center)
            + self.control_gain(l).dot(u.center())
            + self.initial_spread(l)
            + self.control_spread(l, u.shape())
            + l.dot(&self.dist_center)
            + self.disturbance_spread(l)
    }

    /// Support value and a maximizing point of the (quadrature) reachable set.
    pub fn support_point(&self, l: &Vector) -> (f64, Vector) {
        let mut x = self.center();
        let xl = &self.x0_shape * l;
        let form = l.dot(&xl);
        if form > 0.0 {
            x += xl / form.sqrt();
        }
        let du = node_extremals(&self.input_maps, self.control.shape(), l);
        for ((w, g), d) in self.weights.iter().zip(&self.input_maps).zip(&du) {
            x += g * d * *w;
        }
        if let Some(v) = &self.disturbance {
            let dv = node_extremals(&self.dist_maps, v.shape(), l);
            for ((w, p), d) in self.weights.iter().zip(&self.dist_maps).zip(&dv) {
                x += p * d * *w;
            }
        }
        (self.support(l), x)
    }

    /// The snapshot of `T x + b`, e.g. the position of the aircraft.
    pub fn mapped(&self, t: &Matrix, b: &Vector) -> Result<ReachSnapshot> {
        if t.ncols() != self.dim() || b.len() != t.nrows() {
            return Err(invalid("map dimensions do not match the reachable set"));
        }
        Ok(ReachSnapshot {
            t: self.t,
            free_center: t * &self.free_center + b,
            dist_center: t * &self.dist_center,
            x0_shape: symmetrize(&(t * &self.x0_shape * t.transpose())),
            input_integral: t * &self.input_integral,
            weights: self.weights.clone(),
            input_maps: self.input_maps.iter().map(|g| t * g).collect(),
            dist_maps: self.dist_maps.iter().map(|p| t * p).collect(),
            control: self.control.clone(),
            disturbance: self.disturbance.clone(),
        })
    }

    /// Single external ellipsoid of the reachable set, tight along `l`.
    ///
    /// The set is the Minkowski sum of the initial-set image and one
    /// ellipsoid per quadrature node; the sum uses the tight weights
    /// `p_i = ⟨l, M_i l⟩^{1/2}`, floored to keep degenerate nodes finite.
    pub fn external_ellipsoid(&self, l: &Vector) -> Result<Ellipsoid> {
        let n = self.dim();
        let mut shapes: Vec<Matrix> = Vec::new();
        let u_shape = self.control.shape();
        for (w, g) in self.weights.iter().zip(&self.input_maps) {
            if *w > 0.0 {
                shapes.push(symmetrize(&(g * u_shape * g.transpose())) * (w * w));
            }
        }
        if let Some(v) = &self.disturbance {
            for (w, p) in self.weights.iter().zip(&self.dist_maps) {
                if *w > 0.0 {
                    shapes.push(symmetrize(&(p * v.shape() * p.transpose())) * (w * w));
                }
            }
        }
        let spread = external_sum_shape(&shapes, l, n);
        let inputs = Ellipsoid::new(Vector::zeros(n), spread)?;
        let initial = Ellipsoid::new(self.center(), self.x0_shape.clone())?;
        match minkowski_sum_external(&initial, &inputs, l) {
            Err(Error::DegenerateDirection(_)) => {
                // Neither part extends along l; any positive weights are external.
                Ellipsoid::new(self.center(), &self.x0_shape * 2.0 + inputs.shape() * 2.0)
            }
            other => other,
        }
    }
}

/// Offsets `M m_i / ⟨m_i, M m_i⟩^{1/2}` of the maximizing input at each node,
/// `m_i = G_i' l`. Nodes where the form vanishes take the value of the
/// nearest node where it does not, so the profile is continuous.
fn node_extremals(maps: &[Matrix], shape: &Matrix, l: &Vector) -> Vec<Vector> {
    let raw: Vec<Option<Vector>> = maps
        .iter()
        .map(|g| {
            let m = g.transpose() * l;
            let mm = shape * &m;
            let f = m.dot(&mm);
            (f > 0.0).then(|| mm / f.sqrt())
        })
        .collect();
    // Index of the nearest node with a nonzero form, ties to the earlier one.
    let n = raw.len();
    let mut left: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if raw[i].is_some() {
            last = Some(i);
        }
        left[i] = last;
    }
    let mut right: Vec<Option<usize>> = vec![None; n];
    last = None;
    for i in (0..n).rev() {
        if raw[i].is_some() {
            last = Some(i);
        }
        right[i] = last;
    }
    (0..n)
        .map(|i| {
            let pick = match (left[i], right[i]) {
                (Some(a), Some(b)) => Some(if i - a <= b - i { a } else { b }),
                (a, b) => a.or(b),
            };
            pick.and_then(|j| raw[j].clone())
                .unwrap_or_else(|| Vector::zeros(shape.nrows()))
        })
        .collect()
}

/// `(Σ p_i)(Σ M_i / p_i)` with `p_i = ⟨l, M_i l⟩^{1/2}`, the tight external
/// ellipsoid of `Σ E(0, M_i)` along `l`.
fn external_sum_shape(shapes: &[Matrix], l: &Vector, n: usize) -> Matrix {
    let p: Vec<f64> = shapes.iter().map(|m| quad_form(m, l).sqrt()).collect();
    let pmax = p.iter().copied().fold(0.0, f64::max);
    let floor = if pmax > 0.0 { pmax * 1e-12 } else { 1.0 };
    let mut sum_p = 0.0;
    let mut acc = Matrix::zeros(n, n);
    for (m, pi) in shapes.iter().zip(&p) {
        if m.iter().all(|v| *v == 0.0) {
            continue;
        }
        let pi = pi.max(floor);
        sum_p += pi;
        acc += m / pi;
    }
    symmetrize(&(acc * sum_p))
}

fn check_direction(l: &Vector, dim: usize) -> Result<()> {
    if l.len() != dim {
        return Err(invalid(format!(
            "direction has dimension {}, expected {dim}",
            l.len()
        )));
    }
    if !(l.norm() > 0.0) || l.iter().any(|v| !v.is_finite()) {
        return Err(invalid("direction must be a nonzero finite vector"));
    }
    Ok(())
}

/// `ρ(l | 𝓡[t])`.
pub fn reach_support(spec: &ReachSpec, t: f64, l: &Vector) -> Result<f64> {
    check_direction(l, spec.state_dim())?;
    Ok(spec.snapshot(t)?.support(l))
}

/// Difference between the support value at `quad_steps` panels and at half
/// as many, divided by 15 (Richardson estimate of the Simpson error).
pub fn quadrature_error_estimate(spec: &ReachSpec, t: f64, l: &Vector) -> Result<f64> {
    let fine = reach_support(spec, t, l)?;
    let half = (spec.quad_steps / 2).max(MIN_QUAD_STEPS);
    let half = half + half % 2;
    let coarse = reach_support(&spec.clone().with_quad_steps(half)?, t, l)?;
    Ok((fine - coarse).abs() / 15.0)
}

/// Extremal trajectory touching the supporting hyperplane along `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachPoint {
    pub state: Vector,
    pub x0: Vector,
    /// Extremal control at the quadrature nodes.
    pub control: Vec<(f64, Vector)>,
}

pub fn reach_point(spec: &ReachSpec, t: f64, l: &Vector) -> Result<ReachPoint> {
    check_direction(l, spec.state_dim())?;
    if spec.disturbance.is_some() {
        return Err(invalid(
            "extremal trajectories are defined only without disturbance",
        ));
    }
    let snap = spec.snapshot(t)?;
    let phi_t = expm(spec.system.a(), snap.t)?;
    let x0 = extremal(&spec.x0, &(phi_t.transpose() * l));
    let (_, state) = snap.support_point(l);
    let h = snap.t / spec.quad_steps as f64;
    let control = node_extremals(&snap.input_maps, spec.control.shape(), l)
        .into_iter()
        .enumerate()
        .map(|(i, d)| (i as f64 * h, spec.control.center() + d))
        .collect();
    Ok(ReachPoint { state, x0, control })
}

/// Affine map from the state of one aircraft to world position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMap {
    matrix: Matrix,
    offset: Vector,
}

impl PositionMap {
    pub fn new(matrix: Matrix, offset: Vector) -> Result<Self> {
        if matrix.nrows() != offset.len() {
            return Err(invalid("position map rows must match offset length"));
        }
        Ok(Self { matrix, offset })
    }

    /// Picks the given state coordinates as world axes.
    pub fn select(state_dim: usize, coords: &[usize]) -> Result<Self> {
        let mut m = Matrix::zeros(coords.len(), state_dim);
        for (r, c) in coords.iter().enumerate() {
            if *c >= state_dim {
                return Err(invalid(format!("state index {c} out of range")));
            }
            m[(r, *c)] = 1.0;
        }
        Self::new(m, Vector::zeros(coords.len()))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn offset(&self) -> &Vector {
        &self.offset
    }

    pub fn world_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.matrix * x + &self.offset
    }

    /// State-space direction `P' l`.
    pub fn pullback(&self, l: &Vector) -> Vector {
        self.matrix.transpose() * l
    }

    pub fn snapshot(&self, spec: &ReachSpec, t: f64) -> Result<ReachSnapshot> {
        if self.matrix.ncols() != spec.state_dim() {
            return Err(invalid("position map does not match the state dimension"));
        }
        spec.snapshot(t)?.mapped(&self.matrix, &self.offset)
    }
}

/// Outer polytope `{x : ⟨l_i, x⟩ ≤ ρ(l_i | 𝓡[t])}`, in the coordinates of
/// `map` when given.
pub fn reach_polytope_outer(
    spec: &ReachSpec,
    t: f64,
    directions: &[Vector],
    map: Option<&PositionMap>,
) -> Result<HalfspaceSet> {
    if directions.is_empty() {
        return Err(invalid("at least one direction is required"));
    }
    let snap = match map {
        Some(m) => m.snapshot(spec, t)?,
        None => spec.snapshot(t)?,
    };
    let mut pairs = Vec::with_capacity(directions.len());
    for l in directions {
        check_direction(l, snap.dim())?;
        let l = l / l.norm();
        pairs.push((l.clone(), snap.support(&l)));
    }
    HalfspaceSet::new(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachTube {
    pub times: Vec<f64>,
    pub directions: Vec<Vector>,
    /// `support_values[(i, j)]` is the support at `times[i]` along `directions[j]`.
    pub support_values: Matrix,
    /// Touching states (full state space), same layout as `support_values`.
    pub touching_points: Option<Vec<Vec<Vector>>>,
}

/// Support values over a time grid; directions are in world coordinates
/// when `map` is given. Grid times are evaluated in parallel.
pub fn reach_tube(
    spec: &ReachSpec,
    times: &[f64],
    directions: &[Vector],
    with_points: bool,
    map: Option<&PositionMap>,
) -> Result<ReachTube> {
    let dirs: Vec<Vector> = directions
        .iter()
        .map(|l| unit(l).ok_or_else(|| invalid("direction must be nonzero")))
        .collect::<Result<_>>()?;
    let rows: Vec<(Vec<f64>, Option<Vec<Vector>>)> = times
        .par_iter()
        .map(|&t| {
            let snap = match map {
                Some(m) => m.snapshot(spec, t)?,
                None => spec.snapshot(t)?,
            };
            let values = dirs.iter().map(|l| snap.support(l)).collect();
            let points = if with_points {
                let pts = dirs
                    .iter()
                    .map(|l| {
                        let ls = map.map_or_else(|| l.clone(), |m| m.pullback(l));
                        if ls.norm() == 0.0 {
                            Ok(spec.snapshot(t)?.center())
                        } else {
                            reach_point(spec, t, &ls).map(|p| p.state)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(pts)
            } else {
                None
            };
            Ok((values, points))
        })
        .collect::<Result<_>>()?;

    let mut support_values = Matrix::zeros(times.len(), dirs.len());
    let mut touching = with_points.then(Vec::new);
    for (i, (vals, pts)) in rows.into_iter().enumerate() {
        for (j, v) in vals.into_iter().enumerate() {
            support_values[(i, j)] = v;
        }
        if let (Some(acc), Some(p)) = (touching.as_mut(), pts) {
            acc.push(p);
        }
    }
    Ok(ReachTube {
        times: times.to_vec(),
        directions: dirs,
        support_values,
        touching_points: touching,
    })
}

/// `n` unit directions evenly spaced in the plane of world axes `(i, j)`.
pub fn planar_directions(world_dim: usize, axes: (usize, usize), n: usize) -> Vec<Vector> {
    (0..n)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let mut v = Vector::zeros(world_dim);
            v[axes.0] = a.cos();
            v[axes.1] = a.sin();
            v
        })
        .collect()
}

/// Result of a separation query. `distance > 0` certifies the two sets are
/// at least that far apart; `direction` points from B towards A.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub distance: f64,
    pub direction: Vector,
}

/// `max_{‖l‖=1} −ρ_A(−l) − ρ_B(l)` between two world-space snapshots.
pub fn separation_of(a: &ReachSnapshot, b: &ReachSnapshot) -> Result<Separation> {
    if a.dim() != b.dim() {
        return Err(invalid("snapshots live in different spaces"));
    }
    let dim = a.dim();
    if dim == 0 {
        return Err(invalid("separation needs a space of dimension at least 1"));
    }
    // Directions outside the span of both sets' spreads and their center
    // difference see both supports as constant; search only inside it.
    let diff = a.center() - b.center();
    let basis = active_basis(&[a, b], &diff);
    if basis.ncols() == 0 {
        let mut direction = Vector::zeros(dim);
        direction[0] = 1.0;
        return Ok(Separation {
            distance: 0.0,
            direction,
        });
    }
    let g = |v: &Vector| -> (f64, Vector) {
        let l = &basis * v;
        let (va, pa) = a.support_point(&-&l);
        let (vb, pb) = b.support_point(&l);
        (-va - vb, basis.transpose() * (pa - pb))
    };

    let lift = |(val, v): (f64, Vector)| Separation {
        distance: val,
        direction: &basis * v,
    };
    let z0 = basis.transpose() * &diff;
    if let Some(found) = gilbert(&g, z0.clone()) {
        return Ok(lift(ascend_on_sphere(&g, found.1)));
    }

    let r = basis.ncols();
    let mut starts = Vec::with_capacity(8);
    if let Some(d) = unit(&z0) {
        starts.push(d);
    }
    starts.extend(sphere_points(r, 8 - starts.len()));
    let best = starts
        .into_iter()
        .map(|s| ascend_on_sphere(&g, s))
        .fold(None::<(f64, Vector)>, |acc, c| match acc {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        })
        .expect("at least one start");
    Ok(lift(best))
}

/// Orthonormal basis of the span of both sets' spread shapes and `extra`.
fn active_basis(sets: &[&ReachSnapshot], extra: &Vector) -> Matrix {
    let n = extra.len();
    let mut k = extra * extra.transpose();
    for s in sets {
        k += &s.x0_shape;
        let u = s.control.shape();
        for (w, g) in s.weights.iter().zip(&s.input_maps) {
            k += g * u * g.transpose() * (w * w);
        }
        if let Some(v) = &s.disturbance {
            for (w, p) in s.weights.iter().zip(&s.dist_maps) {
                k += p * v.shape() * p.transpose() * (w * w);
            }
        }
    }
    let k = symmetrize(&k);
    let scale = k.amax();
    if scale == 0.0 {
        return Matrix::zeros(n, 0);
    }
    column_space(&k, 1e-12 * scale)
}

/// Gilbert's minimum-norm iteration on the difference set `A − B`.
///
/// `f(v)` returns `(h(v), p_A − p_B)` for the support points along `∓v`.
/// Returns the best certified lower bound and its unit direction once the
/// gap to the upper bound `‖z‖` closes, or `None` when the sets overlap or
/// nearly touch (the caller then searches the sphere).
fn gilbert(f: &impl Fn(&Vector) -> (f64, Vector), mut z: Vector) -> Option<(f64, Vector)> {
    let mut best: Option<(f64, Vector)> = None;
    for _ in 0..2000 {
        let zn = z.norm();
        let l = unit(&z)?;
        let (h, w) = f(&l);
        if best.as_ref().is_none_or(|b| h > b.0) {
            best = Some((h, l.clone()));
        }
        let lower = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        if lower <= 0.0 && zn < 1e-9 * (1.0 + w.norm()) {
            return None;
        }
        if zn - lower <= 1e-10 * zn.max(1.0) {
            return best.filter(|b| b.0 > 0.0);
        }
        let step = &w - &z;
        let ss = step.norm_squared();
        if ss == 0.0 {
            break;
        }
        let alpha = (-z.dot(&step) / ss).clamp(0.0, 1.0);
        if alpha == 0.0 {
            break;
        }
        z += step * alpha;
    }
    best.filter(|b| b.0 > 0.0)
}

/// Separation of two aircraft's position sets at time `t`.
pub fn separation(
    spec_a: &ReachSpec,
    map_a: &PositionMap,
    spec_b: &ReachSpec,
    map_b: &PositionMap,
    t: f64,
) -> Result<Separation> {
    if map_a.world_dim() != map_b.world_dim() {
        return Err(invalid("position maps have different world dimensions"));
    }
    separation_of(&map_a.snapshot(spec_a, t)?, &map_b.snapshot(spec_b, t)?)
}

/// Deterministic, roughly uniform points on the unit sphere.
fn sphere_points(dim: usize, n: usize) -> Vec<Vector> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let mut v = Vector::zeros(dim);
            match dim {
                0 => {}
                1 => v[0] = if i % 2 == 0 { 1.0 } else { -1.0 },
                2 => {
                    let a = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                    v[0] = a.cos();
                    v[1] = a.sin();
                }
                _ => {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    v[0] = r * a.cos();
                    v[1] = r * a.sin();
                    v[2] = z;
                }
            }
            v
        })
        .collect()
}

/// Riemannian gradient ascent with Armijo backtracking on the unit sphere.
fn ascend_on_sphere(f: &impl Fn(&Vector) -> (f64, Vector), start: Vector) -> (f64, Vector) {
    let mut l = start;
    let (mut val, mut grad) = f(&l);
    let mut step = 1.0;
    for _ in 0..500 {
        let tangent = &grad - &l * grad.dot(&l);
        let tn = tangent.norm();
        if tn < 1e-12 * grad.norm().max(1.0) {
            break;
        }
        let mut improved = false;
        let mut s = step;
        while s > 1e-10 {
            let cand = unit(&(&l + &tangent * s)).expect("nonzero step");
            let (cv, cg) = f(&cand);
            if cv >= val + 0.3 * s * tn * tn {
                l = cand;
                val = cv;
                grad = cg;
                improved = true;
                break;
            }
            s *= 0.5;
        }
        if !improved {
            break;
        }
        step = (s * 2.0).min(1e3);
    }
    (val, l)
}
