//! Barrier interior-point maximizer for concave objectives made of a linear
//! part and weighted `log det` terms, under affine matrix inequalities and
//! scalar affine inequalities.
//!
//! Decision variables are flattened into one vector; symmetric matrix blocks
//! store their upper triangle, and each stored coordinate is the value of
//! the matching entry (so off-diagonal coordinates fill two entries).

use crate::error::{invalid, Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize, Matrix, Vector};

pub const FEASIBILITY_MARGIN: f64 = 1e-8;
pub const KKT_TOLERANCE: f64 = 1e-6;
const GAP_TOLERANCE: f64 = 1e-7;
const MAX_NEWTON_STEPS: usize = 200;
const BACKTRACK: f64 = 0.5;
const ARMIJO: f64 = 0.01;
/// Newton decrement below which full steps are taken.
const QUADRATIC_REGION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Scalar,
    Vector(usize),
    Symmetric(usize),
}

impl BlockKind {
    fn len(self) -> usize {
        match self {
            BlockKind::Scalar => 1,
            BlockKind::Vector(n) => n,
            BlockKind::Symmetric(n) => n * (n + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    name: String,
    kind: BlockKind,
    offset: usize,
}

/// Handle to a named variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, kind: BlockKind) -> Var {
        self.blocks.push(Block {
            name: name.to_string(),
            kind,
            offset: self.len,
        });
        self.len += kind.len();
        Var(self.blocks.len() - 1)
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.push(name, BlockKind::Scalar)
    }

    pub fn vector(&mut self, name: &str, n: usize) -> Var {
        self.push(name, BlockKind::Vector(n))
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Var {
        self.push(name, BlockKind::Symmetric(n))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn name(&self, v: Var) -> &str {
        &self.blocks[v.0].name
    }

    pub fn kind(&self, v: Var) -> BlockKind {
        self.blocks[v.0].kind
    }

    /// Flat index of a scalar block.
    pub fn at(&self, v: Var) -> usize {
        let b = &self.blocks[v.0];
        assert_eq!(b.kind, BlockKind::Scalar, "{} is not a scalar", b.name);
        b.offset
    }

    /// Flat index of element `i` of a vector block.
    pub fn elem(&self, v: Var, i: usize) -> usize {
        let b = &self.blocks[v.0];
        match b.kind {
            BlockKind::Vector(n) => {
                assert!(i < n, "index {i} out of range for {}", b.name);
                b.offset + i
            }
            _ => panic!("{} is not a vector", b.name),
        }
    }

    /// Flat index of entry `(i, j)` of a symmetric block.
    pub fn entry(&self, v: Var, i: usize, j: usize) -> usize {
        let b = &self.blocks[v.0];
        match b.kind {
            BlockKind::Symmetric(n) => {
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                assert!(j < n, "entry out of range for {}", b.name);
                // Row-major upper triangle.
                b.offset + i * n - i * i.saturating_sub(1) / 2 + (j - i)
            }
            _ => panic!("{} is not a symmetric block", b.name),
        }
    }

    pub fn scalar_value(&self, x: &Vector, v: Var) -> f64 {
        x[self.at(v)]
    }

    pub fn vector_value(&self, x: &Vector, v: Var) -> Vector {
        match self.kind(v) {
            BlockKind::Vector(n) => Vector::from_fn(n, |i, _| x[self.elem(v, i)]),
            _ => panic!("{} is not a vector", self.name(v)),
        }
    }

    pub fn symmetric_value(&self, x: &Vector, v: Var) -> Matrix {
        match self.kind(v) {
            BlockKind::Symmetric(n) => Matrix::from_fn(n, n, |i, j| x[self.entry(v, i, j)]),
            _ => panic!("{} is not a symmetric block", self.name(v)),
        }
    }

    pub fn set_scalar(&self, x: &mut Vector, v: Var, value: f64) {
        x[self.at(v)] = value;
    }

    pub fn set_vector(&self, x: &mut Vector, v: Var, value: &Vector) {
        for i in 0..value.len() {
            x[self.elem(v, i)] = value[i];
        }
    }

    pub fn set_symmetric(&self, x: &mut Vector, v: Var, value: &Matrix) {
        let n = value.nrows();
        for i in 0..n {
            for j in i..n {
                x[self.entry(v, i, j)] = 0.5 * (value[(i, j)] + value[(j, i)]);
            }
        }
    }
}

/// `F(x) = F₀ + Σ_k x_k F_k` with symmetric `F₀, F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    constant: Matrix,
    terms: Vec<(usize, Matrix)>,
}

impl AffineMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            constant: Matrix::zeros(n, n),
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `v` at `(i, j)` and `(j, i)`.
    pub fn add_const(&mut self, i: usize, j: usize, v: f64) -> &mut Self {
        self.constant[(i, j)] += v;
        if i != j {
            self.constant[(j, i)] += v;
        }
        self
    }

    /// Adds a symmetric constant block with top-left corner `(r, c)`; when
    /// off the diagonal its transpose is mirrored.
    pub fn add_const_block(&mut self, r: usize, c: usize, m: &Matrix) -> &mut Self {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if r == c {
                    self.constant[(r + i, c + j)] += m[(i, j)];
                } else {
                    self.add_const(r + i, c + j, m[(i, j)]);
                }
            }
        }
        self
    }

    /// Adds `coef · x_var` at `(i, j)` and `(j, i)`.
    pub fn add_var(&mut self, i: usize, j: usize, var: usize, coef: f64) -> &mut Self {
        let n = self.size();
        let pos = match self.terms.iter().position(|(k, _)| *k == var) {
            Some(p) => p,
            None => {
                self.terms.push((var, Matrix::zeros(n, n)));
                self.terms.len() - 1
            }
        };
        let m = &mut self.terms[pos].1;
        m[(i, j)] += coef;
        if i != j {
            m[(j, i)] += coef;
        }
        self
    }

    pub fn eval(&self, x: &Vector) -> Matrix {
        let mut m = self.constant.clone();
        for (k, f) in &self.terms {
            m += f * x[*k];
        }
        m
    }
}

/// `g(x) = g₀ + ⟨a, x⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScalar {
    pub constant: f64,
    pub coeffs: Vec<(usize, f64)>,
}

impl AffineScalar {
    pub fn new(constant: f64) -> Self {
        Self {
            constant,
            coeffs: Vec::new(),
        }
    }

    pub fn add(&mut self, var: usize, coef: f64) -> &mut Self {
        match self.coeffs.iter_mut().find(|(k, _)| *k == var) {
            Some((_, c)) => *c += coef,
            None => self.coeffs.push((var, coef)),
        }
        self
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        self.constant + self.coeffs.iter().map(|(k, c)| c * x[*k]).sum::<f64>()
    }
}

/// `maximize ⟨c, x⟩ + Σ w_j log det H_j(x)` subject to `F_i(x) ⪰ 0` and
/// `g_i(x) ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierProblem {
    pub layout: Layout,
    pub linear: Vector,
    pub logdets: Vec<(f64, AffineMatrix)>,
    pub psd: Vec<(String, AffineMatrix)>,
    pub scalars: Vec<(String, AffineScalar)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: Vector,
    pub objective: f64,
    pub kkt_residual: f64,
    pub barrier_mu_final: f64,
    pub status: Status,
    /// Objective at the end of each barrier stage.
    pub stage_objectives: Vec<f64>,
}

impl BarrierProblem {
    pub fn new(layout: Layout) -> Self {
        let n = layout.len();
        Self {
            layout,
            linear: Vector::zeros(n),
            logdets: Vec::new(),
            psd: Vec::new(),
            scalars: Vec::new(),
        }
    }

    pub fn add_logdet(&mut self, weight: f64, h: AffineMatrix) {
        self.logdets.push((weight, h));
    }

    pub fn add_psd(&mut self, name: &str, f: AffineMatrix) {
        self.psd.push((name.to_string(), f));
    }

    pub fn add_scalar(&mut self, name: &str, g: AffineScalar) {
        self.scalars.push((name.to_string(), g));
    }

    /// Total barrier dimension: sizes of the matrix constraints plus the
    /// number of scalar constraints.
    pub fn barrier_dim(&self) -> usize {
        self.psd.iter().map(|(_, f)| f.size()).sum::<usize>() + self.scalars.len()
    }

    /// Objective value, or `None` outside the domain of the `log det` terms.
    pub fn objective(&self, x: &Vector) -> Option<f64> {
        let mut v = self.linear.dot(x);
        for (w, h) in &self.logdets {
            if *w == 0.0 {
                continue;
            }
            let chol = symmetrize(&h.eval(x)).cholesky()?;
            v += w * 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(v)
    }

    /// Smallest slack over all constraints (minimum eigenvalue for matrix
    /// constraints), with the name of the constraint attaining it.
    pub fn min_slack(&self, x: &Vector) -> (String, f64) {
        let mut worst = ("none".to_string(), f64::INFINITY);
        for (name, f) in &self.psd {
            let e = min_eigenvalue(&f.eval(x));
            if e < worst.1 {
                worst = (name.clone(), e);
            }
        }
        for (name, g) in &self.scalars {
            let e = g.eval(x);
            if e < worst.1 {
                worst = (name.clone(), e);
            }
        }
        worst
    }

    fn logdet_domain_margin(&self, x: &Vector) -> f64 {
        self.logdets
            .iter()
            .filter(|(w, _)| *w != 0.0)
            .map(|(_, h)| min_eigenvalue(&h.eval(x)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_strictly_feasible(&self, x: &Vector, margin: f64) -> bool {
        self.min_slack(x).1 >= margin && self.logdet_domain_margin(x) > 0.0
    }

    /// `μ·f₀(x) + Σ log det F_i(x) + Σ log g_i(x)`, `None` if not strictly
    /// feasible.
    fn barrier_value(&self, x: &Vector, mu: f64) -> Option<f64> {
        let mut v = mu * self.objective(x)?;
        for (_, f) in &self.psd {
            let chol = symmetrize(&f.eval(x)).cholesky()?;
            v += 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        for (_, g) in &self.scalars {
            let s = g.eval(x);
            if s <= 0.0 {
                return None;
            }
            v += s.ln();
        }
        v.is_finite().then_some(v)
    }

    /// Gradient and Hessian of the barrier function at a strictly feasible x.
    fn derivatives(&self, x: &Vector, mu: f64) -> Option<(Vector, Matrix)> {
        let n = self.layout.len();
        let mut grad = &self.linear * mu;
        let mut hess = Matrix::zeros(n, n);
        let mut add_logdet = |weight: f64, h: &AffineMatrix| -> Option<()> {
            let inv = symmetrize(&h.eval(x)).cholesky()?.inverse();
            let ws: Vec<(usize, Matrix)> = h.terms.iter().map(|(k, f)| (*k, &inv * f)).collect();
            for (a, (ka, wa)) in ws.iter().enumerate() {
                grad[*ka] += weight * wa.trace();
                for (kb, wb) in &ws[a..] {
                    let v = weight * (wa * wb).trace();
                    hess[(*ka, *kb)] -= v;
                    if ka != kb {
                        hess[(*kb, *ka)] -= v;
                    }
                }
            }
            Some(())
        };
        for (w, h) in &self.logdets {
            if *w != 0.0 {
                add_logdet(mu * w, h)?;
            }
        }
        for (_, f) in &self.psd {
            add_logdet(1.0, f)?;
        }
        for (_, g) in &self.scalars {
            let s = g.eval(x);
            if s <= 0.0 {
                return None;
            }
            for (ka, ca) in &g.coeffs {
                grad[*ka] += ca / s;
                for (kb, cb) in &g.coeffs {
                    hess[(*ka, *kb)] -= ca * cb / (s * s);
                }
            }
        }
        Some((grad, hess))
    }

    /// Gradient of the objective alone.
    fn objective_gradient(&self, x: &Vector) -> Vector {
        let mut grad = self.linear.clone();
        for (w, h) in &self.logdets {
            if *w == 0.0 {
                continue;
            }
            if let Some(chol) = symmetrize(&h.eval(x)).cholesky() {
                let inv = chol.inverse();
                for (k, f) in &h.terms {
                    grad[*k] += w * (&inv * f).trace();
                }
            }
        }
        grad
    }

    fn check(&self) -> Result<()> {
        let n = self.layout.len();
        if self.linear.len() != n {
            return Err(invalid("objective length does not match the variables"));
        }
        let exprs = self.logdets.iter().map(|(_, h)| h).chain(self.psd.iter().map(|(_, f)| f));
        for e in exprs {
            if e.terms.iter().any(|(k, _)| *k >= n) {
                return Err(invalid("matrix expression references an unknown variable"));
            }
        }
        if self.scalars.iter().any(|(_, g)| g.coeffs.iter().any(|(k, _)| *k >= n)) {
            return Err(invalid("scalar constraint references an unknown variable"));
        }
        Ok(())
    }
}

/// Path-following barrier method from a strictly feasible start.
pub fn solve(p: &BarrierProblem, init: &Vector) -> Result<SolveResult> {
    p.check()?;
    if init.len() != p.layout.len() {
        return Err(invalid("initial point has the wrong length"));
    }
    let (name, slack) = p.min_slack(init);
    if slack < FEASIBILITY_MARGIN {
        return Err(Error::InfeasibleStart {
            constraint: name,
            margin: slack,
        });
    }
    if p.logdet_domain_margin(init) <= 0.0 {
        return Err(Error::InfeasibleStart {
            constraint: "log det domain".into(),
            margin: p.logdet_domain_margin(init),
        });
    }

    let dim = p.barrier_dim().max(1) as f64;
    let mut x = init.clone();
    let mut mu = 1.0;
    let mut stages = Vec::new();
    let mut status = Status::Optimal;
    loop {
        if !centering(p, &mut x, mu) {
            status = Status::MaxIter;
        }
        stages.push(p.objective(&x).unwrap_or(f64::NEG_INFINITY));
        if dim / mu <= GAP_TOLERANCE || status == Status::MaxIter {
            break;
        }
        mu *= 10.0;
    }

    let kkt = kkt_residual(p, &x, mu);
    if status == Status::Optimal && kkt > KKT_TOLERANCE {
        status = Status::MaxIter;
    }
    Ok(SolveResult {
        objective: p.objective(&x).unwrap_or(f64::NEG_INFINITY),
        x,
        kkt_residual: kkt,
        barrier_mu_final: mu,
        status,
        stage_objectives: stages,
    })
}

/// Relative ∞-norm of the barrier gradient, scaled by the objective gradient.
fn kkt_residual(p: &BarrierProblem, x: &Vector, mu: f64) -> f64 {
    match p.derivatives(x, mu) {
        Some((g, _)) => {
            let scale = (p.objective_gradient(x) * mu).amax().max(1.0);
            g.amax() / scale
        }
        None => f64::INFINITY,
    }
}

/// Damped Newton on the barrier function at fixed `mu`; false if the step
/// budget ran out.
///
/// The barrier is self-concordant, so once the Newton decrement is small a
/// full step stays feasible and converges quadratically. Those steps are
/// taken without comparing barrier values, whose rounding noise grows with
/// `mu`. Centering ends when the decrement stops shrinking.
fn centering(p: &BarrierProblem, x: &mut Vector, mu: f64) -> bool {
    let mut val = match p.barrier_value(x, mu) {
        Some(v) => v,
        None => return false,
    };
    let mut stalled = 0;
    let mut last = f64::INFINITY;
    for _ in 0..MAX_NEWTON_STEPS {
        let (grad, hess) = match p.derivatives(x, mu) {
            Some(d) => d,
            None => return false,
        };
        let step = match newton_direction(&grad, &hess) {
            Some(s) => s,
            None => return false,
        };
        let decrement = grad.dot(&step);
        let scale = (p.objective_gradient(x) * mu).amax().max(1.0);
        if decrement <= 2e-10 || grad.amax() <= 1e-10 * scale {
            return true;
        }
        if decrement < QUADRATIC_REGION {
            stalled = if decrement > 0.25 * last { stalled + 1 } else { 0 };
            if stalled >= 3 {
                return true;
            }
            last = decrement;
            let cand = &*x + &step;
            if let Some(cv) = p.barrier_value(&cand, mu) {
                *x = cand;
                val = cv;
                continue;
            }
        }
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-14 {
            let cand = &*x + &step * t;
            if let Some(cv) = p.barrier_value(&cand, mu) {
                if cv > val && cv >= val + ARMIJO * t * decrement {
                    *x = cand;
                    val = cv;
                    moved = true;
                    break;
                }
            }
            t *= BACKTRACK;
        }
        if !moved {
            // No representable improvement left along the Newton direction.
            return true;
        }
    }
    false
}

/// Solves `(−H) d = g` after symmetric diagonal equilibration; a tiny ridge
/// is added if the scaled system is numerically singular.
fn newton_direction(grad: &Vector, hess: &Matrix) -> Option<Vector> {
    let neg = symmetrize(&(-hess));
    let n = neg.nrows();
    let diag = Vector::from_fn(n, |i, _| {
        let h = neg[(i, i)];
        if h > 0.0 && h.is_finite() {
            1.0 / h.sqrt()
        } else {
            1.0
        }
    });
    let scaled = Matrix::from_fn(n, n, |i, j| neg[(i, j)] * diag[i] * diag[j]);
    let rhs = grad.component_mul(&diag);
    let unscale = |y: Vector| y.component_mul(&diag);
    if let Some(ch) = scaled.clone().cholesky() {
        return Some(unscale(ch.solve(&rhs)));
    }
    let mut ridge = 1e-12;
    for _ in 0..12 {
        let reg = &scaled + Matrix::identity(n, n) * ridge;
        if let Some(ch) = reg.cholesky() {
            return Some(unscale(ch.solve(&rhs)));
        }
        ridge *= 100.0;
    }
    None
}

/// Finds a strictly feasible point, starting from `guess`.
///
/// If the guess is not strictly feasible, solves the phase-one problem
/// `maximize σ` with every constraint (and every `log det` argument) shifted
/// by `σ`, `σ ≤ 1`, and the variables confined to a large ball around the
/// guess. Fails with the constraint of smallest slack when the best `σ` is
/// not positive.
pub fn feasibility_restore(p: &BarrierProblem, guess: &Vector) -> Result<Vector> {
    p.check()?;
    if guess.len() != p.layout.len() {
        return Err(invalid("guess has the wrong length"));
    }
    if p.is_strictly_feasible(guess, FEASIBILITY_MARGIN) {
        return Ok(guess.clone());
    }
    let n = p.layout.len();
    let mut layout = p.layout.clone();
    let sigma_var = layout.scalar("phase-one slack");
    let sigma = layout.at(sigma_var);
    let mut ph = BarrierProblem::new(layout);
    ph.linear[sigma] = 1.0;

    let shift = |f: &AffineMatrix| {
        let mut g = f.clone();
        for i in 0..g.size() {
            g.add_var(i, i, sigma, -1.0);
        }
        g
    };
    for (name, f) in &p.psd {
        ph.add_psd(name, shift(f));
    }
    for (w, h) in &p.logdets {
        if *w != 0.0 {
            ph.add_psd("log det domain", shift(h));
        }
    }
    for (name, g) in &p.scalars {
        let mut g = g.clone();
        g.add(sigma, -1.0);
        ph.add_scalar(name, g);
    }
    let mut cap = AffineScalar::new(1.0);
    cap.add(sigma, -1.0);
    ph.add_scalar("phase-one cap", cap);

    let radius = 1e3 * guess.amax().max(1.0);
    let mut ball = AffineMatrix::zeros(n + 1);
    ball.add_const(0, 0, radius);
    for i in 0..n {
        ball.add_const(1 + i, 1 + i, radius);
        ball.add_const(0, 1 + i, -guess[i]);
        ball.add_var(0, 1 + i, i, 1.0);
    }
    ph.add_psd("phase-one ball", ball);

    let start_slack = p
        .min_slack(guess)
        .1
        .min(p.logdet_domain_margin(guess))
        .min(1.0);
    let mut x0 = Vector::zeros(n + 1);
    x0.rows_mut(0, n).copy_from(guess);
    x0[sigma] = start_slack - 1.0;

    let res = solve(&ph, &x0)?;
    let x = res.x.rows(0, n).into_owned();
    if res.x[sigma] > FEASIBILITY_MARGIN && p.is_strictly_feasible(&x, FEASIBILITY_MARGIN) {
        return Ok(x);
    }
    let (constraint, margin) = p.min_slack(&x);
    Err(Error::Infeasible { constraint, margin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use nalgebra::dvector;
    use rand::Rng;

    fn logdet_under_identity() -> (BarrierProblem, Var) {
        let mut layout = Layout::new();
        let q = layout.symmetric("Q", 2);
        let mut p = BarrierProblem::new(layout.clone());
        let mut h = AffineMatrix::zeros(2);
        let mut f = AffineMatrix::zeros(2);
        f.add_const(0, 0, 1.0).add_const(1, 1, 1.0);
        for i in 0..2 {
            for j in i..2 {
                h.add_var(i, j, layout.entry(q, i, j), 1.0);
                f.add_var(i, j, layout.entry(q, i, j), -1.0);
            }
        }
        p.add_logdet(1.0, h);
        p.add_psd("I - Q", f);
        (p, q)
    }

    /// maximize ⟨c, q⟩ − γ r + κ log r  s.t.  ‖q‖ ≤ 1 − r.
    fn cone_toy(c: [f64; 2], gamma: f64, kappa: f64) -> BarrierProblem {
        let mut layout = Layout::new();
        let q = layout.vector("q", 2);
        let r = layout.scalar("r");
        let mut p = BarrierProblem::new(layout.clone());
        p.linear[layout.elem(q, 0)] = c[0];
        p.linear[layout.elem(q, 1)] = c[1];
        p.linear[layout.at(r)] = -gamma;
        let mut h = AffineMatrix::zeros(1);
        h.add_var(0, 0, layout.at(r), 1.0);
        p.add_logdet(kappa, h);
        let mut f = AffineMatrix::zeros(3);
        for i in 0..3 {
            f.add_const(i, i, 1.0).add_var(i, i, layout.at(r), -1.0);
        }
        f.add_var(0, 1, layout.elem(q, 0), 1.0);
        f.add_var(0, 2, layout.elem(q, 1), 1.0);
        p.add_psd("cone", f);
        p
    }

    fn cone_objective(c: [f64; 2], gamma: f64, kappa: f64, q: [f64; 2], r: f64) -> f64 {
        c[0] * q[0] + c[1] * q[1] - gamma * r + kappa * r.ln()
    }

    #[test]
    fn symmetric_entry_indexing_is_a_bijection() {
        let mut layout = Layout::new();
        layout.scalar("a");
        let s = layout.symmetric("S", 4);
        let mut seen: Vec<usize> = Vec::new();
        for i in 0..4 {
            for j in i..4 {
                let k = layout.entry(s, i, j);
                assert_eq!(k, layout.entry(s, j, i));
                seen.push(k);
            }
        }
        seen.sort();
        assert_eq!(seen, (1..11).collect::<Vec<_>>());
        let m = Matrix::from_fn(4, 4, |i, j| (i + j) as f64 + (i * j) as f64);
        let mut x = Vector::zeros(layout.len());
        layout.set_symmetric(&mut x, s, &m);
        assert_eq!(layout.symmetric_value(&x, s), m);
    }

    #[test]
    fn logdet_under_identity_reaches_identity() {
        let (p, q) = logdet_under_identity();
        let mut x0 = Vector::zeros(p.layout.len());
        p.layout.set_symmetric(&mut x0, q, &(Matrix::identity(2, 2) * 0.5));
        let res = solve(&p, &x0).unwrap();
        assert_eq!(res.status, Status::Optimal);
        let qv = p.layout.symmetric_value(&res.x, q);
        assert!((qv - Matrix::identity(2, 2)).amax() < 1e-6);
        assert!(res.objective.abs() < 1e-6);
        assert!(res.kkt_residual <= KKT_TOLERANCE);
    }

    #[test]
    fn linear_over_unit_ball() {
        let mut layout = Layout::new();
        let q = layout.vector("q", 2);
        let mut p = BarrierProblem::new(layout.clone());
        p.linear = dvector![0.3, -0.4];
        let mut f = AffineMatrix::zeros(3);
        f.add_const(0, 0, 1.0).add_const(1, 1, 1.0).add_const(2, 2, 1.0);
        f.add_var(0, 1, layout.elem(q, 0), 1.0);
        f.add_var(0, 2, layout.elem(q, 1), 1.0);
        p.add_psd("ball", f);
        let res = solve(&p, &Vector::zeros(2)).unwrap();
        assert!((res.x - dvector![0.6, -0.8]).amax() < 1e-6);
    }

    #[test]
    fn cone_toy_matches_analytic_and_grid() {
        let (c, gamma, kappa) = ([0.3, 0.4], 0.2, 0.1);
        let p = cone_toy(c, gamma, kappa);
        let res = solve(&p, &dvector![0.0, 0.0, 0.5]).unwrap();
        assert_eq!(res.status, Status::Optimal, "{res:?}");
        // ‖c‖ = 0.5, so r* solves 0.5 + γ = κ / r.
        let r_star = kappa / (0.5 + gamma);
        assert!((res.x[2] - r_star).abs() < 1e-6);

        // Coarse-to-fine grid search over (q1, q2, r), feasible points only.
        let grid_best = {
            let mut center = [0.0, 0.0, 0.5];
            let mut half = [1.0, 1.0, 0.5];
            let mut best = f64::NEG_INFINITY;
            for step in [0.05, 0.01, 0.002, 0.001] {
                let mut arg = center;
                let count = |h: f64| (h / step).round() as i64;
                for i in -count(half[0])..=count(half[0]) {
                    for j in -count(half[1])..=count(half[1]) {
                        for k in -count(half[2])..=count(half[2]) {
                            let q = [center[0] + i as f64 * step, center[1] + j as f64 * step];
                            let r = center[2] + k as f64 * step;
                            if r <= 0.0 || (q[0] * q[0] + q[1] * q[1]).sqrt() > 1.0 - r {
                                continue;
                            }
                            let v = cone_objective(c, gamma, kappa, q, r);
                            if v > best {
                                best = v;
                                arg = [q[0], q[1], r];
                            }
                        }
                    }
                }
                center = arg;
                half = [step * 5.0; 3];
            }
            best
        };
        assert!(res.objective >= grid_best - 1e-9);
        assert!(res.objective - grid_best <= 1e-4, "{} vs {grid_best}", res.objective);
    }

    #[test]
    fn perturbations_never_improve() {
        let (c, gamma, kappa) = ([0.3, 0.4], 0.2, 0.1);
        let p = cone_toy(c, gamma, kappa);
        let res = solve(&p, &dvector![0.0, 0.0, 0.5]).unwrap();
        let mut r = rng(31);
        let mut tested = 0;
        while tested < 100 {
            let d = Vector::from_fn(3, |_, _| r.gen_range(-1.0..1.0)) * 1e-3;
            let cand = &res.x + d;
            if !p.is_strictly_feasible(&cand, 0.0) {
                continue;
            }
            tested += 1;
            assert!(p.objective(&cand).unwrap() <= res.objective + 1e-6);
        }
    }

    #[test]
    fn central_path_is_monotone() {
        let p = cone_toy([0.3, 0.4], 0.2, 0.1);
        let res = solve(&p, &dvector![0.1, -0.1, 0.3]).unwrap();
        assert!(res.stage_objectives.len() > 3);
        for w in res.stage_objectives.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{:?}", res.stage_objectives);
        }
    }

    #[test]
    fn scaling_objective_keeps_argmax() {
        let a = solve(&cone_toy([0.3, 0.4], 0.2, 0.1), &dvector![0.0, 0.0, 0.5]).unwrap();
        let b = solve(&cone_toy([3.0, 4.0], 2.0, 1.0), &dvector![0.0, 0.0, 0.5]).unwrap();
        assert!((a.x - b.x).amax() < 1e-5);
    }

    #[test]
    fn infeasible_start_is_reported() {
        let (p, q) = logdet_under_identity();
        let mut x0 = Vector::zeros(p.layout.len());
        p.layout.set_symmetric(&mut x0, q, &(Matrix::identity(2, 2) * 2.0));
        match solve(&p, &x0) {
            Err(Error::InfeasibleStart { constraint, .. }) => assert_eq!(constraint, "I - Q"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn restore_finds_interior_point() {
        let (p, q) = logdet_under_identity();
        let mut x0 = Vector::zeros(p.layout.len());
        p.layout.set_symmetric(&mut x0, q, &(Matrix::identity(2, 2) * 3.0));
        let x = feasibility_restore(&p, &x0).unwrap();
        assert!(p.is_strictly_feasible(&x, FEASIBILITY_MARGIN));
        assert!(solve(&p, &x).is_ok());
    }

    #[test]
    fn restore_names_violated_constraint() {
        // q ≥ 2 and ‖q‖ ≤ 1 cannot both hold.
        let mut layout = Layout::new();
        let q = layout.scalar("q");
        let mut p = BarrierProblem::new(layout.clone());
        p.linear[0] = 1.0;
        let mut f = AffineMatrix::zeros(2);
        f.add_const(0, 0, 1.0).add_const(1, 1, 1.0).add_var(0, 1, layout.at(q), 1.0);
        p.add_psd("unit ball", f);
        let mut g = AffineScalar::new(-2.0);
        g.add(layout.at(q), 1.0);
        p.add_scalar("q at least 2", g);
        match feasibility_restore(&p, &dvector![0.0]) {
            Err(Error::Infeasible { constraint, margin }) => {
                assert!(margin < 0.0);
                assert!(constraint == "q at least 2" || constraint == "unit ball");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
