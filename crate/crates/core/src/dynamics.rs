//! Linear time-invariant models, the matrix exponential, and the two
//! linearized vehicle models (hover quadrotor, cruising fixed-wing).

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm1, symmetrize, Matrix, Vector};

/// `ẋ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
    labels: Vec<String>,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, labels: Vec<String>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(invalid("state matrix must be square"));
        }
        if b.nrows() != n {
            return Err(invalid(format!(
                "input matrix has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if labels.len() != n {
            return Err(invalid(format!(
                "{} state labels given for {n} states",
                labels.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("system matrices must be finite"));
        }
        Ok(Self { a, b, labels })
    }

    /// Builds a system with labels `x0, x1, ...`.
    pub fn unlabeled(a: Matrix, b: Matrix) -> Result<Self> {
        let labels = (0..a.nrows()).map(|i| format!("x{i}")).collect();
        Self::new(a, b, labels)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `Φ(t, s) = e^{A (t − s)}`.
    pub fn transition(&self, dt: f64) -> Matrix {
        expm(&self.a, dt).expect("state matrix is square")
    }

    /// Exact zero-order-hold discretization over a step of `dt`.
    pub fn discretize(&self, dt: f64) -> (Matrix, Matrix) {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut aug = Matrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&self.a);
        aug.view_mut((0, n), (n, m)).copy_from(&self.b);
        let e = expm(&aug, dt).expect("augmented matrix is square");
        (
            e.view((0, 0), (n, n)).into_owned(),
            e.view((0, n), (n, m)).into_owned(),
        )
    }
}

/// Diagonal Padé [6/6] coefficients.
const PADE6: [f64; 7] = [
    1.0,
    1.0 / 2.0,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

/// `e^{A t}` by scaling and squaring with a diagonal Padé [6/6] approximant.
///
/// The argument is scaled by `2^{-s}` until its 1-norm is at most 0.5.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(invalid("matrix exponential needs a square matrix"));
    }
    if !t.is_finite() {
        return Err(invalid("time must be finite"));
    }
    let x = a * t;
    let nrm = norm1(&x);
    if !nrm.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    let s = if nrm > 0.5 {
        (nrm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = x * 2f64.powi(-s);

    let id = Matrix::identity(n, n);
    let mut num = id.clone() * PADE6[0];
    let mut den = id.clone() * PADE6[0];
    let mut pow = id;
    for (k, c) in PADE6.iter().enumerate().skip(1) {
        pow = &pow * &x;
        num += &pow * *c;
        if k % 2 == 0 {
            den += &pow * *c;
        } else {
            den -= &pow * *c;
        }
    }
    let mut r = den
        .lu()
        .solve(&num)
        .ok_or_else(|| Error::Numerical("Padé denominator is singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// kg·m², body frame
    pub inertia: Matrix,
    /// m/s²
    pub gravity: f64,
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(invalid("quadrotor mass must be positive"));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(invalid("gravity must be positive"));
        }
        let j = &self.inertia;
        if j.nrows() != 3 || j.ncols() != 3 {
            return Err(invalid("inertia must be 3x3"));
        }
        if (j - j.transpose()).amax() > 1e-12 * j.amax().max(1.0) {
            return Err(invalid("inertia must be symmetric"));
        }
        if j.clone().cholesky().is_none() {
            return Err(invalid("inertia must be positive definite"));
        }
        Ok(())
    }
}

pub const QUADROTOR_LABELS: [&str; 10] = ["x", "y", "z", "vx", "vy", "vz", "phi", "theta", "p", "q"];

/// Hover linearization with yaw pinned at zero.
///
/// States `(x, y, z, vx, vy, vz, φ, θ, p, q)`; inputs `(F − m g, u₁, u₂)`.
/// The torque block is the leading 2x2 of `J⁻¹`.
pub fn quadrotor_linearized(p: &QuadrotorParams) -> Result<LtiSystem> {
    p.validate()?;
    let g = p.gravity;
    let mut a = Matrix::zeros(10, 10);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
    }
    a[(3, 7)] = g;
    a[(4, 6)] = -g;
    a[(6, 8)] = 1.0;
    a[(7, 9)] = 1.0;

    let j_inv = symmetrize(&p.inertia)
        .try_inverse()
        .ok_or_else(|| invalid("inertia is singular"))?;
    let mut b = Matrix::zeros(10, 3);
    b[(5, 0)] = 1.0 / p.mass;
    for r in 0..2 {
        for c in 0..2 {
            b[(8 + r, 1 + c)] = j_inv[(r, c)];
        }
    }
    LtiSystem::new(a, b, QUADROTOR_LABELS.iter().map(|s| s.to_string()).collect())
}

/// Longitudinal trim and stability/control derivatives of a fixed-wing
/// aircraft. Angles in radians, speeds in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedWingParams {
    pub theta_trim: f64,
    pub u_trim: f64,
    pub w_trim: f64,
    pub x_u: f64,
    pub x_w: f64,
    pub x_q: f64,
    pub z_u: f64,
    pub z_w: f64,
    pub z_q: f64,
    pub m_u: f64,
    pub m_w: f64,
    pub m_q: f64,
    pub x_de: f64,
    pub x_dt: f64,
    pub z_de: f64,
    pub m_de: f64,
    pub gravity: f64,
}

impl FixedWingParams {
    fn values(&self) -> [f64; 17] {
        [
            self.theta_trim,
            self.u_trim,
            self.w_trim,
            self.x_u,
            self.x_w,
            self.x_q,
            self.z_u,
            self.z_w,
            self.z_q,
            self.m_u,
            self.m_w,
            self.m_q,
            self.x_de,
            self.x_dt,
            self.z_de,
            self.m_de,
            self.gravity,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(invalid("fixed-wing parameters must be finite"));
        }
        if self.u_trim <= 0.0 {
            return Err(invalid("trim forward speed must be positive"));
        }
        if self.gravity <= 0.0 {
            return Err(invalid("gravity must be positive"));
        }
        Ok(())
    }

    /// Ground speed along the flight path at trim, `u* cos θ* + w* sin θ*`.
    pub fn ground_speed(&self) -> f64 {
        self.u_trim * self.theta_trim.cos() + self.w_trim * self.theta_trim.sin()
    }
}

pub const FIXEDWING_LABELS: [&str; 6] = ["x", "z", "u", "w", "q", "theta"];

/// Longitudinal linearization about leveled cruise.
///
/// States `(x, z, u, w, q, θ)` with `z` up; inputs `(δe, δt)`.
pub fn fixedwing_linearized(p: &FixedWingParams) -> Result<LtiSystem> {
    p.validate()?;
    let (st, ct) = p.theta_trim.sin_cos();
    let g = p.gravity;
    #[rustfmt::skip]
    let a = Matrix::from_row_slice(6, 6, &[
        0.0, 0.0, 1.0,   0.0,   0.0,   0.0,
        0.0, 0.0, st,    -ct,   0.0,   p.u_trim * ct + p.w_trim * st,
        0.0, 0.0, p.x_u, p.x_w, p.x_q, -g * ct,
        0.0, 0.0, p.z_u, p.z_w, p.z_q, -g * st,
        0.0, 0.0, p.m_u, p.m_w, p.m_q, 0.0,
        0.0, 0.0, 0.0,   0.0,   1.0,   0.0,
    ]);
    #[rustfmt::skip]
    let b = Matrix::from_row_slice(6, 2, &[
        0.0,    0.0,
        0.0,    0.0,
        p.x_de, p.x_dt,
        p.z_de, 0.0,
        p.m_de, 0.0,
        0.0,    0.0,
    ]);
    LtiSystem::new(a, b, FIXEDWING_LABELS.iter().map(|s| s.to_string()).collect())
}

/// Right-hand side of the longitudinal model along a trimmed flight path.
///
/// At trim the aerodynamic forces and moments balance, so only the
/// kinematic rows move: `ẋ = u cos θ + w sin θ`, `ż = u sin θ − w cos θ`,
/// `θ̇ = q`.
pub fn fixedwing_trim_rhs(_t: f64, x: &Vector, _u: &Vector) -> Vector {
    let (u, w, q, th) = (x[2], x[3], x[4], x[5]);
    let (s, c) = th.sin_cos();
    Vector::from_vec(vec![u * c + w * s, u * s - w * c, 0.0, 0.0, 0.0, q])
}

/// Uniformly sampled state trajectory with linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory {
    t0: f64,
    dt: f64,
    states: Vec<Vector>,
}

impl NominalTrajectory {
    pub fn new(times: &[f64], states: Vec<Vector>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(invalid("trajectory needs matching, nonempty times and states"));
        }
        if states.iter().any(|s| s.len() != states[0].len()) {
            return Err(invalid("trajectory states differ in dimension"));
        }
        if times.len() == 1 {
            return Ok(Self {
                t0: times[0],
                dt: 0.0,
                states,
            });
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(invalid("trajectory times must increase"));
        }
        for (i, t) in times.iter().enumerate() {
            if (t - (times[0] + i as f64 * dt)).abs() > 1e-12 * (1.0 + t.abs()) {
                return Err(invalid("trajectory times must be uniformly spaced"));
            }
        }
        Ok(Self {
            t0: times[0],
            dt,
            states,
        })
    }

    /// A trajectory that stays at `x` over `[0, horizon]`.
    pub fn constant(x: Vector, horizon: f64) -> Self {
        Self {
            t0: 0.0,
            dt: horizon.max(f64::MIN_POSITIVE),
            states: vec![x.clone(), x],
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len())
            .map(|i| self.t0 + i as f64 * self.dt)
            .collect()
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.t0 + (self.states.len() - 1) as f64 * self.dt
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn state_at(&self, t: f64) -> Result<Vector> {
        let slack = 1e-9 * (1.0 + t.abs());
        if t < self.t0 - slack || t > self.end() + slack {
            return Err(invalid(format!(
                "t = {t} outside trajectory span [{}, {}]",
                self.t0,
                self.end()
            )));
        }
        if self.states.len() == 1 {
            return Ok(self.states[0].clone());
        }
        let pos = ((t - self.t0) / self.dt).clamp(0.0, (self.states.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.states.len() - 2);
        let frac = pos - i as f64;
        Ok(&self.states[i] * (1.0 - frac) + &self.states[i + 1] * frac)
    }
}

/// Fixed-step classical Runge-Kutta integration of `ẋ = f(t, x, u*)`.
///
/// The grid is `0, dt, 2dt, …` up to the first point at or beyond `horizon`.
pub fn propagate_nominal<F>(
    f: F,
    x0: &Vector,
    u_star: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<NominalTrajectory>
where
    F: Fn(f64, &Vector, &Vector) -> Vector,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("integration step must be positive"));
    }
    if !(horizon >= dt) {
        return Err(invalid("horizon must be at least one step"));
    }
    let ratio = horizon / dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    states.push(x.clone());
    for i in 0..steps {
        let t = i as f64 * dt;
        let k1 = f(t, &x, u_star);
        let k2 = f(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)), u_star);
        let k3 = f(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)), u_star);
        let k4 = f(t + dt, &(&x + &k3 * dt), u_star);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: (i + 1) as f64 * dt,
            });
        }
        states.push(x.clone());
    }
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    NominalTrajectory::new(&times, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_psd, rng};
    use nalgebra::{dmatrix, dvector, SymmetricEigen};

    fn quad() -> LtiSystem {
        quadrotor_linearized(&QuadrotorParams {
            mass: 1.0,
            inertia: Matrix::identity(3, 3),
            gravity: 9.81,
        })
        .unwrap()
    }

    fn cruise() -> FixedWingParams {
        FixedWingParams {
            theta_trim: 0.0,
            u_trim: 16.0,
            w_trim: 0.0,
            x_u: -0.1,
            x_w: 0.1,
            x_q: 0.0,
            z_u: -0.8,
            z_w: -4.0,
            z_q: 16.0,
            m_u: 0.0,
            m_w: -1.5,
            m_q: -3.0,
            x_de: 0.0,
            x_dt: 5.0,
            z_de: -2.0,
            m_de: -20.0,
            gravity: 9.81,
        }
    }

    #[test]
    fn expm_of_zero_is_identity() {
        assert_eq!(expm(&Matrix::zeros(4, 4), 2.0).unwrap(), Matrix::identity(4, 4));
    }

    #[test]
    fn expm_nilpotent() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let e = expm(&a, 3.0).unwrap();
        assert!((e - dmatrix![1.0, 3.0; 0.0, 1.0]).amax() < 1e-14);
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(expm(&Matrix::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn expm_matches_spectral_oracle() {
        let mut r = rng(21);
        for trial in 0..5 {
            let a = (random_psd(&mut r, 5, 0.0) - Matrix::identity(5, 5) * 1.5) * 0.7;
            let t = 0.3 + trial as f64;
            let eig = SymmetricEigen::new(a.clone());
            let d = eig.eigenvalues.map(|l| (l * t).exp());
            let oracle = &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose();
            let e = expm(&a, t).unwrap();
            assert!(
                (&e - &oracle).amax() <= 1e-10 * oracle.amax().max(1.0),
                "trial {trial}: {}",
                (&e - &oracle).amax()
            );
        }
    }

    #[test]
    fn expm_semigroup_and_inverse() {
        let sys = quad();
        let (t1, t2) = (1.3, 2.4);
        let lhs = expm(sys.a(), t1 + t2).unwrap();
        let rhs = expm(sys.a(), t1).unwrap() * expm(sys.a(), t2).unwrap();
        assert!((&lhs - &rhs).amax() <= 1e-9 * lhs.amax());
        let fw = fixedwing_linearized(&cruise()).unwrap();
        let prod = expm(fw.a(), 3.0).unwrap() * expm(fw.a(), -3.0).unwrap();
        let scale = expm(fw.a(), 3.0).unwrap().amax() * expm(fw.a(), -3.0).unwrap().amax();
        assert!((prod - Matrix::identity(6, 6)).amax() < 1e-13 * scale, "scale {scale}");
    }

    #[test]
    fn quadrotor_matrix_entries() {
        let sys = quad();
        assert_eq!(sys.a()[(3, 7)], 9.81);
        assert_eq!(sys.a()[(4, 6)], -9.81);
        assert_eq!(sys.b()[(5, 0)], 1.0);
        assert_eq!(sys.state_dim(), 10);
        assert_eq!(sys.input_dim(), 3);
        for i in 0..3 {
            for j in 0..10 {
                let expected = if j == i + 3 { 1.0 } else { 0.0 };
                assert_eq!(sys.a()[(i, j)], expected);
            }
        }
    }

    #[test]
    fn quadrotor_torque_block_uses_leading_inverse_inertia() {
        let j = dmatrix![2.0, 0.5, 0.0; 0.5, 4.0, 0.0; 0.0, 0.0, 8.0];
        let sys = quadrotor_linearized(&QuadrotorParams {
            mass: 2.0,
            inertia: j.clone(),
            gravity: 9.81,
        })
        .unwrap();
        let ji = j.try_inverse().unwrap();
        assert!((sys.b().view((8, 1), (2, 2)) - ji.view((0, 0), (2, 2))).amax() < 1e-15);
        assert_eq!(sys.b()[(5, 0)], 0.5);
    }

    #[test]
    fn quadrotor_chain_is_nilpotent() {
        let a = quad().a().clone();
        let a4 = &a * &a * &a * &a;
        assert!(a4.amax() == 0.0);
        let a5 = &a4 * &a;
        for i in 0..3 {
            let mut e = Vector::zeros(10);
            e[i] = 1.0;
            assert_eq!((&a5 * e).amax(), 0.0);
        }
    }

    #[test]
    fn quadrotor_params_validated() {
        let bad = QuadrotorParams {
            mass: 0.0,
            inertia: Matrix::identity(3, 3),
            gravity: 9.81,
        };
        assert!(quadrotor_linearized(&bad).is_err());
        let bad = QuadrotorParams {
            mass: 1.0,
            inertia: dmatrix![1.0, 2.0, 0.0; 2.0, 1.0, 0.0; 0.0, 0.0, 1.0],
            gravity: 9.81,
        };
        assert!(quadrotor_linearized(&bad).is_err());
    }

    #[test]
    fn thrust_impulse_gives_double_integrator() {
        // Constant unit thrust deviation for time t moves z by t²/(2m).
        let m = 1.7;
        let sys = quadrotor_linearized(&QuadrotorParams {
            mass: m,
            inertia: Matrix::identity(3, 3),
            gravity: 9.81,
        })
        .unwrap();
        for t in [0.01, 0.1, 0.5] {
            let (_, gamma) = sys.discretize(t);
            assert!((gamma[(2, 0)] - t * t / (2.0 * m)).abs() < 1e-14);
        }
    }

    #[test]
    fn fixedwing_level_row() {
        let sys = fixedwing_linearized(&cruise()).unwrap();
        let row: Vec<f64> = sys.a().row(1).iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.0, 0.0, -1.0, 0.0, 16.0]);
        assert_eq!(sys.b().column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 5.0, 0.0, 0.0, 0.0]);
        assert!(sys.a().column(0).iter().all(|v| *v == 0.0));
        assert!(sys.a().column(1).iter().all(|v| *v == 0.0));
        assert_eq!(sys.a()[(0, 2)], 1.0);
        assert_eq!(sys.a()[(5, 4)], 1.0);
    }

    #[test]
    fn fixedwing_climbing_trim_entries() {
        let mut p = cruise();
        p.theta_trim = 0.1;
        p.w_trim = 1.5;
        let sys = fixedwing_linearized(&p).unwrap();
        assert!((sys.a()[(1, 2)] - 0.1f64.sin()).abs() < 1e-15);
        assert!((sys.a()[(1, 3)] + 0.1f64.cos()).abs() < 1e-15);
        assert!((sys.a()[(1, 5)] - (16.0 * 0.1f64.cos() + 1.5 * 0.1f64.sin())).abs() < 1e-13);
        assert!((sys.a()[(3, 5)] + 9.81 * 0.1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn fixedwing_pure_kinematics() {
        let mut p = cruise();
        for v in [
            &mut p.x_u, &mut p.x_w, &mut p.x_q, &mut p.z_u, &mut p.z_w, &mut p.z_q, &mut p.m_u,
            &mut p.m_w, &mut p.m_q,
        ] {
            *v = 0.0;
        }
        p.gravity = 9.81;
        let sys = fixedwing_linearized(&p).unwrap();
        // A pitch deviation holds and climbs at u*·θ.
        let t = 2.0;
        let x = expm(sys.a(), t).unwrap() * dvector![0.0, 0.0, 0.0, 0.0, 0.0, 0.01];
        assert!((x[1] - 16.0 * 0.01 * t).abs() < 1e-12);
        assert!((x[5] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn fixedwing_rejects_nonpositive_speed() {
        let mut p = cruise();
        p.u_trim = -1.0;
        assert!(fixedwing_linearized(&p).is_err());
    }

    #[test]
    fn propagate_constant_and_cruise() {
        let zero = |_t: f64, x: &Vector, _u: &Vector| Vector::zeros(x.len());
        let tr = propagate_nominal(zero, &dvector![1.0, 2.0], &Vector::zeros(0), 1.0, 0.1).unwrap();
        assert_eq!(tr.states().len(), 11);
        assert!(tr.states().iter().all(|s| *s == dvector![1.0, 2.0]));

        let x0 = dvector![5.0, 10.0, 16.0, 0.0, 0.0, 0.0];
        let tr = propagate_nominal(fixedwing_trim_rhs, &x0, &Vector::zeros(2), 10.0, 0.1).unwrap();
        let end = tr.state_at(10.0).unwrap();
        assert!((end[0] - (5.0 + 160.0)).abs() < 1e-10);
        assert!((end[1] - 10.0).abs() < 1e-12);
        let mid = tr.state_at(3.33).unwrap();
        assert!((mid[0] - (5.0 + 16.0 * 3.33)).abs() < 1e-10);
    }

    #[test]
    fn propagate_matches_transition_oracle() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let f = |_t: f64, x: &Vector, _u: &Vector| &a * x;
        let x0 = dvector![0.5, -1.25];
        let tr = propagate_nominal(f, &x0, &Vector::zeros(0), 4.0, 0.05).unwrap();
        for (t, x) in tr.times().iter().zip(tr.states()) {
            let exact = expm(&a, *t).unwrap() * &x0;
            assert!((x - exact).amax() < 1e-10);
        }
    }

    #[test]
    fn propagate_superposition() {
        let sys = fixedwing_linearized(&cruise()).unwrap();
        let a = sys.a().clone();
        let f = |_t: f64, x: &Vector, _u: &Vector| &a * x;
        let x1 = dvector![0.0, 0.0, 1.0, 0.0, 0.1, 0.0];
        let x2 = dvector![0.0, 1.0, 0.0, -0.5, 0.0, 0.02];
        let u = Vector::zeros(0);
        let t1 = propagate_nominal(f, &x1, &u, 3.0, 0.01).unwrap();
        let t2 = propagate_nominal(f, &x2, &u, 3.0, 0.01).unwrap();
        let t12 = propagate_nominal(f, &(&x1 * 2.0 + &x2), &u, 3.0, 0.01).unwrap();
        for i in 0..t12.states().len() {
            let sup = &t1.states()[i] * 2.0 + &t2.states()[i];
            assert!((&t12.states()[i] - sup).amax() < 1e-9);
        }
    }

    #[test]
    fn propagate_reports_divergence_time() {
        let f = |_t: f64, x: &Vector, _u: &Vector| x.map(|v| v * v * 1e3);
        let err = propagate_nominal(f, &dvector![1.0], &Vector::zeros(0), 10.0, 0.1).unwrap_err();
        match err {
            Error::Divergence { time } => assert!(time > 0.0 && time <= 10.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(propagate_nominal(f, &dvector![1.0], &Vector::zeros(0), 0.05, 0.1).is_err());
    }

    #[test]
    fn trajectory_validation_and_interpolation() {
        assert!(NominalTrajectory::new(&[0.0, 1.0, 3.0], vec![dvector![0.0]; 3]).is_err());
        assert!(NominalTrajectory::new(&[0.0, 0.0], vec![dvector![0.0]; 2]).is_err());
        let tr = NominalTrajectory::new(&[0.0, 1.0], vec![dvector![0.0], dvector![2.0]]).unwrap();
        assert_eq!(tr.state_at(0.25).unwrap(), dvector![0.5]);
        assert!(tr.state_at(1.5).is_err());
    }

    #[test]
    fn discretization_matches_expm_blocks() {
        let sys = fixedwing_linearized(&cruise()).unwrap();
        let (phi, _) = sys.discretize(0.2);
        assert!((phi - expm(sys.a(), 0.2).unwrap()).amax() < 1e-13);
    }
}
