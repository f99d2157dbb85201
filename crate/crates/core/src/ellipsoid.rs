//! Ellipsoid calculus in support-function form.
//!
//! An ellipsoid `E(c, M)` is stored as its center and a symmetric PSD shape
//! matrix. Degenerate shapes (including points) are allowed: nothing here
//! inverts `M` except the containment test, which needs a nonsingular outer
//! set.

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    is_positive_definite, max_eigenvalue, min_eigenvalue, psd_sqrt, quad_form, symmetrize, Matrix,
    Vector,
};

/// Largest negative eigenvalue tolerated in a shape matrix.
pub const SHAPE_EIG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: Vector,
    shape: Matrix,
}

impl Ellipsoid {
    pub fn new(center: Vector, shape: Matrix) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(invalid(format!(
                "shape is {}x{} but center has dimension {n}",
                shape.nrows(),
                shape.ncols()
            )));
        }
        if center.iter().chain(shape.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("ellipsoid has non-finite entries"));
        }
        let shape = symmetrize(&shape);
        let lo = min_eigenvalue(&shape);
        if lo < -SHAPE_EIG_TOL {
            return Err(invalid(format!(
                "shape matrix has negative eigenvalue {lo:e}"
            )));
        }
        Ok(Self { center, shape })
    }

    pub fn point(center: Vector) -> Self {
        let n = center.len();
        Self {
            center,
            shape: Matrix::zeros(n, n),
        }
    }

    pub fn ball(center: Vector, radius: f64) -> Self {
        let n = center.len();
        Self {
            center,
            shape: Matrix::identity(n, n) * (radius * radius),
        }
    }

    /// Axis-aligned ellipsoid with the given semi-axis lengths.
    pub fn from_semi_axes(center: Vector, semi_axes: &[f64]) -> Result<Self> {
        let d = Vector::from_iterator(semi_axes.len(), semi_axes.iter().map(|a| a * a));
        Self::new(center, Matrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn shape(&self) -> &Matrix {
        &self.shape
    }

    /// `ρ(l | E)` together with a maximizer.
    pub fn support(&self, l: &Vector) -> Result<(f64, Vector)> {
        self.check_dim(l.len())?;
        if l.iter().all(|v| *v == 0.0) {
            return Err(invalid("support direction must be nonzero"));
        }
        let ml = &self.shape * l;
        let form = l.dot(&ml).max(0.0);
        let root = form.sqrt();
        let point = if root > 0.0 {
            &self.center + ml / root
        } else {
            self.center.clone()
        };
        Ok((l.dot(&self.center) + root, point))
    }

    /// Support value only; accepts `l = 0` (returns 0).
    pub fn support_value(&self, l: &Vector) -> f64 {
        l.dot(&self.center) + quad_form(&self.shape, l).sqrt()
    }

    /// Image under `x ↦ T x + b`.
    pub fn affine_map(&self, t: &Matrix, b: &Vector) -> Result<Ellipsoid> {
        if t.ncols() != self.dim() {
            return Err(invalid(format!(
                "map has {} columns, ellipsoid dimension is {}",
                t.ncols(),
                self.dim()
            )));
        }
        if b.len() != t.nrows() {
            return Err(invalid("offset length must match map rows"));
        }
        Ok(Ellipsoid {
            center: t * &self.center + b,
            shape: symmetrize(&(t * &self.shape * t.transpose())),
        })
    }

    /// Maps a point of the unit sphere onto the boundary: `c + M^{1/2} w`.
    pub fn boundary_point(&self, w: &Vector) -> Vector {
        &self.center + psd_sqrt(&self.shape) * w
    }

    /// `⟨x − c, M⁻¹(x − c)⟩`; infinite when the shape is singular and `x`
    /// leaves its range.
    pub fn normalized_distance(&self, x: &Vector) -> f64 {
        let d = x - &self.center;
        match self.shape.clone().cholesky() {
            Some(ch) => d.dot(&ch.solve(&d)),
            None => {
                let pinv = self
                    .shape
                    .clone()
                    .pseudo_inverse(1e-14)
                    .unwrap_or_else(|_| Matrix::zeros(self.dim(), self.dim()));
                let proj = &self.shape * &pinv * &d;
                if (&proj - &d).norm() > 1e-9 * (1.0 + d.norm()) {
                    f64::INFINITY
                } else {
                    d.dot(&(pinv * &d))
                }
            }
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(invalid(format!(
                "dimension {n} does not match ellipsoid dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// External ellipsoidal approximation of `E1 ⊕ E2`, tight along `l`.
///
/// Uses `(1 + 1/p) M₁ + (1 + p) M₂` with `p = (⟨l,M₁l⟩ / ⟨l,M₂l⟩)^{1/2}`. A
/// summand with an all-zero shape is a translation. When only one quadratic
/// form vanishes along `l`, `p` is clamped to `[1e-12, 1e12]`, which keeps the
/// result external and tight to relative 1e-12.
pub fn minkowski_sum_external(e1: &Ellipsoid, e2: &Ellipsoid, l: &Vector) -> Result<Ellipsoid> {
    if e1.dim() != e2.dim() {
        return Err(invalid("Minkowski summands have different dimensions"));
    }
    e1.check_dim(l.len())?;
    let center = e1.center() + e2.center();
    if e2.shape.iter().all(|v| *v == 0.0) {
        return Ok(Ellipsoid {
            center,
            shape: e1.shape.clone(),
        });
    }
    if e1.shape.iter().all(|v| *v == 0.0) {
        return Ok(Ellipsoid {
            center,
            shape: e2.shape.clone(),
        });
    }
    let a = quad_form(&e1.shape, l);
    let b = quad_form(&e2.shape, l);
    if a == 0.0 && b == 0.0 {
        return Err(Error::DegenerateDirection(
            "both shape matrices vanish along the tightness direction".into(),
        ));
    }
    let p = if b == 0.0 {
        1e12
    } else {
        (a / b).sqrt().clamp(1e-12, 1e12)
    };
    let shape = &e1.shape * (1.0 + 1.0 / p) + &e2.shape * (1.0 + p);
    Ok(Ellipsoid {
        center,
        shape: symmetrize(&shape),
    })
}

/// The containment block for `E(q, QᵀQ) ⊆ E(c, M)` at multiplier `λ`:
///
/// ```text
/// [ 1-λ   0    (q-c)ᵀ ]
/// [ 0     λI   Q      ]
/// [ q-c   Q    M      ]
/// ```
pub fn containment_block(c: &Vector, m: &Matrix, q: &Vector, qf: &Matrix, lambda: f64) -> Matrix {
    let n = c.len();
    let mut blk = Matrix::zeros(1 + 2 * n, 1 + 2 * n);
    blk[(0, 0)] = 1.0 - lambda;
    let d = q - c;
    for i in 0..n {
        blk[(0, 1 + n + i)] = d[i];
        blk[(1 + n + i, 0)] = d[i];
        blk[(1 + i, 1 + i)] = lambda;
    }
    blk.view_mut((1, 1 + n), (n, n)).copy_from(qf);
    blk.view_mut((1 + n, 1), (n, n)).copy_from(&qf.transpose());
    blk.view_mut((1 + n, 1 + n), (n, n)).copy_from(m);
    blk
}

/// Result of the containment test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Containment {
    pub ok: bool,
    /// Multiplier maximizing the block's minimum eigenvalue.
    pub lambda: f64,
    /// That maximal minimum eigenvalue.
    pub min_eig: f64,
}

/// Decides `inner ⊆ outer` through the containment block, searching the
/// multiplier over `[1e-9, 1]`.
///
/// The block's minimum eigenvalue is concave in `λ`, so a golden-section
/// search finds its maximum; containment holds iff that maximum is
/// nonnegative (up to a rounding allowance scaled by the outer shape).
pub fn contains(outer: &Ellipsoid, inner: &Ellipsoid) -> Result<Containment> {
    if outer.dim() != inner.dim() {
        return Err(invalid("containment between different dimensions"));
    }
    if !is_positive_definite(&outer.shape) {
        return Err(invalid("outer ellipsoid must have a nonsingular shape"));
    }
    let qf = psd_sqrt(&inner.shape);
    let eval = |lam: f64| {
        min_eigenvalue(&containment_block(
            &outer.center,
            &outer.shape,
            &inner.center,
            &qf,
            lam,
        ))
    };
    let (lambda, min_eig) = golden_max(eval, 1e-9, 1.0, 1e-9);
    let tol = 1e-9 * max_eigenvalue(&outer.shape).max(1.0);
    Ok(Containment {
        ok: min_eig >= -tol,
        lambda,
        min_eig,
    })
}

/// Golden-section maximization of a concave function on `[lo, hi]`, also
/// comparing against the endpoints.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (a + b);
    [(lo, f(lo)), (hi, f(hi)), (mid, f(mid)), (x1, f1), (x2, f2)]
        .into_iter()
        .fold((mid, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vector,
    pub offset: f64,
}

/// Intersection of halfspaces `{x : ⟨normal, x⟩ ≤ offset}` with unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HalfspaceSet {
    halfspaces: Vec<Halfspace>,
}

impl HalfspaceSet {
    /// Normalizes each direction and scales its offset accordingly.
    pub fn new(pairs: impl IntoIterator<Item = (Vector, f64)>) -> Result<Self> {
        let mut halfspaces = Vec::new();
        for (dir, off) in pairs {
            let n = dir.norm();
            if n == 0.0 || !n.is_finite() || !off.is_finite() {
                return Err(invalid("halfspace needs a finite nonzero normal"));
            }
            halfspaces.push(Halfspace {
                normal: dir / n,
                offset: off / n,
            });
        }
        Ok(Self { halfspaces })
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn len(&self) -> usize {
        self.halfspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halfspaces.is_empty()
    }

    /// Largest violation `⟨n, x⟩ − offset` over all halfspaces.
    pub fn max_violation(&self, x: &Vector) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.normal.dot(x) - h.offset)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains_point(&self, x: &Vector, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }
}
