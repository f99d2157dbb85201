//! Small dense helpers shared by the set-calculus and solver modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// `⟨l, M l⟩`, clamped at zero for PSD inputs carrying rounding noise.
pub fn quad_form(m: &Matrix, l: &Vector) -> f64 {
    l.dot(&(m * l)).max(0.0)
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues from
/// rounding are clipped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    symmetrize(&(v * Matrix::from_diagonal(&d) * v.transpose()))
}

pub fn is_positive_definite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

/// Largest absolute column sum.
pub fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn column_space(m: &Matrix, tol: f64) -> Matrix {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("svd requested u");
    let cols: Vec<Vector> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > tol)
        .map(|(i, _)| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        Matrix::zeros(m.nrows(), 0)
    } else {
        Matrix::from_columns(&cols)
    }
}

pub fn unit(v: &Vector) -> Option<Vector> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / n)
}

/// Composite Simpson weights for `panels` (even) sub-intervals of `[0, len]`.
pub fn simpson_weights(panels: usize, len: f64) -> Vec<f64> {
    debug_assert!(panels.is_multiple_of(2) && panels > 0);
    let h = len / panels as f64;
    (0..=panels)
        .map(|i| {
            let c = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let w = simpson_weights(16, 2.0);
        let h = 2.0 / 16.0;
        let s: f64 = w
            .iter()
            .enumerate()
            .map(|(i, wi)| {
                let x = i as f64 * h;
                wi * (x * x * x - x + 1.0)
            })
            .sum();
        assert!((s - (4.0 - 2.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).norm() < 1e-12);
    }

    #[test]
    fn column_space_of_rank_one() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let b = column_space(&m, 1e-12);
        assert_eq!(b.ncols(), 1);
        assert!((b[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }
}
