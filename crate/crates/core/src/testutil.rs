//! Seeded random generators used by unit tests.

use crate::linalg::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_psd(r: &mut impl Rng, n: usize, ridge: f64) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    &a * a.transpose() + Matrix::identity(n, n) * ridge
}

pub fn random_direction(r: &mut impl Rng, n: usize) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 && norm <= 1.0 {
            return v / norm;
        }
    }
}
