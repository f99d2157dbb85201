//! Trajectory sampling used as an independent check of the reachable sets.
//!
//! Each sample starts on the boundary of the initial set and applies a
//! piecewise-constant control (and disturbance) drawn from the boundary of
//! its ellipsoid, held over each grid interval. Propagation uses the exact
//! zero-order-hold discretization, so samples carry no integration error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::LtiSystem;
use crate::ellipsoid::{Ellipsoid, HalfspaceSet};
use crate::error::{invalid, Result};
use crate::linalg::{psd_sqrt, Matrix, Vector};
use crate::reachability::{PositionMap, ReachSpec};

/// Sampled states, `points[i][j]` is trajectory `j` at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub times: Vec<f64>,
    pub points: Vec<Vec<Vector>>,
}

impl Samples {
    pub fn count(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Positions through `map`.
    pub fn mapped(&self, map: &PositionMap) -> Samples {
        Samples {
            times: self.times.clone(),
            points: self
                .points
                .iter()
                .map(|row| row.iter().map(|x| map.apply(x)).collect())
                .collect(),
        }
    }
}

fn boundary_sample(rng: &mut ChaCha8Rng, center: &Vector, root: &Matrix) -> Vector {
    let n = center.len();
    loop {
        let w = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let nw = w.norm();
        if nw > 1e-3 && nw <= 1.0 {
            return center + root * (w / nw);
        }
    }
}

/// `count` trajectories of `spec` recorded on `times` (increasing, first
/// time 0). Deterministic for a given seed; trajectory `j` uses its own
/// stream so the result does not depend on thread scheduling.
pub fn sample_trajectories(spec: &ReachSpec, times: &[f64], count: usize, seed: u64) -> Result<Samples> {
    if times.is_empty() || times[0].abs() > 1e-12 {
        return Err(invalid("sample times must start at 0"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("sample times must increase"));
    }
    if *times.last().expect("nonempty") > spec.horizon() + 1e-9 {
        return Err(invalid("sample times exceed the horizon"));
    }
    let sys = spec.system();
    let n = sys.state_dim();
    let m = sys.input_dim();
    let dist = spec.disturbance();
    let mut inputs = Matrix::zeros(n, m + if dist.is_some() { n } else { 0 });
    inputs.view_mut((0, 0), (n, m)).copy_from(sys.b());
    if dist.is_some() {
        inputs.view_mut((0, m), (n, n)).copy_from(&Matrix::identity(n, n));
    }
    let aug = LtiSystem::unlabeled(sys.a().clone(), inputs)?;
    let steps: Vec<(Matrix, Matrix)> = times.windows(2).map(|w| aug.discretize(w[1] - w[0])).collect();

    let x0 = spec.x0();
    let u = spec.control();
    let (x0_root, u_root) = (psd_sqrt(x0.shape()), psd_sqrt(u.shape()));
    let v_root = dist.map(|v| psd_sqrt(v.shape()));
    let offsets: Vec<Option<Vector>> = match spec.center_offset() {
        Some(tr) => times.iter().map(|t| tr.state_at(*t).map(Some)).collect::<Result<_>>()?,
        None => vec![None; times.len()],
    };

    let trajectories: Vec<Vec<Vector>> = (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut x = boundary_sample(&mut rng, x0.center(), &x0_root);
            let mut out = Vec::with_capacity(times.len());
            let record = |x: &Vector, i: usize| match &offsets[i] {
                Some(o) => x + o,
                None => x.clone(),
            };
            out.push(record(&x, 0));
            for (i, (phi, gamma)) in steps.iter().enumerate() {
                let mut w = boundary_sample(&mut rng, u.center(), &u_root);
                if let (Some(v), Some(vr)) = (dist, &v_root) {
                    let dv = boundary_sample(&mut rng, v.center(), vr);
                    w = Vector::from_iterator(m + n, w.iter().chain(dv.iter()).copied());
                }
                x = phi * &x + gamma * w;
                out.push(record(&x, i + 1));
            }
            out
        })
        .collect();

    let points = (0..times.len())
        .map(|i| trajectories.iter().map(|tr| tr[i].clone()).collect())
        .collect();
    Ok(Samples {
        times: times.to_vec(),
        points,
    })
}

/// Largest violation of any halfspace over all samples at each time.
pub fn worst_halfspace_violation(samples: &Samples, polys: &[HalfspaceSet]) -> Result<f64> {
    if polys.len() != samples.times.len() {
        return Err(invalid("need one halfspace set per sample time"));
    }
    Ok(samples
        .points
        .par_iter()
        .zip(polys)
        .map(|(row, poly)| row.iter().map(|x| poly.max_violation(x)).fold(f64::NEG_INFINITY, f64::max))
        .reduce(|| f64::NEG_INFINITY, f64::max))
}

/// Closest distance between any sample of `a` and any sample of `b` at a
/// common time, with that time.
pub fn min_pairwise_distance(a: &Samples, b: &Samples) -> Result<(f64, f64)> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(invalid("sample sets use different times"));
    }
    Ok(a.points
        .par_iter()
        .zip(&b.points)
        .zip(&a.times)
        .map(|((ra, rb), t)| {
            let d = ra
                .iter()
                .flat_map(|p| rb.iter().map(move |q| (p - q).norm_squared()))
                .fold(f64::INFINITY, f64::min);
            (d.sqrt(), *t)
        })
        .reduce(|| (f64::INFINITY, f64::NAN), |x, y| if y.0 < x.0 { y } else { x }))
}

/// Per-time lower bound on the closest distance between samples of `a`
/// and `b`. With a unit hint `l` pointing from B to A the bound
/// `min ⟨l, p⟩ − max ⟨l, q⟩` is used when it already reaches `threshold`;
/// otherwise the exact pairwise minimum is computed.
pub fn pairwise_clearance(a: &Samples, b: &Samples, hints: &[Vector], threshold: f64) -> Result<Vec<f64>> {
    if a.times.len() != b.times.len() || hints.len() != a.times.len() {
        return Err(invalid("sample sets and hints must share the time grid"));
    }
    Ok(a.points
        .par_iter()
        .zip(&b.points)
        .zip(hints)
        .map(|((ra, rb), l)| {
            let lo = ra.iter().map(|p| l.dot(p)).fold(f64::INFINITY, f64::min);
            let hi = rb.iter().map(|q| l.dot(q)).fold(f64::NEG_INFINITY, f64::max);
            let bound = lo - hi;
            if bound >= threshold {
                return bound;
            }
            ra.iter()
                .flat_map(|p| rb.iter().map(move |q| (p - q).norm_squared()))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Points on the boundary of `e` (for containment checks of shrunk sets).
pub fn boundary_points(e: &Ellipsoid, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = psd_sqrt(e.shape());
    (0..count).map(|_| boundary_sample(&mut rng, e.center(), &root)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reachability::reach_support;
    use nalgebra::{dmatrix, dvector};

    fn double_integrator() -> ReachSpec {
        let sys = LtiSystem::unlabeled(dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0]).unwrap();
        ReachSpec::new(
            sys,
            Ellipsoid::ball(Vector::zeros(2), 0.1),
            Ellipsoid::ball(Vector::zeros(1), 1.0),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn samples_stay_inside_support() {
        let spec = double_integrator();
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let s = sample_trajectories(&spec, &times, 500, 7).unwrap();
        for (i, t) in times.iter().enumerate() {
            for k in 0..8 {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                let l = dvector![a.cos(), a.sin()];
                let rho = reach_support(&spec, *t, &l).unwrap();
                for x in &s.points[i] {
                    assert!(l.dot(x) <= rho + 1e-9);
                }
            }
        }
    }

    #[test]
    fn bang_bang_sample_reaches_the_bound() {
        // Controls of a 1-D ball are ±1; about one sample in sixteen holds
        // +1 over all four intervals and reaches x(2) ≥ 2.
        let spec = double_integrator();
        let times: Vec<f64> = (0..=4).map(|i| i as f64 * 0.5).collect();
        let s = sample_trajectories(&spec, &times, 2000, 3).unwrap();
        let best = s.points[4].iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max);
        let rho = reach_support(&spec, 2.0, &dvector![1.0, 0.0]).unwrap();
        assert!(best <= rho + 1e-12);
        assert!(best >= 2.0 - 1e-9, "{best}");
    }

    #[test]
    fn deterministic_for_a_seed() {
        let spec = double_integrator();
        let times = [0.0, 0.5, 1.0];
        let a = sample_trajectories(&spec, &times, 50, 11).unwrap();
        let b = sample_trajectories(&spec, &times, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectories(&spec, &times, 50, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pairwise_distance_of_points() {
        let a = Samples {
            times: vec![0.0, 1.0],
            points: vec![vec![dvector![0.0, 0.0]], vec![dvector![1.0, 0.0]]],
        };
        let b = Samples {
            times: vec![0.0, 1.0],
            points: vec![vec![dvector![3.0, 0.0]], vec![dvector![1.0, 2.0]]],
        };
        assert_eq!(min_pairwise_distance(&a, &b).unwrap(), (2.0, 1.0));
        let hints = [dvector![-1.0, 0.0], dvector![0.0, -1.0]];
        // Projection bound 3 at t=0 (accepted), 2 at t=1 (accepted).
        assert_eq!(pairwise_clearance(&a, &b, &hints, 1.5).unwrap(), vec![3.0, 2.0]);
        // Threshold above the bound falls back to the exact distance.
        assert_eq!(pairwise_clearance(&a, &b, &hints, 5.0).unwrap(), vec![3.0, 2.0]);
        let poor = [dvector![-0.6, 0.8], dvector![-0.6, 0.8]];
        assert_eq!(pairwise_clearance(&a, &b, &poor, 2.5).unwrap(), vec![3.0, 2.0]);
    }
}
