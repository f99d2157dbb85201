use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use reachsep::convex::{self, AffineMatrix, BarrierProblem, Layout};
use reachsep::dynamics::{expm, LtiSystem};
use reachsep::ellipsoid::{contains, minkowski_sum_external, Ellipsoid};
use reachsep::montecarlo::{boundary_points, sample_trajectories};
use reachsep::reachability::{reach_support, separation_of, PositionMap, ReachSpec};

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn psd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n).prop_map(move |a| &a * a.transpose() + DMatrix::identity(n, n) * 0.05)
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, n).prop_map(DVector::from_vec)
}

fn direction(n: usize) -> impl Strategy<Value = DVector<f64>> {
    vector(n).prop_filter("nonzero", |v| v.norm() > 1e-2).prop_map(|v| v.normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn external_sum_is_tight_and_external(
        m1 in psd(3), m2 in psd(3), c1 in vector(3), c2 in vector(3),
        l in direction(3), probe in direction(3),
    ) {
        let e1 = Ellipsoid::new(c1, m1).unwrap();
        let e2 = Ellipsoid::new(c2, m2).unwrap();
        let s = minkowski_sum_external(&e1, &e2, &l).unwrap();
        let exact = |d: &DVector<f64>| e1.support_value(d) + e2.support_value(d);
        prop_assert!((s.support_value(&l) - exact(&l)).abs() < 1e-9 * (1.0 + exact(&l).abs()));
        prop_assert!(s.support_value(&probe) >= exact(&probe) - 1e-9);
    }

    #[test]
    fn support_of_affine_image(m in psd(3), c in vector(3), t in matrix(3), b in vector(3), l in direction(3)) {
        let e = Ellipsoid::new(c, m).unwrap();
        let img = e.affine_map(&t, &b).unwrap();
        let direct = l.dot(&b) + e.support_value(&(t.transpose() * &l));
        prop_assert!((img.support_value(&l) - direct).abs() < 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn shrunk_copies_are_contained(m in psd(2), c in vector(2), shift in direction(2), scale in 0.05..0.6f64) {
        let outer = Ellipsoid::new(c.clone(), m.clone()).unwrap();
        // c + M^{1/2}(δ w + s B) with |δ| + s < 1 stays inside c + M^{1/2} B.
        let toward = outer.boundary_point(&shift) - &c;
        let inner = Ellipsoid::new(&c + toward * (0.5 * (1.0 - scale)), &m * (scale * scale)).unwrap();
        let res = contains(&outer, &inner).unwrap();
        prop_assert!(res.ok, "{res:?}");
        for p in boundary_points(&inner, 50, 1) {
            prop_assert!(outer.normalized_distance(&p) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn expm_semigroup(a in matrix(4), s in 0.0..2.0f64, t in 0.0..2.0f64) {
        let lhs = expm(&a, s + t).unwrap();
        let rhs = expm(&a, s).unwrap() * expm(&a, t).unwrap();
        prop_assert!((&lhs - &rhs).amax() < 1e-10 * (1.0 + lhs.amax()));
    }

    #[test]
    fn support_is_sublinear(a in matrix(3), l1 in direction(3), l2 in direction(3), t in 0.1..2.0f64) {
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let spec = ReachSpec::new(
            LtiSystem::unlabeled(a, b).unwrap(),
            Ellipsoid::ball(DVector::zeros(3), 0.2),
            Ellipsoid::ball(DVector::zeros(1), 1.0),
            2.0,
        ).unwrap();
        let s = |l: &DVector<f64>| reach_support(&spec, t, l).unwrap();
        let sum = &l1 + &l2;
        prop_assume!(sum.norm() > 1e-3);
        prop_assert!(s(&sum) <= s(&l1) + s(&l2) + 1e-9);
        prop_assert!((s(&(&l1 * 2.5)) - 2.5 * s(&l1)).abs() < 1e-9);
    }

    #[test]
    fn sampled_states_respect_support(a in matrix(3), l in direction(3), seed in 0u64..1000) {
        let b = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.5]);
        let spec = ReachSpec::new(
            LtiSystem::unlabeled(a, b).unwrap(),
            Ellipsoid::ball(DVector::zeros(3), 0.1),
            Ellipsoid::ball(DVector::zeros(1), 1.0),
            1.0,
        ).unwrap();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let samples = sample_trajectories(&spec, &times, 64, seed).unwrap();
        for (t, row) in times.iter().zip(&samples.points) {
            let rho = reach_support(&spec, *t, &l).unwrap();
            for x in row {
                prop_assert!(l.dot(x) <= rho + 1e-6);
            }
        }
    }

    #[test]
    fn separation_lower_bounds_sample_distance(gap in 0.1..3.0f64, seed in 0u64..100) {
        let sys = LtiSystem::unlabeled(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        ).unwrap();
        let mk = |x: f64| ReachSpec::new(
            sys.clone(),
            Ellipsoid::new(DVector::from_vec(vec![x, 0.0]), DMatrix::identity(2, 2) * 0.01).unwrap(),
            Ellipsoid::ball(DVector::zeros(1), 0.5),
            1.0,
        ).unwrap();
        let (sa, sb) = (mk(gap + 1.0), mk(0.0));
        let map = PositionMap::select(2, &[0]).unwrap();
        let sep = separation_of(&map.snapshot(&sa, 1.0).unwrap(), &map.snapshot(&sb, 1.0).unwrap()).unwrap();
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        let pa = sample_trajectories(&sa, &times, 64, seed).unwrap().mapped(&map);
        let pb = sample_trajectories(&sb, &times, 64, seed + 1).unwrap().mapped(&map);
        for x in &pa.points[4] {
            for y in &pb.points[4] {
                prop_assert!((x - y).norm() >= sep.distance - 1e-9);
            }
        }
    }
}

#[test]
fn barrier_matches_closed_form_logdet_with_trace_budget() {
    // maximize log det X  s.t.  tr X ≤ 3, X ⪰ 0 (2x2): optimum X = 1.5 I.
    let mut layout = Layout::new();
    let x = layout.symmetric("X", 2);
    let mut p = BarrierProblem::new(layout.clone());
    let mut xm = AffineMatrix::zeros(2);
    for i in 0..2 {
        for j in i..2 {
            xm.add_var(i, j, layout.entry(x, i, j), 1.0);
        }
    }
    p.add_logdet(1.0, xm);
    let mut budget = reachsep::convex::AffineScalar::new(3.0);
    budget.add(layout.entry(x, 0, 0), -1.0);
    budget.add(layout.entry(x, 1, 1), -1.0);
    p.add_scalar("trace budget", budget);
    let mut init = DVector::zeros(layout.len());
    layout.set_symmetric(&mut init, x, &(DMatrix::identity(2, 2) * 0.5));
    let res = convex::solve(&p, &init).unwrap();
    let xv = layout.symmetric_value(&res.x, x);
    assert!((xv - DMatrix::identity(2, 2) * 1.5).amax() < 1e-6);
}
