mod common;

use common::*;
use gop_core::chance::{constraint_pair, inflate, linearize_pair};
use gop_core::overlap::{contour_to_overlap, overlap_to_contour, solve_lambda, LAMBDA_TOL};
use gop_core::scp::{rollout, scp_solve, ObstacleTrack, ProblemSpec, ScpConfig};
use gop_core::Gaussian;
use nalgebra::{DMatrix, DVector, Rotation3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair(seed: u64, d: usize) -> (Gaussian, Gaussian) {
    random_pair(&mut ChaCha8Rng::seed_from_u64(seed), d)
}

fn rotation(d: usize, angles: (f64, f64, f64)) -> DMatrix<f64> {
    if d == 2 {
        let (s, c) = angles.0.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    } else {
        let r = Rotation3::from_euler_angles(angles.0, angles.1, angles.2);
        DMatrix::from_iterator(3, 3, r.matrix().iter().copied())
    }
}

fn transformed(g: &Gaussian, r: &DMatrix<f64>, t: &DVector<f64>, s: f64) -> Gaussian {
    let cov = r * g.cov() * r.transpose() * (s * s);
    let cov = (&cov + cov.transpose()) * 0.5;
    Gaussian::new(r * g.mean() * s + t, cov).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn swapping_gaussians_mirrors_lambda(seed in any::<u64>(), d in 2usize..=3) {
        let (g1, g2) = pair(seed, d);
        let a = solve_lambda(&g1, &g2, LAMBDA_TOL).unwrap();
        let b = solve_lambda(&g2, &g1, LAMBDA_TOL).unwrap();
        prop_assert!((a.overlap - b.overlap).abs() <= 1e-9);
        prop_assert!((a.lambda - (1.0 - b.lambda)).abs() <= 1e-6);
    }

    #[test]
    fn solution_is_admissible(seed in any::<u64>(), d in 2usize..=3) {
        let (g1, g2) = pair(seed, d);
        let sep = solve_lambda(&g1, &g2, LAMBDA_TOL).unwrap();
        prop_assert!((sep.eta1 - sep.eta2).abs() <= 1e-8);
        prop_assert!(sep.overlap > 0.0 && sep.overlap <= 1.0);
        prop_assert!((sep.overlap - (sep.p1() + sep.p2())).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn overlap_is_rigid_and_scale_invariant(
        seed in any::<u64>(),
        d in 2usize..=3,
        angles in (-3.0f64..3.0, -1.5f64..1.5, -3.0f64..3.0),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
        scale in 0.2f64..5.0,
    ) {
        let (g1, g2) = pair(seed, d);
        let base = solve_lambda(&g1, &g2, LAMBDA_TOL).unwrap().overlap;
        let r = rotation(d, angles);
        let t = DVector::from_column_slice(&shift[..d]);
        let moved = solve_lambda(&transformed(&g1, &r, &t, 1.0), &transformed(&g2, &r, &t, 1.0), LAMBDA_TOL).unwrap();
        prop_assert!((moved.overlap - base).abs() <= 1e-9);
        let zero = DVector::zeros(d);
        let id = DMatrix::identity(d, d);
        let scaled = solve_lambda(&transformed(&g1, &id, &zero, scale), &transformed(&g2, &id, &zero, scale), LAMBDA_TOL).unwrap();
        prop_assert!((scaled.overlap - base).abs() <= 1e-9);
    }

    #[test]
    fn overlap_decreases_with_separation(seed in any::<u64>(), d in 2usize..=3) {
        let (g1, g2) = pair(seed, d);
        let dir = g2.mean() - g1.mean();
        let mut prev = f64::INFINITY;
        for k in 1..=20 {
            let g = g2.with_mean(g1.mean() + &dir * (0.25 * k as f64)).unwrap();
            let u = solve_lambda(&g1, &g, LAMBDA_TOL).unwrap().overlap;
            prop_assert!(u < prev);
            prev = u;
        }
    }

    #[test]
    fn inflation_adds_isotropic_term(seed in any::<u64>(), radius in 0.0f64..2.0, angles in (-3.0f64..3.0, -1.5f64..1.5, -3.0f64..3.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_spd(&mut rng, 3, 0.01..0.1);
        let out = inflate(&cov, radius, 3.0);
        let expected = &cov + DMatrix::identity(3, 3) * (radius / 3.0).powi(2);
        prop_assert!((&out - &expected).amax() <= 1e-12);
        let r = rotation(3, angles);
        let lhs = inflate(&(&r * &cov * r.transpose()), radius, 3.0);
        let rhs = &r * &out * r.transpose();
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn linearization_matches_value_and_is_translation_equivariant(
        seed in any::<u64>(),
        lambda in 0.1f64..0.9,
        shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = random_spd(&mut rng, 3, 0.02..0.1);
        let so = random_spd(&mut rng, 3, 0.02..0.1);
        let pos = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let obs = &pos + u * rng.random_range(0.2..1.5);

        let lin = linearize_pair(&pos, &sd, &obs, &so, lambda).unwrap();
        let val = constraint_pair(&pos, &sd, &obs, &so, lambda).unwrap();
        prop_assert_eq!(lin.f1, val.f1);
        prop_assert_eq!(lin.f2, val.f2);

        let t = DVector::from_column_slice(&shift);
        let moved = linearize_pair(&(&pos + &t), &sd, &(&obs + &t), &so, lambda).unwrap();
        let tol = |a: f64| 1e-9 * (1.0 + a.abs());
        prop_assert!((moved.f1 - lin.f1).abs() <= tol(lin.f1));
        prop_assert!((moved.f2 - lin.f2).abs() <= tol(lin.f2));
        prop_assert!((moved.df1_dlambda - lin.df1_dlambda).abs() <= tol(lin.df1_dlambda));
        prop_assert!((moved.df2_dlambda - lin.df2_dlambda).abs() <= tol(lin.df2_dlambda));
        prop_assert!((&moved.grad_pos_f1 - &lin.grad_pos_f1).amax() <= 1e-9 * (1.0 + lin.grad_pos_f1.amax()));
        prop_assert!((&moved.grad_pos_f2 - &lin.grad_pos_f2).amax() <= 1e-9 * (1.0 + lin.grad_pos_f2.amax()));
    }

    #[test]
    fn moving_away_never_increases_overlap(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = random_spd(&mut rng, 3, 0.02..0.1);
        let so = random_spd(&mut rng, 3, 0.02..0.1);
        let pos = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let obs = &pos + &u * rng.random_range(0.2..1.5);
        let lambda = solve_lambda(
            &Gaussian::new(pos.clone(), sd.clone()).unwrap(),
            &Gaussian::new(obs.clone(), so.clone()).unwrap(),
            LAMBDA_TOL,
        ).unwrap().lambda;
        let lin = linearize_pair(&pos, &sd, &obs, &so, lambda).unwrap();
        let away = &pos - &obs;
        prop_assert!(lin.grad_pos_f1.dot(&away) <= 1e-12);
    }

    #[test]
    fn contour_mapping_is_decreasing_and_invertible(a in 0.01f64..0.99, b in 0.01f64..0.99, d in 2usize..=3) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let ul = contour_to_overlap(lo, d).unwrap();
        let uh = contour_to_overlap(hi, d).unwrap();
        prop_assert!(ul > uh);
        prop_assert!(ul > 0.0 && ul < 1.0);
        prop_assert!((overlap_to_contour(ul, d).unwrap() - lo).abs() <= 1e-9);
    }
}

/// Random single-obstacle crossing problem: the obstacle cuts across the
/// straight line to the goal at a random angle and offset.
fn crossing_problem(seed: u64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v3 = |x: f64, y: f64, z: f64| DVector::from_vec(vec![x, y, z]);
    let (n, tau) = (12, 0.5);
    let cov = DMatrix::identity(3, 3) * 0.02;
    let mut spec = ProblemSpec::new(
        v3(0.0, 0.0, 0.0),
        v3(6.0, 0.0, 0.0),
        n,
        tau,
        (v3(-3.0, -3.0, -3.0), v3(3.0, 3.0, 3.0)),
        (v3(-1.0, -1.0, -1.0), v3(1.0, 1.0, 1.0)),
        cov.clone(),
        contour_to_overlap(rng.random_range(0.5..0.95), 3).unwrap(),
    );
    spec.drone_radius = 0.3;
    let heading = rng.random_range(0.5..2.6f64);
    let centre = v3(
        rng.random_range(2.0..4.0),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.2..0.2),
    );
    let speed = rng.random_range(0.3..1.0);
    let dir = v3(heading.cos(), heading.sin(), 0.0);
    let means = (0..n)
        .map(|i| &centre + &dir * (speed * tau * (i as f64 - n as f64 / 2.0)))
        .collect();
    spec.obstacles.push(ObstacleTrack::new(means, cov, 0.3));
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scp_solutions_are_consistent(seed in any::<u64>()) {
        let spec = crossing_problem(seed);
        let sol = scp_solve(&spec, None, &ScpConfig::default()).unwrap();

        let again = rollout(&spec.start, &sol.velocities, spec.tau);
        for (a, b) in again.iter().zip(&sol.positions) {
            prop_assert!((a - b).amax() <= 1e-10);
        }
        for (k, v) in sol.velocities.iter().enumerate() {
            for c in 0..3 {
                prop_assert!(v[c] >= spec.v_min[c] - 1e-6 && v[c] <= spec.v_max[c] + 1e-6);
                if k > 0 {
                    let a = (v[c] - sol.velocities[k - 1][c]) / spec.tau;
                    prop_assert!(a >= spec.a_min[c] - 1e-6 && a <= spec.a_max[c] + 1e-6);
                }
            }
        }
        for w in sol.per_iteration_cost.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "merit rose from {} to {}", w[0], w[1]);
        }
        if sol.converged {
            for u in &sol.upsilons[0] {
                prop_assert!(*u <= spec.upsilon_max + 1e-3);
            }
            prop_assert!(sol.linearization_gap <= 5e-3, "gap {}", sol.linearization_gap);
        }
    }
}

#[test]
fn separator_passes_through_touch_point() {
    for (s1, s2) in [equal_overlap_pair_a(), equal_overlap_pair_b()] {
        for angle in [0.0f64, 0.7, 1.6, 2.5] {
            let u = DVector::from_vec(vec![angle.cos(), angle.sin()]);
            let (s, w) = touching_separation(&s1, &s2, &u, 0.8051);
            let (g1, g2) = (
                Gaussian::new(DVector::zeros(2), s1.clone()).unwrap(),
                Gaussian::new(&u * s, s2.clone()).unwrap(),
            );
            let sep = solve_lambda(&g1, &g2, LAMBDA_TOL).unwrap();
            let p = touch_point(&s1, g1.mean(), &w, 0.8051);
            let residual = (sep.alpha.dot(&p) - sep.beta).abs() / sep.alpha.norm();
            assert!(residual <= 1e-6, "touch point is {residual} from the separator");
        }
    }
}

#[test]
fn touching_pairs_share_one_overlap() {
    let reference = contour_to_overlap(0.8051, 2).unwrap();
    for (s1, s2) in [equal_overlap_pair_a(), equal_overlap_pair_b()] {
        for angle in [0.0f64, 0.4, 1.1, 2.0, 2.9] {
            let u = DVector::from_vec(vec![angle.cos(), angle.sin()]);
            let (g1, g2) = touching_pair(&s1, &s2, &u, 0.8051);
            let up = solve_lambda(&g1, &g2, LAMBDA_TOL).unwrap().overlap;
            assert!((up - reference).abs() <= 1e-6, "angle {angle}: {up} vs {reference}");
        }
    }
}
