//! Test-only oracles shared by the integration tests. None of them go through
//! the minmax separator code.
#![allow(dead_code)]

use gop_core::Gaussian;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Covariance pairs of the two equal-overlap configurations.
pub fn equal_overlap_pair_a() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.02]),
        DMatrix::from_row_slice(2, 2, &[0.02, 0.01, 0.01, 0.02]),
    )
}

pub fn equal_overlap_pair_b() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, 0.02]),
        DMatrix::from_row_slice(2, 2, &[0.03, 0.0, 0.0, 0.03]),
    )
}

/// Radius of the `c` confidence ellipse in 2D: χ²₂ quantile is −2 ln(1 − c).
pub fn chi2_radius_2d(c: f64) -> f64 {
    (-2.0 * (1.0 - c).ln()).sqrt()
}

/// Support function of the `r`-scaled ellipse of `cov` in direction `w`.
fn support(cov: &DMatrix<f64>, w: &DVector<f64>, r: f64) -> f64 {
    r * w.dot(&(cov * w)).sqrt()
}

/// Signed separation of the two ellipses when the second sits `s·u` from the
/// first, maximised over directions (angular grid plus local refinement):
/// positive once a separating direction exists.
fn best_gap(s1: &DMatrix<f64>, s2: &DMatrix<f64>, u: &DVector<f64>, s: f64, r: f64) -> (f64, f64) {
    let base = u[1].atan2(u[0]);
    let gap = |theta: f64| {
        let w = DVector::from_vec(vec![theta.cos(), theta.sin()]);
        s * w.dot(u) - support(s1, &w, r) - support(s2, &w, r)
    };
    const GRID: usize = 20_000;
    let half = std::f64::consts::FRAC_PI_2;
    let step = 2.0 * half / GRID as f64;
    let (mut best_t, mut best_g) = (base, f64::NEG_INFINITY);
    for k in 0..=GRID {
        let t = base - half + k as f64 * step;
        let g = gap(t);
        if g > best_g {
            best_g = g;
            best_t = t;
        }
    }
    // golden-section refinement of the maximum around the grid winner
    let (mut a, mut b) = (best_t - step, best_t + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if gap(c) > gap(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let t = 0.5 * (a + b);
    (gap(t).max(best_g), t)
}

/// Touching-means oracle: distance `s` along unit `u` at which the `c_t`
/// confidence ellipses of the two covariances touch. Binary search on the
/// support-function separation test; returns `(s, w)` with `w` the common
/// outward normal at the touch point.
pub fn touching_separation(s1: &DMatrix<f64>, s2: &DMatrix<f64>, u: &DVector<f64>, c_t: f64) -> (f64, DVector<f64>) {
    assert_eq!(u.len(), 2, "oracle is two-dimensional");
    let u = u.normalize();
    let r = chi2_radius_2d(c_t);
    let (mut lo, mut hi) = (0.0, 1.0);
    while best_gap(s1, s2, &u, hi, r).0 <= 0.0 {
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if best_gap(s1, s2, &u, mid, r).0 > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    let (_, t) = best_gap(s1, s2, &u, s, r);
    (s, DVector::from_vec(vec![t.cos(), t.sin()]))
}

/// Point where the first ellipse's `c_t` contour meets the second's.
pub fn touch_point(s1: &DMatrix<f64>, mu1: &DVector<f64>, w: &DVector<f64>, c_t: f64) -> DVector<f64> {
    let r = chi2_radius_2d(c_t);
    mu1 + s1 * w * (r / w.dot(&(s1 * w)).sqrt())
}

/// Gaussian pair of the given covariances, touching at `c_t` along `u`.
pub fn touching_pair(s1: &DMatrix<f64>, s2: &DMatrix<f64>, u: &DVector<f64>, c_t: f64) -> (Gaussian, Gaussian) {
    let (s, _) = touching_separation(s1, s2, u, c_t);
    let mu2 = u.normalize() * s;
    (
        Gaussian::new(DVector::zeros(2), s1.clone()).unwrap(),
        Gaussian::new(mu2, s2.clone()).unwrap(),
    )
}

/// Random SPD matrix whose largest entry is drawn from `scale`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, scale: std::ops::Range<f64>) -> DMatrix<f64> {
    let scale = rng.random_range(scale);
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
    let m = (&m + m.transpose()) * 0.5;
    let top = m.max();
    m * (scale / top)
}

/// Random Gaussian pair whose separation gives a non-negligible overlap.
pub fn random_pair<R: Rng>(rng: &mut R, d: usize) -> (Gaussian, Gaussian) {
    let s1 = random_spd(rng, d, 0.01..0.1);
    let s2 = random_spd(rng, d, 0.01..0.1);
    let mu1 = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let u = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)).normalize();
    let spread = u.dot(&(&s1 * &u)).sqrt() + u.dot(&(&s2 * &u)).sqrt();
    let mu2 = &mu1 + &u * (spread * rng.random_range(0.3..3.0));
    (Gaussian::new(mu1, s1).unwrap(), Gaussian::new(mu2, s2).unwrap())
}

/// Central finite difference of `f` at `x`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / ‖b‖∞`, with absolute error when the reference vanishes.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}
