//! Overlap between two Gaussians via the minmax linear separator.
//!
//! For a blend weight `λ` the separator is `α = (λΣ₁ + (1−λ)Σ₂)⁻¹(μ₂ − μ₁)`,
//! `β = αᵀμ₁ + λ·αᵀΣ₁α`. The minmax (admissible) separator is the one where
//! both misclassification probabilities are equal; the overlap `Υ` is their sum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::numfmt::sig15;
use crate::stats::{chi_square_cdf, chi_square_quantile, normal_quantile, normal_sf};

/// Default relative tolerance for [`solve_lambda`].
pub const LAMBDA_TOL: f64 = 1e-10;

const LAMBDA_BRACKET: (f64, f64) = (1e-6, 1.0 - 1e-6);
const MAX_BISECTIONS: usize = 200;
const ETA_TOL: f64 = 1e-8;
const COINCIDENT_MEANS: f64 = 1e-12;

/// Minmax separator between two Gaussians.
///
/// `alpha`/`beta` describe the hyperplane `αᵀx = β`; points with `αᵀx ≤ β`
/// are assigned to the first Gaussian. When the means coincide the hyperplane
/// is undefined: `degenerate` is set, `alpha` is zero and `overlap` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    pub alpha: DVector<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub overlap: f64,
    pub degenerate: bool,
}

impl Separator {
    fn total_overlap(dim: usize) -> Self {
        Separator {
            alpha: DVector::zeros(dim),
            beta: 0.0,
            lambda: 0.5,
            eta1: 0.0,
            eta2: 0.0,
            overlap: 1.0,
            degenerate: true,
        }
    }

    /// Misclassification probability of a first-population sample, 1 − Φ(η₁).
    pub fn p1(&self) -> f64 {
        normal_sf(self.eta1)
    }

    /// Misclassification probability of a second-population sample, 1 − Φ(η₂).
    pub fn p2(&self) -> f64 {
        normal_sf(self.eta2)
    }
}

fn same_dim(g1: &Gaussian, g2: &Gaussian) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            found: g2.dim(),
        });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "overlap parameter must lie in (0,1), got {lambda}"
        )))
    }
}

/// Bhattacharyya distance between two Gaussians.
pub fn bhattacharyya(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    same_dim(g1, g2)?;
    let avg = (g1.cov() + g2.cov()) * 0.5;
    let chol = avg.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let diff = g1.mean() - g2.mean();
    let mahal = diff.dot(&chol.solve(&diff));
    let logdet = |m: &DMatrix<f64>| -> Result<f64> {
        let ch = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    };
    let ld = logdet(&avg)?;
    let ld1 = logdet(g1.cov())?;
    let ld2 = logdet(g2.cov())?;
    Ok(mahal / 8.0 + 0.5 * (ld - 0.5 * (ld1 + ld2)))
}

/// `(λΣ₁ + (1−λ)Σ₂)⁻¹ rhs`.
pub(crate) fn blend_solve(
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    lambda: f64,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let blend = s1 * lambda + s2 * (1.0 - lambda);
    let chol = blend.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(rhs))
}

/// Quadratic forms of a separator at a given blend weight.
#[derive(Debug, Clone)]
pub(crate) struct SeparatorTerms {
    pub alpha: DVector<f64>,
    /// αᵀΣ₁α
    pub a1: f64,
    /// αᵀΣ₂α
    pub a2: f64,
}

impl SeparatorTerms {
    pub fn new(delta: &DVector<f64>, s1: &DMatrix<f64>, s2: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let alpha = blend_solve(s1, s2, lambda, delta)?;
        let a1 = alpha.dot(&(s1 * &alpha));
        let a2 = alpha.dot(&(s2 * &alpha));
        Ok(SeparatorTerms { alpha, a1, a2 })
    }

    pub fn etas(&self, lambda: f64) -> (f64, f64) {
        (lambda * self.a1.sqrt(), (1.0 - lambda) * self.a2.sqrt())
    }

    pub fn residual(&self, lambda: f64) -> f64 {
        let mu = 1.0 - lambda;
        lambda * lambda * self.a1 - mu * mu * self.a2
    }
}

/// Hyperplane `(α, β)` for a given overlap parameter `λ`.
pub fn separator_from_lambda(g1: &Gaussian, g2: &Gaussian, lambda: f64) -> Result<(DVector<f64>, f64)> {
    same_dim(g1, g2)?;
    check_lambda(lambda)?;
    let delta = g2.mean() - g1.mean();
    if delta.norm() <= COINCIDENT_MEANS {
        return Err(Error::DegenerateMeans);
    }
    let t = SeparatorTerms::new(&delta, g1.cov(), g2.cov(), lambda)?;
    let beta = t.alpha.dot(g1.mean()) + lambda * t.a1;
    Ok((t.alpha, beta))
}

/// Standardized margins `η₁ = (β − αᵀμ₁)/√(αᵀΣ₁α)`, `η₂ = (αᵀμ₂ − β)/√(αᵀΣ₂α)`.
pub fn eta_values(g1: &Gaussian, g2: &Gaussian, alpha: &DVector<f64>, beta: f64) -> Result<(f64, f64)> {
    same_dim(g1, g2)?;
    if alpha.len() != g1.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            found: alpha.len(),
        });
    }
    let a1 = alpha.dot(&(g1.cov() * alpha));
    let a2 = alpha.dot(&(g2.cov() * alpha));
    if !(a1 > 0.0 && a2 > 0.0) {
        return Err(Error::DegenerateSeparator);
    }
    Ok((
        (beta - alpha.dot(g1.mean())) / a1.sqrt(),
        (alpha.dot(g2.mean()) - beta) / a2.sqrt(),
    ))
}

/// `αᵀ[λ²Σ₁ − (1−λ)²Σ₂]α`, zero exactly when the separator is admissible.
pub fn admissibility_residual(g1: &Gaussian, g2: &Gaussian, lambda: f64) -> Result<f64> {
    same_dim(g1, g2)?;
    check_lambda(lambda)?;
    let delta = g2.mean() - g1.mean();
    if delta.norm() <= COINCIDENT_MEANS {
        return Err(Error::DegenerateMeans);
    }
    let t = SeparatorTerms::new(&delta, g1.cov(), g2.cov(), lambda)?;
    Ok(t.residual(lambda))
}

/// Finds the admissible overlap parameter by bisection and returns the separator.
///
/// Coincident means give the total-overlap separator (`Υ = 1`, `λ = 0.5`,
/// flagged degenerate) rather than an error.
pub fn solve_lambda(g1: &Gaussian, g2: &Gaussian, tol: f64) -> Result<Separator> {
    same_dim(g1, g2)?;
    minmax_separator(g1.mean(), g1.cov(), g2.mean(), g2.cov(), tol)
}

/// [`solve_lambda`] on raw moments; covariances are assumed symmetric positive definite.
pub fn minmax_separator(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
    tol: f64,
) -> Result<Separator> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let delta = mu2 - mu1;
    if delta.norm() <= COINCIDENT_MEANS {
        return Ok(Separator::total_overlap(mu1.len()));
    }

    let (mut lo, mut hi) = LAMBDA_BRACKET;
    let r_lo = SeparatorTerms::new(&delta, s1, s2, lo)?.residual(lo);
    let r_hi = SeparatorTerms::new(&delta, s1, s2, hi)?.residual(hi);
    if !(r_lo < 0.0 && r_hi > 0.0) {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: r_lo.abs().min(r_hi.abs()),
        });
    }

    let mut lambda = 0.5;
    let mut terms = SeparatorTerms::new(&delta, s1, s2, lambda)?;
    let mut iterations = 0;
    loop {
        let res = terms.residual(lambda);
        let (e1, e2) = terms.etas(lambda);
        let scale = terms.a1 + terms.a2;
        let tight = res.abs() <= tol * scale && (e1 - e2).abs() <= 1e-3 * ETA_TOL * e1.max(1.0);
        if tight || res == 0.0 || hi - lo <= 2.0 * f64::EPSILON {
            break;
        }
        if iterations >= MAX_BISECTIONS {
            return Err(Error::NoConvergence {
                iterations,
                residual: res.abs() / scale,
            });
        }
        if res < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        lambda = 0.5 * (lo + hi);
        terms = SeparatorTerms::new(&delta, s1, s2, lambda)?;
        iterations += 1;
    }

    let (eta1, eta2) = terms.etas(lambda);
    if (eta1 - eta2).abs() > ETA_TOL * eta1.max(1.0) {
        return Err(Error::NoConvergence {
            iterations,
            residual: (eta1 - eta2).abs(),
        });
    }
    let beta = terms.alpha.dot(mu1) + lambda * terms.a1;
    Ok(Separator {
        overlap: normal_sf(eta1) + normal_sf(eta2),
        alpha: terms.alpha,
        beta,
        lambda,
        eta1,
        eta2,
        degenerate: false,
    })
}

fn check_contour_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::Domain(format!("dimension must be 2 or 3, got {dim}")))
    }
}

/// Overlap of two `dim`-variate Gaussians whose `c_t` confidence contours touch.
pub fn contour_to_overlap(c_t: f64, dim: usize) -> Result<f64> {
    check_contour_dim(dim)?;
    if !(c_t > 0.0 && c_t < 1.0) {
        return Err(Error::Domain(format!("contour level must lie in (0,1), got {c_t}")));
    }
    let r = chi_square_quantile(c_t, dim)?.sqrt();
    Ok(2.0 * normal_sf(r))
}

/// Inverse of [`contour_to_overlap`].
pub fn overlap_to_contour(upsilon: f64, dim: usize) -> Result<f64> {
    check_contour_dim(dim)?;
    if !(upsilon > 0.0 && upsilon <= 1.0) {
        return Err(Error::Domain(format!("overlap must lie in (0,1], got {upsilon}")));
    }
    if upsilon == 1.0 {
        return Ok(0.0);
    }
    let r = -normal_quantile(0.5 * upsilon)?;
    chi_square_cdf(r * r, dim)
}

/// Contour of touch for reporting: like [`overlap_to_contour`] but maps an
/// underflowed overlap of zero to 1.
pub fn contour_of_touch(upsilon: f64, dim: usize) -> Result<f64> {
    if upsilon <= 0.0 {
        check_contour_dim(dim)?;
        return Ok(1.0);
    }
    overlap_to_contour(upsilon.min(1.0), dim)
}

/// Monte-Carlo estimate of both misclassification probabilities of `sep`.
///
/// Returns the fraction of `g1` samples with `αᵀx > β` and of `g2` samples
/// with `αᵀx ≤ β`.
pub fn monte_carlo_misclassification<R: Rng>(
    g1: &Gaussian,
    g2: &Gaussian,
    sep: &Separator,
    n: usize,
    mut rng: R,
) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let count = |g: &Gaussian, rng: &mut R, wrong: &dyn Fn(f64) -> bool| -> usize {
        let l = g
            .cov()
            .clone()
            .cholesky()
            .expect("Gaussian covariance is positive definite")
            .l();
        let d = g.dim();
        let mut z = DVector::zeros(d);
        (0..n)
            .filter(|_| {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let x = g.mean() + &l * &z;
                wrong(sep.alpha.dot(&x))
            })
            .count()
    };
    let beta = sep.beta;
    let m1 = count(g1, &mut rng, &|v| v > beta);
    let m2 = count(g2, &mut rng, &|v| v <= beta);
    (m1 as f64 / n as f64, m2 as f64 / n as f64)
}

/// One row of the contour-of-touch ↔ overlap table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapRow {
    pub c_t: f64,
    pub dim: usize,
    pub upsilon: f64,
}

/// Table of `contour_to_overlap` on the grid 0.01, 0.02, …, 0.99.
pub fn overlap_table(dim: usize) -> Result<Vec<OverlapRow>> {
    (1..100)
        .map(|i| {
            let c_t = i as f64 / 100.0;
            Ok(OverlapRow {
                c_t,
                dim,
                upsilon: contour_to_overlap(c_t, dim)?,
            })
        })
        .collect()
}

/// Serializes table rows as `c_t,dim,upsilon` CSV with 15 significant digits.
pub fn overlap_table_csv(rows: &[OverlapRow]) -> String {
    let mut out = String::from("c_t,dim,upsilon\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", sig15(r.c_t), r.dim, sig15(r.upsilon)));
    }
    out
}

pub fn parse_overlap_table_csv(text: &str) -> Result<Vec<OverlapRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("c_t,dim,upsilon") => {}
        other => return Err(Error::Trace(format!("unexpected table header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::Trace(format!("bad table row `{line}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(OverlapRow {
                c_t: parts[0].parse().map_err(|_| bad())?,
                dim: parts[1].parse().map_err(|_| bad())?,
                upsilon: parts[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
