//! Overlap chance constraint between the drone and one obstacle at one step.
//!
//! The constraint is expressed through two functions of the drone position
//! (hence of the velocities) and the overlap parameter `λ`:
//! `f₁ = (1 − Φ(η₁)) + (1 − Φ(η₂))` and `f₂ = η₁² − η₂² = αᵀ[λ²Σ_d − (1−λ)²Σ_o]α`.
//! The drone is the first population, the obstacle the second.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::check_covariance;
use crate::overlap::SeparatorTerms;
use crate::stats::{normal_pdf, normal_sf};

/// Default inflation divisor: the body radius is absorbed at the 3σ shell.
pub const DEFAULT_KAPPA: f64 = 3.0;

const COINCIDENT: f64 = 1e-12;

/// `cov + (radius/kappa)²·I`.
pub fn inflate(cov: &DMatrix<f64>, radius: f64, kappa: f64) -> DMatrix<f64> {
    let pad = (radius / kappa).powi(2);
    let mut out = cov.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += pad;
    }
    out
}

/// Drone and obstacle covariances after radius inflation.
#[derive(Debug, Clone, PartialEq)]
pub struct InflatedPair {
    pub drone_cov: DMatrix<f64>,
    pub obstacle_cov: DMatrix<f64>,
    pub kappa: f64,
}

impl InflatedPair {
    pub fn new(
        drone_cov: &DMatrix<f64>,
        drone_radius: f64,
        obstacle_cov: &DMatrix<f64>,
        obstacle_radius: f64,
        kappa: f64,
    ) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
        }
        if drone_radius < 0.0 || obstacle_radius < 0.0 {
            return Err(Error::Domain("radii must be non-negative".into()));
        }
        if drone_cov.shape() != obstacle_cov.shape() {
            return Err(Error::DimensionMismatch {
                expected: drone_cov.nrows(),
                found: obstacle_cov.nrows(),
            });
        }
        check_covariance(drone_cov)?;
        check_covariance(obstacle_cov)?;
        Ok(InflatedPair {
            drone_cov: inflate(drone_cov, drone_radius, kappa),
            obstacle_cov: inflate(obstacle_cov, obstacle_radius, kappa),
            kappa,
        })
    }
}

/// Values of `f₁` (overlap) and `f₂` (admissibility residual).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairValue {
    pub f1: f64,
    pub f2: f64,
    /// Mean separation `(η₁ + η₂)/2`; equals η at the admissible `λ`.
    pub eta: f64,
    pub degenerate: bool,
}

/// `f₁`, `f₂` and their partial derivatives with respect to the drone
/// position and `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLinearization {
    pub f1: f64,
    pub f2: f64,
    pub grad_pos_f1: DVector<f64>,
    pub grad_pos_f2: DVector<f64>,
    pub df1_dlambda: f64,
    pub df2_dlambda: f64,
    /// `(η₁ + η₂)/2` and its derivatives: a surrogate of the overlap that
    /// keeps a useful gradient where `f₁` underflows.
    pub eta: f64,
    pub grad_pos_eta: DVector<f64>,
    pub deta_dlambda: f64,
    pub degenerate: bool,
}

impl PairLinearization {
    fn is_finite(&self) -> bool {
        self.f1.is_finite()
            && self.f2.is_finite()
            && self.df1_dlambda.is_finite()
            && self.df2_dlambda.is_finite()
            && self.grad_pos_f1.iter().all(|v| v.is_finite())
            && self.grad_pos_f2.iter().all(|v| v.is_finite())
            && self.eta.is_finite()
            && self.deta_dlambda.is_finite()
            && self.grad_pos_eta.iter().all(|v| v.is_finite())
    }
}

fn check_inputs(
    drone_pos: &DVector<f64>,
    drone_cov: &DMatrix<f64>,
    obs_mean: &DVector<f64>,
    obs_cov: &DMatrix<f64>,
    lambda: f64,
) -> Result<()> {
    let d = drone_pos.len();
    for (len, what) in [
        (obs_mean.len(), "obstacle mean"),
        (drone_cov.nrows(), "drone covariance"),
        (obs_cov.nrows(), "obstacle covariance"),
    ] {
        if len != d {
            let _ = what;
            return Err(Error::DimensionMismatch {
                expected: d,
                found: len,
            });
        }
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!(
            "overlap parameter must lie in (0,1), got {lambda}"
        )));
    }
    Ok(())
}

/// Evaluates `f₁` and `f₂` for a fixed `λ` (the separator is not re-solved).
///
/// Coincident positions return the total-overlap sentinel `f₁ = 1, f₂ = 0`.
pub fn constraint_pair(
    drone_pos: &DVector<f64>,
    drone_cov: &DMatrix<f64>,
    obs_mean: &DVector<f64>,
    obs_cov: &DMatrix<f64>,
    lambda: f64,
) -> Result<PairValue> {
    check_inputs(drone_pos, drone_cov, obs_mean, obs_cov, lambda)?;
    let delta = obs_mean - drone_pos;
    if delta.norm() <= COINCIDENT {
        return Ok(PairValue {
            f1: 1.0,
            f2: 0.0,
            eta: 0.0,
            degenerate: true,
        });
    }
    let t = SeparatorTerms::new(&delta, drone_cov, obs_cov, lambda)?;
    let (e1, e2) = t.etas(lambda);
    Ok(PairValue {
        f1: normal_sf(e1) + normal_sf(e2),
        f2: t.residual(lambda),
        eta: 0.5 * (e1 + e2),
        degenerate: false,
    })
}

/// Analytic first-order model of `f₁`, `f₂` around `(drone_pos, λ)`.
pub fn linearize_pair(
    drone_pos: &DVector<f64>,
    drone_cov: &DMatrix<f64>,
    obs_mean: &DVector<f64>,
    obs_cov: &DMatrix<f64>,
    lambda: f64,
) -> Result<PairLinearization> {
    check_inputs(drone_pos, drone_cov, obs_mean, obs_cov, lambda)?;
    let d = drone_pos.len();
    let delta = obs_mean - drone_pos;
    if delta.norm() <= COINCIDENT {
        return Ok(PairLinearization {
            f1: 1.0,
            f2: 0.0,
            grad_pos_f1: DVector::zeros(d),
            grad_pos_f2: DVector::zeros(d),
            df1_dlambda: 0.0,
            df2_dlambda: 0.0,
            eta: 0.0,
            grad_pos_eta: DVector::zeros(d),
            deta_dlambda: 0.0,
            degenerate: true,
        });
    }

    #[cfg(feature = "fd-gradients")]
    let lin = finite_difference_linearization(drone_pos, drone_cov, obs_mean, obs_cov, lambda)?;
    #[cfg(not(feature = "fd-gradients"))]
    let lin = analytic_linearization(&delta, drone_cov, obs_cov, lambda)?;

    if !lin.is_finite() {
        return Err(Error::Linearization(format!(
            "non-finite derivative at separation {:e}",
            delta.norm()
        )));
    }
    Ok(lin)
}

#[cfg_attr(feature = "fd-gradients", allow(dead_code))]
fn analytic_linearization(
    delta: &DVector<f64>,
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    lambda: f64,
) -> Result<PairLinearization> {
    let mu = 1.0 - lambda;
    let blend = s1 * lambda + s2 * mu;
    let chol = blend.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let alpha = chol.solve(delta);
    let s1a = s1 * &alpha;
    let s2a = s2 * &alpha;
    let a1 = alpha.dot(&s1a);
    let a2 = alpha.dot(&s2a);
    let (r1, r2) = (a1.sqrt(), a2.sqrt());
    // u_k = M⁻¹Σ_k α; ∂a_k/∂Δ = 2u_k and ∂α/∂λ = −(u₁ − u₂).
    let u1 = chol.solve(&s1a);
    let u2 = chol.solve(&s2a);
    let dalpha = &u1 - &u2;
    let da1 = -2.0 * s1a.dot(&dalpha);
    let da2 = -2.0 * s2a.dot(&dalpha);

    let eta1 = lambda * r1;
    let eta2 = mu * r2;
    let deta1_dl = r1 + lambda * da1 / (2.0 * r1);
    let deta2_dl = -r2 + mu * da2 / (2.0 * r2);
    let grad_eta1 = &u1 * (lambda / r1);
    let grad_eta2 = &u2 * (mu / r2);

    let (p1, p2) = (normal_pdf(eta1), normal_pdf(eta2));
    let grad_delta_eta = (&grad_eta1 + &grad_eta2) * 0.5;
    let grad_delta_f1 = -(grad_eta1 * p1 + grad_eta2 * p2);
    let grad_delta_f2 = &u1 * (2.0 * lambda * lambda) - &u2 * (2.0 * mu * mu);

    Ok(PairLinearization {
        f1: normal_sf(eta1) + normal_sf(eta2),
        f2: lambda * lambda * a1 - mu * mu * a2,
        // Δ = obstacle − drone, so drone-position gradients flip sign.
        grad_pos_f1: -grad_delta_f1,
        grad_pos_f2: -grad_delta_f2,
        df1_dlambda: -(p1 * deta1_dl + p2 * deta2_dl),
        df2_dlambda: 2.0 * lambda * a1 + lambda * lambda * da1 + 2.0 * mu * a2 - mu * mu * da2,
        eta: 0.5 * (eta1 + eta2),
        grad_pos_eta: -grad_delta_eta,
        deta_dlambda: 0.5 * (deta1_dl + deta2_dl),
        degenerate: false,
    })
}

#[cfg(feature = "fd-gradients")]
fn finite_difference_linearization(
    drone_pos: &DVector<f64>,
    drone_cov: &DMatrix<f64>,
    obs_mean: &DVector<f64>,
    obs_cov: &DMatrix<f64>,
    lambda: f64,
) -> Result<PairLinearization> {
    const H: f64 = 1e-6;
    let eval = |p: &DVector<f64>, l: f64| constraint_pair(p, drone_cov, obs_mean, obs_cov, l);
    let base = eval(drone_pos, lambda)?;
    let d = drone_pos.len();
    let mut g1 = DVector::zeros(d);
    let mut g2 = DVector::zeros(d);
    let mut ge = DVector::zeros(d);
    for k in 0..d {
        let mut up = drone_pos.clone();
        let mut down = drone_pos.clone();
        up[k] += H;
        down[k] -= H;
        let (a, b) = (eval(&up, lambda)?, eval(&down, lambda)?);
        g1[k] = (a.f1 - b.f1) / (2.0 * H);
        g2[k] = (a.f2 - b.f2) / (2.0 * H);
        ge[k] = (a.eta - b.eta) / (2.0 * H);
    }
    let h = H.min(0.5 * lambda.min(1.0 - lambda));
    let (a, b) = (eval(drone_pos, lambda + h)?, eval(drone_pos, lambda - h)?);
    Ok(PairLinearization {
        f1: base.f1,
        f2: base.f2,
        grad_pos_f1: g1,
        grad_pos_f2: g2,
        df1_dlambda: (a.f1 - b.f1) / (2.0 * h),
        df2_dlambda: (a.f2 - b.f2) / (2.0 * h),
        eta: base.eta,
        grad_pos_eta: ge,
        deta_dlambda: (a.eta - b.eta) / (2.0 * h),
        degenerate: false,
    })
}

/// Where a constraint sits along the planned trajectory.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub start: &'a DVector<f64>,
    pub tau: f64,
    /// 1-based step index `i`; the drone position is `start + τ·Σ_{k≤i} v_k`.
    pub step: usize,
    /// Inflated drone covariance at this step.
    pub drone_cov: &'a DMatrix<f64>,
    pub obs_mean: &'a DVector<f64>,
    /// Inflated obstacle covariance at this step.
    pub obs_cov: &'a DMatrix<f64>,
}

/// `f₁`, `f₂` and gradients with respect to every velocity component up to
/// the constraint's step, and with respect to `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub upsilon: f64,
    pub residual: f64,
    /// Length `d·i`, velocity-major: `[v₁ˣ, v₁ʸ, (v₁ᶻ), v₂ˣ, …]`.
    pub grad_upsilon_v: DVector<f64>,
    pub grad_upsilon_lambda: f64,
    pub grad_residual_v: DVector<f64>,
    pub grad_residual_lambda: f64,
}

/// Linearizes the constraint at step `ctx.step` about reference velocities
/// and a reference `λ`.
pub fn constraint_gradients(ctx: &StepContext<'_>, velocities: &[DVector<f64>], lambda: f64) -> Result<ConstraintEval> {
    let i = ctx.step;
    if i == 0 || i > velocities.len() {
        return Err(Error::Domain(format!("step {i} outside 1..={}", velocities.len())));
    }
    let d = ctx.start.len();
    let mut pos = ctx.start.clone();
    for v in &velocities[..i] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        pos += v * ctx.tau;
    }
    let lin = linearize_pair(&pos, ctx.drone_cov, ctx.obs_mean, ctx.obs_cov, lambda)?;
    let spread = |g: &DVector<f64>| {
        let mut out = DVector::zeros(d * i);
        for k in 0..i {
            for c in 0..d {
                out[k * d + c] = ctx.tau * g[c];
            }
        }
        out
    };
    Ok(ConstraintEval {
        upsilon: lin.f1,
        residual: lin.f2,
        grad_upsilon_v: spread(&lin.grad_pos_f1),
        grad_upsilon_lambda: lin.df1_dlambda,
        grad_residual_v: spread(&lin.grad_pos_f2),
        grad_residual_lambda: lin.df2_dlambda,
    })
}
